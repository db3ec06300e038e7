"""Command-line interface: simulate, train, predict, evaluate, analyze.

Exit codes: 0 success, 2 usage, 3 data or schema problem, 4 numeric failure,
5 file-system problem (including refusing to overwrite without ``--force``).
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import CHECKPOINT_FORMAT_VERSION, __version__
from . import baselines, bayes, checkpoint, metrics, spatial
from . import predict as pr
from .config import load_config
from .errors import BnhpError, SchemaError, TooShort
from .events import SplitSpec, load_csv, make_windows, part_bounds, segment_windows, split_bounds, write_csv
from .simulate import HawkesParams, simulate_hawkes, simulate_poisson, simulate_st_poisson, spawn_seeds

log = logging.getLogger("bnhp")

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 5
NEURAL = ("bnhp", "st-bnhp", "st-nhp")
SPATIAL = ("st-bnhp", "st-nhp")


class OutputExists(OSError):
    pass


# ---- manifest plumbing ----

def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(path):
    return f"{path}.manifest.json"


def check_outputs(paths, force):
    for p in paths:
        if os.path.exists(p) and not force:
            raise OutputExists(f"{p} exists; pass --force to overwrite")
        parent = os.path.dirname(os.path.abspath(p))
        if not os.path.isdir(parent):
            raise FileNotFoundError(f"output directory {parent} does not exist")


class Run:
    """Collects what a command read and wrote, then writes the run manifest."""

    def __init__(self, args, primary_out, seed=None, config=None):
        self.args = args
        self.primary = primary_out
        self.seed = seed
        self.config = config
        self.inputs = []
        self.outputs = []
        self.extra = {}
        self.t0 = time.time()

    def write(self):
        doc = {
            "command": self.args.command,
            "argv": sys.argv[1:],
            "tool_version": __version__,
            "checkpoint_format": CHECKPOINT_FORMAT_VERSION,
            "seed": self.seed,
            "config": self.config,
            "inputs": {p: sha256(p) for p in self.inputs},
            "outputs": list(self.outputs),
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.t0)),
            "wall_clock_s": round(time.time() - self.t0, 3),
            **self.extra,
        }
        with open(manifest_path(self.primary), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


def read_manifest(path):
    try:
        with open(manifest_path(path), encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return {}


def _floats(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# ---- simulate ----

def cmd_simulate(args):
    outs = [args.out, manifest_path(args.out)]
    check_outputs(outs, args.force)
    seeds = spawn_seeds(args.seed, args.n_sequences)
    seqs = []
    for i, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        sid = str(i)
        if args.process == "poisson":
            seqs.append(simulate_poisson(args.rate, args.horizon, rng, sid))
        elif args.process == "hawkes":
            params = HawkesParams(args.mu, args.alphas, args.betas)
            seqs.append(simulate_hawkes(params, args.horizon, rng, sid))
        else:
            seqs.append(simulate_st_poisson(args.rate, args.n_events, args.step_std, seed=rng, seq_id=sid))
    if not any(len(s.times) for s in seqs):
        raise TooShort("simulation produced no events; increase --horizon")
    write_csv([s for s in seqs if len(s.times)], args.out)
    run = Run(args, args.out, args.seed, {k: v for k, v in vars(args).items() if k not in ("func", "force")})
    run.outputs = outs
    run.extra["n_events"] = int(sum(len(s.times) for s in seqs))
    run.write()
    print(f"wrote {run.extra['n_events']} events to {args.out}")


# ---- train ----

def _load_data(path, time_scale, normalize):
    seqs = load_csv(path, time_scale=time_scale, normalize=normalize)
    if not seqs:
        raise TooShort(f"{path}: no events")
    return seqs


def _require_spatial(seqs, model):
    if not all(s.has_locations for s in seqs):
        raise SchemaError(f"--model {model} needs location columns 'lat' and 'lon' in the data")


def _train_segments(seqs, split):
    """Event prefixes before each sequence's validation start (for parametric fits)."""
    return [s.slice(0, split_bounds(len(s), split)[0]) for s in seqs]


def _overrides(cfg, args):
    cfg = cfg.override("train", epochs=args.epochs, seed=args.seed, lr=args.lr)
    cfg = cfg.override("dropout", p_fnn=args.p_fnn, p_rnn_input=args.p_rnn_input,
                       p_rnn_recurrent=args.p_rnn_recurrent)
    return cfg.override("model", M=args.M)


def cmd_train(args):
    cfg = _overrides(load_config(args.config), args)
    trace_path = args.trace or f"{args.out}.trace.csv"
    outs = [args.out, manifest_path(args.out)]
    if args.model in NEURAL:
        outs.append(trace_path)
    check_outputs(outs, args.force)
    seqs = _load_data(args.data, args.time_scale, args.normalize)
    run = Run(args, args.out, cfg.train.seed, cfg.snapshot())
    run.inputs = [args.data] + ([args.config] if args.config else [])
    extra = {"time_scale": args.time_scale, "normalize": args.normalize, "split": cfg.snapshot()["split"]}
    M = cfg.model.M
    spec = bayes.NO_DROPOUT if args.model == "st-nhp" else cfg.dropout
    if args.model in NEURAL:
        if args.model in SPATIAL:
            _require_spatial(seqs, args.model)
        tr = segment_windows(seqs, M, cfg.split, "train")
        try:
            va = segment_windows(seqs, M, cfg.split, "valid")
        except TooShort:
            va = None
        if args.model == "bnhp":
            model = bayes.build_model(tr, spec, cfg.model, cfg.train.seed)
            model, trace = bayes.train(model, tr, va, spec, cfg.train)
        else:
            model = spatial.build_st_model(tr, spec, cfg.model, cfg.train.seed)
            model, trace = spatial.st_train(model, tr, va, spec, cfg.train)
        trace.to_csv(trace_path)
        extra["best_epoch"] = trace.best_epoch
        log.info("best epoch %d", trace.best_epoch)
    elif args.model == "shp":
        model = baselines.shp_fit(_train_segments(seqs, cfg.split), seed=cfg.train.seed)
        if not model.converged:
            log.warning("SHP fit did not converge; keeping the best parameters found")
        extra["converged"] = model.converged
    elif args.model == "eh":
        model = baselines.eh_fit(_train_segments(seqs, cfg.split))
    else:
        model = baselines.st_homog_poisson_fit(_train_segments(seqs, cfg.split))
    checkpoint.save(args.out, args.model, model, spec if args.model in NEURAL else None, extra)
    run.outputs = outs
    run.extra["model"] = args.model
    run.write()
    print(f"trained {args.model}; checkpoint written to {args.out}")


# ---- predict ----

def _windows(seqs, M, split, part):
    out = []
    for s in seqs:
        start, stop = part_bounds(len(s), split, part)
        try:
            out.extend(make_windows(s, M, start=max(start, M), stop=stop))
        except TooShort:
            continue
    if not out:
        raise TooShort(f"no {part} events to predict with M={M}")
    return out


def cmd_predict(args):
    cfg = load_config(args.config)
    outs = [args.out, manifest_path(args.out)]
    check_outputs(outs, args.force)
    kind, model, spec = checkpoint.load(args.checkpoint)
    with open(args.checkpoint, encoding="utf-8") as fh:
        extra = json.load(fh).get("extra", {})
    split = cfg.split
    if "split" in extra and not args.config:
        split = SplitSpec(**extra["split"])
    seqs = _load_data(args.data, extra.get("time_scale", 1.0), extra.get("normalize", False))
    pcfg = cfg.predict
    S = args.mc_samples if args.mc_samples is not None else pcfg.S
    pcfg = pr.PredictConfig(S, pcfg.k_levels, pcfg.bisect_tol, pcfg.bisect_max_iter, pcfg.persist_masks)
    ks = pcfg.k_levels
    locs = None
    if kind in NEURAL:
        if kind in SPATIAL:
            _require_spatial(seqs, kind)
        windows = _windows(seqs, model.M, split, args.part)
        times = pr.predict_windows(model, windows, spec, pcfg, args.seed)
        if kind in SPATIAL:
            mu_only = args.mu_only or kind == "st-nhp"
            locs = spatial.predict_locations(model, windows, spec, pcfg, args.seed, mu_only=mu_only)
    elif kind in ("shp", "eh"):
        fits = [model] if kind == "shp" else model
        times = []
        for s in seqs:
            start, stop = part_bounds(len(s), split, args.part)
            try:
                preds = baselines.hawkes_predict_sequence(fits, s, max(start, 1), ks, pcfg.bisect_tol)
            except TooShort:
                continue
            times.extend(p for p in preds if p.event_index < stop)
        if not times:
            raise TooShort(f"no {args.part} events to predict")
    else:
        windows = _windows(seqs, 1, split, args.part)
        times, locs = baselines.homog_predict(model, windows, ks)
        locs = locs or None
    if locs is not None:
        spatial.write_st_predictions_csv(times, locs, args.out, ks)
    else:
        pr.write_predictions_csv(times, args.out, ks)
    run = Run(args, args.out, args.seed, {"predict": {"S": S, "k_levels": list(ks)}, "part": args.part})
    run.inputs = [args.checkpoint, args.data] + ([args.config] if args.config else [])
    run.outputs = outs
    run.extra["model"] = kind
    run.extra["mnll_comparable"] = kind != "eh"
    run.write()
    print(f"wrote {len(times)} predictions to {args.out}")


# ---- evaluate / analyze ----

def cmd_evaluate(args):
    outs = [args.out, manifest_path(args.out)]
    check_outputs(outs, args.force)
    table = pr.read_predictions_csv(args.predictions)
    info = read_manifest(args.predictions)
    comparable = not args.not_comparable and info.get("mnll_comparable", True)
    report = metrics.evaluate_table(table, mnll_comparable=comparable)
    report.to_json(args.out)
    print(report.format_table(info.get("model", "model")))
    if not comparable:
        print("* MNLL not comparable: the model was fitted with a least-squares loss")
    run = Run(args, args.out)
    run.inputs = [args.predictions]
    run.outputs = outs
    run.write()


def cmd_analyze(args):
    os.makedirs(args.out_dir, exist_ok=True)
    q_path = os.path.join(args.out_dir, "quantile_table.csv")
    ad_path = os.path.join(args.out_dir, "ad_pil.csv")
    js_path = os.path.join(args.out_dir, "analysis.json")
    outs = [q_path, ad_path, js_path, manifest_path(js_path)]
    check_outputs(outs, args.force)
    table = pr.read_predictions_csv(args.predictions)
    ad = np.abs(table.actual - table.mean)
    pil = 2.0 * args.k * table.sigma
    quantiles = args.quantiles or metrics.DEFAULT_QUANTILES
    rows = metrics.avg_pil_quantile(ad, args.k * table.sigma, quantiles)
    with open(q_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantile", "avg_pil"])
        w.writerows([repr(q), repr(v)] for q, v in rows)
    with open(ad_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence_id", "event_index", "abs_dev", "pil"])
        for sid, e, a, p in zip(table.sequence_id, table.event_index, ad, pil):
            w.writerow([sid, int(e), repr(float(a)), repr(float(p))])
    try:
        rho = metrics.spearman(ad, pil)
    except BnhpError as exc:
        log.warning("spearman undefined: %s", exc)
        rho = None
    doc = {"spearman_ad_pil": rho, "k": args.k, "n_events": int(ad.size),
           "quantile_table": [list(r) for r in rows]}
    with open(js_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"spearman(AD, PIL) = {rho if rho is None else f'{rho:.4f}'} over {ad.size} events")
    run = Run(args, js_path)
    run.inputs = [args.predictions]
    run.outputs = outs
    run.write()


# ---- parser ----

def build_parser():
    ap = argparse.ArgumentParser(prog="bnhp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version",
                    version=f"bnhp {__version__} (checkpoint format {CHECKPOINT_FORMAT_VERSION})")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS threads (default: all cores; 1 gives bit-reproducible runs)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write synthetic events CSV")
    p.add_argument("--process", choices=("poisson", "hawkes", "st-poisson"), required=True)
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=0.05)
    p.add_argument("--alphas", type=_floats, default=(0.4, 0.4))
    p.add_argument("--betas", type=_floats, default=(1.0, 20.0))
    p.add_argument("--horizon", type=float, default=1000.0)
    p.add_argument("--n-events", type=int, default=3000, help="events per sequence (st-poisson)")
    p.add_argument("--step-std", type=float, default=0.01, help="random-walk step in degrees (st-poisson)")
    p.add_argument("--n-sequences", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="fit a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=checkpoint.KINDS, default="bnhp")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", help="loss trace CSV (default: <out>.trace.csv)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--p-fnn", type=float)
    p.add_argument("--p-rnn-input", type=float)
    p.add_argument("--p-rnn-recurrent", type=float)
    p.add_argument("--M", type=int)
    p.add_argument("--time-scale", type=float, default=1.0, help="divide timestamps by this factor")
    p.add_argument("--normalize", action="store_true", help="shift each sequence to start near 0")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="1-step-ahead predictions CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--mc-samples", type=int, default=None, help="MC dropout passes (default 50)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--part", choices=("test", "valid", "train", "all"), default="test")
    p.add_argument("--mu-only", action="store_true", help="aggregate Gaussian means for locations")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="metrics report from predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--not-comparable", action="store_true", help="flag MNLL as not comparable")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", parents=[common], help="AD/PIL correlation and quantile curve")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--quantiles", type=_floats, default=None)
    p.set_defaults(func=cmd_analyze)
    return ap


def _threads(n):
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise SchemaError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads(args.threads):
            args.func(args)
    except BnhpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return SchemaError.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
