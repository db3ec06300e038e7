"""Event sequences, CSV ingestion, chronological splits and sliding windows."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySequence, NonIncreasing, ParseError, SchemaError, TooShort

MIN_SPLIT_EVENTS = 10


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EventSequence:
    """Strictly increasing event times with optional (lat, lon) locations.

    ``offset`` is whatever was subtracted from the raw timestamps at ingestion,
    so ``times + offset`` recovers the (scaled) original clock.
    """

    id: str
    times: np.ndarray
    locations: np.ndarray | None = None
    offset: float = 0.0

    def __post_init__(self):
        times = _frozen(self.times).reshape(-1)
        object.__setattr__(self, "times", times)
        if times.size and times[0] < 0:
            raise NonIncreasing(f"sequence {self.id!r}: first timestamp {times[0]} is negative")
        if times.size > 1:
            bad = np.flatnonzero(np.diff(times) <= 0)
            if bad.size:
                j = int(bad[0]) + 1
                raise NonIncreasing(
                    f"sequence {self.id!r}: times[{j}]={times[j]} <= times[{j - 1}]={times[j - 1]}"
                )
        if self.locations is not None:
            locs = _frozen(self.locations)
            if locs.shape != (times.size, 2):
                raise SchemaError(
                    f"sequence {self.id!r}: locations shape {locs.shape} != ({times.size}, 2)"
                )
            object.__setattr__(self, "locations", locs)

    def __len__(self):
        return self.times.size

    @property
    def has_locations(self):
        return self.locations is not None

    def slice(self, start, stop):
        locs = None if self.locations is None else self.locations[start:stop]
        return EventSequence(self.id, self.times[start:stop], locs, self.offset)


@dataclass(frozen=True)
class InterArrivals:
    taus: np.ndarray
    origin: float = 0.0


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    valid_frac: float = 0.1
    test_frac: float = 0.2

    def __post_init__(self):
        fracs = (self.train_frac, self.valid_frac, self.test_frac)
        if any(not 0.0 < f < 1.0 for f in fracs):
            raise ValueError(f"split fractions must lie in (0, 1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")

    def counts(self, n):
        # the epsilon guards products like 0.7 * 30 = 20.999999999999996
        n_train = int(math.floor(n * self.train_frac + 1e-9))
        n_valid = int(math.floor(n * self.valid_frac + 1e-9))
        return n_train, n_valid, n - n_train - n_valid


@dataclass(frozen=True)
class Window:
    """M consecutive inter-arrivals and the one that follows them.

    ``event_index`` is the index of the target event in its sequence; the
    anchor is the event just before it.
    """

    taus: np.ndarray
    anchor_time: float
    target_tau: float
    event_index: int = 0
    sequence_id: str = ""
    prev_locs: np.ndarray | None = None
    target_loc: np.ndarray | None = None

    @property
    def target_time(self):
        return self.anchor_time + self.target_tau


@dataclass
class WindowBatch:
    """Column-stacked windows, the form every model consumes."""

    taus: np.ndarray
    anchor: np.ndarray
    target: np.ndarray
    event_index: np.ndarray
    sequence_ids: list = field(default_factory=list)
    prev_locs: np.ndarray | None = None
    target_loc: np.ndarray | None = None

    def __len__(self):
        return self.target.size

    @property
    def has_locations(self):
        return self.prev_locs is not None

    def take(self, idx):
        idx = np.asarray(idx)
        return WindowBatch(
            taus=self.taus[idx],
            anchor=self.anchor[idx],
            target=self.target[idx],
            event_index=self.event_index[idx],
            sequence_ids=[self.sequence_ids[i] for i in idx] if self.sequence_ids else [],
            prev_locs=None if self.prev_locs is None else self.prev_locs[idx],
            target_loc=None if self.target_loc is None else self.target_loc[idx],
        )


def inter_arrivals(seq: EventSequence) -> InterArrivals:
    """Gaps between consecutive events; the first gap is measured from t=0."""
    if len(seq) == 0:
        raise EmptySequence(f"sequence {seq.id!r} has no events")
    return InterArrivals(np.diff(seq.times, prepend=0.0), 0.0)


def chronological_split(seq: EventSequence, spec: SplitSpec = SplitSpec()):
    n = len(seq)
    if n < MIN_SPLIT_EVENTS:
        raise TooShort(f"sequence {seq.id!r} has {n} events; splitting needs >= {MIN_SPLIT_EVENTS}")
    n_train, n_valid, _ = spec.counts(n)
    return (
        seq.slice(0, n_train),
        seq.slice(n_train, n_train + n_valid),
        seq.slice(n_train + n_valid, n),
    )


def split_bounds(n, spec: SplitSpec = SplitSpec()):
    """Event-index boundaries ``(valid_start, test_start)`` for a sequence of ``n`` events."""
    if n < MIN_SPLIT_EVENTS:
        raise TooShort(f"{n} events; splitting needs >= {MIN_SPLIT_EVENTS}")
    n_train, n_valid, _ = spec.counts(n)
    return n_train, n_train + n_valid


def make_windows(seq: EventSequence, M: int, start: int = 0, stop: int | None = None) -> list[Window]:
    """One window per predictable event, in time order.

    Only events with index in ``[start, stop)`` become targets; their history may
    reach back before ``start``, which is how validation and test windows see
    their training context.
    """
    if M < 1:
        raise ValueError(f"truncation depth must be >= 1, got {M}")
    taus = inter_arrivals(seq).taus
    n = taus.size
    if n < M + 1:
        raise TooShort(f"sequence {seq.id!r}: {n} inter-arrivals, need at least {M + 1} for M={M}")
    stop = n if stop is None else min(stop, n)
    first = max(M, start)
    if first >= stop:
        raise TooShort(f"sequence {seq.id!r}: no target events in [{start}, {stop}) with M={M}")
    out = []
    for j in range(first, stop):
        prev_locs = target_loc = None
        if seq.locations is not None:
            prev_locs = seq.locations[j - M : j]
            target_loc = seq.locations[j]
        out.append(
            Window(
                taus=taus[j - M : j],
                anchor_time=float(seq.times[j - 1]),
                target_tau=float(taus[j]),
                event_index=j,
                sequence_id=seq.id,
                prev_locs=prev_locs,
                target_loc=target_loc,
            )
        )
    return out


def stack_windows(windows) -> WindowBatch:
    if isinstance(windows, WindowBatch):
        return windows
    windows = list(windows)
    if not windows:
        raise TooShort("no windows to stack")
    spatial = all(w.prev_locs is not None for w in windows)
    return WindowBatch(
        taus=np.stack([w.taus for w in windows]).astype(np.float64),
        anchor=np.array([w.anchor_time for w in windows], dtype=np.float64),
        target=np.array([w.target_tau for w in windows], dtype=np.float64),
        event_index=np.array([w.event_index for w in windows], dtype=np.int64),
        sequence_ids=[w.sequence_id for w in windows],
        prev_locs=np.stack([w.prev_locs for w in windows]) if spatial else None,
        target_loc=np.stack([w.target_loc for w in windows]) if spatial else None,
    )


PARTS = ("train", "valid", "test", "all")


def part_bounds(n, spec: SplitSpec = SplitSpec(), part="test"):
    """Target event-index range ``[start, stop)`` of a split segment (``all`` is the whole sequence)."""
    if part not in PARTS:
        raise ValueError(f"part must be one of {PARTS}, got {part!r}")
    if part == "all":
        return 0, n
    valid_start, test_start = split_bounds(n, spec)
    return {"train": (0, valid_start), "valid": (valid_start, test_start), "test": (test_start, n)}[part]


def segment_windows(sequences, M, spec: SplitSpec = SplitSpec(), part="train"):
    """Windows whose targets fall in the ``part`` segment of every sequence.

    Sequences too short to contribute a window to the segment are skipped;
    TooShort is raised only when nothing at all remains.
    """
    out = []
    for seq in sequences:
        start, stop = part_bounds(len(seq), spec, part)
        try:
            out.extend(make_windows(seq, M, start=start, stop=stop))
        except TooShort:
            continue
    if not out:
        raise TooShort(f"no {part} windows with M={M}")
    return out


REQUIRED_COLUMNS = ("sequence_id", "timestamp")


def load_csv(path, time_scale: float = 1.0, normalize: bool = False) -> list[EventSequence]:
    """Read the events CSV (``sequence_id,timestamp[,lat,lon]``).

    Timestamps are divided by ``time_scale``. With ``normalize`` each sequence is
    shifted so its first event sits one mean inter-arrival after t=0; the shift
    is kept on ``EventSequence.offset``.
    """
    if time_scale <= 0:
        raise ValueError(f"time_scale must be positive, got {time_scale}")
    path = Path(path)
    groups: dict[str, list] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header {','.join(REQUIRED_COLUMNS)}")
        header = [h.strip() for h in header]
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        has_lat, has_lon = "lat" in header, "lon" in header
        if has_lat != has_lon:
            raise SchemaError(f"{path}: missing column {'lon' if has_lat else 'lat'!r}")
        spatial = has_lat
        i_id, i_t = header.index("sequence_id"), header.index("timestamp")
        i_lat = header.index("lat") if spatial else None
        i_lon = header.index("lon") if spatial else None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            sid = row[i_id].strip()
            if not sid:
                raise ParseError("empty sequence_id", lineno)
            try:
                t = float(row[i_t])
                loc = (float(row[i_lat]), float(row[i_lon])) if spatial else None
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if not math.isfinite(t) or (loc is not None and not all(map(math.isfinite, loc))):
                raise ParseError("non-finite value", lineno)
            groups.setdefault(sid, []).append((t, loc))

    sequences = []
    for sid, rows in groups.items():
        rows.sort(key=lambda r: r[0])
        times = np.array([r[0] for r in rows]) / time_scale
        offset = 0.0
        if normalize:
            gap = (times[-1] - times[0]) / (times.size - 1) if times.size > 1 else 1.0
            offset = times[0] - gap
            times = times - offset
        locs = np.array([r[1] for r in rows]) if spatial else None
        sequences.append(EventSequence(sid, times, locs, offset))
    return sequences


def write_csv(sequences, path):
    sequences = list(sequences)
    spatial = any(s.has_locations for s in sequences)
    if spatial and not all(s.has_locations for s in sequences):
        raise SchemaError("cannot mix sequences with and without locations in one file")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sequence_id", "timestamp", "lat", "lon"] if spatial else ["sequence_id", "timestamp"])
        for seq in sequences:
            for i, t in enumerate(seq.times):
                row = [seq.id, repr(float(t))]
                if spatial:
                    row += [repr(float(seq.locations[i, 0])), repr(float(seq.locations[i, 1]))]
                writer.writerow(row)
