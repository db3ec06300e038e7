"""A small differentiation engine for the hazard model.

Two pieces work together:

* ``Tape``/``Var``: reverse-mode accumulation over numpy arrays. Every
  primitive applied to a ``Var`` is recorded with enough information to
  replay the forward pass and to push gradients back.
* ``Dual``: forward-mode derivative with respect to the single inter-arrival
  input. Its two components may be plain arrays or taped ``Var`` objects, so
  a loss containing the derivative (the hazard) is differentiated by the same
  reverse sweep, with no special casing.

The module-level functions (``tanh``, ``softplus``, ...) accept ndarrays,
``Var`` and ``Dual`` alike, which lets the model code run untaped for
prediction and taped for training.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFinite, UnsupportedPrimitive


def _stable_softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def _stable_sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _unbroadcast(g, shape):
    if np.shape(g) == shape:
        return g
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _matmul_bwd(g, out, a, b):
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    g2 = np.asarray(g)
    if a.ndim == 1:
        g2 = g2[None, ...] if g2.ndim < 2 else g2
    if b.ndim == 1:
        g2 = g2[..., None]
    ga = (g2 @ b2.T).reshape(a.shape)
    gb = (a2.T @ g2).reshape(b.shape)
    return ga, gb


def _sum_fwd(x, axis=None, keepdims=False):
    return np.sum(x, axis=axis, keepdims=keepdims)


def _sum_bwd(g, out, x, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape),)


def _getitem_bwd(g, out, x, key=None):
    z = np.zeros_like(x)
    np.add.at(z, key, g)
    return (z,)


# name -> (forward, backward). backward(g, out, *inputs, **kw) returns one
# gradient per positional input, shaped like that input.
PRIMITIVES = {
    "add": (np.add, lambda g, o, a, b: (_unbroadcast(g, np.shape(a)), _unbroadcast(g, np.shape(b)))),
    "sub": (np.subtract, lambda g, o, a, b: (_unbroadcast(g, np.shape(a)), _unbroadcast(-g, np.shape(b)))),
    "mul": (np.multiply, lambda g, o, a, b: (_unbroadcast(g * b, np.shape(a)), _unbroadcast(g * a, np.shape(b)))),
    "div": (
        np.divide,
        lambda g, o, a, b: (_unbroadcast(g / b, np.shape(a)), _unbroadcast(-g * o / b, np.shape(b))),
    ),
    "neg": (np.negative, lambda g, o, a: (-g,)),
    "matmul": (np.matmul, _matmul_bwd),
    "tanh": (np.tanh, lambda g, o, a: (g * (1.0 - o * o),)),
    "sigmoid": (_stable_sigmoid, lambda g, o, a: (g * o * (1.0 - o),)),
    "softplus": (_stable_softplus, lambda g, o, a: (g * _stable_sigmoid(a),)),
    "log": (np.log, lambda g, o, a: (g / a,)),
    "exp": (np.exp, lambda g, o, a: (g * o,)),
    "square": (np.square, lambda g, o, a: (2.0 * g * a,)),
    "sum": (_sum_fwd, _sum_bwd),
    "clamp_min": (
        lambda a, floor=0.0: np.maximum(a, floor),
        lambda g, o, a, floor=0.0: (g * (a > floor),),
    ),
    "getitem": (lambda a, key=None: a[key], _getitem_bwd),
}


def _value(x):
    return x.value if isinstance(x, Var) else x


class Tape:
    """Ordered record of primitive applications.

    ``nodes`` holds ``(name, inputs, kwargs, output)`` tuples in execution
    order; ``leaves`` are the variables created with :meth:`var`.
    """

    def __init__(self):
        self.nodes = []
        self.leaves = []
        self._count = 0

    def var(self, value):
        v = Var(np.asarray(value, dtype=np.float64), self, self._count)
        self._count += 1
        self.leaves.append(v)
        return v

    def apply(self, name, *inputs, **kw):
        try:
            fwd, _ = PRIMITIVES[name]
        except KeyError:
            raise UnsupportedPrimitive(f"no primitive named {name!r}") from None
        for x in inputs:
            if isinstance(x, Var) and x.tape is not self:
                raise UnsupportedPrimitive("operands recorded on different tapes")
        out = Var(fwd(*(_value(x) for x in inputs), **kw), self, self._count)
        self._count += 1
        self.nodes.append((name, inputs, kw, out))
        return out

    def backward(self, out, seed=1.0):
        """Gradients of ``out`` (a scalar Var) w.r.t. every variable on the tape.

        Returns a dict keyed by variable index; variables that do not influence
        ``out`` are absent.
        """
        grads = {out.index: np.asarray(seed, dtype=np.float64) * np.ones_like(out.value)}
        for name, inputs, kw, node_out in reversed(self.nodes):
            g = grads.get(node_out.index)
            if g is None:
                continue
            _, bwd = PRIMITIVES[name]
            local = bwd(g, node_out.value, *(_value(x) for x in inputs), **kw)
            for x, gx in zip(inputs, local):
                if isinstance(x, Var):
                    prev = grads.get(x.index)
                    grads[x.index] = gx if prev is None else prev + gx
        return grads

    def replay(self):
        """Recompute every node from the leaf values; returns {index: value}."""
        values = {v.index: v.value for v in self.leaves}
        for name, inputs, kw, out in self.nodes:
            fwd, _ = PRIMITIVES[name]
            args = [values[x.index] if isinstance(x, Var) else x for x in inputs]
            values[out.index] = fwd(*args, **kw)
        return values


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "index")
    # keep numpy from broadcasting over Var as an object; it defers to our reflected ops
    __array_ufunc__ = None

    def __init__(self, value, tape, index):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return self.tape.apply("add", self, other)

    def __radd__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return self.tape.apply("add", other, self)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return self.tape.apply("sub", self, other)

    def __rsub__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return self.tape.apply("sub", other, self)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return self.tape.apply("mul", self, other)

    def __rmul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return self.tape.apply("mul", other, self)

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return self.tape.apply("div", self, other)

    def __rtruediv__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return self.tape.apply("div", other, self)

    def __neg__(self):
        return self.tape.apply("neg", self)

    def __matmul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return self.tape.apply("matmul", self, other)

    def __rmatmul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        return self.tape.apply("matmul", other, self)

    def __getitem__(self, key):
        return self.tape.apply("getitem", self, key=key)

    def __pow__(self, p):
        if p == 2:
            return self.tape.apply("square", self)
        raise UnsupportedPrimitive(f"power {p} is not a supported primitive")


class Dual:
    """``value`` plus its derivative ``dtau`` along the inter-arrival input."""

    __slots__ = ("value", "dtau")
    __array_ufunc__ = None

    def __init__(self, value, dtau):
        self.value = value
        self.dtau = dtau

    def __repr__(self):
        return f"Dual({self.value!r}, {self.dtau!r})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.dtau + other.dtau)
        return Dual(self.value + other, self.dtau)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.dtau - other.dtau)
        return Dual(self.value - other, self.dtau)

    def __rsub__(self, other):
        return Dual(other - self.value, -self.dtau)

    def __neg__(self):
        return Dual(-self.value, -self.dtau)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value * other.value, self.dtau * other.value + self.value * other.dtau)
        return Dual(self.value * other, self.dtau * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            raise UnsupportedPrimitive("division by a tau-dependent quantity")
        return Dual(self.value / other, self.dtau / other)

    def __matmul__(self, other):
        if isinstance(other, Dual):
            raise UnsupportedPrimitive("product of two tau-dependent matrices")
        return Dual(self.value @ other, self.dtau @ other)

    def __rmatmul__(self, other):
        return Dual(other @ self.value, other @ self.dtau)


def _dispatch(name, np_fn, dual_rule):
    def fn(x):
        if isinstance(x, Dual):
            return dual_rule(x)
        if isinstance(x, Var):
            return x.tape.apply(name, x)
        return np_fn(np.asarray(x, dtype=np.float64))

    fn.__name__ = name
    return fn


def _tanh_rule(x):
    y = tanh(x.value)
    return Dual(y, (1.0 - y * y) * x.dtau)


def _sigmoid_rule(x):
    s = sigmoid(x.value)
    return Dual(s, s * (1.0 - s) * x.dtau)


def _softplus_rule(x):
    return Dual(softplus(x.value), sigmoid(x.value) * x.dtau)


def _log_rule(x):
    return Dual(log(x.value), x.dtau / x.value)


def _exp_rule(x):
    e = exp(x.value)
    return Dual(e, e * x.dtau)


def _square_rule(x):
    return Dual(square(x.value), 2.0 * x.value * x.dtau)


tanh = _dispatch("tanh", np.tanh, _tanh_rule)
sigmoid = _dispatch("sigmoid", _stable_sigmoid, _sigmoid_rule)
softplus = _dispatch("softplus", _stable_softplus, _softplus_rule)
log = _dispatch("log", np.log, _log_rule)
exp = _dispatch("exp", np.exp, _exp_rule)
square = _dispatch("square", np.square, _square_rule)


def sum_(x, axis=None):
    if isinstance(x, Dual):
        return Dual(sum_(x.value, axis), sum_(x.dtau, axis))
    if isinstance(x, Var):
        return x.tape.apply("sum", x, axis=axis)
    return np.sum(x, axis=axis)


def clamp_min(x, floor):
    if isinstance(x, Var):
        return x.tape.apply("clamp_min", x, floor=floor)
    if isinstance(x, Dual):
        raise UnsupportedPrimitive("clamp_min of a tau-dependent quantity")
    return np.maximum(x, floor)


def forward_tau(f, *inputs, tau):
    """Evaluate ``f(tau, *inputs)`` and its exact partial derivative in ``tau``.

    ``f`` must be built from the primitives above. Returns ``(value, dvalue_dtau)``.
    """
    tau_dual = Dual(tau, np.ones_like(np.asarray(tau, dtype=np.float64)))
    out = f(tau_dual, *inputs)
    if not isinstance(out, Dual):
        return out, np.zeros_like(_value(out))
    return out.value, out.dtau


def value_and_grad(loss, weights):
    """Value of ``loss(vars)`` and its gradient with respect to each weight.

    ``weights`` maps names to arrays; ``loss`` receives a dict of the same keys
    holding taped variables and must return a scalar ``Var``.
    """
    tape = Tape()
    wvars = {k: tape.var(v) for k, v in weights.items()}
    out = loss(wvars)
    if not isinstance(out, Var):
        value = float(np.asarray(out))
        return value, {k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in weights.items()}
    if np.size(out.value) != 1:
        raise ValueError(f"loss must be scalar, got shape {out.shape}")
    if not np.all(np.isfinite(out.value)):
        raise NonFinite(f"loss evaluated to {out.value}")
    grads = tape.backward(out)
    result = {}
    for k, v in wvars.items():
        g = grads.get(v.index)
        result[k] = np.zeros_like(v.value) if g is None else np.asarray(g, dtype=np.float64).reshape(v.shape)
    return float(out.value), result


def grad_loss(loss, weights):
    return value_and_grad(loss, weights)[1]


def central_difference(fn, weights, h=1e-5):
    """Finite-difference gradient of scalar ``fn(weights)``; used as a test oracle."""
    out = {}
    for k, w in weights.items():
        w = np.asarray(w, dtype=np.float64)
        g = np.zeros_like(w)
        flat = g.reshape(-1)
        for i in range(w.size):
            plus = {kk: np.array(vv, dtype=np.float64, copy=True) for kk, vv in weights.items()}
            minus = {kk: np.array(vv, dtype=np.float64, copy=True) for kk, vv in weights.items()}
            plus[k].reshape(-1)[i] += h
            minus[k].reshape(-1)[i] -= h
            flat[i] = (fn(plus) - fn(minus)) / (2 * h)
        out[k] = g
    return out
