"""Reverse-mode automatic differentiation on an append-only tape.

Tape nodes hold numpy arrays, so a whole column of per-observation terms is
one node rather than one node per element. A tape is built fresh for every
evaluation and consumed by a single backward sweep; tapes are never shared
between concurrent evaluations.

All math helpers below accept either a ``Var`` (recording onto its tape) or
plain numbers/arrays (plain numpy evaluation), so likelihood kernels can be
written once and used both for sampling and for posterior summaries.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special as _sp

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


class Tape:
    """Append-only operation record; topological by construction."""

    def __init__(self):
        self.values = []
        self.parents = []
        self.pullbacks = []

    def append(self, value, parents=(), pullback=None):
        idx = len(self.values)
        self.values.append(value)
        self.parents.append(parents)
        self.pullbacks.append(pullback)
        return Var(self, idx, value)

    def input(self, value):
        return self.append(np.asarray(value, dtype=float))

    def backward(self, out, wrt):
        """Adjoint of ``out`` (scalar) with respect to each Var in ``wrt``."""
        adjoint = [None] * (out.idx + 1)
        adjoint[out.idx] = np.ones_like(np.asarray(out.value))
        for idx in range(out.idx, -1, -1):
            g = adjoint[idx]
            pullback = self.pullbacks[idx]
            if g is None or pullback is None:
                continue
            for pidx, pg in zip(self.parents[idx], pullback(g)):
                if pg is None:
                    continue
                if adjoint[pidx] is None:
                    adjoint[pidx] = pg
                else:
                    adjoint[pidx] = adjoint[pidx] + pg
        out_grads = []
        for var in wrt:
            g = adjoint[var.idx]
            if g is None:
                g = np.zeros_like(np.asarray(var.value))
            out_grads.append(np.asarray(g, dtype=float))
        return out_grads


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "idx", "value")
    __array_ufunc__ = None  # force numpy to defer to the reflected operators

    def __init__(self, tape, idx, value):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return np.shape(self.value)

    # arithmetic ------------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Var):
            v = self.value + other.value
            sa, sb = self.shape, other.shape
            pb = lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
            return self.tape.append(v, (self.idx, other.idx), pb)
        c = other
        v = self.value + c
        sa = self.shape
        pb = lambda g: (_unbroadcast(g, sa),)
        return self.tape.append(v, (self.idx,), pb)

    __radd__ = __add__

    def __neg__(self):
        pb = lambda g: (-g,)
        return self.tape.append(-self.value, (self.idx,), pb)

    def __sub__(self, other):
        if isinstance(other, Var):
            v = self.value - other.value
            sa, sb = self.shape, other.shape
            pb = lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
            return self.tape.append(v, (self.idx, other.idx), pb)
        v = self.value - other
        sa = self.shape
        pb = lambda g: (_unbroadcast(g, sa),)
        return self.tape.append(v, (self.idx,), pb)

    def __rsub__(self, other):
        v = other - self.value
        sa = self.shape
        pb = lambda g: (_unbroadcast(-g, sa),)
        return self.tape.append(v, (self.idx,), pb)

    def __mul__(self, other):
        if isinstance(other, Var):
            av, bv = self.value, other.value
            v = av * bv
            sa, sb = self.shape, other.shape
            pb = lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb))
            return self.tape.append(v, (self.idx, other.idx), pb)
        c = other
        v = self.value * c
        sa = self.shape
        pb = lambda g: (_unbroadcast(g * c, sa),)
        return self.tape.append(v, (self.idx,), pb)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            av, bv = self.value, other.value
            v = av / bv
            sa, sb = self.shape, other.shape
            pb = lambda g: (
                _unbroadcast(g / bv, sa),
                _unbroadcast(-g * av / (bv * bv), sb),
            )
            return self.tape.append(v, (self.idx, other.idx), pb)
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        av = self.value
        v = other / av
        sa = self.shape
        pb = lambda g: (_unbroadcast(-g * other / (av * av), sa),)
        return self.tape.append(v, (self.idx,), pb)

    def __pow__(self, other):
        if isinstance(other, Var):
            return exp(other * log(self))
        c = other
        av = self.value
        v = av**c
        sa = self.shape
        pb = lambda g: (_unbroadcast(g * c * av ** (c - 1), sa),)
        return self.tape.append(v, (self.idx,), pb)

    def __rpow__(self, other):
        return exp(self * math.log(other))


def _unbroadcast(g, shape):
    """Reduce an adjoint back to the shape of the operand it feeds."""
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _unary(x, fwd, deriv):
    """deriv(x_value, out_value) -> elementwise derivative."""
    if not isinstance(x, Var):
        return fwd(np.asarray(x, dtype=float) if np.ndim(x) else x)
    v = fwd(x.value)
    xv = x.value
    pb = lambda g: (g * deriv(xv, v),)
    return x.tape.append(v, (x.idx,), pb)


# elementwise primitives ----------------------------------------------------

def exp(x):
    return _unary(x, np.exp, lambda xv, v: v)


def log(x):
    return _unary(x, np.log, lambda xv, v: 1.0 / xv)


def log1p(x):
    return _unary(x, np.log1p, lambda xv, v: 1.0 / (1.0 + xv))


def expm1(x):
    return _unary(x, np.expm1, lambda xv, v: v + 1.0)


def sqrt(x):
    return _unary(x, np.sqrt, lambda xv, v: 0.5 / v)


def square(x):
    return x * x


def tanh(x):
    return _unary(x, np.tanh, lambda xv, v: 1.0 - v * v)


def _sigmoid(x):
    return _sp.expit(x)


def sigmoid(x):
    return _unary(x, _sigmoid, lambda xv, v: v * (1.0 - v))


inv_logit = sigmoid


def _log_sigmoid(x):
    # -softplus(-x), stable on both sides
    return np.where(x < 0, x - np.log1p(np.exp(-np.abs(x))), -np.log1p(np.exp(-np.abs(x))))


def log_sigmoid(x):
    return _unary(x, _log_sigmoid, lambda xv, v: _sigmoid(-xv))


def log1m_sigmoid(x):
    """log(1 - sigmoid(x)) = log_sigmoid(-x)."""
    return _unary(x, lambda xv: _log_sigmoid(-xv), lambda xv, v: -_sigmoid(xv))


def _phi(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def normal_cdf(x):
    return _unary(x, _sp.ndtr, lambda xv, v: _phi(xv))


def normal_logcdf(x):
    return _unary(x, _sp.log_ndtr, lambda xv, v: np.exp(-0.5 * xv * xv - v) / _SQRT_2PI)


def _log_erfcx_val(xv):
    # erfcx itself overflows near x = -26.6; left of -4 switch to
    # log(2 exp(x^2) - erfcx(-x)) written overflow-free
    xv = np.asarray(xv, dtype=float)
    left = xv < -4.0
    pos = np.log(_sp.erfcx(np.where(left, 0.0, xv)))
    xn = np.where(left, xv, -5.0)
    neg = np.log(2.0) + xn * xn + np.log1p(-0.5 * _sp.erfcx(-xn) * np.exp(-xn * xn))
    return np.where(left, neg, pos)


def log_erfcx(x):
    """log of the scaled complementary error function exp(x^2) erfc(x)."""
    return _unary(
        x,
        _log_erfcx_val,
        lambda xv, v: 2.0 * xv - 2.0 * _INV_SQRT_PI * np.exp(-v),
    )


def lgamma(x):
    return _unary(x, _sp.gammaln, lambda xv, v: _sp.psi(xv))


# structure primitives ------------------------------------------------------

def vsum(x):
    """Sum of all elements to a scalar."""
    if not isinstance(x, Var):
        return np.sum(x)
    v = np.sum(x.value)
    shape = x.shape
    pb = lambda g: (np.broadcast_to(g, shape) if shape else g,)
    return x.tape.append(v, (x.idx,), pb)


def gather(x, idx):
    """x[idx] for a 1-D operand; backward scatter-adds."""
    if not isinstance(x, Var):
        return np.asarray(x)[idx]
    n = len(x.value)
    v = x.value[idx]
    pb = lambda g: (np.bincount(idx, weights=g, minlength=n),)
    return x.tape.append(v, (x.idx,), pb)


def segment_sum(x, idx, n):
    """Sum elements of x into n buckets given by idx."""
    if not isinstance(x, Var):
        return np.bincount(idx, weights=np.asarray(x, dtype=float), minlength=n)
    v = np.bincount(idx, weights=x.value, minlength=n)
    pb = lambda g: (np.asarray(g)[idx],)
    return x.tape.append(v, (x.idx,), pb)


def matvec(m, x):
    """Constant matrix times variable vector."""
    m = np.asarray(m, dtype=float)
    if not isinstance(x, Var):
        return m @ x
    v = m @ x.value
    pb = lambda g: (m.T @ g,)
    return x.tape.append(v, (x.idx,), pb)


def matmul(x, y):
    """Variable (or constant) matrix product."""
    if not isinstance(x, Var) and not isinstance(y, Var):
        return np.asarray(x) @ np.asarray(y)
    if not isinstance(x, Var):
        xc = np.asarray(x, dtype=float)
        v = xc @ y.value
        pb = lambda g: (xc.T @ np.asarray(g),)
        return y.tape.append(v, (y.idx,), pb)
    if not isinstance(y, Var):
        yc = np.asarray(y, dtype=float)
        v = x.value @ yc
        pb = lambda g: (np.asarray(g) @ yc.T,)
        return x.tape.append(v, (x.idx,), pb)
    xv, yv = x.value, y.value
    v = xv @ yv
    pb = lambda g: (np.asarray(g) @ yv.T, xv.T @ np.asarray(g))
    return x.tape.append(v, (x.idx, y.idx), pb)


def reshape(x, shape):
    if not isinstance(x, Var):
        return np.reshape(x, shape)
    orig = x.shape
    v = np.reshape(x.value, shape)
    pb = lambda g: (np.reshape(g, orig),)
    return x.tape.append(v, (x.idx,), pb)


def vslice(x, start, stop):
    """Contiguous slice of a 1-D operand."""
    if not isinstance(x, Var):
        return np.asarray(x)[start:stop]
    n = len(x.value)
    v = x.value[start:stop]

    def pb(g):
        out = np.zeros(n)
        out[start:stop] = g
        return (out,)

    return x.tape.append(v, (x.idx,), pb)


def where(cond, a, b):
    """Branch by a constant boolean mask; differentiates the taken branch."""
    cond = np.asarray(cond, dtype=bool)
    av = a.value if isinstance(a, Var) else a
    bv = b.value if isinstance(b, Var) else b
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.where(cond, av, bv)
    v = np.where(cond, av, bv)
    tape = a.tape if isinstance(a, Var) else b.tape
    parents = []
    slots = []
    if isinstance(a, Var):
        parents.append(a.idx)
        slots.append(("a", a.shape))
    if isinstance(b, Var):
        parents.append(b.idx)
        slots.append(("b", b.shape))

    def pb(g):
        out = []
        for which, shape in slots:
            mask = cond if which == "a" else ~cond
            out.append(_unbroadcast(np.where(mask, g, 0.0), shape))
        return tuple(out)

    return tape.append(v, tuple(parents), pb)


def logsumexp_list(xs):
    """Elementwise log(sum_i exp(xs[i])) over a list of same-shape operands."""
    values = [x.value if isinstance(x, Var) else np.asarray(x, dtype=float) for x in xs]
    stacked = np.stack(np.broadcast_arrays(*values), axis=0)
    top = np.max(stacked, axis=0)
    out = top + np.log(np.sum(np.exp(stacked - top), axis=0))
    if not any(isinstance(x, Var) for x in xs):
        return out
    tape = next(x.tape for x in xs if isinstance(x, Var))
    softmax = np.exp(stacked - out)
    parents = []
    comps = []
    for i, x in enumerate(xs):
        if isinstance(x, Var):
            parents.append(x.idx)
            comps.append((i, x.shape))

    def pb(g):
        return tuple(_unbroadcast(np.asarray(g) * softmax[i], shape) for i, shape in comps)

    return tape.append(out, tuple(parents), pb)


def custom(parent_vars, value, partials):
    """Custom primitive: partials[i] is d(value)/d(parent i), elementwise."""
    tape = parent_vars[0].tape
    pb = lambda g: tuple(_unbroadcast(np.asarray(g) * p, v.shape) for p, v in zip(partials, parent_vars))
    return tape.append(value, tuple(v.idx for v in parent_vars), pb)


# public entry points -------------------------------------------------------

def evaluate(program, point):
    """Forward evaluation only; bit-identical to the gradient pass's value."""
    tape = Tape()
    x = tape.input(point)
    out = program(x)
    return float(np.asarray(out.value if isinstance(out, Var) else out))


def evaluate_with_gradient(program, point):
    """Value and gradient of a scalar program at ``point``.

    Non-finite values are flagged by returning ``(value, None)`` rather than
    raising; NaNs in an otherwise finite gradient are left in place for the
    caller to inspect.
    """
    point = np.asarray(point, dtype=float)
    tape = Tape()
    x = tape.input(point)
    out = program(x)
    value = float(np.asarray(out.value if isinstance(out, Var) else out))
    if not isinstance(out, Var) or not np.isfinite(value):
        return value, None
    grad = tape.backward(out, [x])[0]
    return value, np.asarray(grad, dtype=float).reshape(point.shape)


def check_gradient(program, point, step=1e-5):
    """Worst-coordinate relative error of the tape gradient against central
    finite differences."""
    point = np.asarray(point, dtype=float)
    _, grad = evaluate_with_gradient(program, point)
    if grad is None:
        return float("nan")
    worst = 0.0
    for i in range(point.size):
        shifted = point.copy()
        shifted.flat[i] += step
        up = evaluate(program, shifted)
        shifted.flat[i] -= 2 * step
        down = evaluate(program, shifted)
        fd = (up - down) / (2 * step)
        ad = grad.flat[i]
        denom = max(abs(fd), abs(ad))
        err = abs(fd - ad) if denom < 1e-8 else abs(fd - ad) / denom
        worst = max(worst, err)
    return worst
