"""Dense float64 matrices with tape-based reverse-mode differentiation.

Usage::

    W = Variable(init, requires_grad=True)
    with Tape():
        loss = sum_all(matmul(X, W))
        backward(loss)
    W.grad

Operations only record onto a tape when one is active and some input
requires a gradient; outside a tape they just compute. A tape supports one
backward pass.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DegenerateRowError, IoError, ShapeError, TapeError, ValidationError

__all__ = [
    "Variable", "Tape", "AdamState",
    "as_variable", "matmul", "add", "add_outer", "mul", "scale", "transpose",
    "activation", "softmax_rows", "log_softmax_rows", "concat_cols", "concat_rows",
    "sum_all", "mean_all", "l2_normalize_rows", "pick", "gather_max", "dropout",
    "cross_entropy_masked", "backward", "adam_step", "sgd_step",
    "glorot_uniform", "save_params", "load_params",
]

_ACTIVE = []


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self.records = []
        self.leaves = {}
        self.consumed = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.records)


class Variable:
    __slots__ = ("value", "grad", "requires_grad", "tape", "name")

    def __init__(self, value, requires_grad=False, name=None):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        if v.ndim != 2:
            raise ShapeError(f"Variable values are 2-D, got shape {v.shape}")
        self.value = v
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.tape = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value[0, 0])

    def detach(self):
        return Variable(self.value)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Variable{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


def as_variable(x):
    return x if isinstance(x, Variable) else Variable(x)


def _record(value, parents, backward_fn):
    """Wrap ``value`` and, when differentiation is live, log how to push gradients back."""
    if not np.isfinite(value).all():
        raise FloatingPointError("operation produced a non-finite value")
    out = Variable(value)
    tape = _ACTIVE[-1] if _ACTIVE else None
    if tape is None or not any(p.requires_grad for p in parents):
        return out
    for p in parents:
        if p.requires_grad and p.tape is None:
            tape.leaves[id(p)] = p
    out.requires_grad = True
    out.tape = tape
    tape.records.append((out, parents, backward_fn))
    return out


def matmul(a, b):
    a, b = as_variable(a), as_variable(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    A, B = a.value, b.value
    return _record(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a, b):
    """Elementwise sum; ``b`` may also be a single row broadcast over ``a``'s rows."""
    a, b = as_variable(a), as_variable(b)
    if a.shape == b.shape:
        return _record(a.value + b.value, (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return _record(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ShapeError(f"add: {a.shape} + {b.shape}")


def add_outer(col, row):
    """``out[i, j] = col[i] + row[j]`` for an (n, 1) column and a (1, m) row."""
    col, row = as_variable(col), as_variable(row)
    if col.shape[1] != 1 or row.shape[0] != 1:
        raise ShapeError(f"add_outer needs (n,1) and (1,m), got {col.shape}, {row.shape}")
    return _record(col.value + row.value, (col, row),
                   lambda g: (g.sum(axis=1, keepdims=True), g.sum(axis=0, keepdims=True)))


def mul(a, b):
    a, b = as_variable(a), as_variable(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} * {b.shape}")
    A, B = a.value, b.value
    return _record(A * B, (a, b), lambda g: (g * B, g * A))


def scale(a, c):
    a = as_variable(a)
    c = float(c)
    return _record(a.value * c, (a,), lambda g: (g * c,))


def transpose(a):
    a = as_variable(a)
    return _record(a.value.T.copy(), (a,), lambda g: (g.T,))


def activation(x, kind="relu", slope=0.2):
    """Elementwise ``relu``, ``leaky_relu``, ``sigmoid``, ``elu`` or ``identity``."""
    x = as_variable(x)
    v = x.value
    if kind == "identity":
        return _record(v.copy(), (x,), lambda g: (g,))
    if kind == "relu":
        pos = v > 0
        return _record(np.where(pos, v, 0.0), (x,), lambda g: (g * pos,))
    if kind == "leaky_relu":
        d = np.where(v > 0, 1.0, slope)
        return _record(v * d, (x,), lambda g: (g * d,))
    if kind == "sigmoid":
        y = expit(v)
        return _record(y, (x,), lambda g: (g * y * (1.0 - y),))
    if kind == "elu":
        neg = np.expm1(np.minimum(v, 0.0))
        y = np.where(v > 0, v, neg)
        d = np.where(v > 0, 1.0, neg + 1.0)
        return _record(y, (x,), lambda g: (g * d,))
    raise ValidationError(f"unknown activation {kind!r}")


def _check_mask(x, mask):
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.shape:
        raise ShapeError(f"mask shape {m.shape} differs from input {x.shape}")
    if not m.any(axis=1).all():
        raise DegenerateRowError("a row has every entry masked out")
    return m


def _shifted(v, m):
    if m is None:
        return v - v.max(axis=1, keepdims=True)
    rowmax = np.where(m, v, -np.inf).max(axis=1, keepdims=True)
    return np.where(m, v - rowmax, -np.inf)


def softmax_rows(x, mask=None):
    """Row softmax restricted to ``mask``; masked entries are exactly zero."""
    x = as_variable(x)
    m = _check_mask(x.value, mask)
    e = np.exp(_shifted(x.value, m))
    y = e / e.sum(axis=1, keepdims=True)
    return _record(y, (x,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),))


def log_softmax_rows(x, mask=None):
    """Row log-softmax restricted to ``mask``; masked entries are set to 0 and carry no gradient."""
    x = as_variable(x)
    m = _check_mask(x.value, mask)
    s = _shifted(x.value, m)
    lse = np.log(np.exp(s).sum(axis=1, keepdims=True))
    if m is None:
        y = s - lse
        p = np.exp(y)
        return _record(y, (x,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))
    y = np.where(m, s - lse, 0.0)
    p = np.where(m, np.exp(y), 0.0)

    def back(g):
        g = np.where(m, g, 0.0)
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _record(y, (x,), back)


def concat_cols(a, b):
    a, b = as_variable(a), as_variable(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: {a.shape} | {b.shape}")
    k = a.shape[1]
    return _record(np.hstack([a.value, b.value]), (a, b), lambda g: (g[:, :k], g[:, k:]))


def concat_rows(a, b):
    a, b = as_variable(a), as_variable(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_rows: {a.shape} over {b.shape}")
    k = a.shape[0]
    return _record(np.vstack([a.value, b.value]), (a, b), lambda g: (g[:k], g[k:]))


def sum_all(x):
    x = as_variable(x)
    shape = x.shape
    return _record(np.array([[x.value.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),))


def mean_all(x):
    x = as_variable(x)
    shape, n = x.shape, x.value.size
    return _record(np.array([[x.value.mean()]]), (x,), lambda g: (np.full(shape, g[0, 0] / n),))


def l2_normalize_rows(x):
    x = as_variable(x)
    norm = np.linalg.norm(x.value, axis=1, keepdims=True)
    if (norm == 0).any():
        raise ValidationError("cannot normalize an all-zero row")
    y = x.value / norm
    return _record(y, (x,), lambda g: ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,))


def pick(x, rows, cols):
    """Column vector of ``x[rows[k], cols[k]]``."""
    x = as_variable(x)
    rows, cols = np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, (rows, cols), g[:, 0])
        return (out,)

    return _record(x.value[rows, cols].reshape(-1, 1), (x,), back)


def gather_max(x, index):
    """``out[v] = max_j x[index[v, j]]`` elementwise over the gathered rows."""
    x = as_variable(x)
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] == 0:
        raise ShapeError("gather_max needs a nonempty (n, k) index")
    stacked = x.value[idx]                       # (n, k, f)
    arg = stacked.argmax(axis=1)                 # first maximum wins
    src = np.take_along_axis(idx[:, :, None], arg[:, None, :], axis=1)[:, 0, :]
    cols = np.broadcast_to(np.arange(x.shape[1]), src.shape)
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, (src, cols), g)
        return (out,)

    return _record(stacked.max(axis=1), (x,), back)


def dropout(x, rate, rng):
    """Inverted dropout with a mask drawn from ``rng``; ``rate == 0`` is a no-op."""
    x = as_variable(x)
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record(x.value * keep, (x,), lambda g: (g * keep,))


def cross_entropy_masked(logits, labels, mask):
    """Mean negative log-likelihood of ``labels`` over the nodes selected by ``mask``."""
    logits = as_variable(logits)
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValidationError("cross entropy over an empty mask")
    y = np.asarray(labels, dtype=np.int64)[idx]
    z = logits.value[idx]
    s = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(s).sum(axis=1))
    nll = lse - s[np.arange(idx.size), y]
    shape = logits.shape

    def back(g):
        p = np.exp(s - lse[:, None])
        p[np.arange(idx.size), y] -= 1.0
        out = np.zeros(shape)
        out[idx] = p * (g[0, 0] / idx.size)
        return (out,)

    return _record(np.array([[nll.mean()]]), (logits,), back)


def backward(loss):
    """Fill ``.grad`` on every leaf reachable from ``loss``'s tape.

    Gradients add onto existing leaf grads; leaves on the tape that do not
    influence ``loss`` receive zeros. The tape is then spent.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise TapeError("loss was not computed on a tape")
    if tape.consumed:
        raise TapeError("tape already used for a backward pass")
    grads = {id(loss): np.ones((1, 1))}
    for out, parents, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, pg in zip(parents, fn(g)):
            if pg is None or not p.requires_grad:
                continue
            k = id(p)
            grads[k] = grads[k] + pg if k in grads else pg
    for k, leaf in tape.leaves.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros(leaf.shape)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
    tape.consumed = True


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 5e-4
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    """One Adam update with bias correction; weight decay is added to the gradient.

    Moments are keyed by position in ``params``. Grads are reset to zero.
    """
    for p in params:
        if p.grad is None:
            raise ValidationError(f"parameter {p.name or ''} has no gradient")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, p in enumerate(params):
        g = p.grad + state.weight_decay * p.value if state.weight_decay else p.grad
        if i not in state.m:
            state.m[i] = np.zeros(p.shape)
            state.v[i] = np.zeros(p.shape)
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.value = p.value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = np.zeros(p.shape)


def sgd_step(params, lr=0.01, weight_decay=0.0):
    for p in params:
        if p.grad is None:
            raise ValidationError(f"parameter {p.name or ''} has no gradient")
        g = p.grad + weight_decay * p.value if weight_decay else p.grad
        p.value = p.value - lr * g
        p.grad = np.zeros(p.shape)


def glorot_uniform(fan_in, fan_out, rng, name=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Variable(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


def save_params(params, path, extra=None):
    """Write ``{name: Variable}`` as JSON of shape-tagged float lists (round-trip exact)."""
    obj = {"params": {k: {"shape": list(v.shape), "data": v.value.ravel().tolist()}
                      for k, v in params.items()}}
    if extra is not None:
        obj["extra"] = extra
    try:
        Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_params(path):
    """Inverse of :func:`save_params`; returns ``(params, extra)``."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    params = {}
    for k, rec in obj["params"].items():
        arr = np.array(rec["data"], dtype=np.float64).reshape(rec["shape"])
        params[k] = Variable(arr, requires_grad=True, name=k)
    return params, obj.get("extra")
