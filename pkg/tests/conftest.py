import numpy as np
import pytest

from graphaug.graph import Graph
from graphaug.tensor import Tape, Variable, backward, mul, sum_all

EPS = 1e-5
GRAD_TOL = 1e-4


def random_graph(rng, n=None, p=None, f=None, labels=False, masks=False):
    n = int(rng.integers(1, 21)) if n is None else n
    p = rng.uniform(0.1, 0.6) if p is None else p
    f = int(rng.integers(1, 6)) if f is None else f
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    x = rng.standard_normal((n, f))
    y = rng.integers(0, 3, n) if labels else None
    m = [None] * 3
    if masks:
        split = rng.integers(0, 4, n)  # 3 = unassigned
        m = [split == 0, split == 1, split == 2]
    return Graph(n, edges, x, y, *m)


def path3(features=None):
    x = np.ones((3, 1)) if features is None else features
    return Graph(3, [[0, 1], [1, 2]], x)


def k2(features=None):
    x = np.eye(2) if features is None else features
    return Graph(2, [[0, 1]], x)


def numeric_grad(f, x, eps=EPS):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def check_grads(build, inputs, rng):
    """Compare tape gradients of ``sum(build(*vars) * R)`` with central differences.

    ``inputs`` are arrays; returns the worst ``|a - n| / max(1, |a|)`` over all entries.
    """
    vars_ = [Variable(x.copy(), requires_grad=True) for x in inputs]
    with Tape():
        out = build(*vars_)
        weights = rng.standard_normal(out.shape)
        backward(sum_all(mul(out, weights)))
    worst = 0.0
    for v in vars_:
        def f():
            return float((build(*vars_).value * weights).sum())
        num = numeric_grad(f, v.value)
        err = np.abs(v.grad - num) / np.maximum(1.0, np.abs(v.grad))
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
