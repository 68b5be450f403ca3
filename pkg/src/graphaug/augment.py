"""Graph data augmentations.

Two feature-level methods, degree multiplication (:func:`fdm`) and
normalized-adjacency aggregation (:func:`fana`), plus the usual baselines:
edge removal, feature masking, node dropping and random-walk subsampling.

Every function is a pure map ``(Graph, hyperparameters, seed) -> Graph`` that
keeps the node index space, labels and masks untouched.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.special import expit

from .errors import ValidationError
from .graph import Graph, adjacency_matrix, degree_matrix, neighbor_lists, normalized_adjacency

__all__ = [
    "AugmenterSpec",
    "FdmMultipliers",
    "KINDS",
    "SHORT_NAMES",
    "derive_seed",
    "fdm_multipliers",
    "fdm",
    "fana",
    "edge_remove",
    "feature_mask",
    "node_drop",
    "random_walk_sample",
    "apply",
    "draw_pair",
    "sample_pair_from_pool",
]

KINDS = ("identity", "edge_remove", "feature_mask", "node_drop",
         "random_walk_sample", "fdm", "fana")

SHORT_NAMES = {
    "identity": "I",
    "edge_remove": "ER",
    "feature_mask": "FM",
    "node_drop": "ND",
    "random_walk_sample": "RWS",
    "fdm": "FDM",
    "fana": "FANA",
}

# Fields each kind accepts in its JSON form (besides "kind").
_ALLOWED = {
    "identity": {"seed"},
    "edge_remove": {"p", "seed"},
    "feature_mask": {"p", "per_entry", "seed"},
    "node_drop": {"p", "protect_masks", "seed"},
    "random_walk_sample": {"keep_ratio", "seed"},
    "fdm": {"alpha", "seed"},
    "fana": {"p", "mode", "seed"},
}

# FDM and expected-mode FANA are deterministic; everything else draws random numbers.
STOCHASTIC_KINDS = {"edge_remove", "feature_mask", "node_drop", "random_walk_sample"}


def derive_seed(*parts):
    """Stable 32-bit seed from a tuple of nonnegative ints (e.g. run seed, epoch)."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass(frozen=True)
class AugmenterSpec:
    """One augmentation and its hyperparameters.

    ``p`` is the FANA aggregation probability, or the drop/mask probability
    for edge removal, feature masking and node dropping (default 0.2 for
    those, 1.0 for FANA). ``keep_ratio`` only applies to random-walk
    sampling, ``alpha`` to FDM and ``mode`` to FANA.
    """

    kind: str
    p: float | None = None
    alpha: float = 1.0
    keep_ratio: float = 0.8
    mode: str = "stochastic"
    per_entry: bool = False
    protect_masks: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown augmentation kind {self.kind!r}")
        if self.p is None:
            object.__setattr__(self, "p", 1.0 if self.kind == "fana" else 0.2)
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"p must lie in [0, 1], got {self.p}")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ValidationError(f"keep_ratio must lie in (0, 1], got {self.keep_ratio}")
        if not math.isfinite(self.alpha):
            raise ValidationError("alpha must be finite")
        if self.mode not in ("stochastic", "expected"):
            raise ValidationError(f"unknown FANA mode {self.mode!r}")

    @property
    def label(self):
        return SHORT_NAMES[self.kind]

    @property
    def stochastic(self):
        return self.kind in STOCHASTIC_KINDS or (self.kind == "fana" and self.mode == "stochastic")

    def with_seed(self, seed):
        d = asdict(self)
        d["seed"] = int(seed)
        return AugmenterSpec(**d)

    def to_dict(self):
        """JSON-ready dict holding only the fields relevant to ``kind``."""
        d = asdict(self)
        return {"kind": self.kind, **{k: d[k] for k in sorted(_ALLOWED[self.kind])}}

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict) or "kind" not in obj:
            raise ValidationError("augmentation spec must be an object with a 'kind' field")
        kind = obj["kind"]
        if kind not in KINDS:
            raise ValidationError(f"unknown augmentation kind {kind!r}")
        extra = set(obj) - {"kind"} - _ALLOWED[kind]
        if extra:
            raise ValidationError(f"field(s) {sorted(extra)} not accepted for kind {kind!r}")
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in obj.items() if k in names})

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class FdmMultipliers:
    degrees: np.ndarray
    multipliers: np.ndarray


def fdm_multipliers(g, alpha):
    """Node degrees (no self-loops) and their sigmoid multipliers ``1/(1+exp(-alpha*d))``."""
    d = degree_matrix(adjacency_matrix(g, self_loops=False)).diagonal().copy()
    return FdmMultipliers(d, expit(alpha * d))


def fdm(g, alpha=1.0):
    """Scale row ``i`` of the features by ``d_i * sigmoid(alpha * d_i)``.

    Isolated nodes have ``d_i = 0`` and therefore end up with a zero row.
    """
    m = fdm_multipliers(g, alpha)
    scale = m.degrees * m.multipliers
    return g.replace(features=g.features * scale[:, None])


def fana(g, p=1.0, mode="stochastic", seed=0):
    """Replace feature rows by their normalized-adjacency aggregate.

    The aggregate is ``Â X`` with ``Â = D^{-1/2}(A + I)D^{-1/2}``. In
    ``"stochastic"`` mode each row is replaced independently when a draw
    ``r ~ U(0, 1]`` satisfies ``r <= p``; ``"expected"`` mode returns the
    mixture ``p * Â X + (1 - p) * X``.
    """
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"p must lie in [0, 1], got {p}")
    x = g.features
    agg = normalized_adjacency(g) @ x
    if mode == "expected":
        out = p * agg + (1.0 - p) * x
    elif mode == "stochastic":
        rng = np.random.default_rng(seed)
        r = 1.0 - rng.random(g.num_nodes)
        out = np.where((r <= p)[:, None], agg, x)
    else:
        raise ValidationError(f"unknown FANA mode {mode!r}")
    return g.replace(features=out)


def edge_remove(g, p=0.2, seed=0):
    rng = np.random.default_rng(seed)
    keep = rng.random(g.num_edges) >= p
    return g.replace(edges=g.edges[keep])


def feature_mask(g, p=0.2, seed=0, per_entry=False):
    """Zero whole feature columns with probability ``p`` (single entries if ``per_entry``)."""
    rng = np.random.default_rng(seed)
    x = g.features.copy()
    if per_entry:
        x[rng.random(x.shape) < p] = 0.0
    else:
        x[:, rng.random(g.num_features) < p] = 0.0
    return g.replace(features=x)


def _drop_nodes(g, dropped):
    x = g.features.copy()
    x[dropped] = 0.0
    e = g.edges
    keep = ~(dropped[e[:, 0]] | dropped[e[:, 1]])
    return g.replace(edges=e[keep], features=x)


def node_drop(g, p=0.2, seed=0, protect_masks=True):
    """Drop nodes by zeroing their features and cutting their edges.

    Node indices are preserved. With ``protect_masks`` any node in a
    train/val/test split is kept.
    """
    rng = np.random.default_rng(seed)
    dropped = rng.random(g.num_nodes) < p
    if protect_masks:
        dropped &= ~g.any_mask()
    return _drop_nodes(g, dropped)


def random_walk_sample(g, keep_ratio=0.8, seed=0):
    """Keep the nodes visited by a uniform random walk, drop the rest.

    The walk stops once ``ceil(keep_ratio * N)`` distinct nodes are seen or
    after ``10 * N`` steps; at a dead end it restarts from a fresh uniform
    node.
    """
    if g.num_edges == 0:
        raise ValidationError("random walk sampling needs a graph with at least one edge")
    n = g.num_nodes
    nbrs = neighbor_lists(g)
    rng = np.random.default_rng(seed)
    target = math.ceil(keep_ratio * n)
    cur = int(rng.integers(n))
    visited = np.zeros(n, dtype=bool)
    visited[cur] = True
    count, steps = 1, 0
    while count < target and steps < 10 * n:
        nb = nbrs[cur]
        if len(nb) == 0:
            cur = int(rng.integers(n))
        else:
            cur = int(nb[rng.integers(len(nb))])
        if not visited[cur]:
            visited[cur] = True
            count += 1
        steps += 1
    return _drop_nodes(g, ~visited)


def apply(spec, g, seed=None):
    """Run the augmentation described by ``spec``; ``seed`` overrides ``spec.seed``."""
    s = spec.seed if seed is None else seed
    k = spec.kind
    if k == "identity":
        return g
    if k == "fdm":
        return fdm(g, spec.alpha)
    if k == "fana":
        return fana(g, spec.p, spec.mode, s)
    if k == "edge_remove":
        return edge_remove(g, spec.p, s)
    if k == "feature_mask":
        return feature_mask(g, spec.p, s, per_entry=spec.per_entry)
    if k == "node_drop":
        return node_drop(g, spec.p, s, protect_masks=spec.protect_masks)
    return random_walk_sample(g, spec.keep_ratio, s)


def draw_pair(pool, seed):
    """Choose two pool indices (uniform, with replacement) and a sub-seed for each."""
    if not pool:
        raise ValidationError("augmentation pool is empty")
    ss = np.random.SeedSequence(int(seed))
    rng = np.random.default_rng(ss)
    i, j = (int(t) for t in rng.integers(len(pool), size=2))
    s_i, s_j = (int(t) for t in ss.spawn(1)[0].generate_state(2))
    return (i, s_i), (j, s_j)


def sample_pair_from_pool(pool, g, seed):
    """Two augmented views of ``g`` from independently drawn pool members."""
    (i, s_i), (j, s_j) = draw_pair(pool, seed)
    return apply(pool[i], g, s_i), apply(pool[j], g, s_j)
