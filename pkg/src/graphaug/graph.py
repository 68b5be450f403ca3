"""Undirected graphs with dense node features, derived matrices, I/O and SBM generation.

Every matrix is a float64 ``numpy.ndarray``. A :class:`Graph` is immutable:
its arrays are flagged read-only and augmentations return new graphs.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError, ShapeError, ValidationError

__all__ = [
    "Graph",
    "DatasetStats",
    "KNOWN_STATS",
    "adjacency_matrix",
    "degree_matrix",
    "sym_normalize",
    "normalized_adjacency",
    "neighbors",
    "neighbor_lists",
    "synthetic_sbm",
    "stratified_masks",
    "graph_stats",
    "load_graph",
    "save_graph",
    "load_linqs",
]


def _frozen(a):
    a.setflags(write=False)
    return a


def _rebuild(num_nodes, edges, *rest):
    return Graph(num_nodes, edges, *rest, _trusted=True)


def _canonical_edges(edges, num_nodes):
    """Return sorted unique (min, max) pairs as an (E, 2) int64 array."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        bad = e[(e < 0).any(axis=1) | (e >= num_nodes).any(axis=1)][0]
        raise ValidationError(
            f"edge ({bad[0]}, {bad[1]}) references a node outside [0, {num_nodes})")
    e = np.sort(e, axis=1)
    uniq = np.unique(e, axis=0)
    return uniq, len(uniq) != len(e)


class Graph:
    """Simple undirected graph ``G = (V, E)`` with node features.

    Parameters
    ----------
    num_nodes : int
    edges : array-like of shape (E, 2)
        Undirected pairs. Stored canonically as sorted ``(min, max)`` rows;
        duplicates (in either orientation) are collapsed with a warning.
    features : array-like of shape (num_nodes, F)
    labels : array-like of int, optional
    train_mask, val_mask, test_mask : array-like of bool, optional
        Either all three or none; must be pairwise disjoint.
    """

    __slots__ = ("num_nodes", "edges", "features", "labels",
                 "train_mask", "val_mask", "test_mask")

    def __init__(self, num_nodes, edges, features, labels=None,
                 train_mask=None, val_mask=None, test_mask=None, *, _trusted=False):
        num_nodes = int(num_nodes)
        if num_nodes < 0:
            raise ValidationError("num_nodes must be nonnegative")
        if _trusted:
            edges_arr = edges
        else:
            edges_arr, dup = _canonical_edges(edges, num_nodes)
            if dup:
                warnings.warn("duplicate or reversed edges collapsed (input treated as undirected)",
                              stacklevel=2)
        x = np.array(features, dtype=np.float64, copy=True)
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(num_nodes, 0)
        if x.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {x.shape}")
        if x.shape[0] != num_nodes:
            raise ValidationError(
                f"features have {x.shape[0]} rows but num_nodes is {num_nodes}")
        if not np.isfinite(x).all():
            raise ValidationError("features contain NaN or Inf")

        y = None
        if labels is not None:
            y = np.array(labels, dtype=np.int64, copy=True).reshape(-1)
            if y.shape[0] != num_nodes:
                raise ValidationError(f"labels length {y.shape[0]} != num_nodes {num_nodes}")
            if y.size and y.min() < 0:
                raise ValidationError("labels must be nonnegative")

        masks = [train_mask, val_mask, test_mask]
        if any(m is not None for m in masks):
            if any(m is None for m in masks):
                raise ValidationError("train/val/test masks must be given together")
            masks = [np.array(m, dtype=bool, copy=True).reshape(-1) for m in masks]
            for m in masks:
                if m.shape[0] != num_nodes:
                    raise ValidationError("mask length differs from num_nodes")
            if (masks[0] & masks[1]).any() or (masks[0] & masks[2]).any() or (masks[1] & masks[2]).any():
                raise ValidationError("train/val/test masks overlap")
            masks = [_frozen(m) for m in masks]
        else:
            masks = [None, None, None]

        object.__setattr__(self, "num_nodes", num_nodes)
        object.__setattr__(self, "edges", _frozen(np.array(edges_arr, dtype=np.int64)))
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", None if y is None else _frozen(y))
        object.__setattr__(self, "train_mask", masks[0])
        object.__setattr__(self, "val_mask", masks[1])
        object.__setattr__(self, "test_mask", masks[2])

    def __setattr__(self, name, value):
        raise AttributeError("Graph is immutable; use Graph.replace")

    def __reduce__(self):
        return (_rebuild, (self.num_nodes, self.edges, self.features, self.labels,
                           self.train_mask, self.val_mask, self.test_mask))

    @property
    def num_edges(self):
        return int(self.edges.shape[0])

    @property
    def num_features(self):
        return int(self.features.shape[1])

    @property
    def num_classes(self):
        return 0 if self.labels is None or not self.labels.size else int(self.labels.max()) + 1

    @property
    def has_masks(self):
        return self.train_mask is not None

    def any_mask(self):
        """Boolean vector of nodes that belong to some split."""
        if not self.has_masks:
            return np.zeros(self.num_nodes, dtype=bool)
        return self.train_mask | self.val_mask | self.test_mask

    def replace(self, *, edges=None, features=None):
        """New graph with swapped edges and/or features; labels and masks are kept."""
        if edges is None:
            new_edges, trusted = self.edges, True
        else:
            new_edges, trusted = edges, False
        return Graph(self.num_nodes, new_edges,
                     self.features if features is None else features,
                     self.labels, self.train_mask, self.val_mask, self.test_mask,
                     _trusted=trusted)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()

        return (self.num_nodes == other.num_nodes
                and all(same(getattr(self, f), getattr(other, f))
                        for f in ("edges", "features", "labels",
                                  "train_mask", "val_mask", "test_mask")))

    __hash__ = None

    def __repr__(self):
        return (f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges}, "
                f"num_features={self.num_features}, labeled={self.labels is not None})")


@dataclass(frozen=True)
class DatasetStats:
    nodes: int
    edges: int
    features: int
    classes: int
    category: str = ""

    def __post_init__(self):
        if min(self.nodes, self.edges, self.features, self.classes) < 0:
            raise ValidationError("dataset statistics must be nonnegative")


# Reference sizes. Some differ from common public releases (CORA node count,
# FLICKR), so a mismatch only warns.
KNOWN_STATS = {
    "cora": DatasetStats(2078, 5278, 1433, 7, "Literature references"),
    "citeseer": DatasetStats(3327, 4522, 3703, 6, "Literature references"),
    "ppi": DatasetStats(10076, 157213, 50, 121, "Bioinformatics"),
    "blogcatalog": DatasetStats(5196, 171743, 8189, 6, "Social network"),
    "flickr": DatasetStats(575, 239738, 12047, 9, "Social network"),
}


def graph_stats(g, category=""):
    return DatasetStats(g.num_nodes, g.num_edges, g.num_features, g.num_classes, category)


def adjacency_matrix(g, self_loops=False):
    """Dense symmetric 0/1 adjacency; ``self_loops`` sets the diagonal to one."""
    n = g.num_nodes
    a = np.zeros((n, n), dtype=np.float64)
    if g.num_edges:
        u, v = g.edges[:, 0], g.edges[:, 1]
        a[u, v] = 1.0
        a[v, u] = 1.0
    if self_loops:
        np.fill_diagonal(a, 1.0)
    return a


def degree_matrix(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"adjacency must be square, got {a.shape}")
    return np.diag(a.sum(axis=1))


def sym_normalize(a, d):
    """``D^{-1/2} A D^{-1/2}``; rows and columns with zero degree come out as zeros."""
    a = np.asarray(a, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or d.shape != a.shape:
        raise ShapeError(f"need square A and D of equal shape, got {a.shape} and {d.shape}")
    deg = np.diag(d)
    if (deg < 0).any():
        raise ValidationError("degree matrix has a negative diagonal entry")
    denom = np.sqrt(np.outer(deg, deg))
    out = np.zeros_like(a)
    np.divide(a, denom, out=out, where=denom > 0)
    return out


def normalized_adjacency(g):
    """Self-looped, symmetrically normalized adjacency used by GCN and FANA."""
    a = adjacency_matrix(g, self_loops=True)
    return sym_normalize(a, degree_matrix(a))


def neighbors(g, v):
    if not 0 <= v < g.num_nodes:
        raise IndexError(f"node {v} out of range for {g.num_nodes} nodes")
    e = g.edges
    out = set(e[e[:, 0] == v, 1].tolist())
    out.update(e[e[:, 1] == v, 0].tolist())
    return out


def neighbor_lists(g):
    """Sorted neighbor arrays for every node (one pass over the edge set)."""
    e = g.edges
    if not len(e):
        return [np.zeros(0, dtype=np.int64) for _ in range(g.num_nodes)]
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    loops = src == dst
    keep = ~loops | (np.arange(len(src)) < len(e))
    src, dst = src[keep], dst[keep]
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    bounds = np.searchsorted(src, np.arange(g.num_nodes + 1))
    return [dst[bounds[i]:bounds[i + 1]] for i in range(g.num_nodes)]


def stratified_masks(labels, rng, fractions=(0.6, 0.2)):
    """Per-class shuffled 60/20/20 split (train/val/test by default)."""
    labels = np.asarray(labels)
    n = len(labels)
    train, val, test = (np.zeros(n, dtype=bool) for _ in range(3))
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_tr = int(round(fractions[0] * len(idx)))
        n_va = int(round(fractions[1] * len(idx)))
        train[idx[:n_tr]] = True
        val[idx[n_tr:n_tr + n_va]] = True
        test[idx[n_tr + n_va:]] = True
    return train, val, test


def synthetic_sbm(n, classes, p_in, p_out, feat_dim, noise, seed):
    """Stochastic block model graph with noisy class-indicator features.

    Blocks are contiguous; when ``classes`` does not divide ``n`` the first
    ``n % classes`` blocks get one extra node. Feature column ``c`` is the
    indicator of block ``c`` and every entry gets ``noise * N(0, 1)`` added.
    """
    if classes < 1 or classes > n:
        raise ValidationError(f"need 1 <= classes <= n, got classes={classes}, n={n}")
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise ValidationError("need 0 <= p_out <= p_in <= 1")
    if feat_dim < classes:
        raise ValidationError("feat_dim must be at least the number of classes")
    rng = np.random.default_rng(seed)
    sizes = [n // classes + (1 if c < n % classes else 0) for c in range(classes)]
    labels = np.repeat(np.arange(classes), sizes)

    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(len(iu)) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    x = np.zeros((n, feat_dim))
    x[np.arange(n), labels] = 1.0
    x += noise * rng.standard_normal((n, feat_dim))
    masks = stratified_masks(labels, rng)
    return Graph(n, edges, x, labels, *masks)


# ---------------------------------------------------------------- file I/O

def _as_format(fmt, path):
    if fmt is None:
        fmt = "graph-json" if str(path).endswith(".json") else "edge-list+csv"
    if fmt not in ("graph-json", "edge-list+csv"):
        raise ValidationError(f"unknown graph format {fmt!r}")
    return fmt


def _features_path(path, features_path):
    return Path(features_path) if features_path else Path(path).with_suffix(".csv")


def load_graph(path, format=None, *, features_path=None, expected=None):
    """Read a graph in ``graph-json`` or ``edge-list+csv`` format.

    For ``edge-list+csv``, ``path`` is the edge file and the feature CSV
    defaults to the same stem with a ``.csv`` suffix. ``expected`` (a
    :class:`DatasetStats` or a key of :data:`KNOWN_STATS`) is compared with
    the loaded graph and any mismatch is reported as a warning.
    """
    fmt = _as_format(format, path)
    try:
        g = _load_json(path) if fmt == "graph-json" else _load_edge_csv(path, _features_path(path, features_path))
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if expected is not None:
        if isinstance(expected, str):
            expected = KNOWN_STATS[expected.lower()]
        got = graph_stats(g)
        diffs = [f"{k}: file {getattr(got, k)} vs expected {getattr(expected, k)}"
                 for k in ("nodes", "edges", "features", "classes")
                 if getattr(got, k) != getattr(expected, k)]
        if diffs:
            warnings.warn("dataset statistics mismatch: " + "; ".join(diffs), stacklevel=2)
    return g


_JSON_KEYS = {"num_nodes", "edges", "features", "labels", "train_mask", "val_mask", "test_mask"}


def _load_json(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: top-level value must be an object")
    unknown = set(obj) - _JSON_KEYS
    if unknown:
        raise FormatError(f"{path}: unknown field(s) {sorted(unknown)}")
    for key in ("num_nodes", "edges", "features"):
        if key not in obj:
            raise FormatError(f"{path}: missing field {key!r}")
    n = obj["num_nodes"]
    if not isinstance(n, int) or isinstance(n, bool):
        raise FormatError(f"{path}: field 'num_nodes' must be an integer")
    edges = obj["edges"]
    if not isinstance(edges, list) or any(
            not isinstance(e, list) or len(e) != 2 or not all(isinstance(i, int) for i in e)
            for e in edges):
        raise FormatError(f"{path}: field 'edges' must be a list of [int, int] pairs")
    feats = obj["features"]
    if not isinstance(feats, list):
        raise FormatError(f"{path}: field 'features' must be a list of rows")
    widths = {len(r) if isinstance(r, list) else -1 for r in feats}
    if -1 in widths or len(widths) > 1:
        raise FormatError(f"{path}: field 'features' rows must be equal-length lists")
    width = widths.pop() if widths else 0
    try:
        x = np.array(feats, dtype=np.float64).reshape(len(feats), width)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: field 'features': {exc}") from exc
    masks = [obj.get(k) for k in ("train_mask", "val_mask", "test_mask")]
    return Graph(n, edges, x, obj.get("labels"), *masks)


def _load_edge_csv(edge_path, feat_path):
    edges = []
    with open(edge_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 2:
                raise FormatError(f"{edge_path}:{lineno}: expected 'u v', got {line.strip()!r}")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError as exc:
                raise FormatError(f"{edge_path}:{lineno}: {exc}") from exc
    with open(feat_path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    header = None
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            header, rows = rows[0], rows[1:]
    has_label = header is not None and header and header[-1] == "label"
    feats, labels = [], []
    for i, row in enumerate(rows, 2 if header is not None else 1):
        try:
            vals = [float(c) for c in (row[:-1] if has_label else row)]
            if has_label:
                labels.append(int(row[-1]))
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{feat_path}:{i}: {exc}") from exc
        feats.append(vals)
    if len({len(r) for r in feats}) > 1:
        raise FormatError(f"{feat_path}: rows have differing column counts")
    width = len(feats[0]) if feats else 0
    x = np.array(feats, dtype=np.float64).reshape(len(feats), width)
    return Graph(len(feats), edges, x, labels if has_label else None)


def save_graph(g, path, format=None, *, features_path=None):
    """Write ``g``; floats use shortest round-trip repr so a reload is bit-exact.

    ``edge-list+csv`` carries edges, features and labels; masks are only kept
    by ``graph-json``.
    """
    fmt = _as_format(format, path)
    try:
        if fmt == "graph-json":
            obj = {
                "num_nodes": g.num_nodes,
                "edges": g.edges.tolist(),
                "features": g.features.tolist(),
                "labels": None if g.labels is None else g.labels.tolist(),
                "train_mask": None if g.train_mask is None else g.train_mask.tolist(),
                "val_mask": None if g.val_mask is None else g.val_mask.tolist(),
                "test_mask": None if g.test_mask is None else g.test_mask.tolist(),
            }
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                json.dump(obj, fh)
                fh.write("\n")
        else:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                for u, v in g.edges.tolist():
                    fh.write(f"{u} {v}\n")
            with open(_features_path(path, features_path), "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                header = [f"f{j}" for j in range(g.num_features)]
                w.writerow(header + (["label"] if g.labels is not None else []))
                for i, row in enumerate(g.features.tolist()):
                    w.writerow([repr(v) for v in row]
                               + ([int(g.labels[i])] if g.labels is not None else []))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_linqs(content_path, cites_path, seed=0):
    """Read the LINQS ``.content`` / ``.cites`` pair used by Cora and CiteSeer.

    Document ids are mapped to row order of the content file, class names to
    sorted integer ids, and citations to unknown ids are dropped. A
    stratified 60/20/20 split is drawn with ``seed``.
    """
    ids, feats, names = [], [], []
    with open(content_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 3:
                raise FormatError(f"{content_path}:{lineno}: too few columns")
            ids.append(parts[0])
            try:
                feats.append([float(c) for c in parts[1:-1]])
            except ValueError as exc:
                raise FormatError(f"{content_path}:{lineno}: {exc}") from exc
            names.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    edges = []
    with open(cites_path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) == 2 and parts[0] in index and parts[1] in index:
                u, v = index[parts[0]], index[parts[1]]
                if u != v:
                    edges.append((u, v))
    classes = {c: i for i, c in enumerate(sorted(set(names)))}
    labels = np.array([classes[c] for c in names])
    e, _ = _canonical_edges(edges, len(ids))
    masks = stratified_masks(labels, np.random.default_rng(seed))
    return Graph(len(ids), e, np.array(feats), labels, *masks, _trusted=True)

