"""Graph-level contrastive pretraining with augmented view pairs.

Two views of every graph are drawn from an augmentation pool, encoded by one
shared GIN encoder with mean readout, projected by a small MLP head and
pulled together with the NT-Xent loss. Representation quality is scored by
a linear probe (macro-F1).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import augment as aug
from .errors import ValidationError
from .graph import Graph, synthetic_sbm
from .models import ModelConfig, classification_scores, init_params, model_forward
from .tensor import (
    AdamState,
    Tape,
    Variable,
    activation,
    adam_step,
    add,
    backward,
    concat_rows,
    cross_entropy_masked,
    glorot_uniform,
    l2_normalize_rows,
    log_softmax_rows,
    matmul,
    mean_all,
    pick,
    scale,
    transpose,
)

__all__ = [
    "GraphBatch", "ContrastiveConfig", "GinEncoder",
    "readout_pool", "nt_xent_loss", "train_contrastive",
    "graph_embeddings", "linear_probe_f1", "linear_eval_f1",
    "majority_f1", "stratified_split", "synthetic_graph_dataset",
]


@dataclass
class GraphBatch:
    """Several graphs viewed as one block-diagonal graph."""

    graphs: list
    labels: np.ndarray | None = None

    def __post_init__(self):
        if not self.graphs:
            raise ValidationError("a batch needs at least one graph")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.graphs):
                raise ValidationError("one label per graph required")

    def __len__(self):
        return len(self.graphs)

    @property
    def assignment(self):
        return np.repeat(np.arange(len(self.graphs)), [g.num_nodes for g in self.graphs])

    def merged(self):
        offsets = np.cumsum([0] + [g.num_nodes for g in self.graphs])
        edges = [g.edges + off for g, off in zip(self.graphs, offsets)]
        feats = np.vstack([g.features for g in self.graphs])
        return Graph(int(offsets[-1]), np.vstack(edges), feats, _trusted=True)

    def subset(self, idx):
        return GraphBatch([self.graphs[i] for i in idx],
                          None if self.labels is None else self.labels[idx])


@dataclass
class ContrastiveConfig:
    pool: list = field(default_factory=lambda: [aug.AugmenterSpec("edge_remove"),
                                                aug.AugmenterSpec("feature_mask")])
    tau: float = 0.5
    gin_layers: int = 3
    hidden: int = 32
    proj_dim: int = 32
    gin_eps: float = 0.0
    readout: str = "mean"
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.002
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValidationError("temperature must be positive")
        if not self.pool:
            raise ValidationError("augmentation pool is empty")
        if self.batch_size < 2:
            raise ValidationError("batch size must be at least 2")
        self.pool = [p if isinstance(p, aug.AugmenterSpec) else aug.AugmenterSpec.from_dict(p)
                     for p in self.pool]


def readout_pool(node_embs, assignment, kind="mean", num_graphs=None):
    """Per-graph mean or sum of node rows, as a (num_graphs, dim) Variable."""
    assignment = np.asarray(assignment, dtype=np.int64)
    g = int(assignment.max()) + 1 if num_graphs is None else num_graphs
    counts = np.bincount(assignment, minlength=g)
    if (counts == 0).any():
        raise ValidationError("readout over a graph with zero nodes")
    pool = np.zeros((g, len(assignment)))
    pool[assignment, np.arange(len(assignment))] = 1.0
    if kind == "mean":
        pool /= counts[:, None]
    elif kind != "sum":
        raise ValidationError(f"unknown readout {kind!r}")
    return matmul(pool, node_embs)


class GinEncoder:
    """Stack of GIN layers (relu after each) followed by a readout."""

    def __init__(self, in_dim, hidden=32, layers=3, eps=0.0, readout="mean", seed=0):
        self.cfg = ModelConfig("GIN", [in_dim] + [hidden] * layers, gin_eps=eps,
                               dropout=0.0, activations=["relu"] * layers)
        self.readout = readout
        self.params = init_params(self.cfg, seed)

    def __call__(self, batch):
        nodes = model_forward(self.cfg, self.params, batch.merged(), "eval")
        return readout_pool(nodes, batch.assignment, self.readout, len(batch))


class _ProjectionHead:
    """Linear, relu, linear, with biases so a fully inactive hidden layer still maps to a nonzero row."""

    def __init__(self, dim, out_dim, rng):
        self.params = {"P0": glorot_uniform(dim, dim, rng, "P0"),
                       "b0": Variable(np.zeros((1, dim)), requires_grad=True, name="b0"),
                       "P1": glorot_uniform(dim, out_dim, rng, "P1"),
                       "b1": Variable(np.full((1, out_dim), 0.01), requires_grad=True, name="b1")}

    def __call__(self, h):
        p = self.params
        hidden = activation(add(matmul(h, p["P0"]), p["b0"]), "relu")
        return add(matmul(hidden, p["P1"]), p["b1"])


def nt_xent_loss(Z_i, Z_j, tau=0.5):
    """Normalized-temperature cross entropy over ``2B`` anchors.

    Each row's positive is the same row of the other view; the remaining
    ``2B - 2`` embeddings are negatives. Similarity is cosine / ``tau``.
    """
    b = Z_i.shape[0]
    if b < 2:
        raise ValidationError("NT-Xent needs at least two pairs")
    if Z_j.shape != Z_i.shape:
        raise ValidationError(f"view shapes differ: {Z_i.shape} vs {Z_j.shape}")
    z = l2_normalize_rows(concat_rows(Z_i, Z_j))
    sim = scale(matmul(z, transpose(z)), 1.0 / tau)
    logp = log_softmax_rows(sim, ~np.eye(2 * b, dtype=bool))
    rows = np.arange(2 * b)
    pos = np.concatenate([rows[b:], rows[:b]])
    return scale(mean_all(pick(logp, rows, pos)), -1.0)


def train_contrastive(dataset, cfg=None):
    """Pretrain a :class:`GinEncoder` on ``dataset``; returns ``(encoder, loss_trace)``.

    ``loss_trace[e]`` is the mean batch loss of epoch ``e``. The projection
    head is discarded. A trailing batch with a single graph is skipped.
    """
    cfg = cfg or ContrastiveConfig()
    if not isinstance(dataset, GraphBatch):
        dataset = GraphBatch(list(dataset))
    in_dim = dataset.graphs[0].num_features
    encoder = GinEncoder(in_dim, cfg.hidden, cfg.gin_layers, cfg.gin_eps, cfg.readout,
                         seed=aug.derive_seed(cfg.seed, 1))
    head = _ProjectionHead(cfg.hidden, cfg.proj_dim, np.random.default_rng(aug.derive_seed(cfg.seed, 2)))
    params = list(encoder.params.values()) + list(head.params.values())
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    trace = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(aug.derive_seed(cfg.seed, epoch, 3)).permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            views = [aug.sample_pair_from_pool(cfg.pool, dataset.graphs[i],
                                               aug.derive_seed(cfg.seed, epoch, int(i)))
                     for i in idx]
            with Tape():
                z_i = head(encoder(GraphBatch([v[0] for v in views])))
                z_j = head(encoder(GraphBatch([v[1] for v in views])))
                loss = nt_xent_loss(z_i, z_j, cfg.tau)
                backward(loss)
            adam_step(params, state)
            losses.append(loss.item())
        trace.append(float(np.mean(losses)))
    return encoder, trace


def graph_embeddings(encoder, dataset):
    return encoder(dataset).value


def stratified_split(labels, seed, train_frac=0.8):
    """Per-class shuffled split; returns boolean train and test masks."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train = np.zeros(len(labels), dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        train[idx[:int(round(train_frac * len(idx)))]] = True
    return train, ~train


def majority_f1(labels, train, test):
    """Macro-F1 of always predicting the training split's most common class."""
    labels = np.asarray(labels)
    counts = np.bincount(labels[train], minlength=labels.max() + 1)
    pred = np.full(int(test.sum()), int(np.argmax(counts)))
    return classification_scores(pred, labels[test])[1]


def linear_probe_f1(embeddings, labels, seed=0, epochs=100, lr=0.01):
    """Fit a multinomial logistic regression (with bias) on a stratified 80/20 split; test macro-F1."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = int(labels.max()) + 1
    train, test = stratified_split(labels, seed)
    if len(np.unique(labels[train])) < len(np.unique(labels)):
        raise ValidationError("a class is missing from the training split")
    if not test.any():
        raise ValidationError("test split is empty")
    W = Variable(np.zeros((x.shape[1], classes)), requires_grad=True, name="W")
    b = Variable(np.zeros((1, classes)), requires_grad=True, name="b")
    state = AdamState(lr=lr, weight_decay=0.0)
    for _ in range(epochs):
        with Tape():
            loss = cross_entropy_masked(add(matmul(x, W), b), labels, train)
            backward(loss)
        adam_step([W, b], state)
    pred = (x @ W.value + b.value).argmax(axis=1)
    return classification_scores(pred[test], labels[test])[1]


def linear_eval_f1(encoder, dataset, seed=0):
    if dataset.labels is None:
        raise ValidationError("linear evaluation needs graph labels")
    return linear_probe_f1(graph_embeddings(encoder, dataset), dataset.labels, seed)


def synthetic_graph_dataset(num_graphs=200, seed=0, n_range=(12, 20), p_in=(0.2, 0.5),
                            p_out=0.05, feat_dim=8, noise=0.5):
    """Balanced binary graph classification set: class ``c`` uses within-block density ``p_in[c]``."""
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(num_graphs) % 2)
    graphs = []
    for i, y in enumerate(labels):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        g = synthetic_sbm(n, 2, p_in[y], min(p_out, p_in[y]), feat_dim, noise,
                          aug.derive_seed(seed, i))
        graphs.append(Graph(g.num_nodes, g.edges, g.features, _trusted=True))
    return GraphBatch(graphs, labels)
