"""GCN, GraphSAGE, GAT and GIN layers on the tape engine, plus supervised training.

All layers are bias-free. Node features are float64 matrices; graph
structure enters as constant dense matrices (normalized adjacency,
attention masks, averaging matrices) so every layer is a composition of
differentiable primitives from :mod:`graphaug.tensor`.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from . import augment as aug
from .errors import ShapeError, ValidationError
from .graph import adjacency_matrix, neighbor_lists, normalized_adjacency
from .tensor import (
    AdamState,
    Tape,
    Variable,
    activation,
    adam_step,
    add,
    add_outer,
    as_variable,
    backward,
    concat_cols,
    cross_entropy_masked,
    dropout,
    gather_max,
    glorot_uniform,
    matmul,
    scale,
    sgd_step,
    softmax_rows,
    transpose,
)

__all__ = [
    "ModelConfig", "TrainConfig", "TrainedModel", "GraphOps",
    "gcn_layer_forward", "sage_sample_neighbors", "sage_sample_all", "sage_layer_forward",
    "gat_attention_coeffs", "gat_layer_forward", "gin_layer_forward",
    "param_shapes", "init_params", "model_forward", "train_supervised", "evaluate", "classification_scores",
]

ARCHS = ("GCN", "GraphSAGE", "GAT", "GIN")


@dataclass
class ModelConfig:
    """Architecture description.

    ``layer_dims`` runs from input features to classes, e.g. ``[F, 16, C]``.
    For GAT the hidden entries are per-head widths; hidden heads are
    concatenated, so the next layer sees ``width * gat_heads`` inputs.
    ``activations`` gives one kind per layer; ``None`` picks relu (elu for
    GAT) on hidden layers and identity on the output layer.
    """

    arch: str = "GCN"
    layer_dims: list = field(default_factory=lambda: [0, 16, 0])
    sage_k: int = 10
    sage_aggregator: str = "mean"
    gat_heads: int = 8
    gat_out_heads: int = 1
    gat_slope: float = 0.2
    gin_eps: float = 0.0
    dropout: float = 0.5
    activations: list | None = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValidationError(f"unknown architecture {self.arch!r}")
        if len(self.layer_dims) < 2:
            raise ValidationError("layer_dims needs at least input and output widths")
        if self.sage_k < 1 or self.gat_heads < 1 or self.gat_out_heads < 1:
            raise ValidationError("sage_k and head counts must be >= 1")
        if self.sage_aggregator not in ("mean", "maxpool"):
            raise ValidationError(f"unknown GraphSAGE aggregator {self.sage_aggregator!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")
        if self.activations is not None and len(self.activations) != self.num_layers:
            raise ValidationError("need one activation per layer")

    @property
    def num_layers(self):
        return len(self.layer_dims) - 1

    def layer_activation(self, layer):
        if self.activations is not None:
            return self.activations[layer]
        if layer == self.num_layers - 1:
            return "identity"
        return "elu" if self.arch == "GAT" else "relu"

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainConfig:
    epochs: int = 200
    patience: int = 30
    lr: float = 0.01
    weight_decay: float = 5e-4
    optimizer: str = "adam"

    def __post_init__(self):
        if self.epochs < 1 or self.patience < 1:
            raise ValidationError("epochs and patience must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")


class GraphOps:
    """Constant matrices a forward pass needs, built once per graph."""

    def __init__(self, g):
        self.graph = g
        self._cache = {}

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def a_hat(self):
        return self._get("a_hat", lambda: normalized_adjacency(self.graph))

    @property
    def adjacency(self):
        return self._get("adj", lambda: adjacency_matrix(self.graph))

    @property
    def attention_mask(self):
        return self._get("att", lambda: adjacency_matrix(self.graph, self_loops=True) > 0)

    @property
    def neighbor_lists(self):
        return self._get("nbrs", lambda: neighbor_lists(self.graph))


def _ops(g):
    return g if isinstance(g, GraphOps) else GraphOps(g)


# ------------------------------------------------------------------ layers

def gcn_layer_forward(H, A_hat, W, act="relu"):
    """``act(Â (H W))``; ``A_hat`` is the precomputed normalized adjacency."""
    H, W = as_variable(H), as_variable(W)
    A_hat = np.asarray(A_hat)
    if A_hat.shape != (H.shape[0], H.shape[0]) or H.shape[1] != W.shape[0]:
        raise ShapeError(f"gcn: A_hat {A_hat.shape}, H {H.shape}, W {W.shape}")
    return activation(matmul(A_hat, matmul(H, W)), act)


def _sample(nbrs, v, k, rng):
    if len(nbrs) == 0:
        return np.full(k, v, dtype=np.int64)
    if len(nbrs) >= k:
        return np.sort(rng.choice(nbrs, size=k, replace=False))
    return rng.choice(nbrs, size=k, replace=True)


def sage_sample_neighbors(g, v, k, seed):
    """``k`` neighbors of ``v``: distinct when ``deg(v) >= k``, drawn with replacement otherwise.

    An isolated node samples itself ``k`` times.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    nbrs = _ops(g).neighbor_lists[v]
    return _sample(nbrs, v, k, np.random.default_rng(seed))


def sage_sample_all(g, k, rng, full=False):
    """Per-node neighbor samples; ``full`` keeps whole neighborhoods up to ``k`` (eval mode)."""
    nbrs = _ops(g).neighbor_lists
    out = []
    for v, nb in enumerate(nbrs):
        if full and 0 < len(nb) <= k:
            out.append(np.asarray(nb, dtype=np.int64))
        else:
            out.append(_sample(nb, v, k, rng))
    return out


def _mean_matrix(samples, n):
    s = np.zeros((n, n))
    for v, nb in enumerate(samples):
        np.add.at(s[v], nb, 1.0 / len(nb))
    return s


def _padded_index(samples):
    k = max(len(nb) for nb in samples)
    return np.array([np.concatenate([nb, np.repeat(nb[:1], k - len(nb))]) for nb in samples])


def sage_layer_forward(H_prev, samples, W, aggregator="mean", act="relu", pool_W=None):
    """``act(CONCAT(h_v, AGG(samples[v])) W)`` for every node ``v``.

    ``mean`` averages the sampled neighbor rows (a multiset, so repeats
    count). ``maxpool`` takes the elementwise max of ``relu(h_u pool_W)``.
    ``W`` has ``2 * F_in`` rows.
    """
    H_prev, W = as_variable(H_prev), as_variable(W)
    n, f = H_prev.shape
    if W.shape[0] != 2 * f or len(samples) != n:
        raise ShapeError(f"sage: H {H_prev.shape}, W {W.shape}, {len(samples)} samples")
    if aggregator == "mean":
        agg = matmul(_mean_matrix(samples, n), H_prev)
    elif aggregator == "maxpool":
        if pool_W is None:
            raise ValidationError("maxpool aggregation needs pool_W")
        msgs = activation(matmul(H_prev, pool_W), "relu")
        agg = gather_max(msgs, _padded_index(samples))
        if agg.shape[1] != f:
            raise ShapeError("pool_W must map F_in to F_in")
    else:
        raise ValidationError(f"unknown aggregator {aggregator!r}")
    return activation(matmul(concat_cols(H_prev, agg), W), act)


def gat_attention_coeffs(H_prev, W, a, g, slope=0.2):
    """Attention matrix ``C`` with ``C[v, u] = alpha_uv``.

    Scores are ``leaky_relu(a . [W h_v || W h_u])`` over ``u`` in the
    neighborhood of ``v`` plus ``v`` itself, softmax-normalized per ``v``.
    ``g`` may be a Graph, a :class:`GraphOps` or a boolean (N, N) mask.
    """
    H_prev, W, a = as_variable(H_prev), as_variable(W), as_variable(a)
    d = W.shape[1]
    if a.shape != (2 * d, 1):
        raise ShapeError(f"attention vector must be ({2 * d}, 1), got {a.shape}")
    mask = g if isinstance(g, np.ndarray) else _ops(g).attention_mask
    z = matmul(H_prev, W)
    s_self = matmul(z, _rows(a, 0, d))
    s_nbr = matmul(z, _rows(a, d, 2 * d))
    e = activation(add_outer(s_self, transpose(s_nbr)), "leaky_relu", slope=slope)
    return softmax_rows(e, mask)


def _rows(a, start, stop):
    sel = np.zeros((stop - start, a.shape[0]))
    sel[np.arange(stop - start), np.arange(start, stop)] = 1.0
    return matmul(sel, a)


def gat_layer_forward(H_prev, coeffs, W, act="elu", heads=1, combine="concat"):
    """``act(sum_u alpha_uv W h_u)``; with several heads, concatenate or average.

    ``coeffs`` and ``W`` are single objects for one head, or lists of
    length ``heads``.
    """
    if heads == 1 and not isinstance(coeffs, (list, tuple)):
        coeffs, W = [coeffs], [W]
    if len(coeffs) != heads or len(W) != heads:
        raise ShapeError(f"expected {heads} heads, got {len(coeffs)} coeffs / {len(W)} weights")
    H_prev = as_variable(H_prev)
    outs = [matmul(c, matmul(H_prev, w)) for c, w in zip(coeffs, W)]
    if combine == "concat":
        out = outs[0]
        for o in outs[1:]:
            out = concat_cols(out, o)
    elif combine == "mean":
        out = outs[0]
        for o in outs[1:]:
            out = add(out, o)
        out = scale(out, 1.0 / heads)
    else:
        raise ValidationError(f"unknown head combination {combine!r}")
    return activation(out, act)


def gin_layer_forward(H_prev, A, mlp, eps=0.0, act="identity"):
    """``act(MLP((1 + eps) h_v + sum_{u in N(v)} h_u))`` with a two-layer relu MLP ``mlp = (W1, W2)``."""
    H_prev = as_variable(H_prev)
    A = np.asarray(A)
    W1, W2 = mlp
    if A.shape != (H_prev.shape[0], H_prev.shape[0]):
        raise ShapeError(f"gin: A {A.shape} vs H {H_prev.shape}")
    pre = add(matmul(A, H_prev), scale(H_prev, 1.0 + eps))
    hidden = activation(matmul(pre, W1), "relu")
    return activation(matmul(hidden, W2), act)


# ------------------------------------------------------------------ models

def param_shapes(cfg):
    """Ordered ``{name: shape}`` of the parameters ``cfg`` needs."""
    dims = cfg.layer_dims
    shapes = {}
    d_in = dims[0]
    for l in range(cfg.num_layers):
        d_out = dims[l + 1]
        last = l == cfg.num_layers - 1
        d_next = d_out
        if cfg.arch == "GCN":
            shapes[f"W{l}"] = (d_in, d_out)
        elif cfg.arch == "GraphSAGE":
            if cfg.sage_aggregator == "maxpool":
                shapes[f"P{l}"] = (d_in, d_in)
            shapes[f"W{l}"] = (2 * d_in, d_out)
        elif cfg.arch == "GAT":
            heads = cfg.gat_out_heads if last else cfg.gat_heads
            for h in range(heads):
                shapes[f"W{l}_{h}"] = (d_in, d_out)
                shapes[f"a{l}_{h}"] = (2 * d_out, 1)
            if not last:
                d_next = d_out * heads
        else:
            shapes[f"W{l}a"] = (d_in, d_out)
            shapes[f"W{l}b"] = (d_out, d_out)
        d_in = d_next
    return shapes


def init_params(cfg, seed=0):
    """Glorot-uniform parameters keyed by name, shaped for ``cfg``."""
    rng = np.random.default_rng(seed)
    return {k: glorot_uniform(*shape, rng, k) for k, shape in param_shapes(cfg).items()}


def _check_params(cfg, params):
    ref = param_shapes(cfg)
    if set(ref) != set(params) or any(ref[k] != params[k].shape for k in ref):
        raise ValidationError("parameters do not match the model configuration")


def model_forward(cfg, params, g, mode="eval", seed=0, x=None):
    """Stacked forward pass; returns the (N, C) output Variable.

    In ``train`` mode dropout hits each layer input and GraphSAGE re-samples
    neighbors from ``seed``. In ``eval`` mode there is no dropout and
    GraphSAGE uses whole neighborhoods, sampled down to ``sage_k`` with a
    fixed seed when larger. ``x`` overrides the node features (e.g. a
    differentiable input).
    """
    if mode not in ("train", "eval"):
        raise ValidationError(f"unknown mode {mode!r}")
    _check_params(cfg, params)
    ops = _ops(g)
    graph = ops.graph
    train = mode == "train"
    rng = np.random.default_rng(seed)
    h = as_variable(graph.features if x is None else x)
    if h.shape[1] != cfg.layer_dims[0]:
        raise ValidationError(f"graph has {h.shape[1]} features, model expects {cfg.layer_dims[0]}")
    sage_rng = rng if train else np.random.default_rng(0)
    for l in range(cfg.num_layers):
        act = cfg.layer_activation(l)
        last = l == cfg.num_layers - 1
        if train:
            h = dropout(h, cfg.dropout, rng)
        if cfg.arch == "GCN":
            h = gcn_layer_forward(h, ops.a_hat, params[f"W{l}"], act)
        elif cfg.arch == "GraphSAGE":
            samples = sage_sample_all(ops, cfg.sage_k, sage_rng, full=not train)
            h = sage_layer_forward(h, samples, params[f"W{l}"], cfg.sage_aggregator, act,
                                   pool_W=params.get(f"P{l}"))
        elif cfg.arch == "GAT":
            heads = cfg.gat_out_heads if last else cfg.gat_heads
            Ws = [params[f"W{l}_{i}"] for i in range(heads)]
            coeffs = [gat_attention_coeffs(h, Ws[i], params[f"a{l}_{i}"], ops.attention_mask,
                                           cfg.gat_slope) for i in range(heads)]
            h = gat_layer_forward(h, coeffs, Ws, act, heads, "mean" if last else "concat")
        else:
            h = gin_layer_forward(h, ops.adjacency, (params[f"W{l}a"], params[f"W{l}b"]),
                                  cfg.gin_eps, act)
    return h


@dataclass
class TrainedModel:
    """Best-validation parameters plus the deterministic input transform used in training."""

    cfg: ModelConfig
    params: dict
    best_epoch: int
    preprocess: aug.AugmenterSpec | None = None

    def prepare(self, g):
        return g if self.preprocess is None else aug.apply(self.preprocess, g)

    def logits(self, g):
        return model_forward(self.cfg, self.params, self.prepare(g), "eval").value


def classification_scores(pred, labels):
    """Accuracy and macro-F1 over the union of true and predicted classes."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    if pred.size == 0:
        raise ValidationError("cannot score an empty selection")
    acc = float(np.mean(pred == labels))
    f1s = []
    for c in np.union1d(pred, labels):
        tp = np.sum((pred == c) & (labels == c))
        fp = np.sum((pred == c) & (labels != c))
        fn = np.sum((pred != c) & (labels == c))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return acc, float(np.mean(f1s))


def evaluate(model, g, mask):
    """``(accuracy, macro_f1)`` on the masked nodes; argmax ties go to the lowest class."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValidationError("evaluation mask is empty")
    logits = model.logits(g) if isinstance(model, TrainedModel) else np.asarray(model)
    pred = logits.argmax(axis=1)
    return classification_scores(pred[mask], np.asarray(g.labels)[mask])


def _accuracy(logits, labels, mask):
    return float(np.mean(logits[mask].argmax(axis=1) == labels[mask]))


def train_supervised(g, cfg, train_cfg=None, augmentation=None, seed=0):
    """Full-graph supervised training with early stopping on validation accuracy.

    Checkpoints are ranked by validation accuracy, then validation loss.

    Stochastic augmentations are redrawn every epoch with seed
    ``derive_seed(seed, epoch)`` and the model is evaluated on the
    un-augmented graph. Deterministic ones (FDM, expected-mode FANA) are
    applied once and also used at evaluation.

    Returns ``(TrainedModel, trace)`` where ``trace`` is a list of
    ``(epoch, train_loss, val_acc)``.
    """
    if g.labels is None or not g.has_masks:
        raise ValidationError("supervised training needs labels and train/val/test masks")
    if not g.train_mask.any() or not g.val_mask.any():
        raise ValidationError("train and validation masks must be nonempty")
    train_cfg = train_cfg or TrainConfig()
    spec = augmentation or aug.AugmenterSpec("identity")
    preprocess = None if spec.stochastic or spec.kind == "identity" else spec
    eval_graph = aug.apply(preprocess, g) if preprocess else g
    eval_ops = GraphOps(eval_graph)
    labels = np.asarray(g.labels)

    params = init_params(cfg, aug.derive_seed(seed, 0xC0FFEE))
    plist = list(params.values())
    state = AdamState(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    best_acc, best_loss, best_epoch, best = -1.0, np.inf, 0, None
    trace = []
    for epoch in range(train_cfg.epochs):
        if spec.stochastic:
            train_ops = GraphOps(aug.apply(spec, g, aug.derive_seed(seed, epoch)))
        else:
            train_ops = eval_ops
        with Tape():
            logits = model_forward(cfg, params, train_ops, "train", aug.derive_seed(seed, epoch, 1))
            loss = cross_entropy_masked(logits, labels, g.train_mask)
            backward(loss)
        if train_cfg.optimizer == "adam":
            adam_step(plist, state)
        else:
            sgd_step(plist, train_cfg.lr, train_cfg.weight_decay)
        val_logits = model_forward(cfg, params, eval_ops, "eval")
        val_acc = _accuracy(val_logits.value, labels, g.val_mask)
        val_loss = cross_entropy_masked(val_logits, labels, g.val_mask).item()
        trace.append((epoch, loss.item(), val_acc))
        if val_acc > best_acc or (val_acc == best_acc and val_loss < best_loss):
            best_acc, best_loss, best_epoch = val_acc, val_loss, epoch
            best = {k: Variable(v.value.copy(), requires_grad=True, name=k) for k, v in params.items()}
        elif epoch - best_epoch >= train_cfg.patience:
            break
    return TrainedModel(copy.deepcopy(cfg), best, best_epoch, preprocess), trace
