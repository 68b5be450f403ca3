import math

import numpy as np
import pytest

from conftest import GRAD_TOL, check_grads, random_graph
from graphaug import contrastive as C
from graphaug import models
from graphaug.augment import AugmenterSpec
from graphaug.errors import ValidationError
from graphaug.graph import Graph


def loop_nt_xent(zi, zj, tau):
    z = np.vstack([zi, zj])
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    b = len(zi)
    total = 0.0
    for a in range(2 * b):
        pos = (a + b) % (2 * b)
        sims = {k: float(z[a] @ z[k]) / tau for k in range(2 * b) if k != a}
        total += -sims[pos] + math.log(sum(math.exp(s) for s in sims.values()))
    return total / (2 * b)


def small_dataset(n=16, seed=0):
    return C.synthetic_graph_dataset(num_graphs=n, seed=seed, n_range=(5, 8))


class TestReadout:
    def test_single_graph_mean(self, rng):
        x = rng.standard_normal((5, 3))
        out = C.readout_pool(x, np.zeros(5, int)).value
        assert np.allclose(out, x.mean(axis=0, keepdims=True), atol=1e-15)

    def test_singletons_unchanged(self, rng):
        x = rng.standard_normal((2, 3))
        assert C.readout_pool(x, [0, 1]).value.tolist() == x.tolist()

    @pytest.mark.parametrize("kind", ["mean", "sum"])
    def test_groupby_oracle(self, rng, kind):
        assign = rng.integers(0, 6, 40)
        assign[:6] = np.arange(6)
        x = rng.standard_normal((40, 4))
        got = C.readout_pool(x, assign, kind).value
        for gidx in range(6):
            rows = [x[i] for i in range(40) if assign[i] == gidx]
            ref = np.sum(rows, axis=0) / (len(rows) if kind == "mean" else 1)
            assert np.abs(got[gidx] - ref).max() <= 1e-12

    def test_empty_graph(self):
        with pytest.raises(ValidationError):
            C.readout_pool(np.ones((2, 1)), [0, 2])


class TestNtXent:
    def test_closed_form(self):
        z = np.eye(2, 3)
        loss = C.nt_xent_loss(z, z, 0.5).item()
        assert loss == pytest.approx(-math.log(math.e ** 2 / (math.e ** 2 + 2)), rel=1e-14)

    def test_loop_oracle(self, rng):
        for _ in range(10):
            b = int(rng.integers(2, 6))
            zi, zj = rng.standard_normal((b, 4)), rng.standard_normal((b, 4))
            tau = rng.uniform(0.1, 2.0)
            assert C.nt_xent_loss(zi, zj, tau).item() == pytest.approx(loop_nt_xent(zi, zj, tau), rel=1e-12)

    def test_permutation_and_scale_invariance(self, rng):
        zi, zj = rng.standard_normal((6, 5)), rng.standard_normal((6, 5))
        base = C.nt_xent_loss(zi, zj).item()
        perm = rng.permutation(6)
        assert abs(C.nt_xent_loss(zi[perm], zj[perm]).item() - base) <= 1e-10
        assert abs(C.nt_xent_loss(10 * zi, 10 * zj).item() - base) <= 1e-10

    def test_monotone_in_positive_similarity(self, rng):
        # the pair (0, 0) lives in its own two coordinates so other similarities stay fixed
        b, d = 4, 6
        zi = np.zeros((b, d + 2))
        zj = np.zeros((b, d + 2))
        zi[:, :d], zj[:, :d] = rng.standard_normal((b, d)), rng.standard_normal((b, d))
        zi[0] = 0.0
        zj[0] = 0.0
        zi[0, d] = 1.0
        prev = None
        for theta in np.linspace(math.pi / 2, 0, 12):
            zj[0, d], zj[0, d + 1] = math.cos(theta), math.sin(theta)
            loss = C.nt_xent_loss(zi, zj).item()
            if prev is not None:
                assert loss < prev
            prev = loss

    def test_large_tau_limit(self, rng):
        for _ in range(10):
            b = int(rng.integers(2, 9))
            z = rng.standard_normal((2 * b, 8))
            loss = C.nt_xent_loss(z[:b], z[b:], 1e6).item()
            assert abs(loss - math.log(2 * b - 1)) <= 1e-6

    def test_needs_two_pairs(self):
        with pytest.raises(ValidationError):
            C.nt_xent_loss(np.ones((1, 2)), np.ones((1, 2)))

    def test_zero_row(self):
        with pytest.raises(ValidationError):
            C.nt_xent_loss(np.zeros((2, 2)), np.ones((2, 2)))


class TestEncoder:
    def test_views_share_parameter_handles(self, monkeypatch):
        seen = []
        real = models.gin_layer_forward

        def spy(h, a, mlp, eps=0.0, act="identity"):
            seen.append((id(mlp[0]), id(mlp[1])))
            return real(h, a, mlp, eps, act)

        monkeypatch.setattr(models, "gin_layer_forward", spy)
        cfg = C.ContrastiveConfig(epochs=1, batch_size=4, gin_layers=2, hidden=8, proj_dim=4)
        C.train_contrastive(small_dataset(4), cfg)
        assert len(seen) == 4          # two views times two layers
        assert seen[:2] == seen[2:]

    def test_end_to_end_gradient(self, rng):
        graphs = [random_graph(rng, n=n, p=0.6, f=3) for n in (4, 5)]
        batch = C.GraphBatch([g.replace(features=np.abs(g.features) + 0.5) for g in graphs])
        view = C.GraphBatch([g.replace(features=g.features + 0.3) for g in batch.graphs])
        enc = C.GinEncoder(3, hidden=6, layers=2, seed=1)
        head = C._ProjectionHead(6, 3, rng)
        names = list(enc.params) + list(head.params)
        values = [p.value for p in list(enc.params.values()) + list(head.params.values())]

        def fn(*vs):
            enc.params = dict(zip(names[:len(enc.params)], vs[:len(enc.params)]))
            head.params = dict(zip(names[len(enc.params):], vs[len(enc.params):]))
            return C.nt_xent_loss(head(enc(batch)), head(enc(view)), 0.5)

        assert check_grads(fn, values, rng) <= GRAD_TOL

    def test_encoder_output_shape(self):
        data = small_dataset(6)
        enc = C.GinEncoder(data.graphs[0].num_features, hidden=5, layers=2)
        assert C.graph_embeddings(enc, data).shape == (6, 5)


class TestTraining:
    def test_same_seed_same_trace(self):
        cfg = C.ContrastiveConfig(epochs=3, batch_size=8, hidden=8, proj_dim=8)
        data = small_dataset()
        assert C.train_contrastive(data, cfg)[1] == C.train_contrastive(data, cfg)[1]

    def test_identity_pool_decreases(self):
        pool = [AugmenterSpec("identity"), AugmenterSpec("identity")]
        cfg = C.ContrastiveConfig(pool=pool, epochs=10, batch_size=16)
        _, trace = C.train_contrastive(C.synthetic_graph_dataset(64, seed=1), cfg)
        ups = sum(b > a for a, b in zip(trace, trace[1:]))
        assert ups <= 2 and trace[-1] < trace[0]

    def test_pool_dicts_accepted(self):
        cfg = C.ContrastiveConfig(pool=[{"kind": "edge_remove", "p": 0.1}])
        assert cfg.pool == [AugmenterSpec("edge_remove", p=0.1)]

    @pytest.mark.parametrize("bad", [{"tau": 0.0}, {"pool": []}, {"batch_size": 1}])
    def test_config_validation(self, bad):
        with pytest.raises(ValidationError):
            C.ContrastiveConfig(**bad)


class TestLinearEval:
    def test_one_hot_embeddings(self):
        labels = np.arange(60) % 3
        assert C.linear_probe_f1(np.eye(3)[labels], labels, seed=0) == 1.0

    def test_constant_embeddings_equal_majority(self):
        labels = np.array([0] * 30 + [1] * 20 + [2] * 10)
        train, test = C.stratified_split(labels, 4)
        counts = np.bincount(labels[train])
        majority = int(np.argmax(counts))
        # direct oracle: predicting `majority` gives F1 2p/(p+1) on that class, 0 on the others
        share = np.mean(labels[test] == majority)
        expect = (2 * share / (share + 1)) / 3
        assert C.majority_f1(labels, train, test) == pytest.approx(expect, rel=1e-12)
        f1 = C.linear_probe_f1(np.ones((60, 4)), labels, seed=4)
        assert f1 == pytest.approx(expect, rel=1e-12)

    def test_deterministic(self, rng):
        labels = np.arange(40) % 2
        emb = rng.standard_normal((40, 5)) + labels[:, None]
        assert C.linear_probe_f1(emb, labels, 2) == C.linear_probe_f1(emb, labels, 2)

    def test_missing_class_in_train(self):
        with pytest.raises(ValidationError):
            C.linear_probe_f1(np.ones((3, 2)), [0, 0, 1], seed=0)

    def test_needs_labels(self):
        data = C.GraphBatch([Graph(2, [[0, 1]], np.ones((2, 1)))])
        with pytest.raises(ValidationError):
            C.linear_eval_f1(C.GinEncoder(1, 2, 1), data)


def test_stratified_split_proportions():
    labels = np.array([0] * 50 + [1] * 30)
    train, test = C.stratified_split(labels, 0)
    assert train.sum() == 64 and (train ^ test).all()
    assert np.bincount(labels[train]).tolist() == [40, 24]


def test_synthetic_dataset_balanced():
    data = C.synthetic_graph_dataset(40, seed=3)
    assert np.bincount(data.labels).tolist() == [20, 20]
    assert all(12 <= g.num_nodes <= 20 for g in data.graphs)
