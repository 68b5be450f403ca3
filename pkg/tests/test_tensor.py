import math
import zlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import GRAD_TOL, check_grads
from graphaug import tensor as T
from graphaug.errors import DegenerateRowError, ShapeError, TapeError, ValidationError

N_INSTANCES = 20


def shapes(rng):
    return int(rng.integers(1, 6)), int(rng.integers(1, 6))


def random_mask(rng, n, m):
    mask = rng.random((n, m)) < 0.6
    mask[np.arange(n), rng.integers(0, m, n)] = True
    return mask


# builders take the rng and return (fn, inputs)
def _matmul(rng):
    n, k = shapes(rng)
    m = int(rng.integers(1, 6))
    return T.matmul, [rng.standard_normal((n, k)), rng.standard_normal((k, m))]


def _add(rng):
    n, m = shapes(rng)
    return T.add, [rng.standard_normal((n, m)), rng.standard_normal((n, m))]


def _add_row(rng):
    n, m = shapes(rng)
    return T.add, [rng.standard_normal((n, m)), rng.standard_normal((1, m))]


def _add_outer(rng):
    n, m = shapes(rng)
    return T.add_outer, [rng.standard_normal((n, 1)), rng.standard_normal((1, m))]


def _mul(rng):
    n, m = shapes(rng)
    return T.mul, [rng.standard_normal((n, m)), rng.standard_normal((n, m))]


def _scale(rng):
    c = rng.standard_normal()
    return (lambda x: T.scale(x, c)), [rng.standard_normal(shapes(rng))]


def _transpose(rng):
    return T.transpose, [rng.standard_normal(shapes(rng))]


def _act(kind):
    def build(rng):
        return (lambda x: T.activation(x, kind)), [rng.standard_normal(shapes(rng))]
    return build


def _softmax(rng):
    n, m = shapes(rng)
    mask = random_mask(rng, n, m)
    return (lambda x: T.softmax_rows(x, mask)), [rng.standard_normal((n, m))]


def _log_softmax(rng):
    n, m = shapes(rng)
    mask = random_mask(rng, n, m) if rng.random() < 0.5 else None
    return (lambda x: T.log_softmax_rows(x, mask)), [rng.standard_normal((n, m))]


def _concat_cols(rng):
    n, m = shapes(rng)
    return T.concat_cols, [rng.standard_normal((n, m)), rng.standard_normal((n, 2))]


def _concat_rows(rng):
    n, m = shapes(rng)
    return T.concat_rows, [rng.standard_normal((n, m)), rng.standard_normal((2, m))]


def _sum(rng):
    return T.sum_all, [rng.standard_normal(shapes(rng))]


def _mean(rng):
    return T.mean_all, [rng.standard_normal(shapes(rng))]


def _l2(rng):
    return T.l2_normalize_rows, [rng.standard_normal(shapes(rng)) + 0.1]


def _pick(rng):
    n, m = shapes(rng)
    k = int(rng.integers(1, 8))
    rows, cols = rng.integers(0, n, k), rng.integers(0, m, k)
    return (lambda x: T.pick(x, rows, cols)), [rng.standard_normal((n, m))]


def _gather_max(rng):
    n, m = shapes(rng)
    index = rng.integers(0, n, (int(rng.integers(1, 5)), int(rng.integers(1, 4))))
    return (lambda x: T.gather_max(x, index)), [rng.standard_normal((n, m))]


def _dropout(rng):
    seed = int(rng.integers(1 << 30))
    return (lambda x: T.dropout(x, 0.5, np.random.default_rng(seed))), [rng.standard_normal(shapes(rng))]


def _cross_entropy(rng):
    n, c = int(rng.integers(1, 8)), int(rng.integers(2, 5))
    labels = rng.integers(0, c, n)
    mask = rng.random(n) < 0.7
    mask[0] = True
    return (lambda z: T.cross_entropy_masked(z, labels, mask)), [rng.standard_normal((n, c))]


OPS = {
    "matmul": _matmul, "add": _add, "add_row_broadcast": _add_row, "add_outer": _add_outer,
    "mul": _mul, "scale": _scale, "transpose": _transpose,
    "relu": _act("relu"), "leaky_relu": _act("leaky_relu"), "sigmoid": _act("sigmoid"),
    "elu": _act("elu"), "identity": _act("identity"),
    "softmax_rows": _softmax, "log_softmax_rows": _log_softmax,
    "concat_cols": _concat_cols, "concat_rows": _concat_rows,
    "sum_all": _sum, "mean_all": _mean, "l2_normalize_rows": _l2, "pick": _pick,
    "gather_max": _gather_max, "dropout": _dropout, "cross_entropy_masked": _cross_entropy,
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradient_matches_central_differences(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(N_INSTANCES):
        fn, inputs = OPS[name](rng)
        worst = max(worst, check_grads(fn, inputs, rng))
    assert worst <= GRAD_TOL


class TestForwardValues:
    def test_matmul(self):
        assert T.matmul([[1, 2]], [[3], [4]]).value.tolist() == [[11.0]]

    def test_matmul_shape_error(self):
        with pytest.raises(ShapeError):
            T.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_add_row_broadcast(self):
        assert T.add(np.zeros((2, 2)), [[1, 2]]).value.tolist() == [[1, 2], [1, 2]]

    def test_add_shape_error(self):
        with pytest.raises(ShapeError):
            T.add(np.zeros((2, 2)), np.zeros((2, 1)))

    def test_activations(self):
        x = np.array([[-1.0, 0.0, 2.0]])
        assert T.activation(x, "relu").value.tolist() == [[0, 0, 2]]
        assert T.activation(x, "leaky_relu", 0.2).value.tolist() == [[-0.2, 0, 2]]
        assert T.activation(x, "elu").value[0, 0] == pytest.approx(math.exp(-1) - 1, rel=1e-15)
        assert T.activation(x, "sigmoid").value[0, 1] == 0.5
        with pytest.raises(ValidationError):
            T.activation(x, "tanh-ish")

    def test_sigmoid_extremes_finite(self):
        y = T.activation([[-1e3, 1e3]], "sigmoid").value
        assert y.tolist() == [[0.0, 1.0]]

    def test_l2_zero_row(self):
        with pytest.raises(ValidationError):
            T.l2_normalize_rows([[0.0, 0.0], [1.0, 0.0]])

    def test_gather_max(self):
        x = np.array([[1.0, 5.0], [3.0, 2.0], [0.0, 0.0]])
        assert T.gather_max(x, [[0, 1], [2, 2]]).value.tolist() == [[3, 5], [0, 0]]

    def test_dropout_zero_rate_noop(self, rng):
        v = T.Variable(rng.standard_normal((3, 3)))
        assert T.dropout(v, 0.0, rng) is v

    def test_nonfinite_rejected(self):
        with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
            T.scale([[1e308]], 10.0)

    def test_variable_rank(self):
        with pytest.raises(ShapeError):
            T.Variable(np.zeros((2, 2, 2)))


class TestSoftmax:
    @given(arrays(np.float64, (4, 6), elements=st.floats(-50, 50)),
           arrays(bool, (4, 6)))
    def test_masked_rows_sum_to_one(self, x, mask):
        mask[:, 0] = True
        y = T.softmax_rows(x, mask).value
        assert np.abs(y.sum(axis=1) - 1.0).max() <= 1e-12
        assert not y[~mask].any()

    def test_fully_masked_row(self):
        mask = np.array([[True, False], [False, False]])
        with pytest.raises(DegenerateRowError):
            T.softmax_rows(np.zeros((2, 2)), mask)
        with pytest.raises(DegenerateRowError):
            T.log_softmax_rows(np.zeros((2, 2)), mask)

    def test_large_logits_stable(self):
        x = np.array([[1e3, -1e3, 0.0]])
        y = T.softmax_rows(x).value
        assert np.isfinite(y).all() and y[0, 0] == 1.0
        assert np.isfinite(T.log_softmax_rows(x).value).all()

    def test_log_softmax_matches_log_of_softmax(self, rng):
        x = rng.standard_normal((5, 4))
        assert np.allclose(T.log_softmax_rows(x).value, np.log(T.softmax_rows(x).value), atol=1e-14)

    def test_masked_gradient_is_zero_there(self, rng):
        mask = random_mask(rng, 4, 5)
        x = T.Variable(rng.standard_normal((4, 5)), requires_grad=True)
        with T.Tape():
            T.backward(T.sum_all(T.mul(T.log_softmax_rows(x, mask), rng.standard_normal((4, 5)))))
        assert not x.grad[~mask].any()


class TestCrossEntropy:
    def test_uniform_is_log_c(self):
        loss = T.cross_entropy_masked(np.zeros((4, 7)), [0, 1, 2, 3], np.ones(4, bool))
        assert loss.item() == pytest.approx(math.log(7), rel=1e-14)

    def test_saturated_correct_near_zero(self):
        z = np.full((3, 4), -1e3)
        z[np.arange(3), [1, 2, 3]] = 1e3
        loss = T.cross_entropy_masked(z, [1, 2, 3], np.ones(3, bool)).item()
        assert 0.0 <= loss <= 1e-6

    def test_only_masked_rows_count(self, rng):
        z = rng.standard_normal((5, 3))
        labels = np.array([0, 1, 2, 0, 1])
        mask = np.array([1, 0, 1, 0, 0], bool)
        full = T.cross_entropy_masked(z[[0, 2]], labels[[0, 2]], np.ones(2, bool)).item()
        assert T.cross_entropy_masked(z, labels, mask).item() == pytest.approx(full, rel=1e-14)

    def test_empty_mask(self):
        with pytest.raises(ValidationError):
            T.cross_entropy_masked(np.zeros((2, 2)), [0, 1], np.zeros(2, bool))


class TestTape:
    def test_backward_twice(self):
        x = T.Variable([[2.0]], requires_grad=True)
        with T.Tape():
            loss = T.mul(x, x)
            T.backward(loss)
            with pytest.raises(TapeError):
                T.backward(loss)
        assert x.grad.tolist() == [[4.0]]

    def test_non_scalar_loss(self):
        x = T.Variable(np.ones((2, 2)), requires_grad=True)
        with T.Tape():
            with pytest.raises(ShapeError):
                T.backward(T.scale(x, 2.0))

    def test_no_tape_no_record(self):
        x = T.Variable([[1.0]], requires_grad=True)
        y = T.scale(x, 3.0)
        assert y.tape is None and not y.requires_grad
        with pytest.raises(TapeError):
            T.backward(y)

    def test_constants_not_recorded(self):
        with T.Tape() as tape:
            T.matmul(np.ones((2, 2)), np.ones((2, 2)))
        assert len(tape) == 0

    def test_grads_accumulate(self):
        x = T.Variable([[1.0, 2.0]], requires_grad=True)
        for _ in range(2):
            with T.Tape():
                T.backward(T.sum_all(x))
        assert x.grad.tolist() == [[2.0, 2.0]]

    def test_unused_leaf_gets_zeros(self):
        x = T.Variable([[1.0]], requires_grad=True)
        y = T.Variable([[1.0, 1.0]], requires_grad=True)
        with T.Tape():
            T.sum_all(y)
            T.backward(T.sum_all(x))
        assert y.grad.tolist() == [[0.0, 0.0]]

    def test_reused_subexpression(self):
        x = T.Variable([[3.0]], requires_grad=True)
        with T.Tape():
            h = T.scale(x, 2.0)
            T.backward(T.mul(h, h))      # 4x^2
        assert x.grad.tolist() == [[24.0]]


class TestOptimizers:
    def test_first_adam_step_is_lr_times_sign(self):
        p = T.Variable([[1.0, -1.0]], requires_grad=True)
        p.grad = np.array([[3.0, -0.5]])
        T.adam_step([p], T.AdamState(lr=0.1, weight_decay=0.0))
        assert p.value[0] == pytest.approx([0.9, -0.9], abs=1e-7)
        assert not p.grad.any()

    def test_weight_decay_enters_gradient(self):
        p = T.Variable([[2.0]], requires_grad=True)
        p.grad = np.zeros((1, 1))
        state = T.AdamState(lr=0.1, weight_decay=0.5)
        T.adam_step([p], state)
        assert p.value[0, 0] == pytest.approx(1.9, abs=1e-7)

    def test_missing_grad(self):
        with pytest.raises(ValidationError):
            T.adam_step([T.Variable([[1.0]], requires_grad=True)], T.AdamState())

    def test_adam_two_steps_against_scalar_oracle(self):
        lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
        grads = [0.3, -1.2]
        w, m, v = 0.5, 0.0, 0.0
        p = T.Variable([[0.5]], requires_grad=True)
        state = T.AdamState(weight_decay=0.0)
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
            p.grad = np.array([[g]])
            T.adam_step([p], state)
        assert p.value[0, 0] == pytest.approx(w, rel=1e-14)

    def test_sgd(self):
        p = T.Variable([[1.0]], requires_grad=True)
        p.grad = np.array([[2.0]])
        T.sgd_step([p], lr=0.1)
        assert p.value[0, 0] == pytest.approx(0.8)

    def test_deterministic_fit(self, rng):
        x, y = rng.standard_normal((10, 3)), rng.standard_normal((10, 1))

        def fit():
            w = T.Variable(np.zeros((3, 1)), requires_grad=True)
            state = T.AdamState()
            for _ in range(20):
                with T.Tape():
                    r = T.add(T.matmul(x, w), T.scale(y, -1.0))
                    T.backward(T.mean_all(T.mul(r, r)))
                T.adam_step([w], state)
            return w.value

        assert fit().tobytes() == fit().tobytes()


def test_glorot_bounds(rng):
    w = T.glorot_uniform(30, 20, rng).value
    assert np.abs(w).max() <= math.sqrt(6 / 50)


def test_checkpoint_round_trip(tmp_path, rng):
    params = {"W0": T.Variable(rng.standard_normal((3, 4))), "b": T.Variable(rng.standard_normal((1, 4)))}
    T.save_params(params, tmp_path / "p.json", extra={"epoch": 7})
    back, extra = T.load_params(tmp_path / "p.json")
    assert extra == {"epoch": 7}
    for k in params:
        assert back[k].value.tobytes() == params[k].value.tobytes()
