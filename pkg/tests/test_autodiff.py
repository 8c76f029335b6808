"""
Tests for the tape-based tensor engine, its primitives, optimizers and gradient checker
"""

import math

import numpy as np
import pytest

from app.core import ops
from app.core.exceptions import ContractError, DimensionError, IndexRangeError, NumericError
from app.core.gradcheck import grad_check, numerical_gradient
from app.core.optim import SGD, Adam, build_optimizer
from app.core.tensor import Tape, Tensor, backward, no_grad, parameter, record


# ==================== FORWARD VALUES ====================

class TestForward:

    def test_matmul(self):
        out = ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.shape == (1, 1)
        assert out.item() == pytest.approx(11.0)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_add_row_broadcast(self):
        out = ops.add(Tensor(np.zeros((3, 2))), Tensor([1.0, 2.0]))
        np.testing.assert_allclose(out.data, [[1, 2]] * 3)

    def test_add_rejects_other_broadcasts(self):
        with pytest.raises(DimensionError):
            ops.add(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 1))))

    def test_softmax(self):
        out = ops.softmax_rows(Tensor([[math.log(1.0), math.log(3.0)]]))
        np.testing.assert_allclose(out.data, [[0.25, 0.75]])

    def test_softmax_large_logits_do_not_overflow(self):
        out = ops.softmax_rows(Tensor([[1000.0, 1000.0, 0.0]]))
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data[0, :2], [0.5, 0.5])

    def test_softmax_rejects_non_finite(self):
        with pytest.raises(NumericError):
            ops.softmax_rows(Tensor([[np.nan, 0.0]]))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = rng.normal(scale=rng.uniform(0.1, 50.0), size=(rng.integers(1, 6), rng.integers(1, 9)))
            out = ops.softmax_rows(Tensor(x)).data
            assert np.all(out >= 0.0)
            np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-12)

    def test_attention_zero_query_averages_values(self):
        v = Tensor([[1.0, 2.0], [3.0, 6.0], [5.0, 1.0]])
        out = ops.attention(Tensor(np.zeros((2, 2))), Tensor(np.random.default_rng(0).normal(size=(3, 2))), v, 2)
        np.testing.assert_allclose(out.data, np.tile(v.data.mean(axis=0), (2, 1)))

    def test_layer_norm_constant_row(self):
        out = ops.layer_norm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, np.zeros((1, 3)), atol=1e-12)

    def test_layer_norm_two_values(self):
        out = ops.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-6)

    def test_layer_norm_rejects_nonpositive_eps(self):
        with pytest.raises(NumericError):
            ops.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)

    def test_cross_entropy_uniform(self):
        loss = ops.cross_entropy(Tensor(np.zeros(10)), 3)
        assert loss.item() == pytest.approx(math.log(10))

    def test_cross_entropy_contracts(self):
        with pytest.raises(DimensionError):
            ops.cross_entropy(Tensor([1.0]), 0)
        with pytest.raises(IndexRangeError):
            ops.cross_entropy(Tensor(np.zeros(4)), 4)
        with pytest.raises(NumericError):
            ops.cross_entropy(Tensor([np.inf, 0.0]), 0)

    def test_gather_rows_out_of_range(self):
        with pytest.raises(IndexRangeError):
            ops.gather_rows(Tensor(np.eye(3)), [0, 3])

    def test_concat_rows_skips_empty_parts(self):
        out = ops.concat_rows([Tensor(np.zeros((0, 2))), Tensor(np.ones((2, 2)))])
        assert out.shape == (2, 2)


# ==================== BACKWARD ====================

class TestBackward:

    def test_backward_is_bitwise_repeatable(self):
        rng = np.random.default_rng(3)
        x = parameter(rng.normal(size=(5, 4)))
        gain, bias = Tensor(np.ones(4)), Tensor(np.zeros(4))

        def gradient():
            x.grad = None
            with Tape() as tape:
                h = ops.layer_norm(x, gain, bias)
                loss = ops.sum(ops.gelu(ops.attention(h, h, h, 4)))
            backward(loss, tape)
            return x.grad.copy()

        np.testing.assert_array_equal(gradient(), gradient())

    def test_square_sum_gradient(self):
        x = parameter([1.0, -2.0])
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [2.0, -4.0])

    def test_gradients_accumulate(self):
        x = parameter([1.0, -2.0])
        for _ in range(2):
            with Tape() as tape:
                loss = ops.sum(ops.mul(x, x))
            backward(loss, tape)
        np.testing.assert_allclose(x.grad, [4.0, -8.0])

    def test_unused_parameter_gets_zero_gradient(self):
        x, unused = parameter([1.0, 2.0]), parameter([3.0])
        with Tape() as tape:
            loss = ops.sum(x)
        backward(loss, tape, params=[x, unused])
        np.testing.assert_allclose(unused.grad, [0.0])

    def test_non_scalar_loss_rejected(self):
        x = parameter([1.0, 2.0])
        with Tape() as tape:
            y = ops.scale(x, 2.0)
        with pytest.raises(ContractError):
            backward(y, tape)

    def test_loss_from_another_tape_rejected(self):
        x = parameter([1.0, 2.0])
        with Tape():
            loss = ops.sum(x)
        with Tape() as other:
            ops.sum(x)
        with pytest.raises(ContractError):
            backward(loss, other)

    def test_no_grad_records_nothing(self):
        x = parameter([1.0, 2.0])
        with Tape() as tape:
            with no_grad():
                y = ops.sum(x)
        assert len(tape) == 0
        assert not y.requires_grad

    def test_operator_sugar(self):
        a, b = parameter([[1.0, 2.0]]), parameter([[3.0], [4.0]])
        with Tape() as tape:
            loss = (a @ b).sum()
        backward(loss, tape)
        np.testing.assert_allclose(a.grad, [[3.0, 4.0]])
        np.testing.assert_allclose(b.grad, [[1.0], [2.0]])


# ==================== GRADIENT CHECKS ====================

PRIMITIVES = [
    lambda t: ops.sum(ops.gelu(t)),
    lambda t: ops.sum(ops.tanh(t)),
    lambda t: ops.sum(ops.mul(ops.softmax_rows(t), ops.softmax_rows(t))),
    lambda t: ops.sum(ops.mul(ops.layer_norm(t, Tensor(np.ones(4)), Tensor(np.zeros(4))), Tensor(np.arange(4.0)))),
    lambda t: ops.cross_entropy(ops.slice_rows(t, 0, 1), 2),
    lambda t: ops.sum(ops.attention(t, t, t, 4)),
    lambda t: ops.mean(ops.mean_rows(ops.concat_cols([t, ops.scale(t, 2.0)]))),
]


class TestGradCheck:

    def test_sum_is_exact(self):
        x = parameter(np.random.default_rng(0).normal(size=(3, 2)))
        assert grad_check(lambda t: ops.sum(t), x) < 1e-10

    @pytest.mark.parametrize("fn", PRIMITIVES)
    def test_primitives(self, fn):
        x = parameter(np.random.default_rng(1).normal(size=(3, 4)))
        assert grad_check(fn, x) < 1e-5

    @pytest.mark.slow
    @pytest.mark.parametrize("fn", PRIMITIVES)
    def test_primitives_over_seeds(self, fn):
        for seed in range(100):
            x = parameter(np.random.default_rng(seed).normal(size=(3, 4)))
            assert grad_check(fn, x) < 1e-4, f"seed {seed}"

    def test_weighted_sq_distance(self):
        anchor = np.array([0.5, -1.0, 2.0])
        weight = np.array([1.0, 0.0, 3.0])
        x = parameter([1.0, 1.0, 1.0])
        assert grad_check(lambda t: ops.weighted_sq_distance(t, anchor, weight), x) < 1e-6

    def test_gather_rows_repeated_index(self):
        x = parameter(np.random.default_rng(2).normal(size=(4, 3)))
        assert grad_check(lambda t: ops.sum(ops.mul(ops.gather_rows(t, [1, 1, 3]), ops.gather_rows(t, [0, 2, 3]))), x) < 1e-6

    def test_detects_wrong_backward(self):
        def bad_square(t):
            return record(t.data ** 2, (t,), lambda g: (g * t.data,))

        x = parameter([1.0, 2.0])
        assert grad_check(lambda t: ops.sum(bad_square(t)), x) > 0.1

    def test_numerical_gradient_restores_input(self):
        x = parameter([0.3, -0.7])
        before = x.data.copy()
        numerical_gradient(lambda t: ops.sum(ops.mul(t, t)), x)
        np.testing.assert_array_equal(x.data, before)

    def test_contract_errors(self):
        with pytest.raises(ContractError):
            grad_check(lambda t: ops.sum(t), Tensor([1.0]))
        with pytest.raises(ContractError):
            grad_check(lambda t: ops.sum(t), parameter([1.0]), step=0.0)


# ==================== OPTIMIZERS ====================

class TestOptimizers:

    def test_adam_zero_lr_leaves_parameters(self):
        x = parameter([1.0, -2.0])
        opt = Adam([x], lr=0.0)
        for _ in range(3):
            opt.zero_grad()
            with Tape() as tape:
                loss = ops.sum(ops.mul(x, x))
            backward(loss, tape)
            opt.step()
        np.testing.assert_array_equal(x.data, [1.0, -2.0])

    def test_sgd_step(self):
        x = parameter([1.0, -2.0])
        opt = SGD([x], lr=0.1)
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        backward(loss, tape)
        opt.step()
        np.testing.assert_allclose(x.data, [0.8, -1.6])

    def test_adam_first_step_moves_by_lr(self):
        x = parameter([3.0])
        opt = Adam([x], lr=0.01)
        with Tape() as tape:
            loss = ops.sum(ops.mul(x, x))
        backward(loss, tape)
        opt.step()
        assert x.data[0] == pytest.approx(2.99, abs=1e-6)

    def test_frozen_parameters_are_skipped(self):
        frozen = Tensor([1.0])
        opt = build_optimizer("sgd", [frozen, parameter([1.0])], 0.1)
        assert len(opt.params) == 1

    def test_unknown_optimizer(self):
        with pytest.raises(ValueError):
            build_optimizer("rmsprop", [parameter([1.0])], 0.1)
