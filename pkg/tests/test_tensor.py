import numpy as np
import pytest

from engine import tensor as T
from engine.errors import NumericError, ShapeError
from engine.tensor import Tensor


def check_gradient(build, arrays, finite_difference, atol=1e-6):
    """Compare autodiff gradients of sum(build(*leaves) * weights) against central differences."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*leaves)
    weights = np.random.default_rng(99).normal(size=out.shape)
    loss = T.row_sum(T.transpose(T.row_sum(T.mul(out, Tensor(weights)))))
    loss.backward()

    for leaf, array in zip(leaves, arrays):
        def f():
            return float((build(*[Tensor(a) for a in arrays]).values * weights).sum())
        expected = finite_difference(f, array)
        np.testing.assert_allclose(leaf.grad, expected, atol=atol, rtol=1e-5)


class TestTensorBasics:
    def test_scalar_and_vector_promoted_to_2d(self):
        assert Tensor(3.0).shape == (1, 1)
        assert Tensor([1.0, 2.0]).shape == (1, 2)

    def test_three_dimensional_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 2, 2)))

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            Tensor([[np.inf]])

    def test_exp_overflow_raises(self):
        with pytest.raises(NumericError):
            T.exp(Tensor([[1000.0]], requires_grad=True))

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_item_needs_1x1(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 2))).item()

    def test_backward_without_seed_needs_scalar(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            T.scale(x, 2.0).backward()

    def test_constants_do_not_build_a_tape(self):
        out = T.matmul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))))
        assert not out.requires_grad
        assert out._parents == ()


class TestAccumulation:
    def test_diamond_gradient_is_summed(self):
        x = Tensor([[3.0]], requires_grad=True)
        y = T.add(T.mul(x, x), T.scale(x, 2.0))
        y.backward()
        assert x.grad[0, 0] == pytest.approx(2 * 3.0 + 2.0)

    def test_leaf_gradients_accumulate_across_calls(self):
        x = Tensor([[1.5]], requires_grad=True)
        T.scale(x, 4.0).backward()
        T.scale(x, 4.0).backward()
        assert x.grad[0, 0] == pytest.approx(8.0)
        x.zero_grad()
        assert x.grad is None

    def test_interior_nodes_keep_no_grad(self):
        x = Tensor([[1.0, 2.0]], requires_grad=True)
        hidden = T.tanh(x)
        T.row_sum(hidden).backward()
        assert hidden.grad is None
        assert x.grad is not None

    def test_operator_sugar(self):
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        b = Tensor([[3.0, 5.0]])
        out = T.row_sum((a - b) * 2.0 + (-a) * b)
        out.backward()
        np.testing.assert_allclose(a.grad, [[2.0 - 3.0, 2.0 - 5.0]])


class TestOpGradients:
    def test_matmul(self, rng, finite_difference):
        check_gradient(T.matmul, [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))], finite_difference)

    def test_elementwise(self, rng, finite_difference):
        a, b = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        check_gradient(T.mul, [a, b], finite_difference)
        check_gradient(lambda x: T.tanh(T.exp(T.scale(x, 0.5))), [a], finite_difference)
        check_gradient(lambda x: T.relu(x), [a + 0.05 * np.sign(a)], finite_difference)

    def test_reciprocal_and_sqrt(self, rng, finite_difference):
        a = rng.uniform(0.5, 2.0, size=(3, 1))
        check_gradient(lambda x: T.reciprocal(T.sqrt(x)), [a], finite_difference)

    def test_row_sum_diag_transpose(self, rng, finite_difference):
        a = rng.uniform(0.1, 1.0, size=(4, 4))
        check_gradient(lambda x: T.matmul(T.diag(T.row_sum(x)), T.transpose(x)), [a], finite_difference)

    def test_broadcast_add(self, rng, finite_difference):
        check_gradient(T.broadcast_add, [rng.normal(size=(3, 1)), rng.normal(size=(1, 3))], finite_difference)

    def test_row_selection_and_padding(self, rng, finite_difference):
        a = rng.normal(size=(4, 3))
        check_gradient(lambda x: T.pad_rows(T.take_rows(x, [2, 0, 2]), 5), [a], finite_difference)
        check_gradient(lambda x: T.concat_cols([T.slice_rows(x, 0, 2), T.slice_rows(x, 2, 4)]), [a], finite_difference)

    def test_reshape_and_max_pool(self, rng, finite_difference):
        a = rng.normal(size=(6, 2))
        check_gradient(lambda x: T.reshape(T.max_pool_rows(x, 2), 1, 6), [a], finite_difference)

    def test_l2_rowpair_norms(self, rng, finite_difference):
        h = rng.normal(size=(4, 3))
        check_gradient(T.l2_rowpair_norms, [h], finite_difference)

    def test_linear(self, rng, finite_difference):
        arrays = [rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(1, 2))]
        check_gradient(T.linear, arrays, finite_difference)


class TestOps:
    def test_max_pool_drops_trailing_row(self):
        x = Tensor(np.array([[1.0], [3.0], [2.0], [0.0], [9.0]]))
        assert T.max_pool_rows(x, 2).values.ravel().tolist() == [3.0, 2.0]

    def test_pad_rows_cannot_shrink(self):
        with pytest.raises(ShapeError):
            T.pad_rows(Tensor(np.zeros((3, 1))), 2)

    def test_dropout_is_inverted_and_seeded(self):
        x = Tensor(np.ones((1, 1000)))
        a = T.dropout(x, 0.5, np.random.default_rng(0)).values
        b = T.dropout(x, 0.5, np.random.default_rng(0)).values
        np.testing.assert_array_equal(a, b)
        assert set(np.unique(a)) <= {0.0, 2.0}
        assert T.dropout(x, 0.0, np.random.default_rng(0)) is x

    def test_l2_rowpair_norms_values(self):
        h = Tensor([[0.0, 0.0], [3.0, 4.0]])
        out = T.l2_rowpair_norms(h, eps=0.0).values
        np.testing.assert_allclose(out, [[0.0, 5.0], [5.0, 0.0]])


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss = T.softmax_cross_entropy(Tensor([[0.0, 0.0, 0.0]]), 1)
        assert loss.item() == pytest.approx(np.log(3))

    def test_large_logits_are_stable(self):
        loss = T.softmax_cross_entropy(Tensor([[1000.0, 0.0]]), 0)
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_gradient_is_probs_minus_one_hot(self):
        logits = Tensor([[1.0, 2.0, 0.5]], requires_grad=True)
        T.softmax_cross_entropy(logits, 2).backward()
        expected = T.softmax(Tensor([[1.0, 2.0, 0.5]]))
        expected[0, 2] -= 1.0
        np.testing.assert_allclose(logits.grad, expected, atol=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            T.softmax_cross_entropy(Tensor([[0.0, 1.0]]), 2)

    def test_softmax_rows_sum_to_one(self, rng):
        probs = T.softmax(Tensor(rng.normal(size=(1, 5))))
        assert probs.sum() == pytest.approx(1.0)
