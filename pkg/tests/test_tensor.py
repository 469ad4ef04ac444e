import math

import numpy as np
import pytest

from fairdistill import tensor as tg
from fairdistill.errors import ContractError, DomainError, NumericError
from fairdistill.kernels import mmd2_biased


def grad(fn, *arrays):
    leaves = [tg.Tensor(np.array(a, dtype=float), requires_grad=True) for a in arrays]
    return tg.backward_pass(fn(*leaves), leaves)


class TestPairwiseSqdist:
    def test_two_points(self):
        x = np.array([[0.0], [2.0]])
        np.testing.assert_array_equal(tg.pairwise_sqdist(x, x).data, [[0, 4], [4, 0]])

    def test_identical_points(self):
        assert tg.pairwise_sqdist([[1.0, 1.0]], [[1.0, 1.0]]).data[0, 0] == 0.0

    def test_three_four_five(self):
        assert tg.pairwise_sqdist([[0.0, 0.0]], [[3.0, 4.0]]).data[0, 0] == pytest.approx(25.0)

    def test_matches_broadcast(self, rng):
        x, y = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
        ref = ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)
        np.testing.assert_allclose(tg.pairwise_sqdist(x, y).data, ref, atol=1e-12)

    def test_self_distance_gradient(self, rng):
        x = rng.normal(size=(5, 3))
        w = rng.normal(size=(5, 5))
        f = lambda t: (tg.pairwise_sqdist(t, t) * w).sum()
        analytic = grad(f, x)[0]
        numeric = tg.finite_diff_grad(lambda p: f(tg.Tensor(p[0])).item(), [x])[0]
        assert tg.relative_error(analytic, numeric) < 1e-7


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        assert tg.softmax_cross_entropy([[0.0, 0.0]], [0]).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_saturated_correct(self):
        assert tg.softmax_cross_entropy([[50.0, 0.0]], [0]).item() < 1e-9

    def test_saturated_wrong(self):
        assert tg.softmax_cross_entropy([[0.0, 50.0]], [0]).item() == pytest.approx(50.0, abs=1e-9)

    def test_batch_mean_of_equal_losses(self):
        one = tg.softmax_cross_entropy([[1.0, -1.0]], [1]).item()
        two = tg.softmax_cross_entropy([[1.0, -1.0], [1.0, -1.0]], [1, 1]).item()
        assert two == pytest.approx(one, abs=1e-15)

    @pytest.mark.parametrize("labels", [[2], [-1]])
    def test_bad_labels(self, labels):
        with pytest.raises(DomainError):
            tg.softmax_cross_entropy([[0.0, 0.0]], labels)

    def test_gradient_matches_finite_difference(self):
        logits = np.array([[0.0, 0.0]])
        analytic = grad(lambda t: tg.softmax_cross_entropy(t, [0]), logits)[0]
        numeric = tg.finite_diff_grad(lambda p: tg.softmax_cross_entropy(p[0], [0]).item(), [logits])[0]
        assert tg.relative_error(analytic, numeric) < 1e-6
        np.testing.assert_allclose(analytic, [[-0.5, 0.5]], atol=1e-12)


class TestBackward:
    def test_sum_gives_ones(self):
        w = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(grad(lambda t: t.sum(), w)[0], np.ones((2, 3)))

    def test_half_square_norm(self, rng):
        w = rng.normal(size=(3, 4))
        np.testing.assert_allclose(grad(lambda t: (t * t).sum() * 0.5, w)[0], w, atol=1e-15)

    def test_non_scalar_output(self):
        t = tg.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            tg.backward_pass(t * 2.0)

    def test_unreached_leaf_gets_zeros(self):
        a = tg.Tensor(np.ones(2), requires_grad=True)
        b = tg.Tensor(np.ones(3), requires_grad=True)
        ga, gb = tg.backward_pass(a.sum(), [a, b])
        np.testing.assert_array_equal(gb, np.zeros(3))

    def test_shared_subexpression_accumulates(self):
        x = tg.Tensor(np.array(3.0), requires_grad=True)
        y = x * x
        (g,) = tg.backward_pass(y + y, [x])
        assert g == pytest.approx(12.0)

    def test_detach_blocks_gradient(self):
        x = tg.Tensor(np.array([2.0]), requires_grad=True)
        (g,) = tg.backward_pass((x * x.detach()).sum(), [x])
        assert g[0] == pytest.approx(2.0)

    def test_broadcast_bias(self, rng):
        x = rng.normal(size=(4, 3))
        b = rng.normal(size=3)
        gb = grad(lambda xt, bt: ((xt + bt) * (xt + bt)).sum(), x, b)[1]
        np.testing.assert_allclose(gb, 2 * (x + b).sum(axis=0), atol=1e-12)

    def test_repeated_backward_is_stable(self, rng):
        w = tg.Tensor(rng.normal(size=3), requires_grad=True)
        out = (w * w).sum()
        g1 = tg.backward_pass(out, [w])[0].copy()
        g2 = tg.backward_pass(out, [w])[0]
        np.testing.assert_array_equal(g1, g2)


class TestFiniteDiff:
    def test_square(self):
        g = tg.finite_diff_grad(lambda p: float(p[0] ** 2), [np.array(3.0)], eps=1e-5)[0]
        assert g == pytest.approx(6.0, abs=1e-8)

    def test_constant(self):
        g = tg.finite_diff_grad(lambda p: 1.5, [np.ones((2, 2))])[0]
        np.testing.assert_allclose(g, 0.0, atol=1e-10)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            tg.finite_diff_grad(lambda p: float("nan"), [np.ones(2)])

    def test_mmd_cross_check(self, rng):
        x, y = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        analytic = grad(lambda a, b: mmd2_biased(a, b, 1.5), x, y)
        numeric = tg.finite_diff_grad(lambda p: mmd2_biased(p[0], p[1], 1.5).item(), [x, y])
        for a, n in zip(analytic, numeric):
            assert tg.relative_error(a, n) < 1e-4


def test_relative_error_floor():
    assert tg.relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert tg.relative_error(np.array([1.0]), np.array([1.0 + 1e-6])) == pytest.approx(1e-6, rel=1e-3)
