import math

import numpy as np
import pytest

from rtm import numkit
from rtm.numkit import (
    AdamState,
    GradCheckError,
    OptimizationError,
    Param,
    ShapeError,
    activation,
    activation_backward,
    adam_init,
    adam_step,
    bilinear,
    grad_check,
    l2_gradient,
    l2_penalty,
    make_rng,
    matmul,
    softmax,
    uniform_init,
)


def loop_matmul(a, b):
    """Independent triple-loop matrix product."""
    m, n = a.shape
    n2, p = b.shape
    assert n == n2
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            s = 0.0
            for k in range(n):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def loop_bilinear(x, slices, y):
    """Independent brute-force computation of x^T M[s] y per slice."""
    k, d, _ = slices.shape
    out = np.zeros(k)
    for s in range(k):
        acc = 0.0
        for i in range(d):
            for j in range(d):
                acc += x[i] * slices[s, i, j] * y[j]
        out[s] = acc
    return out


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(np.eye(2), a), a)
        np.testing.assert_array_equal(matmul(a, np.eye(2)), a)

    def test_zeros(self):
        out = matmul(np.zeros((2, 3)), np.arange(12.0).reshape(3, 4))
        np.testing.assert_array_equal(out, np.zeros((2, 4)))

    def test_known_product(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        expected = np.array([[19.0, 22.0], [43.0, 50.0]])
        np.testing.assert_array_equal(matmul(a, b), expected)
        np.testing.assert_array_equal(loop_matmul(a, b), expected)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))


class TestBilinear:
    def test_unit_basis_identity_slice(self):
        e1 = np.array([1.0, 0.0, 0.0])
        slices = np.eye(3)[None, :, :]
        np.testing.assert_array_equal(bilinear(e1, slices, e1), [1.0])

    def test_zero_slices(self):
        rng = make_rng(0)
        x = rng.normal(size=4)
        y = rng.normal(size=4)
        np.testing.assert_array_equal(bilinear(x, np.zeros((3, 4, 4)), y), np.zeros(3))

    def test_matches_triple_loop(self):
        rng = make_rng(1)
        x = rng.normal(size=3)
        y = rng.normal(size=3)
        slices = rng.normal(size=(2, 3, 3))
        np.testing.assert_allclose(
            bilinear(x, slices, y), loop_bilinear(x, slices, y), atol=1e-12, rtol=0
        )

    def test_random_shapes_sweep(self):
        rng = make_rng(2)
        for _ in range(100):
            d = int(rng.integers(1, 9))
            k = int(rng.integers(1, 5))
            x = rng.normal(size=d)
            y = rng.normal(size=d)
            slices = rng.normal(size=(k, d, d))
            np.testing.assert_allclose(
                bilinear(x, slices, y), loop_bilinear(x, slices, y), atol=1e-12, rtol=0
            )

    def test_dim_mismatch(self):
        with pytest.raises(ShapeError):
            bilinear(np.zeros(3), np.zeros((1, 3, 3)), np.zeros(4))
        with pytest.raises(ShapeError):
            bilinear(np.zeros(2), np.zeros((1, 3, 3)), np.zeros(2))


class TestActivations:
    def test_point_values(self):
        assert activation(np.array(0.0), "tanh") == 0.0
        assert activation_backward(np.array(0.0), np.array(1.0), "tanh") == 1.0
        assert activation(np.array(0.0), "sigmoid") == 0.5
        assert activation(np.array(-2.5), "relu") == 0.0
        assert activation_backward(np.array(-2.5), np.array(1.0), "relu") == 0.0

    @pytest.mark.parametrize("kind", ["tanh", "sigmoid", "relu"])
    def test_backward_matches_finite_differences(self, kind):
        rng = make_rng(3)
        # stay away from relu's kink at 0
        x = rng.uniform(0.1, 3.0, size=100) * rng.choice([-1.0, 1.0], size=100)
        h = 1e-6
        numeric = (activation(x + h, kind) - activation(x - h, kind)) / (2 * h)
        analytic = activation_backward(x, np.ones_like(x), kind)
        rel = np.abs(analytic - numeric) / np.maximum(
            np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8
        )
        assert rel.max() < 1e-6

    def test_upstream_is_multiplied(self):
        x = np.array([0.3, -0.7])
        up = np.array([2.0, -3.0])
        np.testing.assert_allclose(
            activation_backward(x, up, "tanh"),
            activation_backward(x, np.ones(2), "tanh") * up,
        )

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            activation(np.zeros(1), "gelu")


class TestSoftmax:
    def test_equal_logits(self):
        np.testing.assert_array_equal(softmax(np.array([2.0, 2.0, 2.0])), np.full(3, 1 / 3))

    def test_analytic_case(self):
        out = softmax(np.array([0.0, math.log(3.0)]))
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-15)

    def test_shift_invariance_and_stability(self):
        big = softmax(np.array([1000.0, 1000.5]))
        small = softmax(np.array([0.0, 0.5]))
        assert np.all(np.isfinite(big))
        np.testing.assert_allclose(big, small, atol=1e-12)

    def test_sums_to_one(self):
        rng = make_rng(4)
        for _ in range(50):
            n = int(rng.integers(1, 12))
            out = softmax(rng.normal(scale=5.0, size=n))
            assert abs(out.sum() - 1.0) < 1e-12
            assert np.all(out >= 0)

    def test_empty_input(self):
        with pytest.raises(ValueError, match="empty"):
            softmax(np.zeros(0))


class TestAdam:
    def test_zero_grad_zero_moments_is_noop(self):
        p = Param("w", np.array([1.0, -2.0]))
        st = adam_init(p)
        adam_step(p, st)
        np.testing.assert_array_equal(p.value, [1.0, -2.0])
        assert st.step_count == 1

    def test_first_step_is_signed_lr(self):
        # bias-corrected first step: update ~ -lr * sign(g)
        for g in (3.7, -0.02):
            p = Param("w", np.array([0.5]))
            p.grad[...] = g
            st = adam_init(p, learning_rate=0.001)
            adam_step(p, st)
            update = p.value[0] - 0.5
            np.testing.assert_allclose(update, -0.001 * np.sign(g), rtol=1e-6)

    def test_two_steps_on_quadratic_match_hand_trace(self):
        # f(theta) = theta^2, grad = 2*theta, starting at theta = 1
        lr, b1, b2, eps = 0.001, 0.9, 0.999, 1e-8
        theta = 1.0
        m = v = 0.0
        trace = []
        for t in (1, 2):
            g = 2.0 * theta
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
            trace.append(theta)

        p = Param("theta", np.array([1.0]))
        st = adam_init(p, learning_rate=lr)
        for t in (0, 1):
            p.grad[...] = 2.0 * p.value
            adam_step(p, st)
            np.testing.assert_allclose(p.value[0], trace[t], rtol=1e-15)
            p.zero_grad()

    def test_nonfinite_grad_names_parameter(self):
        p = Param("w_hidden", np.zeros(2))
        p.grad[0] = np.nan
        with pytest.raises(OptimizationError, match="w_hidden"):
            adam_step(p, adam_init(p))


class TestL2:
    def test_zero_params(self):
        assert l2_penalty([Param("a", np.zeros(4))], 0.5) == 0.0

    def test_single_scalar(self):
        p = Param("a", np.array([2.0]))
        assert l2_penalty([p], 0.1) == pytest.approx(0.4, abs=1e-15)
        l2_gradient([p], 0.1)
        np.testing.assert_allclose(p.grad, [0.4])

    def test_small_lambda_matches_direct_sum(self):
        rng = make_rng(5)
        params = [Param(f"p{i}", rng.normal(size=(3, 4))) for i in range(3)]
        lam = 1e-6
        direct = lam * sum(float((p.value**2).sum()) for p in params)
        assert l2_penalty(params, lam) == pytest.approx(direct, rel=1e-12)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            l2_penalty([], -1.0)


class TestGradCheck:
    def test_quadratic(self):
        p = Param("theta", np.array([3.0]))

        def loss():
            p.zero_grad()
            p.grad[...] = 2.0 * p.value
            return float(p.value[0] ** 2)

        errs = grad_check(loss, [p], eps=1e-5)
        assert errs["theta"] < 1e-8

    def test_tanh_at_zero(self):
        p = Param("theta", np.array([0.0]))

        def loss():
            p.zero_grad()
            p.grad[...] = 1.0 - np.tanh(p.value) ** 2
            return float(np.tanh(p.value[0]))

        errs = grad_check(loss, [p], eps=1e-5)
        assert errs["theta"] < 1e-10

    def test_detects_injected_fault(self):
        p = Param("theta", np.array([3.0]))

        def loss():
            p.zero_grad()
            p.grad[...] = 1.1 * 2.0 * p.value  # deliberately scaled analytic grad
            return float(p.value[0] ** 2)

        errs = grad_check(loss, [p], eps=1e-5)
        assert errs["theta"] == pytest.approx(0.1 / 1.1, abs=1e-4)
        assert errs["theta"] > 1e-4

    def test_nonfinite_loss_aborts(self):
        p = Param("theta", np.array([1.0]))

        def loss():
            return float("nan")

        with pytest.raises(GradCheckError):
            grad_check(loss, [p], eps=1e-5)

    def test_eps_range_enforced(self):
        p = Param("theta", np.array([1.0]))
        with pytest.raises(ValueError):
            grad_check(lambda: 0.0, [p], eps=1e-2)


class TestRngAndInit:
    def test_same_seed_same_draws(self):
        a = make_rng(123).normal(size=10)
        b = make_rng(123).normal(size=10)
        np.testing.assert_array_equal(a, b)

    def test_uniform_init_bounds_and_determinism(self):
        r = math.sqrt(6.0 / (8 + 5))
        w1 = uniform_init(make_rng(7), (5, 8), 8, 5)
        w2 = uniform_init(make_rng(7), (5, 8), 8, 5)
        np.testing.assert_array_equal(w1, w2)
        assert np.all(np.abs(w1) <= r)
        assert w1.dtype == np.float64


class TestParam:
    def test_grad_shape_enforced(self):
        with pytest.raises(ShapeError):
            Param("w", np.zeros((2, 2)), grad=np.zeros(3))

    def test_zero_grads_helper(self):
        ps = [Param("a", np.ones(2)), Param("b", np.ones(3))]
        for p in ps:
            p.grad[...] = 5.0
        numkit.zero_grads(ps)
        for p in ps:
            np.testing.assert_array_equal(p.grad, np.zeros_like(p.grad))
