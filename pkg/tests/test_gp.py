import math

import numpy as np
import pytest

from skipgp import gp
from skipgp.errors import (DimensionError, InitializationError, NonConvergenceError,
                           OutOfRangeError)
from skipgp.kernels import KernelSpec
from skipgp.optim import Adam, central_difference
from skipgp.synthetic import rbf_regression

LOG_2PI = math.log(2 * math.pi)


def exact_model(lengthscales=(1.0,), outputscale=1.0, noise=0.01, mean=0.0):
    return gp.GpModel(KernelSpec("RBF", lengthscales, outputscale), noise, mean)


def skip_model(lengthscales=(1.0, 1.0), noise=0.01, **settings):
    return gp.GpModel(KernelSpec("RBF", lengthscales), noise, 0.0, "skip",
                      gp.SkipSettings(**settings))


@pytest.fixture(scope="module")
def data2d():
    X, y, _ = rbf_regression(300, d=2, noise_std=0.1, seed=0)
    return X, y


class TestMll:
    def test_scalar_closed_form(self):
        value = gp.mll(exact_model(noise=0.5), np.array([[0.0]]), np.array([2.0]))
        expected = -4.0 / (2 * 1.5) - 0.5 * math.log(1.5) - 0.5 * LOG_2PI
        assert value == pytest.approx(expected, abs=1e-12)

    def test_huge_noise_is_worse(self, data2d):
        X, y = data2d
        good = exact_model((1.0, 1.0))
        bad = exact_model((1.0, 1.0), noise=1e6)
        assert gp.mll(bad, X, y) < gp.mll(good, X, y)

    def test_permutation_invariant_in_exact_mode(self, data2d):
        X, y = data2d
        perm = np.random.default_rng(1).permutation(len(y))
        m = exact_model((1.0, 1.0))
        assert gp.mll(m, X[perm], y[perm]) == pytest.approx(gp.mll(m, X, y), abs=1e-8)

    def test_skip_matches_exact(self, data2d):
        X, y = data2d
        exact = gp.mll(exact_model((1.0, 1.0)), X, y)
        approx = gp.mll(skip_model(rank=50, grid_size=200, num_probes=30), X, y)
        assert abs(approx - exact) / abs(exact) <= 0.02

    def test_skip_details_and_determinism(self, data2d):
        X, y = data2d
        m = skip_model(rank=20, grid_size=100)
        a = gp.mll_details(m, X, y, seed=3)
        b = gp.mll_details(m, X, y, seed=3)
        assert a.value == b.value
        # each 1-D leaf gets at most r applies; smooth leaves may break down early
        assert 2 <= a.leaf_applies <= 2 * 20
        assert a.cg_iterations > 0 and {"decompose", "solve", "logdet"} <= set(a.timings)

    def test_cg_nonconvergence_is_reported(self, data2d):
        X, y = data2d
        with pytest.raises(NonConvergenceError) as info:
            gp.mll(skip_model(rank=20, max_cg_iters=2, noise=1e-4), X, y)
        assert info.value.residual > 0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            gp.mll(exact_model(), np.zeros((3, 1)), np.zeros(2))

    def test_matern_skip_needs_one_dimension(self):
        m = gp.GpModel(KernelSpec("Matern52", (1.0, 1.0)), 0.1, 0.0, "skip")
        with pytest.raises(Exception, match="does not factor"):
            gp.mll(m, np.zeros((4, 2)) + np.arange(4)[:, None], np.zeros(4))


class TestGradient:
    def test_noise_derivative_closed_form(self):
        # far-apart inputs make the kernel matrix diagonal
        X = np.array([[0.0], [100.0]])
        y = np.array([1.3, -0.4])
        m = exact_model(outputscale=0.8, noise=0.3)
        g = gp.mll_gradient(m, X, y)
        s = 0.8 + 0.3
        expected = 0.3 * np.sum(0.5 * y**2 / s**2 - 0.5 / s)
        assert g[-1] == pytest.approx(expected, abs=1e-5)

    def test_matches_independent_differences(self, data2d):
        X, y = data2d
        m = exact_model((0.8, 1.2), noise=0.05)
        g = gp.mll_gradient(m, X[:80], y[:80])
        theta = m.log_params()
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = 1e-4
            fd = (gp.mll(m.with_log_params(theta + e), X[:80], y[:80])
                  - gp.mll(m.with_log_params(theta - e), X[:80], y[:80])) / 2e-4
            assert g[i] == pytest.approx(fd, abs=1e-5)

    def test_zero_at_stationary_point(self):
        y, k = 2.0, 1.0
        m = exact_model(outputscale=k, noise=y**2 - k)
        g = gp.mll_gradient(m, np.array([[0.0]]), np.array([y]))
        np.testing.assert_allclose(g, 0.0, atol=1e-7)

    def test_central_difference_on_quadratic(self):
        g = central_difference(lambda t: -np.sum((t - 1.0) ** 2), np.array([0.0, 2.0]))
        np.testing.assert_allclose(g, [2.0, -2.0], atol=1e-8)


class TestFit:
    def test_recovers_lengthscale(self):
        X, y, _ = rbf_regression(200, d=1, noise_std=0.1, lengthscale=1.0, seed=4)
        res = gp.fit(gp.initial_model(X, y), X, y, learning_rate=0.1, steps=100)
        ls = res.model.kernel.lengthscales[0]
        assert 1 / 1.5 <= ls <= 1.5

    def test_best_seen_contract(self, data2d):
        X, y = data2d
        res = gp.fit(gp.initial_model(X[:100], y[:100]), X[:100], y[:100], steps=20)
        assert res.best_mll >= res.initial_mll
        assert res.best_mll == max(rec["mll"] for rec in res.trace)
        assert gp.mll(res.model, X[:100], y[:100]) == pytest.approx(res.best_mll)

    def test_best_seen_trace_is_monotone(self, data2d):
        X, y = data2d
        res = gp.fit(gp.initial_model(X[:60], y[:60]), X[:60], y[:60], steps=15)
        running = np.maximum.accumulate([rec["mll"] for rec in res.trace])
        assert np.all(np.diff(running) >= 0)

    def test_single_step_bound(self, data2d):
        X, y = data2d
        m0 = gp.initial_model(X[:50], y[:50])
        res = gp.fit(m0, X[:50], y[:50], learning_rate=0.05, steps=1)
        step = np.abs(np.array(res.trace[1]["log_params"]) - m0.log_params())
        assert np.all(step <= 0.05 + 1e-9)

    def test_zero_steps_rejected(self, data2d):
        X, y = data2d
        with pytest.raises(ValueError):
            gp.fit(gp.initial_model(X, y), X, y, steps=0)

    def test_nonfinite_initial_mll(self):
        X = np.zeros((3, 1))
        y = np.array([1.0, np.inf, 0.0])
        with pytest.raises((InitializationError, ValueError)):
            gp.fit(exact_model(), X, y, steps=1)

    def test_noise_floor(self):
        X = np.linspace(0, 1, 20)[:, None]
        y = np.sin(6 * X[:, 0])
        m = exact_model(noise=1e-12)
        res = gp.fit(m, X, y, steps=2)
        assert res.model.noise_variance >= 1e-6 * y.var() * (1 - 1e-9)

    def test_adam_ascends(self):
        opt = Adam(np.array([0.0]), learning_rate=0.1)
        theta = opt.step(np.array([5.0]))
        assert theta[0] == pytest.approx(0.1, rel=1e-6)

    def test_initial_model(self):
        X = np.column_stack([np.arange(10.0), 3 * np.arange(10.0)])
        y = np.arange(10.0)
        m = gp.initial_model(X, y)
        np.testing.assert_allclose(m.kernel.lengthscales, X.std(axis=0))
        assert m.noise_variance == pytest.approx(0.1 * y.var())
        assert m.constant_mean == pytest.approx(y.mean())

    def test_serialization_roundtrip(self):
        m = skip_model(rank=7, grid_size=33)
        back = gp.GpModel.from_dict(m.to_dict())
        np.testing.assert_allclose(back.log_params(), m.log_params())
        assert back.skip == m.skip and back.inference_mode == "skip"


class TestPredict:
    def test_interpolates_training_point(self):
        X = np.linspace(-2, 2, 15)[:, None]
        y = np.sin(X[:, 0])
        post = gp.condition(exact_model(noise=1e-6), X, y)
        mean, _ = gp.predict(post, X[[4]])
        assert mean[0] == pytest.approx(y[4], abs=1e-3)

    def test_reverts_to_prior_far_away(self):
        X = np.linspace(-2, 2, 15)[:, None]
        y = np.cos(X[:, 0])
        m = exact_model(outputscale=1.5, mean=0.7)
        mean, var = gp.predict(gp.condition(m, X, y), np.array([[1e3]]))
        assert mean[0] == pytest.approx(0.7, abs=1e-6)
        assert var[0] == pytest.approx(1.5, abs=1e-6)

    def test_variances_nonnegative_and_below_prior(self, data2d):
        X, y = data2d
        post = gp.condition(exact_model((1.0, 1.0)), X, y)
        _, var = gp.predict(post, X[:50])
        assert np.all(var >= 0) and np.all(var <= 1.0 + 1e-9)

    def test_skip_matches_exact(self, data2d):
        X, y = data2d
        Xs = np.random.default_rng(5).uniform(-2.5, 2.5, size=(60, 2))
        em, ev = gp.predict(gp.condition(exact_model((1.0, 1.0)), X, y), Xs)
        sm, sv = gp.predict(gp.condition(skip_model(rank=50, grid_size=200), X, y), Xs)
        assert np.max(np.abs(sm - em)) <= 1e-2 * np.std(y)
        assert np.all(sv >= 0)
        np.testing.assert_allclose(sv, ev, atol=1e-2)

    def test_grid_rebuild_and_refusal(self, data2d):
        X, y = data2d
        post = gp.condition(skip_model(rank=30), X, y)
        far = np.array([[0.0, 8.0]])
        with pytest.raises(OutOfRangeError):
            gp.predict(post, far, rebuild_grid=False)
        mean, var = gp.predict(post, far)
        assert np.isfinite(mean).all() and var[0] <= 1.0 + 1e-3

    def test_batches_report_progress(self):
        X = np.linspace(0, 3, 40)[:, None]
        y = np.sin(X[:, 0])
        post = gp.condition(exact_model(), X, y)
        seen = []
        gp.predict(post, np.linspace(0.5, 2.5, 23)[:, None], batch_size=10,
                   progress=lambda done, total: seen.append((done, total)))
        assert seen == [(10, 23), (20, 23), (23, 23)]

    def test_column_mismatch(self, data2d):
        X, y = data2d
        post = gp.condition(exact_model((1.0, 1.0)), X, y)
        with pytest.raises(DimensionError):
            gp.predict(post, np.zeros((2, 3)))
