"""Gaussian-process surrogate: kernel, likelihood, posterior, gradients,
hallucination and joint sampling against independent linear-algebra oracles.
"""

import numpy as np
import pytest

from eshotgun.bounds import Box
from eshotgun.gp import (
    DEFAULT_JITTER_REL,
    AllRestartsFailed,
    Dataset,
    DuplicateLocation,
    FactorisationFailure,
    GpHyperparams,
    GpModel,
    OutputScaler,
    default_hyperparam_log_bounds,
    fit_hyperparameters,
    kernel,
    kernel_matrix,
    log_marginal_likelihood,
)

# Frozen from a 30-digit mpmath evaluation of the Matern 5/2 closed form at
# r = 0.5, l = 1, s2 = 1.
MATERN_HALF = 0.8286491424181253


def hp(l=1.0, s2=1.0, jitter=1e-6):
    return GpHyperparams(lengthscale=l, signal_variance=s2, jitter=jitter)


def sample_from_prior(rng, X, hyper):
    """Draw consistent function values from the GP prior at X."""
    K = kernel_matrix(X, X, hyper)
    K[np.diag_indices_from(K)] += 1e-10 * hyper.signal_variance
    return np.linalg.cholesky(K) @ rng.standard_normal(X.shape[0])


def random_prior_model(rng, m=8, d=2, l=0.5, s2=1.0):
    """Separated inputs with prior-consistent values; keeps K well conditioned
    so the jitter-induced interpolation error stays inside its tolerance."""
    sep = 2.0 * l
    spread = max(1.0, 1.3 * sep * np.sqrt(m))
    X = np.empty((m, d))
    count = 0
    while count < m:
        x = rng.random(d) * spread
        if count == 0 or np.linalg.norm(X[:count] - x, axis=1).min() > sep:
            X[count] = x
            count += 1
    hyper = hp(l=l, s2=s2, jitter=DEFAULT_JITTER_REL * s2)
    f = sample_from_prior(rng, X, hyper)
    return GpModel.build(Dataset(X, f), hyper)


class TestKernel:
    def test_equal_points_give_signal_variance(self):
        x = np.array([0.3, -1.2])
        assert kernel(x, x, hp(s2=2.5)) == pytest.approx(2.5)

    def test_monotone_decay_to_zero(self):
        x = np.zeros(2)
        values = [
            kernel(x, np.array([r, 0.0]), hp(l=0.7)) for r in np.linspace(0, 50, 40)
        ]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-12

    def test_half_lengthscale_value(self):
        # High-precision oracle evaluation of the closed form.
        val = kernel(np.array([0.0]), np.array([0.5]), hp())
        assert val == pytest.approx(MATERN_HALF, abs=1e-12)

    def test_matrix_is_symmetric_psd(self):
        rng = np.random.default_rng(0)
        X = rng.random((20, 3))
        K = kernel_matrix(X, X, hp(l=0.4))
        assert np.allclose(K, K.T)
        assert np.linalg.eigvalsh(K).min() > -1e-10


class TestLogMarginalLikelihood:
    def test_single_point_hand_value(self):
        ds = Dataset(np.array([[0.0]]), np.array([0.0]))
        # -log(2 pi)/2 - log(1 + 1e-6)/2, 30-digit arithmetic.
        val = log_marginal_likelihood(ds, hp())
        assert val == pytest.approx(-0.9189390332044227, abs=1e-12)

    def test_zero_values_reduce_to_logdet_term(self):
        rng = np.random.default_rng(1)
        X = rng.random((5, 2))
        ds = Dataset(X, np.zeros(5))
        hyper = hp(l=0.8, s2=2.0, jitter=1e-6 * 2.0)
        K = kernel_matrix(X, X, hyper) + hyper.jitter * np.eye(5)
        expected = -0.5 * np.linalg.slogdet(K)[1] - 2.5 * np.log(2 * np.pi)
        assert log_marginal_likelihood(ds, hyper) == pytest.approx(expected, abs=1e-10)

    def test_two_point_matrix_inverse_oracle(self):
        ds = Dataset(np.array([[0.1], [0.7]]), np.array([1.3, -0.4]))
        hyper = hp(l=0.6, s2=1.7, jitter=1e-6 * 1.7)
        K = kernel_matrix(ds.inputs, ds.inputs, hyper) + hyper.jitter * np.eye(2)
        expected = (
            -0.5 * ds.values @ np.linalg.inv(K) @ ds.values
            - 0.5 * np.log(np.linalg.det(K))
            - np.log(2 * np.pi)
        )
        assert log_marginal_likelihood(ds, hyper) == pytest.approx(
            expected, abs=1e-10
        )

    def test_indefinite_matrix_raises(self):
        X = np.array([[0.0], [1e-150]])  # distinct but numerically identical
        ds = Dataset(X, np.array([0.0, 1.0]))
        with pytest.raises(FactorisationFailure):
            log_marginal_likelihood(ds, hp(jitter=0.0))


class TestFitHyperparameters:
    def test_recovers_lengthscale_from_gp_draws(self):
        # Generate-and-refit oracle: data drawn with l = 0.3 should be
        # recovered within a factor of 2 in >= 80% of seeds.
        true = hp(l=0.3, s2=1.0, jitter=1e-10)
        hits = 0
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            X = rng.random((30, 1))
            f = sample_from_prior(rng, X, true)
            ds = Dataset(X, f)
            bounds = default_hyperparam_log_bounds(ds, box_diagonal=1.0)
            fitted = fit_hyperparameters(ds, restarts=5, bounds=bounds, rng=rng)
            if 0.15 <= fitted.lengthscale <= 0.6:
                hits += 1
        assert hits >= 16

    def test_constant_data_drives_signal_variance_down(self):
        ds = Dataset(np.linspace(0, 1, 6).reshape(-1, 1), np.zeros(6))
        bounds = Box(np.log([0.05, 1e-11]), np.log([5.0, 1e-5]))
        fitted = fit_hyperparameters(
            ds, restarts=4, bounds=bounds, rng=np.random.default_rng(2)
        )
        assert fitted.signal_variance == pytest.approx(1e-11, rel=1e-2)

    def test_warm_start_beats_coarse_grid(self):
        rng = np.random.default_rng(3)
        X = rng.random((12, 1))
        f = sample_from_prior(rng, X, hp(l=0.25))
        ds = Dataset(X, f)
        bounds = default_hyperparam_log_bounds(ds, box_diagonal=1.0)
        # Dense grid oracle over the log-space box, at the fit's own jitter.
        grid_best, grid_theta = -np.inf, None
        for gl in np.linspace(bounds.lower[0], bounds.upper[0], 25):
            for gs in np.linspace(bounds.lower[1], bounds.upper[1], 25):
                val = log_marginal_likelihood(
                    ds, hp(np.exp(gl), np.exp(gs), DEFAULT_JITTER_REL * np.exp(gs))
                )
                if val > grid_best:
                    grid_best, grid_theta = val, (np.exp(gl), np.exp(gs))
        warm = hp(grid_theta[0], grid_theta[1], DEFAULT_JITTER_REL * grid_theta[1])
        fitted = fit_hyperparameters(
            ds, restarts=1, bounds=bounds, rng=rng, warm_start=warm
        )
        assert log_marginal_likelihood(ds, fitted) >= grid_best - 1e-9

    def test_fitted_beats_random_box_draws(self):
        rng = np.random.default_rng(4)
        X = rng.random((15, 2))
        f = sample_from_prior(rng, X, hp(l=0.4))
        ds = Dataset(X, f)
        bounds = default_hyperparam_log_bounds(ds, box_diagonal=np.sqrt(2.0))
        fitted = fit_hyperparameters(ds, restarts=10, bounds=bounds, rng=rng)
        best = log_marginal_likelihood(ds, fitted)
        for _ in range(50):
            theta = bounds.uniform(rng)
            lml = log_marginal_likelihood(
                ds,
                hp(
                    np.exp(theta[0]),
                    np.exp(theta[1]),
                    DEFAULT_JITTER_REL * np.exp(theta[1]),
                ),
            )
            assert best >= lml - 1e-9

    def test_all_restarts_failed(self):
        X = np.array([[0.0], [1e-150]])
        ds = Dataset(X, np.array([0.0, 1.0]))
        bounds = Box(np.log([1.0, 1.0]), np.log([2.0, 2.0]))
        with pytest.raises(AllRestartsFailed):
            fit_hyperparameters(
                ds, restarts=3, bounds=bounds, rng=np.random.default_rng(0),
                jitter_rel=0.0,
            )


class TestPosterior:
    def test_interpolates_training_points(self):
        model = random_prior_model(np.random.default_rng(5))
        for x, f in zip(model.dataset.inputs, model.dataset.values):
            post = model.posterior(x)
            assert abs(post.mean - f) <= 1e-6 * (1.0 + abs(f))
            assert post.variance <= 2.0 * model.hyperparams.jitter

    def test_far_point_recovers_prior(self):
        model = random_prior_model(np.random.default_rng(6), l=0.3, s2=1.8)
        post = model.posterior(np.array([60.0, -55.0]))
        assert abs(post.mean) < 1e-9
        assert post.variance == pytest.approx(1.8, rel=1e-9)

    def test_two_point_linear_algebra_oracle(self):
        ds = Dataset(np.array([[0.2], [0.8]]), np.array([0.5, -1.1]))
        hyper = hp(l=0.5, s2=1.3, jitter=1e-6 * 1.3)
        model = GpModel.build(ds, hyper)
        x = np.array([0.45])
        K = kernel_matrix(ds.inputs, ds.inputs, hyper) + hyper.jitter * np.eye(2)
        ks = kernel_matrix(x.reshape(1, -1), ds.inputs, hyper).ravel()
        Kinv = np.linalg.inv(K)
        mean = ks @ Kinv @ ds.values
        var = hyper.signal_variance - ks @ Kinv @ ks
        post = model.posterior(x)
        assert post.mean == pytest.approx(mean, abs=1e-10)
        assert post.variance == pytest.approx(var, abs=1e-10)

    def test_variance_bounds(self):
        rng = np.random.default_rng(7)
        model = random_prior_model(rng, m=10, s2=2.2)
        X = rng.random((500, 2)) * 3.0 - 1.0
        _, var = model.posterior_many(X)
        assert np.all(var >= 0.0)
        assert np.all(var <= 2.2 * (1.0 + 1e-8))


class TestMeanGradient:
    def test_symmetric_midpoint_has_zero_axis_component(self):
        ds = Dataset(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([0.7, 0.7]))
        model = GpModel.build(ds, hp(l=0.5))
        grad = model.posterior_mean_gradient(np.array([0.5, 0.3]))
        assert abs(grad[0]) < 1e-12

    def test_single_point_model_stationary_at_datum(self):
        ds = Dataset(np.array([[0.4, -0.2, 0.9]]), np.array([2.0]))
        model = GpModel.build(ds, hp(l=0.8))
        grad = model.posterior_mean_gradient(ds.inputs[0])
        assert np.allclose(grad, 0.0)

    def test_matches_central_finite_differences(self):
        # 100 random (model, x) pairs against the finite-difference oracle.
        rng = np.random.default_rng(8)
        checked = 0
        while checked < 100:
            model = random_prior_model(rng, m=int(rng.integers(3, 10)), d=2)
            x = rng.random(2)
            grad = model.posterior_mean_gradient(x)
            h = 1e-5  # 1e-5 of the unit data range
            fd = np.empty(2)
            for k in range(2):
                e = np.zeros(2)
                e[k] = h
                fd[k] = (
                    model.mean_many((x + e).reshape(1, -1))[0]
                    - model.mean_many((x - e).reshape(1, -1))[0]
                ) / (2 * h)
            scale = max(np.linalg.norm(fd), 1e-8)
            assert np.linalg.norm(grad - fd) <= 1e-4 * scale
            checked += 1


class TestHallucinate:
    def test_mean_function_invariant_at_probes(self):
        rng = np.random.default_rng(9)
        model = random_prior_model(rng, m=7)
        x = rng.random(2)
        believed = model.hallucinate(x, model.posterior(x).mean)
        probes = rng.random((20, 2))
        before = model.mean_many(probes)
        after = believed.mean_many(probes)
        assert np.allclose(after, before, rtol=1e-6, atol=1e-9)
        # Direct small-matrix oracle on the augmented system.
        ds2 = believed.dataset
        hyper = believed.hyperparams
        K = kernel_matrix(ds2.inputs, ds2.inputs, hyper) + hyper.jitter * np.eye(
            ds2.size
        )
        ks = kernel_matrix(probes, ds2.inputs, hyper)
        oracle = ks @ np.linalg.solve(K, ds2.values)
        assert np.allclose(after, oracle, atol=1e-8)

    def test_hallucinated_point_collapses(self):
        rng = np.random.default_rng(10)
        model = random_prior_model(rng)
        x = rng.random(2)
        value = model.posterior(x).mean
        believed = model.hallucinate(x, value)
        post = believed.posterior(x)
        assert post.mean == pytest.approx(value, abs=1e-8)
        assert post.variance <= 2.0 * believed.hyperparams.jitter

    def test_far_field_unaffected(self):
        rng = np.random.default_rng(11)
        model = random_prior_model(rng, s2=1.5)
        believed = model.hallucinate(rng.random(2), 0.0)
        post = believed.posterior(np.array([80.0, 80.0]))
        assert post.variance == pytest.approx(1.5, rel=1e-9)

    def test_duplicate_raises(self):
        model = random_prior_model(np.random.default_rng(12))
        with pytest.raises(DuplicateLocation):
            model.hallucinate(model.dataset.inputs[0], 0.0)


class TestJointSampling:
    def test_training_points_reproduce_values(self):
        rng = np.random.default_rng(13)
        model = random_prior_model(rng, m=6)
        draw = model.sample_joint_posterior(model.dataset.inputs, rng)
        tol = 10.0 * np.sqrt(model.hyperparams.jitter)
        assert np.all(np.abs(draw - model.dataset.values) <= tol)

    def test_far_point_is_prior_distributed(self):
        rng = np.random.default_rng(14)
        model = random_prior_model(rng, s2=1.0)
        far = np.array([[70.0, 70.0]])
        draws = np.array(
            [model.sample_joint_posterior(far, rng)[0] for _ in range(2000)]
        )
        se = 1.0 / np.sqrt(2000)
        assert abs(draws.mean()) <= 5 * se
        assert draws.std() == pytest.approx(1.0, rel=0.1)

    def test_deterministic_given_seed(self):
        model = random_prior_model(np.random.default_rng(15))
        cands = np.random.default_rng(0).random((50, 2))
        a = model.sample_joint_posterior(cands, np.random.default_rng(99))
        b = model.sample_joint_posterior(cands, np.random.default_rng(99))
        assert np.array_equal(a, b)


class TestModelInfrastructure:
    def test_jitter_escalation_recovers_near_duplicates(self):
        # Two nearly identical inputs can defeat the default jitter; the
        # escalation ladder keeps the build alive.
        X = np.array([[0.0], [1e-9], [0.5]])
        ds = Dataset(X, np.array([0.0, 0.0, 1.0]))
        model = GpModel.build_escalating(ds, lengthscale=1.0, signal_variance=1.0)
        assert model.hyperparams.jitter >= DEFAULT_JITTER_REL

    def test_dataset_rejects_duplicates(self):
        with pytest.raises(ValueError):
            Dataset(np.array([[0.1], [0.1]]), np.array([0.0, 1.0]))

    def test_output_scaler_round_trip(self):
        values = np.array([3.0, 5.0, 10.0])
        scaler = OutputScaler.fit(values)
        assert np.allclose(scaler.from_model(scaler.to_model(values)), values)
        assert abs(scaler.to_model(values).mean()) < 1e-12
        assert scaler.to_model(values).std() == pytest.approx(1.0)

    def test_interpolation_invariant_random_models(self):
        rng = np.random.default_rng(16)
        for _ in range(25):
            model = random_prior_model(rng, m=int(rng.integers(4, 12)))
            means, variances = model.posterior_many(model.dataset.inputs)
            err = np.abs(means - model.dataset.values)
            assert np.all(err <= 1e-6 * (1.0 + np.abs(model.dataset.values)))
            assert np.all(variances <= 2.0 * model.hyperparams.jitter)
