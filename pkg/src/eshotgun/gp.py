"""Exact zero-mean Gaussian-process regression with an isotropic Matern 5/2 kernel.

Supports marginal-likelihood hyperparameter fitting with restarts, hallucinated
("believer") updates that collapse variance without moving the mean, analytic
posterior-mean gradients and joint posterior sampling over candidate sets.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .bounds import Box

SQRT5 = math.sqrt(5.0)

# Relative jitter ladder: escalated x10 on factorisation failure up to
# 1e-2 * signal variance. The default must stay far below the objective
# resolution the optimiser is expected to reach: noiseless benchmarks are
# interpolated to ~sqrt(jitter) relative accuracy.
DEFAULT_JITTER_REL = 1e-10
MAX_JITTER_REL = 1e-2


class GpError(Exception):
    pass


class FactorisationFailure(GpError):
    """Kernel matrix numerically indefinite for the requested jitter."""


class DuplicateLocation(GpError):
    """New input coincides with an existing one within tolerance."""


class AllRestartsFailed(GpError):
    """No hyperparameter restart produced a factorisable model."""


@dataclass(frozen=True)
class Dataset:
    """Observed locations (M, d) and objective values (M,)."""

    inputs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        values = np.asarray(self.values, dtype=float).ravel()
        if inputs.shape[0] != values.size or inputs.shape[0] < 1:
            raise ValueError("need one value per input row and at least one row")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(values))):
            raise ValueError("inputs and values must be finite")
        if inputs.shape[0] > 1:
            d2 = cdist(inputs, inputs)
            np.fill_diagonal(d2, np.inf)
            if d2.min() <= 0.0:
                raise ValueError("inputs must be pairwise distinct")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def with_observation(self, x: np.ndarray, value: float) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return Dataset(
            np.vstack([self.inputs, x]),
            np.append(self.values, float(value)),
        )


@dataclass(frozen=True)
class GpHyperparams:
    """Isotropic kernel hyperparameters; jitter is added to the K diagonal."""

    lengthscale: float
    signal_variance: float
    jitter: float

    def __post_init__(self):
        if not (self.lengthscale > 0.0 and self.signal_variance > 0.0):
            raise ValueError("lengthscale and signal_variance must be positive")
        if self.jitter < 0.0:
            raise ValueError("jitter must be non-negative")


@dataclass(frozen=True)
class Posterior:
    mean: float
    variance: float


def _matern52_corr(r: np.ndarray, lengthscale: float) -> np.ndarray:
    s = r * (SQRT5 / lengthscale)
    return (1.0 + s + s * s / 3.0) * np.exp(-s)


def kernel(x: np.ndarray, x2: np.ndarray, hp: GpHyperparams) -> float:
    """Matern 5/2 covariance between two locations."""
    r = float(np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(x2, dtype=float)))
    return hp.signal_variance * float(_matern52_corr(np.asarray(r), hp.lengthscale))


def kernel_matrix(a: np.ndarray, b: np.ndarray, hp: GpHyperparams) -> np.ndarray:
    """Cross-covariance matrix between row sets a (N, d) and b (M, d).

    Built with in-place updates: the candidate sets used by joint sampling
    reach 5000x5000, where temporaries dominate the runtime.
    """
    s = cdist(np.atleast_2d(a), np.atleast_2d(b))
    s *= SQRT5 / hp.lengthscale
    poly = s * s
    poly /= 3.0
    poly += s
    poly += 1.0
    np.exp(np.negative(s, out=s), out=s)
    poly *= s
    poly *= hp.signal_variance
    return poly


def log_marginal_likelihood(ds: Dataset, hp: GpHyperparams) -> float:
    """Zero-mean GP log marginal likelihood of the data under hp.

    Raises FactorisationFailure when K + jitter*I is numerically indefinite,
    which signals the jitter is too small for this dataset/hyperparameter pair.
    """
    K = kernel_matrix(ds.inputs, ds.inputs, hp)
    K[np.diag_indices_from(K)] += hp.jitter
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises below
        raise FactorisationFailure(str(exc)) from exc
    except Exception as exc:
        raise FactorisationFailure(str(exc)) from exc
    alpha = cho_solve((L, True), ds.values)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * float(ds.values @ alpha) - 0.5 * logdet - 0.5 * ds.size * math.log(2.0 * math.pi)


def _lml_and_grad(ds: Dataset, log_l: float, log_s2: float, jitter_rel: float):
    """Log marginal likelihood and its gradient wrt (log l, log s2).

    The jitter scales with the signal variance, so d(K + jI)/dlog s2 = K + jI
    and the s2 gradient reduces to (alpha.f - M)/2.
    """
    lengthscale = math.exp(log_l)
    s2 = math.exp(log_s2)
    r = cdist(ds.inputs, ds.inputs)
    K = s2 * _matern52_corr(r, lengthscale)
    K[np.diag_indices_from(K)] += jitter_rel * s2
    L = cholesky(K, lower=True)
    alpha = cho_solve((L, True), ds.values)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    lml = (
        -0.5 * float(ds.values @ alpha)
        - 0.5 * logdet
        - 0.5 * ds.size * math.log(2.0 * math.pi)
    )

    grad_s2 = 0.5 * (float(alpha @ ds.values) - ds.size)
    # dC/dlog l for Matern 5/2: (5 s^2 / 3)(1 + sqrt5 s) exp(-sqrt5 s), s = r/l.
    s = r * (SQRT5 / lengthscale)
    dK_dlogl = s2 * (s * s / 3.0) * (1.0 + s) * np.exp(-s)
    Kinv = cho_solve((L, True), np.eye(ds.size))
    grad_l = 0.5 * (float(alpha @ dK_dlogl @ alpha) - float(np.sum(Kinv * dK_dlogl)))
    return lml, np.array([grad_l, grad_s2])


def default_hyperparam_log_bounds(ds: Dataset, box_diagonal: float) -> Box:
    """Scale-aware log-space search box for (lengthscale, signal variance)."""
    var_f = float(np.var(ds.values))
    if not np.isfinite(var_f) or var_f <= 0.0:
        var_f = 1e-8
    return Box(
        np.log([1e-2 * box_diagonal, 1e-3 * var_f]),
        np.log([10.0 * box_diagonal, 1e3 * var_f]),
    )


def fit_hyperparameters(
    ds: Dataset,
    restarts: int,
    bounds: Box,
    rng: np.random.Generator,
    warm_start: GpHyperparams | None = None,
    jitter_rel: float = DEFAULT_JITTER_REL,
) -> GpHyperparams:
    """Maximise the log marginal likelihood over bounded log-space restarts.

    One start comes from warm_start (clipped into bounds) when given; the
    remaining restarts-1 starts are uniform draws in the log-space box.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    starts = []
    if warm_start is not None:
        starts.append(
            bounds.clip(np.log([warm_start.lengthscale, warm_start.signal_variance]))
        )
    while len(starts) < restarts:
        starts.append(bounds.uniform(rng))

    def negative(theta):
        try:
            lml, grad = _lml_and_grad(ds, theta[0], theta[1], jitter_rel)
        except np.linalg.LinAlgError:
            return 1e25, np.zeros(2)
        if not np.isfinite(lml):
            return 1e25, np.zeros(2)
        return -lml, -grad

    scipy_bounds = list(zip(bounds.lower, bounds.upper))
    best_theta, best_lml = None, -np.inf
    for x0 in starts:
        res = minimize(negative, x0, jac=True, method="L-BFGS-B", bounds=scipy_bounds)
        for theta in (res.x, x0):  # never do worse than the start point
            try:
                lml, _ = _lml_and_grad(ds, theta[0], theta[1], jitter_rel)
            except np.linalg.LinAlgError:
                continue
            if np.isfinite(lml) and lml > best_lml:
                best_lml, best_theta = lml, theta
    if best_theta is None:
        raise AllRestartsFailed("no restart produced a factorisable model")
    lengthscale, s2 = float(np.exp(best_theta[0])), float(np.exp(best_theta[1]))
    return GpHyperparams(lengthscale, s2, jitter=jitter_rel * s2)


@dataclass(frozen=True, eq=False)
class GpModel:
    """Immutable fitted GP: dataset, hyperparameters and cached factorisation."""

    dataset: Dataset
    hyperparams: GpHyperparams
    chol: np.ndarray
    alpha: np.ndarray

    @classmethod
    def build(cls, dataset: Dataset, hp: GpHyperparams) -> "GpModel":
        K = kernel_matrix(dataset.inputs, dataset.inputs, hp)
        K[np.diag_indices_from(K)] += hp.jitter
        try:
            L = cholesky(K, lower=True)
        except Exception as exc:
            raise FactorisationFailure(str(exc)) from exc
        alpha = cho_solve((L, True), dataset.values)
        return cls(dataset, hp, L, alpha)

    @classmethod
    def build_escalating(
        cls,
        dataset: Dataset,
        lengthscale: float,
        signal_variance: float,
        jitter_rel: float = DEFAULT_JITTER_REL,
        max_jitter_rel: float = MAX_JITTER_REL,
    ) -> "GpModel":
        """Build with the jitter ladder: x10 per failure up to the cap."""
        rel = jitter_rel
        while True:
            hp = GpHyperparams(lengthscale, signal_variance, jitter=rel * signal_variance)
            try:
                return cls.build(dataset, hp)
            except FactorisationFailure:
                if rel >= max_jitter_rel:
                    raise
                rel = min(rel * 10.0, max_jitter_rel)

    @property
    def incumbent(self) -> float:
        """Best (lowest) observed value."""
        return float(self.dataset.values.min())

    def _cross(self, x: np.ndarray) -> np.ndarray:
        return kernel_matrix(np.atleast_2d(x), self.dataset.inputs, self.hyperparams)

    def posterior(self, x: np.ndarray) -> Posterior:
        mean, var = self.posterior_many(np.atleast_2d(x))
        return Posterior(float(mean[0]), float(var[0]))

    def posterior_many(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior means and (clamped non-negative) variances at rows of X."""
        X = np.atleast_2d(X)
        means = np.empty(X.shape[0])
        variances = np.empty(X.shape[0])
        chunk = max(1, int(4e6) // max(1, self.dataset.size))
        for i in range(0, X.shape[0], chunk):
            ks = self._cross(X[i : i + chunk])
            means[i : i + chunk] = ks @ self.alpha
            v = solve_triangular(self.chol, ks.T, lower=True)
            variances[i : i + chunk] = self.hyperparams.signal_variance - np.sum(
                v * v, axis=0
            )
        np.maximum(variances, 0.0, out=variances)
        return means, variances

    def mean_many(self, X: np.ndarray) -> np.ndarray:
        """Posterior means only (cheaper than posterior_many)."""
        X = np.atleast_2d(X)
        means = np.empty(X.shape[0])
        chunk = max(1, int(2e7) // max(1, self.dataset.size))
        for i in range(0, X.shape[0], chunk):
            means[i : i + chunk] = self._cross(X[i : i + chunk]) @ self.alpha
        return means

    def posterior_mean_gradient(self, x: np.ndarray) -> np.ndarray:
        return self.mean_gradient_many(np.atleast_2d(x))[0]

    def mean_gradient_many(self, X: np.ndarray) -> np.ndarray:
        """Analytic gradient of the posterior mean at each row of X.

        d k(r)/dx = -s2 * (5 / (3 l^2)) * (1 + sqrt5 r / l) * exp(-sqrt5 r / l)
                    * (x - x_i); the r = 0 contribution is the zero vector.
        """
        X = np.atleast_2d(X)
        hp = self.hyperparams
        out = np.empty_like(X)
        chunk = max(1, int(2e7) // max(1, self.dataset.size * self.dataset.dim))
        coef = hp.signal_variance * 5.0 / (3.0 * hp.lengthscale**2)
        for i in range(0, X.shape[0], chunk):
            diff = X[i : i + chunk, None, :] - self.dataset.inputs[None, :, :]
            r = np.sqrt(np.sum(diff * diff, axis=2))
            s = r * (SQRT5 / hp.lengthscale)
            w = -coef * (1.0 + s) * np.exp(-s) * self.alpha[None, :]
            out[i : i + chunk] = np.einsum("nm,nmd->nd", w, diff)
        return out

    def duplicate_tolerance(self) -> float:
        return 1e-10 * self.hyperparams.lengthscale

    def hallucinate(self, x: np.ndarray, value: float) -> "GpModel":
        """New model with (x, value) appended; hp unchanged, refactorised.

        Hallucinating value = posterior mean leaves the mean function
        unchanged and collapses the variance at x.
        """
        x = np.asarray(x, dtype=float).ravel()
        dists = cdist(x.reshape(1, -1), self.dataset.inputs).ravel()
        if dists.min() <= self.duplicate_tolerance():
            raise DuplicateLocation(
                f"location within {self.duplicate_tolerance():g} of an existing input"
            )
        return GpModel.build(self.dataset.with_observation(x, value), self.hyperparams)

    def sample_joint_posterior(
        self, candidates: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        """One draw from the joint posterior Gaussian over the candidate rows."""
        candidates = np.atleast_2d(candidates)
        hp = self.hyperparams
        ks = self._cross(candidates)
        mean = ks @ self.alpha
        v = solve_triangular(self.chol, ks.T, lower=True)
        cov = kernel_matrix(candidates, candidates, hp)
        cov -= v.T @ v
        z = rng.standard_normal(candidates.shape[0])
        # Escalate the diagonal in place; cholesky reads the lower triangle
        # of an (up to rounding) symmetric matrix, so no symmetrisation.
        added = 0.0
        rel = 1e-12
        diag = np.diag_indices_from(cov)
        while True:
            cov[diag] += rel * hp.signal_variance - added
            added = rel * hp.signal_variance
            try:
                Lc = cholesky(cov, lower=True)
                return mean + Lc @ z
            except Exception:
                if rel >= MAX_JITTER_REL:
                    raise FactorisationFailure(
                        "joint covariance not factorisable within the jitter cap"
                    )
                rel *= 10.0


def fit_gp(
    dataset: Dataset,
    box_diagonal: float,
    rng: np.random.Generator,
    restarts: int = 10,
    warm_start: GpHyperparams | None = None,
    log_bounds: Box | None = None,
) -> GpModel:
    """Fit hyperparameters (with restarts) and build a jitter-stabilised model."""
    if log_bounds is None:
        log_bounds = default_hyperparam_log_bounds(dataset, box_diagonal)
    hp = fit_hyperparameters(dataset, restarts, log_bounds, rng, warm_start=warm_start)
    return GpModel.build_escalating(dataset, hp.lengthscale, hp.signal_variance)


@dataclass(frozen=True)
class OutputScaler:
    """Affine output standardisation: model space = (f - mean) / std."""

    mean: float
    std: float

    @classmethod
    def fit(cls, values: np.ndarray, standardise: bool = True) -> "OutputScaler":
        if not standardise:
            return cls(0.0, 1.0)
        values = np.asarray(values, dtype=float)
        std = float(values.std())
        return cls(float(values.mean()), std if std > 0.0 else 1.0)

    def to_model(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def from_model(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.std + self.mean


def perturbed(
    x: np.ndarray, model: GpModel, bounds: Box, rng: np.random.Generator
) -> np.ndarray:
    """Nudge a duplicate location one jitter-lengthscale step, kept in bounds."""
    step = math.sqrt(DEFAULT_JITTER_REL) * model.hyperparams.lengthscale
    return bounds.clip(x + step * rng.standard_normal(x.size))


def updated_hyperparams(hp: GpHyperparams, **changes) -> GpHyperparams:
    return replace(hp, **changes)
