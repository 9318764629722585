"""Budgeted global/local optimisation of cheap model-derived objectives.

The targets here (posterior mean, EI, gradient-norm fields) are smooth and
inexpensive, so a quasi-uniform probe followed by multi-restart bounded
L-BFGS-B ascent meets the evaluation-budget contract without an evolution
strategy. One-dimensional fields use a dense scan plus local refinement.
"""

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .bounds import Box
from .problems import latin_hypercube

DENSE_SCAN_1D = 1000


@dataclass(frozen=True)
class SearchBudget:
    """Evaluation budget for one field maximisation."""

    max_evaluations: int
    restarts: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_evaluations < 100:
            raise ValueError("max_evaluations must be >= 100")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    @classmethod
    def for_dim(cls, d: int, rng_seed: int = 0) -> "SearchBudget":
        return cls(max_evaluations=10_000 * d, restarts=10, rng_seed=rng_seed)


@dataclass(frozen=True)
class ScalarField:
    """Deterministic scalar field over a box.

    evaluate maps an (n, d) array of rows to an (n,) array of values;
    gradient, when present, maps (n, d) to (n, d).
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    bounds: Box
    gradient: Callable[[np.ndarray], np.ndarray] | None = None

    def value_at(self, x: np.ndarray) -> float:
        return float(self.evaluate(np.atleast_2d(x))[0])

    def gradient_at(self, x: np.ndarray) -> np.ndarray:
        if self.gradient is None:
            raise ValueError("field has no gradient")
        return self.gradient(np.atleast_2d(x))[0]


class _Counter:
    def __init__(self, limit: int):
        self.used = 0
        self.limit = limit

    def take(self, n: int) -> int:
        n = min(n, self.remaining)
        self.used += n
        return n

    @property
    def remaining(self) -> int:
        return max(0, self.limit - self.used)


def _refine(
    field: ScalarField, x0: np.ndarray, maxfun: int
) -> tuple[np.ndarray, float]:
    """One bounded local ascent; returns the clipped argmax and its value."""
    bounds = list(zip(field.bounds.lower, field.bounds.upper))

    def neg(x):
        return -field.value_at(x)

    kwargs = {}
    if field.gradient is not None:
        kwargs["jac"] = lambda x: -field.gradient_at(x)
    res = minimize(
        neg,
        np.asarray(x0, dtype=float),
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxfun": max(10, maxfun)},
        **kwargs,
    )
    x = field.bounds.clip(res.x)
    return x, field.value_at(x)


def global_maximize(
    field: ScalarField, budget: SearchBudget
) -> tuple[np.ndarray, float]:
    """Budgeted global maximisation: quasi-uniform probe + restarted ascent."""
    rng = np.random.default_rng(budget.rng_seed)
    d = field.bounds.dim
    counter = _Counter(budget.max_evaluations)

    if d == 1:
        n_scan = counter.take(min(DENSE_SCAN_1D, budget.max_evaluations // 2))
        probe = np.linspace(field.bounds.lower[0], field.bounds.upper[0], n_scan)
        probe = probe.reshape(-1, 1)
    else:
        n_probe = counter.take(max(256, budget.max_evaluations // 4))
        probe = field.bounds.scale_from_unit(latin_hypercube(n_probe, d, rng))
    values = field.evaluate(probe)

    order = np.argsort(values)[::-1]
    best_x = probe[order[0]].copy()
    best_v = float(values[order[0]])

    starts = probe[order[: budget.restarts]]
    per_start = counter.remaining // max(1, len(starts))
    for x0 in starts:
        if counter.remaining <= 0:
            break
        x, v = _refine(field, x0, min(per_start, counter.remaining))
        counter.take(per_start)
        if v > best_v:
            best_x, best_v = x, v
    return best_x, best_v


def presample_then_refine(
    field: ScalarField,
    n_samples: int,
    n_refine: int,
    budget: SearchBudget,
) -> tuple[np.ndarray, float]:
    """Uniformly sample the field, locally refine the best few, keep the best."""
    if not (n_samples >= n_refine >= 1):
        raise ValueError("need n_samples >= n_refine >= 1")
    rng = np.random.default_rng(budget.rng_seed)
    X = field.bounds.uniform(rng, n_samples)
    values = field.evaluate(X)
    order = np.argsort(values)[::-1]
    best_x = X[order[0]].copy()
    best_v = float(values[order[0]])
    per_start = max(50, (budget.max_evaluations - n_samples) // n_refine)
    for idx in order[:n_refine]:
        x, v = _refine(field, X[idx], per_start)
        if v > best_v:
            best_x, best_v = x, v
    return best_x, best_v


def estimate_local_lipschitz(
    field: ScalarField,
    center: np.ndarray,
    halfwidth: float | np.ndarray,
    floor: float = 0.0,
    budget: SearchBudget | None = None,
) -> float:
    """Max gradient norm over the clipped hypercube around center, floored.

    The hypercube [center - halfwidth, center + halfwidth] is intersected with
    the field bounds before the budgeted maximisation of ||gradient||.
    """
    if field.gradient is None:
        raise ValueError("local Lipschitz estimation needs a field gradient")
    center = np.asarray(center, dtype=float).ravel()
    region = field.bounds.intersect(center - halfwidth, center + halfwidth)
    d = region.dim
    if budget is None:
        budget = SearchBudget(max(1000, 500 * d), restarts=3)

    def norm_many(X):
        return np.linalg.norm(field.gradient(np.atleast_2d(X)), axis=1)

    norm_field = ScalarField(evaluate=norm_many, bounds=region)
    rng = np.random.default_rng(budget.rng_seed)
    n_probe = max(64, budget.max_evaluations // 2)
    probe = [region.scale_from_unit(latin_hypercube(n_probe, d, rng))]
    probe.append(region.clip(center).reshape(1, -1))
    if d <= 8:  # corners often hold the largest clipped-gradient norm
        grid = np.stack(
            np.meshgrid(*zip(region.lower, region.upper)), axis=-1
        ).reshape(-1, d)
        probe.append(grid)
    probe = np.vstack(probe)
    values = norm_field.evaluate(probe)
    order = np.argsort(values)[::-1]
    best = float(values[order[0]])
    per_start = max(
        50, (budget.max_evaluations - n_probe) // max(1, budget.restarts)
    )
    for idx in order[: budget.restarts]:
        _, v = _refine(norm_field, probe[idx], per_start)
        best = max(best, v)
    return max(best, floor)
