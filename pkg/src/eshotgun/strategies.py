"""Batch proposal rules for parallel Bayesian optimisation.

Implements the epsilon-shotgun family (random-space, Pareto-front and
pure-exploit anchor selection with Gaussian spread sampling) alongside the
comparator strategies: Kriging Believer, soft/hard local penalisation and
Thompson sampling.
"""

import enum
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

from .acquisition import ei_values
from .bounds import Box
from .gp import DuplicateLocation, GpModel, perturbed
from .inneropt import (
    ScalarField,
    SearchBudget,
    estimate_local_lipschitz,
    global_maximize,
    presample_then_refine,
)
from .pareto import Nsga2Config, nsga2_approximate_front

RADIUS_FLOOR_REL = 1e-6  # of the box diagonal
LIPSCHITZ_FLOOR_REL = 1e-7  # of output range / box diagonal
DISTINCT_TOL_REL = 1e-12  # of the box diagonal
PRESAMPLE_COUNT = 3000
PRESAMPLE_REFINE = 5


class SelectionMode(enum.Enum):
    RANDOM_SPACE = "random-space"
    PARETO_FRONT = "pareto-front"
    PURE_EXPLOIT = "pure-exploit"


class PenaliserMode(enum.Enum):
    SOFT = "soft"
    HARD = "hard"


@dataclass(frozen=True)
class ShotgunConfig:
    batch_size: int
    epsilon: float = 0.1
    gamma: float = 1.0
    selection_mode: SelectionMode = SelectionMode.RANDOM_SPACE
    max_rejection_attempts: int | None = None  # defaults to 100 * batch_size
    variance_radius: bool = False  # use sigma^2 instead of sigma in the radius

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.gamma < 0.0:
            raise ValueError("gamma must be non-negative")

    @property
    def rejection_cap(self) -> int:
        if self.max_rejection_attempts is not None:
            return self.max_rejection_attempts
        return 100 * self.batch_size


@dataclass(frozen=True)
class BatchProposal:
    """One strategy step: q locations, the anchor, and the sampling radius
    (0 for non-shotgun methods)."""

    locations: np.ndarray
    anchor: np.ndarray
    radius: float
    fallback: bool = False


def mean_field(model: GpModel, bounds: Box) -> ScalarField:
    """Field whose maximisation minimises the posterior mean."""
    return ScalarField(
        evaluate=lambda X: -model.mean_many(X),
        bounds=bounds,
        gradient=lambda X: -model.mean_gradient_many(X),
    )


def mean_gradient_field(model: GpModel, bounds: Box) -> ScalarField:
    """Posterior mean with its analytic gradient (for Lipschitz estimation)."""
    return ScalarField(
        evaluate=lambda X: model.mean_many(X),
        bounds=bounds,
        gradient=lambda X: model.mean_gradient_many(X),
    )


def ei_field(model: GpModel, incumbent: float, bounds: Box) -> ScalarField:
    def evaluate(X):
        means, variances = model.posterior_many(X)
        return ei_values(means, variances, incumbent)

    return ScalarField(evaluate=evaluate, bounds=bounds)


def lipschitz_floor(model: GpModel, bounds: Box) -> float:
    """Degeneracy floor for Lipschitz estimates on flat models."""
    out_range = float(np.ptp(model.dataset.values))
    return max(LIPSCHITZ_FLOOR_REL * out_range / bounds.diagonal, 1e-12)


def local_lipschitz(
    model: GpModel,
    center: np.ndarray,
    bounds: Box,
    budget: SearchBudget | None = None,
) -> float:
    """Largest mean-gradient norm within one length-scale of center."""
    return estimate_local_lipschitz(
        mean_gradient_field(model, bounds),
        center,
        halfwidth=model.hyperparams.lengthscale,
        floor=lipschitz_floor(model, bounds),
        budget=budget,
    )


def global_lipschitz(
    model: GpModel, bounds: Box, budget: SearchBudget | None = None
) -> float:
    """Largest mean-gradient norm over the whole box."""
    center = 0.5 * (bounds.lower + bounds.upper)
    return estimate_local_lipschitz(
        mean_gradient_field(model, bounds),
        center,
        halfwidth=np.inf,
        floor=lipschitz_floor(model, bounds),
        budget=budget,
    )


def shotgun_radius(
    model: GpModel,
    x1: np.ndarray,
    incumbent: float,
    lipschitz: float,
    gamma: float,
    floor: float = 0.0,
    variance_form: bool = False,
) -> float:
    """Spread radius |mu - f*|/L + gamma * sigma/L (sigma^2 when requested)."""
    if lipschitz <= 0.0:
        raise ValueError("lipschitz must be positive (apply the floor first)")
    post = model.posterior(x1)
    spread = post.variance if variance_form else math.sqrt(post.variance)
    r = abs(post.mean - incumbent) / lipschitz + gamma * spread / lipschitz
    return max(r, floor)


def penalisation_radius(
    model: GpModel,
    xj: np.ndarray,
    incumbent: float,
    lipschitz: float,
    gamma: float,
    floor: float = 0.0,
) -> float:
    """Penalisation radius |mu - f*|/L + gamma * sigma^2/L."""
    if lipschitz <= 0.0:
        raise ValueError("lipschitz must be positive (apply the floor first)")
    post = model.posterior(xj)
    r = abs(post.mean - incumbent) / lipschitz + gamma * post.variance / lipschitz
    return max(r, floor)


def soft_penaliser(distances: np.ndarray, radius: float) -> np.ndarray:
    """Squared-exponential-shaped penaliser in [0, 1], 1 in the far field."""
    return 1.0 - np.exp(-0.5 * (distances / radius) ** 2)


def hard_penaliser(distances: np.ndarray, radius: float) -> np.ndarray:
    """Ramp penaliser: exactly 0 at the centre, 1 beyond one radius."""
    return np.minimum(1.0, distances / radius)


def _distinct_from(points: list[np.ndarray], x: np.ndarray, tol: float) -> bool:
    if not points:
        return True
    return cdist(np.asarray(points), x.reshape(1, -1)).min() > tol


def eshotgun_select(
    model: GpModel,
    cfg: ShotgunConfig,
    bounds: Box,
    rng: np.random.Generator,
    budget: SearchBudget | None = None,
    nsga2_config: Nsga2Config | None = None,
    lipschitz_budget: SearchBudget | None = None,
) -> BatchProposal:
    """Epsilon-shotgun batch selection.

    The anchor is the global posterior-mean minimiser, except with
    probability epsilon (when not in pure-exploit mode) it is a uniform
    random location or a uniform pick from the NSGA-II (mean, variance)
    front. The remaining q-1 points are drawn from an isotropic Gaussian at
    the anchor with sd equal to the spread radius, rejection-sampled into
    the box.
    """
    d = bounds.dim
    if budget is None:
        budget = SearchBudget.for_dim(d, rng_seed=int(rng.integers(2**31)))
    explore = (
        cfg.selection_mode is not SelectionMode.PURE_EXPLOIT
        and rng.random() < cfg.epsilon
    )
    if explore and cfg.selection_mode is SelectionMode.RANDOM_SPACE:
        anchor = bounds.uniform(rng)
    elif explore and cfg.selection_mode is SelectionMode.PARETO_FRONT:
        if nsga2_config is None:
            nsga2_config = Nsga2Config.for_dim(d, rng_seed=int(rng.integers(2**31)))
        front = nsga2_approximate_front(model, bounds, nsga2_config)
        anchor = front[int(rng.integers(len(front)))].location
    else:
        anchor, _ = global_maximize(mean_field(model, bounds), budget)

    lipschitz = local_lipschitz(model, anchor, bounds, budget=lipschitz_budget)
    radius = shotgun_radius(
        model,
        anchor,
        model.incumbent,
        lipschitz,
        cfg.gamma,
        floor=RADIUS_FLOOR_REL * bounds.diagonal,
        variance_form=cfg.variance_radius,
    )

    tol = DISTINCT_TOL_REL * bounds.diagonal
    locations = np.empty((cfg.batch_size, d))
    locations[0] = anchor
    filled = 1
    attempts = 0
    fallback = False
    while filled < cfg.batch_size and attempts < cfg.rejection_cap:
        m = min(
            cfg.rejection_cap - attempts,
            max(4 * (cfg.batch_size - filled), 16),
        )
        attempts += m
        draws = anchor + radius * rng.standard_normal((m, d))
        inside = np.all((draws >= bounds.lower) & (draws <= bounds.upper), axis=1)
        for x in draws[inside]:
            if filled >= cfg.batch_size:
                break
            if np.linalg.norm(locations[:filled] - x, axis=1).min() > tol:
                locations[filled] = x
                filled += 1
    if filled < cfg.batch_size:
        # Gaussian mass inside the box is too small (anchor near a corner
        # with a tiny radius, or a huge radius): fall back to uniform
        # sampling on bounds intersected with anchor +/- 3r.
        fallback = True
        region = bounds.intersect(anchor - 3.0 * radius, anchor + 3.0 * radius)
        while filled < cfg.batch_size:
            x = region.uniform(rng)
            if np.linalg.norm(locations[:filled] - x, axis=1).min() > tol:
                locations[filled] = x
                filled += 1
    return BatchProposal(locations, np.asarray(anchor, dtype=float), radius, fallback)


def kriging_believer_select(
    model: GpModel,
    q: int,
    incumbent: float,
    bounds: Box,
    budget: SearchBudget | None = None,
) -> BatchProposal:
    """Iterated EI maximisation with hallucinated mean observations.

    Each selected location is believed at its predicted mean, collapsing the
    variance there; the working incumbent absorbs believed means so EI at
    believed points vanishes and successive argmaxes move elsewhere.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if budget is None:
        budget = SearchBudget.for_dim(bounds.dim)
    work = model
    working_incumbent = incumbent
    locations = []
    for i in range(q):
        step_budget = replace(budget, rng_seed=budget.rng_seed + i)
        x, _ = global_maximize(ei_field(work, working_incumbent, bounds), step_budget)
        mean_x = work.posterior(x).mean
        if i < q - 1:
            try:
                work = work.hallucinate(x, mean_x)
            except DuplicateLocation:
                nudge_rng = np.random.default_rng(budget.rng_seed + 7919 + i)
                x = perturbed(x, work, bounds, nudge_rng)
                mean_x = work.posterior(x).mean
                work = work.hallucinate(x, mean_x)
        working_incumbent = min(working_incumbent, mean_x)
        locations.append(np.asarray(x, dtype=float))
    return BatchProposal(np.asarray(locations), locations[0], 0.0)


def local_penalisation_select(
    model: GpModel,
    q: int,
    mode: PenaliserMode,
    bounds: Box,
    rng: np.random.Generator,
    n_presample: int = PRESAMPLE_COUNT,
    n_refine: int = PRESAMPLE_REFINE,
    lipschitz_budget: SearchBudget | None = None,
) -> BatchProposal:
    """EI batch selection with multiplicative local penalisers.

    Soft mode penalises with the squared-exponential-shaped factor and a
    single whole-box Lipschitz estimate (gamma = 0); hard mode uses the ramp
    factor with per-location local estimates (gamma = 1).
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    d = bounds.dim
    incumbent = model.incumbent
    radius_floor = RADIUS_FLOOR_REL * bounds.diagonal
    tol = DISTINCT_TOL_REL * bounds.diagonal
    global_L = (
        global_lipschitz(model, bounds, budget=lipschitz_budget)
        if mode is PenaliserMode.SOFT
        else None
    )
    penalise = soft_penaliser if mode is PenaliserMode.SOFT else hard_penaliser
    gamma = 0.0 if mode is PenaliserMode.SOFT else 1.0

    centres: list[np.ndarray] = []
    radii: list[float] = []

    def field(X):
        means, variances = model.posterior_many(X)
        score = ei_values(means, variances, incumbent)
        for centre, radius in zip(centres, radii):
            dist = np.linalg.norm(X - centre[None, :], axis=1)
            score = score * penalise(dist, radius)
        return score

    scalar_field = ScalarField(evaluate=field, bounds=bounds)
    locations: list[np.ndarray] = []
    for i in range(q):
        step_budget = SearchBudget(
            max_evaluations=n_presample + n_refine * 150 * d,
            restarts=n_refine,
            rng_seed=int(rng.integers(2**31)),
        )
        x, _ = presample_then_refine(scalar_field, n_presample, n_refine, step_budget)
        if not _distinct_from(locations, x, tol):
            x = perturbed(x, model, bounds, rng)
        locations.append(np.asarray(x, dtype=float))
        if i < q - 1:
            L = (
                global_L
                if mode is PenaliserMode.SOFT
                else local_lipschitz(model, x, bounds, budget=lipschitz_budget)
            )
            centres.append(locations[-1])
            radii.append(
                penalisation_radius(
                    model, x, incumbent, L, gamma, floor=radius_floor
                )
            )
    return BatchProposal(np.asarray(locations), locations[0], 0.0)


def default_thompson_candidates(d: int) -> int:
    return min(1000 * d, 5000)


def thompson_select(
    model: GpModel,
    q: int,
    n_candidates: int,
    bounds: Box,
    rng: np.random.Generator,
) -> BatchProposal:
    """One joint posterior realisation per slot, minimised over fresh
    uniform candidates."""
    if q < 1:
        raise ValueError("q must be >= 1")
    if n_candidates < q:
        raise ValueError("need n_candidates >= q")
    tol = DISTINCT_TOL_REL * bounds.diagonal
    locations: list[np.ndarray] = []
    for _ in range(q):
        candidates = bounds.uniform(rng, n_candidates)
        draw = model.sample_joint_posterior(candidates, rng)
        x = candidates[int(np.argmin(draw))]
        if not _distinct_from(locations, x, tol):
            x = perturbed(x, model, bounds, rng)
        locations.append(np.asarray(x, dtype=float))
    return BatchProposal(np.asarray(locations), locations[0], 0.0)
