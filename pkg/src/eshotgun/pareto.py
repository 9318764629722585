"""Bi-objective Pareto tools: dominance filtering and NSGA-II.

Used to approximate the set of locations that maximally trade off
exploitation (low posterior mean) against exploration (high posterior
variance); both objectives are handled in minimisation form (mean, -variance).
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bounds import Box


@dataclass(frozen=True)
class Nsga2Config:
    population: int
    generations: int = 50
    mutation_rate: float | None = None  # defaults to 1/d at run time
    crossover_rate: float = 0.8
    eta_c: float = 20.0
    eta_m: float = 20.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.population < 4 or self.population % 2 != 0:
            raise ValueError("population must be even and >= 4")
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        for rate in (self.mutation_rate, self.crossover_rate):
            if rate is not None and not 0.0 <= rate <= 1.0:
                raise ValueError("rates must lie in [0, 1]")

    @classmethod
    def for_dim(cls, d: int, rng_seed: int = 0) -> "Nsga2Config":
        return cls(population=100 * d, rng_seed=rng_seed)


@dataclass(frozen=True)
class BiObjectivePoint:
    location: np.ndarray
    objectives: tuple[float, float]  # (mean, -variance), both minimised


def non_dominated_filter(points: np.ndarray) -> np.ndarray:
    """Indices of the non-dominated rows of an (n, k) objective array.

    Dominance is weak Pareto dominance on minimised objectives; exact ties
    are all retained.
    """
    F = np.atleast_2d(np.asarray(points, dtype=float))
    if F.size == 0:
        raise ValueError("need at least one point")
    if not np.all(np.isfinite(F)):
        raise ValueError("objectives must be finite")
    n = F.shape[0]
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        if not keep[i]:
            continue
        better_eq = np.all(F <= F[i], axis=1)
        strictly = np.any(F < F[i], axis=1)
        if np.any(better_eq & strictly):
            keep[i] = False
    return np.flatnonzero(keep)


def _fast_non_dominated_ranks(F: np.ndarray) -> np.ndarray:
    """Front rank (0 = non-dominated) per row, by iterative front peeling."""
    n = F.shape[0]
    le = np.all(F[:, None, :] <= F[None, :, :], axis=2)
    lt = np.any(F[:, None, :] < F[None, :, :], axis=2)
    dominates = le & lt  # dominates[i, j]: i dominates j
    n_dominators = dominates.sum(axis=0)
    ranks = np.full(n, -1, dtype=int)
    rank = 0
    remaining = np.ones(n, dtype=bool)
    while remaining.any():
        front = remaining & (n_dominators == 0)
        if not front.any():  # numerical safety; cannot happen for finite F
            front = remaining
        ranks[front] = rank
        remaining &= ~front
        n_dominators = n_dominators - dominates[front].sum(axis=0)
        rank += 1
    return ranks


def _crowding_distance(F: np.ndarray) -> np.ndarray:
    n, k = F.shape
    dist = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for j in range(k):
        order = np.argsort(F[:, j], kind="stable")
        span = F[order[-1], j] - F[order[0], j]
        dist[order[0]] = dist[order[-1]] = np.inf
        if span <= 0.0:
            continue
        gaps = (F[order[2:], j] - F[order[:-2], j]) / span
        dist[order[1:-1]] += gaps
    return dist


def _tournament(
    ranks: np.ndarray, crowding: np.ndarray, rng: np.random.Generator, n: int
) -> np.ndarray:
    a = rng.integers(ranks.size, size=n)
    b = rng.integers(ranks.size, size=n)
    a_wins = (ranks[a] < ranks[b]) | (
        (ranks[a] == ranks[b]) & (crowding[a] > crowding[b])
    )
    return np.where(a_wins, a, b)


def _sbx_crossover(
    parents: np.ndarray, bounds: Box, rate: float, eta: float, rng: np.random.Generator
) -> np.ndarray:
    """Simulated binary crossover on consecutive parent pairs, clipped."""
    children = parents.copy()
    n, d = parents.shape
    for i in range(0, n - 1, 2):
        if rng.random() >= rate:
            continue
        p1, p2 = children[i], children[i + 1]
        swap = rng.random(d) < 0.5
        u = rng.random(d)
        beta = np.where(
            u <= 0.5,
            (2.0 * u) ** (1.0 / (eta + 1.0)),
            (1.0 / (2.0 * (1.0 - u))) ** (1.0 / (eta + 1.0)),
        )
        c1 = 0.5 * ((1.0 + beta) * p1 + (1.0 - beta) * p2)
        c2 = 0.5 * ((1.0 - beta) * p1 + (1.0 + beta) * p2)
        children[i] = np.where(swap, c1, p1)
        children[i + 1] = np.where(swap, c2, p2)
    return np.clip(children, bounds.lower, bounds.upper)


def _polynomial_mutation(
    pop: np.ndarray, bounds: Box, rate: float, eta: float, rng: np.random.Generator
) -> np.ndarray:
    """Per-variable polynomial mutation, clipped at the box."""
    mutate = rng.random(pop.shape) < rate
    u = rng.random(pop.shape)
    delta = np.where(
        u < 0.5,
        (2.0 * u) ** (1.0 / (eta + 1.0)) - 1.0,
        1.0 - (2.0 * (1.0 - u)) ** (1.0 / (eta + 1.0)),
    )
    out = pop + np.where(mutate, delta * bounds.widths[None, :], 0.0)
    return np.clip(out, bounds.lower, bounds.upper)


def nsga2(
    objective: Callable[[np.ndarray], np.ndarray],
    bounds: Box,
    cfg: Nsga2Config,
) -> tuple[np.ndarray, np.ndarray]:
    """Run NSGA-II; returns the final population and its objective rows.

    objective maps an (n, d) array to an (n, k) array of minimised objectives.
    """
    rng = np.random.default_rng(cfg.rng_seed)
    d = bounds.dim
    mutation_rate = cfg.mutation_rate if cfg.mutation_rate is not None else 1.0 / d
    pop = bounds.uniform(rng, cfg.population)
    F = np.atleast_2d(objective(pop))
    for _ in range(cfg.generations):
        ranks = _fast_non_dominated_ranks(F)
        crowding = _crowding_distance_by_front(F, ranks)
        parents = pop[_tournament(ranks, crowding, rng, cfg.population)]
        children = _sbx_crossover(parents, bounds, cfg.crossover_rate, cfg.eta_c, rng)
        children = _polynomial_mutation(children, bounds, mutation_rate, cfg.eta_m, rng)
        Fc = np.atleast_2d(objective(children))

        pool = np.vstack([pop, children])
        Fp = np.vstack([F, Fc])
        ranks = _fast_non_dominated_ranks(Fp)
        crowding = _crowding_distance_by_front(Fp, ranks)
        # Elitist truncation: by rank, then crowding distance.
        order = np.lexsort((-crowding, ranks))[: cfg.population]
        pop, F = pool[order], Fp[order]
    return pop, F


def _crowding_distance_by_front(F: np.ndarray, ranks: np.ndarray) -> np.ndarray:
    crowding = np.zeros(F.shape[0])
    for r in np.unique(ranks):
        idx = np.flatnonzero(ranks == r)
        crowding[idx] = _crowding_distance(F[idx])
    return crowding


def nsga2_approximate_front(model, bounds: Box, cfg: Nsga2Config) -> list[BiObjectivePoint]:
    """Non-dominated (mean, -variance) subset of the final NSGA-II population."""

    def objective(X):
        means, variances = model.posterior_many(X)
        return np.column_stack([means, -variances])

    pop, F = nsga2(objective, bounds, cfg)
    keep = non_dominated_filter(F)
    return [
        BiObjectivePoint(pop[i].copy(), (float(F[i, 0]), float(F[i, 1])))
        for i in keep
    ]
