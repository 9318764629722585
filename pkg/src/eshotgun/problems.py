"""Synthetic benchmark objectives with box bounds and reference minima.

Each objective is deterministic and finite on its box. Reference minima were
frozen from the estimation recipe used throughout this package: 1e5 uniform
probes followed by local refinement of the best 100 (see tests for the
regeneration oracle). Several minima are also known in closed form and agree
with the frozen values.

Base forms of the dagger-style functions follow the usual test-function
library (http://www.sfu.ca/~ssurjano/optimization.html); the log-transformed
variants shift the argument to keep it positive before taking the log.
"""

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import pdist

from .bounds import Box


class OutOfBounds(Exception):
    """Query location outside the problem's box."""


@dataclass(frozen=True)
class ProblemSpec:
    """A benchmark objective: name, box bounds, dimension, reference optimum."""

    name: str
    dim: int
    bounds: Box
    reference_minimum: float
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def evaluate(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise OutOfBounds(f"{self.name}: expected {self.dim} coordinates")
        if not self.bounds.contains(x):
            raise OutOfBounds(f"{self.name}: location outside bounds")
        return float(self.fn(x.reshape(1, -1))[0])

    def evaluate_many(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise OutOfBounds(f"{self.name}: expected {self.dim} coordinates")
        if np.any(X < self.bounds.lower) or np.any(X > self.bounds.upper):
            raise OutOfBounds(f"{self.name}: location outside bounds")
        return self.fn(X)


def _wangfreitas(X: np.ndarray) -> np.ndarray:
    x = X[:, 0]
    g = 2.0 * np.exp(-0.5 * ((x - 0.1) / 0.1) ** 2) + 4.0 * np.exp(
        -0.5 * ((x - 0.9) / 0.01) ** 2
    )
    return -g


def _branin_base(X: np.ndarray) -> np.ndarray:
    a, b, c = 1.0, 5.1 / (4.0 * math.pi**2), 5.0 / math.pi
    r, s, t = 6.0, 10.0, 1.0 / (8.0 * math.pi)
    x1, x2 = X[:, 0], X[:, 1]
    return a * (x2 - b * x1**2 + c * x1 - r) ** 2 + s * (1.0 - t) * np.cos(x1) + s


def _braninforrester(X: np.ndarray) -> np.ndarray:
    return _branin_base(X) + 5.0 * X[:, 0]


def _cosines(X: np.ndarray) -> np.ndarray:
    u = 1.6 * X - 0.5
    g = 1.0 - np.sum(u**2 - 0.3 * np.cos(3.0 * math.pi * u), axis=1)
    return -g


def _goldsteinprice(X: np.ndarray) -> np.ndarray:
    x1, x2 = X[:, 0], X[:, 1]
    term1 = 1.0 + (x1 + x2 + 1.0) ** 2 * (
        19.0 - 14.0 * x1 + 3.0 * x1**2 - 14.0 * x2 + 6.0 * x1 * x2 + 3.0 * x2**2
    )
    term2 = 30.0 + (2.0 * x1 - 3.0 * x2) ** 2 * (
        18.0 - 32.0 * x1 + 12.0 * x1**2 + 48.0 * x2 - 36.0 * x1 * x2 + 27.0 * x2**2
    )
    return np.log(term1 * term2)


def _sixhumpcamel(X: np.ndarray) -> np.ndarray:
    x1, x2 = X[:, 0], X[:, 1]
    g = (
        (4.0 - 2.1 * x1**2 + x1**4 / 3.0) * x1**2
        + x1 * x2
        + (-4.0 + 4.0 * x2**2) * x2**2
    )
    # g attains about -1.0316; the shift keeps the log argument positive.
    return np.log(g + 1.0316 + 1e-4)


_HARTMAN6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HARTMAN6_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
_HARTMAN6_P = 1e-4 * np.array(
    [
        [1312, 1696, 5569, 124, 8283, 5886],
        [2329, 4135, 8307, 3736, 1004, 9991],
        [2348, 1451, 3522, 2883, 3047, 6650],
        [4047, 8828, 8732, 5743, 1091, 381],
    ],
    dtype=float,
)


def _modhartman6(X: np.ndarray) -> np.ndarray:
    inner = np.sum(
        _HARTMAN6_A[None, :, :] * (X[:, None, :] - _HARTMAN6_P[None, :, :]) ** 2,
        axis=2,
    )
    g = -np.sum(_HARTMAN6_ALPHA[None, :] * np.exp(-inner), axis=1)
    return -np.log(-g)


def _loggsobol(X: np.ndarray) -> np.ndarray:
    # Sobol' g-function with a_i = 1; keeps the product positive so the log
    # transform stays defined over the whole unit cube.
    g = np.prod((np.abs(4.0 * X - 2.0) + 1.0) / 2.0, axis=1)
    return np.log(g)


def _logrosenbrock(X: np.ndarray) -> np.ndarray:
    g = np.sum(
        100.0 * (X[:, 1:] - X[:, :-1] ** 2) ** 2 + (X[:, :-1] - 1.0) ** 2, axis=1
    )
    return np.log(g + 0.5)


def _logstyblinskitang(X: np.ndarray) -> np.ndarray:
    g = 0.5 * np.sum(X**4 - 16.0 * X**2 + 5.0 * X, axis=1)
    return np.log(g + 40.0 * X.shape[1])


# Reference minima frozen from the probe-and-refine oracle; closed forms where
# they exist: branin 10/(8*pi), cosines -1.6, loggoldsteinprice log(3),
# loggsobol 10*log(1/2), logrosenbrock log(1/2).
_SPECS: dict[str, tuple[int, list[float], list[float], float, Callable]] = {
    "wangfreitas": (1, [0.0], [1.0], -4.000000000000026, _wangfreitas),
    "branin": (2, [-5.0, 0.0], [10.0, 15.0], 0.39788735772973816, _branin_base),
    "braninforrester": (
        2,
        [-5.0, 0.0],
        [10.0, 15.0],
        -16.64402157084319,
        _braninforrester,
    ),
    "cosines": (2, [0.0, 0.0], [1.0, 1.0], -1.6, _cosines),
    "loggoldsteinprice": (
        2,
        [-2.0, -2.0],
        [2.0, 2.0],
        1.0986122886681098,
        _goldsteinprice,
    ),
    "logsixhumpcamel": (
        2,
        [-3.0, -2.0],
        [3.0, 2.0],
        -9.545162828516156,
        _sixhumpcamel,
    ),
    "modhartman6": (6, [0.0] * 6, [1.0] * 6, -1.2006777851323596, _modhartman6),
    "loggsobol": (10, [0.0] * 10, [1.0] * 10, -6.931471805599453, _loggsobol),
    "logrosenbrock": (
        10,
        [-5.0] * 10,
        [10.0] * 10,
        -0.6931471805599453,
        _logrosenbrock,
    ),
    "logstyblinskitang": (
        10,
        [-5.0] * 10,
        [5.0] * 10,
        2.1208645110528246,
        _logstyblinskitang,
    ),
}

PROBLEM_NAMES = tuple(_SPECS)


def get_problem(name: str) -> ProblemSpec:
    key = name.lower()
    if key not in _SPECS:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(PROBLEM_NAMES)}")
    dim, lower, upper, fmin, fn = _SPECS[key]
    return ProblemSpec(key, dim, Box(np.array(lower), np.array(upper)), fmin, fn)


def reference_minimum(problem: ProblemSpec) -> float:
    return problem.reference_minimum


@dataclass(frozen=True)
class InitialDesign:
    """Stratified starting design on the unit hypercube."""

    points: np.ndarray
    rng_seed: int | None = None


def latin_hypercube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Random Latin hypercube on [0, 1)^d: one point per 1/n stratum per axis."""
    cells = np.column_stack([rng.permutation(n) for _ in range(d)])
    return (cells + rng.random((n, d))) / n


def latin_hypercube_maximin(
    n: int,
    d: int,
    rng: np.random.Generator | int,
    n_designs: int = 100,
) -> InitialDesign:
    """Best of n_designs random Latin hypercubes by minimum pairwise distance."""
    if n < 2:
        raise ValueError("need n >= 2")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = np.random.default_rng(rng) if seed is not None else rng
    best, best_sep = None, -np.inf
    for _ in range(max(1, n_designs)):
        pts = latin_hypercube(n, d, gen)
        sep = float(pdist(pts).min())
        if sep > best_sep:
            best, best_sep = pts, sep
    return InitialDesign(points=best, rng_seed=seed)
