"""Scalar acquisition scores over GP posteriors (minimisation convention).

All scores are written so that the location maximising the score is the next
point to evaluate: EI rewards expected improvement below the incumbent, UCB is
-mean + beta * sd, and the pure-exploitation score is simply -mean.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .gp import Posterior

# Below this sd the EI integrand degenerates; use the closed sigma=0 limit.
ZERO_SD = 1e-12


@dataclass(frozen=True)
class AcquisitionConfig:
    kind: str  # "ei", "ucb" or "mean"
    beta: float = 2.0
    incumbent: float | None = None

    def __post_init__(self):
        if self.kind not in ("ei", "ucb", "mean"):
            raise ValueError(f"unknown acquisition kind: {self.kind!r}")
        if self.beta < 0.0:
            raise ValueError("beta must be non-negative")
        if self.kind == "ei" and (
            self.incumbent is None or not np.isfinite(self.incumbent)
        ):
            raise ValueError("EI requires a finite incumbent")


def _phi(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)


def ei_values(
    means: np.ndarray, variances: np.ndarray, incumbent: float
) -> np.ndarray:
    """Vectorised expected improvement below the incumbent."""
    means = np.asarray(means, dtype=float)
    sd = np.sqrt(np.maximum(np.asarray(variances, dtype=float), 0.0))
    improve = incumbent - means
    out = np.maximum(improve, 0.0)
    ok = sd > ZERO_SD
    if np.any(ok):
        z = improve[ok] / sd[ok]
        out[ok] = improve[ok] * ndtr(z) + sd[ok] * _phi(z)
    return np.maximum(out, 0.0)


def expected_improvement(p: Posterior, incumbent: float) -> float:
    return float(ei_values(np.array([p.mean]), np.array([p.variance]), incumbent)[0])


def ucb_values(means: np.ndarray, variances: np.ndarray, beta: float) -> np.ndarray:
    return -np.asarray(means, dtype=float) + beta * np.sqrt(
        np.maximum(np.asarray(variances, dtype=float), 0.0)
    )


def upper_confidence_bound(p: Posterior, beta: float) -> float:
    if beta < 0.0:
        raise ValueError("beta must be non-negative")
    return float(ucb_values(np.array([p.mean]), np.array([p.variance]), beta)[0])


def mean_exploit_score(p: Posterior) -> float:
    """Score whose maximisation minimises the posterior mean."""
    return -p.mean
