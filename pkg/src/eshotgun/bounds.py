"""Axis-aligned box bounds used throughout the package."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Box:
    """Non-degenerate box constraint: lower[i] < upper[i] for every dimension."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not np.all(upper > lower):
            raise ValueError("box is degenerate: need upper > lower per dimension")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unit(cls, dim: int) -> "Box":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x: np.ndarray, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(
            np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol)
        )

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def uniform(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        """Uniform draw(s); shape (dim,) for n=None, else (n, dim)."""
        size = self.dim if n is None else (n, self.dim)
        return self.lower + rng.random(size) * self.widths

    def intersect(self, lower: np.ndarray, upper: np.ndarray) -> "Box":
        """Intersection with [lower, upper]; raises if it would be empty."""
        return Box(np.maximum(self.lower, lower), np.minimum(self.upper, upper))

    def scale_to_unit(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / self.widths

    def scale_from_unit(self, u: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.widths
