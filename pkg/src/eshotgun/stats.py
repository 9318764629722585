"""Result statistics: median/MAD, one-sided paired Wilcoxon signed-rank test
(exact by enumeration for small n) and Holm-Bonferroni best/equivalent flags.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

EXACT_LIMIT = 20  # exact signed-rank enumeration up to this many pairs


def median_and_mad(values) -> tuple[float, float]:
    """Median and median absolute deviation from the median."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("need a non-empty sample")
    med = float(np.median(values))
    return med, float(np.median(np.abs(values - med)))


def _signed_ranks(diff: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average ranks of |diff| and the positive-difference mask."""
    order = np.argsort(np.abs(diff), kind="stable")
    ranks = np.empty(diff.size)
    sorted_abs = np.abs(diff)[order]
    i = 0
    while i < diff.size:
        j = i
        while j + 1 < diff.size and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average of ranks i+1..j+1
        i = j + 1
    return ranks, diff > 0


def _exact_leq_probability(ranks: np.ndarray, w_obs: float) -> float:
    """P(W+ <= w_obs) over all 2^n sign assignments of the given ranks.

    Works on doubled ranks so tied (half-integer) average ranks stay integral.
    """
    doubled = np.rint(2.0 * ranks).astype(int)
    total = doubled.sum()
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    for r in doubled:
        counts[r:] += counts[: counts.size - r].copy()
    threshold = int(math.floor(round(2.0 * w_obs, 6)))
    return float(counts[: threshold + 1].sum() / 2.0 ** len(doubled))


def wilcoxon_one_sided(a, b) -> float:
    """P-value of the paired signed-rank test of H1: a < b.

    Zero differences are dropped and tied absolute differences receive
    average ranks. Exact enumeration for n <= 20 pairs; beyond that a
    tie-corrected normal approximation with continuity correction. When all
    differences are zero there is no evidence of a difference and p = 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("need paired 1-d samples of equal length")
    diff = a - b
    diff = diff[diff != 0.0]
    n = diff.size
    if n == 0:
        return 1.0
    ranks, positive = _signed_ranks(diff)
    w_plus = float(ranks[positive].sum())
    if n <= EXACT_LIMIT:
        return _exact_leq_probability(ranks, w_plus)
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(diff), return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    sd = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0 - tie_term)
    if sd == 0.0:
        return 1.0
    return float(ndtr((w_plus - mean + 0.5) / sd))


def holm_bonferroni(pvalues, alpha: float) -> list[bool]:
    """Step-down Holm rejection flags, returned in input order."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    pvalues = np.asarray(pvalues, dtype=float)
    m = pvalues.size
    order = np.argsort(pvalues, kind="stable")
    reject = np.zeros(m, dtype=bool)
    for step, idx in enumerate(order):
        if pvalues[idx] < alpha / (m - step):
            reject[idx] = True
        else:
            break
    return reject.tolist()


def holm_adjusted(pvalues) -> list[float]:
    """Holm step-down adjusted p-values, in input order."""
    pvalues = np.asarray(pvalues, dtype=float)
    m = pvalues.size
    order = np.argsort(pvalues, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for step, idx in enumerate(order):
        running = max(running, min(1.0, (m - step) * pvalues[idx]))
        adjusted[idx] = running
    return adjusted.tolist()


@dataclass(frozen=True)
class MethodSample:
    """Final optimisation gaps |f* - f_min| for one method, paired by repeat."""

    method: str
    final_gaps: np.ndarray

    def __post_init__(self):
        gaps = np.asarray(self.final_gaps, dtype=float)
        if gaps.size == 0:
            raise ValueError("need at least one repeat")
        if np.any(gaps < -1e-9):
            raise ValueError("gaps must be non-negative (up to 1e-9 slack)")
        object.__setattr__(self, "final_gaps", np.maximum(gaps, 0.0))


@dataclass(frozen=True)
class MethodSummary:
    method: str
    median: float
    mad: float
    p_adjusted: float | None  # None for the best method itself
    best: bool
    equivalent: bool


@dataclass(frozen=True)
class ComparisonTable:
    alpha: float
    rows: tuple[MethodSummary, ...]

    @property
    def best_method(self) -> str:
        return next(row.method for row in self.rows if row.best)

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "methods": [
                {
                    "method": row.method,
                    "median": row.median,
                    "mad": row.mad,
                    "p_adjusted": row.p_adjusted,
                    "best": row.best,
                    "equivalent": row.equivalent,
                }
                for row in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    def to_text(self) -> str:
        header = ["method", "median", "mad", "p_adjusted", "best", "equivalent"]
        lines = ["\t".join(header)]
        for row in self.rows:
            p = "" if row.p_adjusted is None else f"{row.p_adjusted:.4g}"
            lines.append(
                "\t".join(
                    [
                        row.method,
                        f"{row.median:.6g}",
                        f"{row.mad:.6g}",
                        p,
                        str(row.best).lower(),
                        str(row.equivalent).lower(),
                    ]
                )
            )
        return "\n".join(lines)


def build_comparison_table(samples, alpha: float = 0.05) -> ComparisonTable:
    """Flag the lowest-median method and everything statistically tied to it.

    Every non-best method is tested one-sided (best < method) and the Holm
    correction is applied across those tests; methods whose adjusted test
    fails to reject at alpha are flagged equivalent to the best.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("need at least two methods to compare")
    n = {s.final_gaps.size for s in samples}
    if len(n) != 1:
        raise ValueError("methods must have equal, paired repeat counts")

    stats = {s.method: median_and_mad(s.final_gaps) for s in samples}
    # Lowest median wins; ties break on method name for determinism.
    best = min(samples, key=lambda s: (stats[s.method][0], s.method))
    others = [s for s in samples if s.method != best.method]
    pvalues = [wilcoxon_one_sided(best.final_gaps, s.final_gaps) for s in others]
    rejected = holm_bonferroni(pvalues, alpha)
    adjusted = holm_adjusted(pvalues)

    rows = []
    for sample in samples:
        med, mad = stats[sample.method]
        if sample.method == best.method:
            rows.append(MethodSummary(sample.method, med, mad, None, True, True))
        else:
            k = next(i for i, s in enumerate(others) if s.method == sample.method)
            rows.append(
                MethodSummary(
                    sample.method, med, mad, adjusted[k], False, not rejected[k]
                )
            )
    return ComparisonTable(alpha=alpha, rows=tuple(rows))
