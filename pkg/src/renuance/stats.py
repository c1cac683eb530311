"""Wilcoxon signed-rank test for paired ordinal scores.

Zero differences are discarded (classical treatment); absolute differences
are ranked with average ranks for ties. The two-sided p-value comes from full
enumeration of all sign assignments when the effective sample is small, and
otherwise from a normal approximation with tie-corrected variance and a
continuity correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EXACT_LIMIT_DEFAULT = 20
_EXACT_HARD_CAP = 24  # 2^24 subset sums is the largest sane enumeration


@dataclass(frozen=True)
class WilcoxonResult:
    w_plus: float
    w_minus: float
    n_effective: int
    p_two_sided: float
    method: str  # "exact" or "normal_approx"
    degenerate: bool = False


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks starting at 1; tied values share the mean of their rank span."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def wilcoxon_signed_rank(
    a,
    b,
    method: str = "auto",
    exact_limit: int = EXACT_LIMIT_DEFAULT,
) -> WilcoxonResult:
    """Two-sided paired test of a vs b; see module docstring for conventions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be equal-length 1-D, got {a.shape} vs {b.shape}")
    if len(a) < 1:
        raise ValueError("need at least one pair")
    if method not in ("auto", "exact", "normal_approx"):
        raise ValueError(f"unknown method {method!r}")

    diffs = a - b
    diffs = diffs[diffs != 0.0]
    n = len(diffs)
    if n == 0:
        return WilcoxonResult(0.0, 0.0, 0, 1.0, "exact", degenerate=True)

    abs_diffs = np.abs(diffs)
    ranks = _average_ranks(abs_diffs)
    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())

    use_exact = method == "exact" or (method == "auto" and n <= exact_limit)
    if use_exact:
        if n > _EXACT_HARD_CAP:
            raise ValueError(f"exact enumeration infeasible for n_effective={n}")
        sums = np.zeros(1)
        for r in ranks:
            sums = np.concatenate([sums, sums + r])
        total = float(len(sums))
        p_le = float((sums <= w_plus).sum()) / total
        p_ge = float((sums >= w_plus).sum()) / total
        p = min(1.0, 2.0 * min(p_le, p_ge))
        return WilcoxonResult(w_plus, w_minus, n, p, "exact")

    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(abs_diffs, return_counts=True)
    var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    if var <= 0:
        return WilcoxonResult(w_plus, w_minus, n, 1.0, "normal_approx", degenerate=True)
    sigma = math.sqrt(var)
    p_le = _phi((w_plus - mu + 0.5) / sigma)
    p_ge = 1.0 - _phi((w_plus - mu - 0.5) / sigma)
    p = min(1.0, 2.0 * min(p_le, p_ge))
    return WilcoxonResult(w_plus, w_minus, n, p, "normal_approx")
