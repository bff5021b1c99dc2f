"""Randomization checks, balance tests, uniformity meta-tests, heterogeneity summaries.

The meta-test logic: under a clean randomization, per-campaign test p-values
are uniform draws, so a Kolmogorov-Smirnov test of the collected p-values
against U(0,1) checks all campaigns jointly without multiple-testing
gymnastics. The KS p-value uses the asymptotic Kolmogorov distribution (the
standard alternating series) even at small n, which makes the test slightly
conservative there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .core import ParexError


class DiagnosticsError(ParexError):
    """Diagnostic input is unusable (e.g. singular covariance)."""


def proportion_test(assignments, target: float) -> float:
    """Two-sided exact-normal test of H0: test share equals `target`."""
    arr = np.asarray(assignments).astype(bool)
    if arr.size == 0:
        raise ValueError("proportion_test on an empty assignment set")
    if not 0.0 <= target <= 1.0:
        raise ValueError(f"target share must lie in [0, 1], got {target}")
    share = arr.mean()
    if target in (0.0, 1.0):
        return 1.0 if share == target else 0.0
    z = (share - target) / math.sqrt(target * (1.0 - target) / arr.size)
    return float(2.0 * sps.norm.sf(abs(z)))


def balance_test(covariates: np.ndarray, arms) -> float:
    """Wald chi-square test that covariate means are equal across arms.

    `covariates` is (n, K); `arms` is the per-user test indicator. The
    covariance of the mean difference uses per-arm sample covariances
    (robust to arm-specific scale). Returns the joint p-value.
    """
    x = np.asarray(covariates, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    arms = np.asarray(arms).astype(bool)
    if len(arms) != len(x):
        raise ValueError("covariates and arms must align")
    n1, n0 = int(arms.sum()), int((~arms).sum())
    if n1 < 2 or n0 < 2:
        raise ValueError("both arms need at least 2 users")
    k = x.shape[1]
    delta = x[arms].mean(axis=0) - x[~arms].mean(axis=0)
    v = np.cov(x[arms], rowvar=False, ddof=1) / n1 + np.cov(x[~arms], rowvar=False, ddof=1) / n0
    v = np.atleast_2d(v)
    try:
        solved = np.linalg.solve(v, delta)
    except np.linalg.LinAlgError:
        raise DiagnosticsError(
            f"singular covariance across {k} covariates (columns {list(range(k))})"
        ) from None
    w = float(delta @ solved)
    return float(sps.chi2.sf(w, df=k))


def ks_statistic(values) -> float:
    """One-sample KS distance against U(0,1)."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise ValueError("ks_statistic of an empty sample")
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("KS uniformity check requires values in [0, 1]")
    n = x.size
    i = np.arange(1, n + 1)
    return float(max((i / n - x).max(), (x - (i - 1) / n).max()))


def _kolmogorov_sf(lam: float, term_tol: float = 1e-10) -> float:
    """P(sup|B(t)| > lam) via the alternating series, truncated below term_tol."""
    if lam <= 0:
        return 1.0
    total, sign = 0.0, 1.0
    for k in range(1, 1001):
        term = math.exp(-2.0 * (k * lam) ** 2)
        total += sign * term
        if term < term_tol:
            break
        sign = -sign
    return min(max(2.0 * total, 0.0), 1.0)


def ks_uniformity(p_values) -> tuple[float, float]:
    """(KS statistic, asymptotic p-value) for H0: the inputs are U(0,1) draws."""
    x = np.asarray(p_values, dtype=float)
    if x.size < 5:
        raise ValueError("KS uniformity check needs at least 5 values")
    d = ks_statistic(x)
    return d, _kolmogorov_sf(math.sqrt(x.size) * d)


def quantile_pairs(p_values) -> list[tuple[float, float]]:
    """(uniform quantile, empirical quantile) pairs for quantile plots."""
    x = np.sort(np.asarray(p_values, dtype=float))
    n = x.size
    return [((i + 1) / (n + 1), float(x[i])) for i in range(n)]


# ---------------------------------------------------------------------------
# Heterogeneity summaries over an ATE table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeterogeneitySummary:
    """Distributional summaries of the degenerate ATEs in one partition.

    cdf: sorted taus with their empirical CDF heights. split: per competitor,
    the sorted taus among states where it advertises vs not. boxplots: per
    number of advertising competitors, (min, q1, median, q3, max). pooled /
    pooled_percentile: the unconditional ATE and where it falls in the cdf.
    """

    taus: np.ndarray = field(repr=False)
    cdf: list[tuple[float, float]]
    split: dict[int, tuple[np.ndarray, np.ndarray]]
    boxplots: dict[int, tuple[float, float, float, float, float]]
    pooled: float | None = None
    pooled_percentile: float | None = None


def heterogeneity_summary(table, label: int = 1, pooled: float | None = None) -> HeterogeneitySummary:
    """Summarize tau heterogeneity across the states of one partition."""
    cells = [(key, e.tau) for key, e in table.cells.items() if key.s == label]
    if not cells:
        raise ValueError(f"table has no cells for partition {label}")
    taus = np.sort(np.asarray([tau for _, tau in cells]))
    n = len(taus)
    cdf = [(float(t), (i + 1) / n) for i, t in enumerate(taus)]

    split: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for v, competitor in enumerate(table.competitors):
        on = np.sort(np.asarray([tau for key, tau in cells if key.d[v] == 1]))
        off = np.sort(np.asarray([tau for key, tau in cells if key.d[v] == 0]))
        split[competitor] = (off, on)

    boxplots: dict[int, tuple[float, float, float, float, float]] = {}
    by_count: dict[int, list[float]] = {}
    for key, tau in cells:
        by_count.setdefault(sum(key.d), []).append(tau)
    for count, values in sorted(by_count.items()):
        arr = np.asarray(values)
        boxplots[count] = (
            float(arr.min()),
            float(np.percentile(arr, 25)),
            float(np.median(arr)),
            float(np.percentile(arr, 75)),
            float(arr.max()),
        )

    percentile = None
    if pooled is not None:
        percentile = float(np.mean(taus <= pooled))
    return HeterogeneitySummary(
        taus=taus,
        cdf=cdf,
        split=split,
        boxplots=boxplots,
        pooled=pooled,
        pooled_percentile=percentile,
    )


def first_order_dominates(higher: np.ndarray, lower: np.ndarray) -> bool:
    """Empirical first-order stochastic dominance of `higher` over `lower`.

    Compared on the merged support: the CDF of `higher` never exceeds the CDF
    of `lower`.
    """
    grid = np.union1d(higher, lower)
    cdf_h = np.searchsorted(np.sort(higher), grid, side="right") / len(higher)
    cdf_l = np.searchsorted(np.sort(lower), grid, side="right") / len(lower)
    return bool(np.all(cdf_h <= cdf_l + 1e-12))
