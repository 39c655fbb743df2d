"""Moment and dependence estimators for interval sequences.

The central quantity is the long-run variance of the intervals, the
variance plus twice the summed autocovariances up to the dependence
order. It replaces the plain variance in the scaling of windowed count
differences whenever the intervals are serially correlated. Estimators
come in a global flavour (whole recording) and a local flavour (left and
right window around a time point); the local one stays approximately
unbiased in the presence of rate changes. Undefined values are returned
as ``nan`` and are never clamped, because forcing a negative long-run
variance estimate to zero would fabricate spurious zero-scale points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import (InsufficientDataError, SpikeTrain, interspike_intervals,
                   window_intervals)

__all__ = [
    "MomentEstimates",
    "LocalScale",
    "LagScreen",
    "DependenceOrder",
    "autocovariance",
    "long_run_variance",
    "interval_moments",
    "global_scale",
    "local_scale",
    "scale_grid",
    "section_correlations",
    "signed_rank_test",
    "dependence_order",
    "correlation_contribution",
]


def autocovariance(intervals, lag: int) -> float:
    """Plug-in autocovariance of an interval sequence at one lag.

    With N intervals the product sum runs over the first ``N - (lag+1)``
    pairs and is divided by the same count, while the mean is taken over
    all N values. The sum deliberately stops one pair short of the
    maximal ``N - lag`` range; both variants are consistent and the
    shorter one is kept so results match the reference estimator used
    throughout this package. Returns nan when fewer than ``lag + 2``
    intervals are available.
    """
    x = np.asarray(intervals, dtype=float)
    if lag < 0:
        raise ValueError("lag must be nonnegative")
    k = x.size - (lag + 1)
    if k < 1:
        return math.nan
    mu = x.mean()
    return float(x[:k] @ x[lag:lag + k]) / k - mu * mu


def long_run_variance(intervals, order: int) -> float:
    """Variance plus twice the autocovariances up to the given order.

    May legitimately be negative for strongly negatively correlated
    data in small samples; the value is returned as-is and consumers
    treat negative values as undefined. nan when fewer than
    ``order + 2`` intervals are available.
    """
    x = np.asarray(intervals, dtype=float)
    if x.size < order + 2:
        return math.nan
    total = autocovariance(x, 0)
    for lag in range(1, order + 1):
        total += 2.0 * autocovariance(x, lag)
    return total


@dataclass(frozen=True)
class MomentEstimates:
    """Interval moments estimated from one sequence."""

    mean: float
    variance: float
    autocovariances: tuple[float, ...]
    long_run_variance: float
    n_intervals: int


def interval_moments(intervals, order: int) -> MomentEstimates:
    x = np.asarray(intervals, dtype=float)
    covs = tuple(autocovariance(x, lag) for lag in range(1, order + 1))
    return MomentEstimates(
        mean=float(x.mean()) if x.size else math.nan,
        variance=autocovariance(x, 0),
        autocovariances=covs,
        long_run_variance=long_run_variance(x, order),
        n_intervals=int(x.size),
    )


def correlation_contribution(intervals, order: int) -> float:
    """Relative contribution of serial correlations to the long-run variance.

    Equals twice the summed lag correlations up to the order, i.e.
    ``(long-run variance - variance) / variance``. Negative values mean
    the count variance is reduced by the correlation structure. nan when
    the variance estimate is not positive.
    """
    x = np.asarray(intervals, dtype=float)
    var = autocovariance(x, 0)
    if not var > 0:
        return math.nan
    return 2.0 * sum(autocovariance(x, lag)
                     for lag in range(1, order + 1)) / var


# ---------------------------------------------------------------------------
# scale estimators for the windowed count difference


def global_scale(train: SpikeTrain, window: float, order: int) -> float:
    """Whole-recording scale estimate ``sqrt(2 h rho2 / mu^3)``.

    Constant over time, hence biased when the rate actually changes;
    see :func:`local_scale` for the estimator to prefer in detection.
    nan when undefined (negative long-run variance or too few
    intervals).
    """
    x = interspike_intervals(train)
    rho2 = long_run_variance(x, order)
    if math.isnan(rho2) or rho2 < 0:
        return math.nan
    mu = float(x.mean())
    return math.sqrt(2.0 * window * rho2 / mu ** 3)


@dataclass(frozen=True)
class LocalScale:
    """Scale of the count difference at one time point.

    ``s2_left`` and ``s2_right`` are the per-side ratios of long-run
    variance to cubed mean interval; the scale is
    ``sqrt((s2_left + s2_right) * window)``. ``scale`` is nan when a side
    has too few intervals or a negative long-run variance estimate, and
    0.0 in the degenerate constant-interval case (consumers then set the
    count-difference statistic to zero).
    """

    t: float
    window: float
    n_left: int
    n_right: int
    s2_left: float
    s2_right: float
    scale: float

    @property
    def defined(self) -> bool:
        return not math.isnan(self.scale)


def _side_s2(intervals, order: int, min_intervals: int):
    n = intervals.size
    if n < min_intervals:
        return math.nan, math.nan
    rho2 = long_run_variance(intervals, order)
    if math.isnan(rho2):
        return math.nan, math.nan
    mu = float(intervals.mean())
    return rho2, rho2 / mu ** 3


def local_scale(train: SpikeTrain, t: float, window: float, order: int,
                min_intervals: int | None = None) -> LocalScale:
    """Scale estimate from the left and right window around ``t``.

    Each side uses only the intervals fully contained in its window, so
    a rate change at most contaminates the window it sits in. Requires
    ``window <= t <= duration - window``.
    """
    if not (window <= t <= train.duration - window):
        raise ValueError(f"t={t} outside [{window}, "
                         f"{train.duration - window}]")
    if min_intervals is None:
        min_intervals = order + 2
    min_intervals = max(min_intervals, order + 2)
    left = window_intervals(train, t - window, t)
    right = window_intervals(train, t, t + window)
    rho2_l, s2_l = _side_s2(left, order, min_intervals)
    rho2_r, s2_r = _side_s2(right, order, min_intervals)
    if math.isnan(s2_l) or math.isnan(s2_r) or rho2_l < 0 or rho2_r < 0:
        scale = math.nan
    else:
        scale = math.sqrt((s2_l + s2_r) * window)
    return LocalScale(t=t, window=window, n_left=left.size,
                      n_right=right.size, s2_left=s2_l, s2_right=s2_r,
                      scale=scale)


class _PrefixSums:
    """Range sums of intervals and lagged interval products.

    Window statistics only ever involve contiguous runs of intervals, so
    every windowed moment reduces to two prefix-sum lookups. Shared by
    all windows and grid points of one recording.
    """

    def __init__(self, train: SpikeTrain, order: int):
        self.times = train.times
        xi = interspike_intervals(train)
        self.n = xi.size
        self.order = order
        self.cum = np.concatenate([[0.0], np.cumsum(xi)])
        self.cum_lag = [
            np.concatenate([[0.0], np.cumsum(xi[:self.n - lag]
                                             * xi[lag:])])
            for lag in range(0, order + 1)
        ]

    def side_stats(self, a, b, min_intervals):
        """Per-window count, long-run variance and mean for (a, b] windows.

        ``a`` and ``b`` are arrays of window borders. Returns arrays
        (n, rho2, mu) with nan entries where fewer than ``min_intervals``
        intervals are contained.
        """
        a = np.asarray(a, dtype=float)
        if self.n < max(min_intervals, self.order + 2):
            nan = np.full(a.shape, np.nan)
            return np.zeros(a.shape, dtype=int), nan, nan
        lo = np.searchsorted(self.times, a, side="right")
        hi = np.searchsorted(self.times, b, side="right")
        p = lo + 1          # first fully contained interval index
        n = hi - lo - 1     # number of contained intervals
        ok = n >= max(min_intervals, self.order + 2)
        n_safe = np.where(ok, n, self.order + 2)
        p_safe = np.where(ok, p, 0)
        mu = (self.cum[p_safe + n_safe] - self.cum[p_safe]) / n_safe
        rho2 = np.zeros(len(a))
        for lag in range(0, self.order + 1):
            pairs = n_safe - (lag + 1)
            s = (self.cum_lag[lag][p_safe + pairs]
                 - self.cum_lag[lag][p_safe])
            cov = s / pairs - mu * mu
            rho2 += cov if lag == 0 else 2.0 * cov
        mu = np.where(ok, mu, np.nan)
        rho2 = np.where(ok, rho2, np.nan)
        return np.maximum(n, 0), rho2, mu


def scale_grid(train: SpikeTrain, grid, window: float, order: int,
               min_intervals: int | None = None, _prefix=None):
    """Vectorized :func:`local_scale` over a whole evaluation grid.

    Returns ``(scale, s2_left, s2_right)`` arrays; entries are nan where
    the local estimate is undefined on either side.
    """
    grid = np.asarray(grid, dtype=float)
    if min_intervals is None:
        min_intervals = order + 2
    prefix = _prefix if _prefix is not None else _PrefixSums(train, order)
    _, rho2_l, mu_l = prefix.side_stats(grid - window, grid, min_intervals)
    _, rho2_r, mu_r = prefix.side_stats(grid, grid + window, min_intervals)
    with np.errstate(invalid="ignore"):
        s2_l = rho2_l / mu_l ** 3
        s2_r = rho2_r / mu_r ** 3
        undefined = (np.isnan(s2_l) | np.isnan(s2_r)
                     | (rho2_l < 0) | (rho2_r < 0))
        scale = np.sqrt(np.where(undefined, np.nan,
                                 (s2_l + s2_r) * window))
    return scale, s2_l, s2_r


# ---------------------------------------------------------------------------
# dependence-order selection


def section_correlations(intervals, lag: int, section_len: int) -> np.ndarray:
    """Lag correlation of consecutive intervals within disjoint sections.

    The sequence is cut into consecutive blocks of ``section_len``
    intervals (remainder dropped) and the Pearson correlation of the
    pairs ``(xi_i, xi_{i+lag})`` is computed inside each block; pairs
    spanning two blocks are not used. Sectioning keeps the correlation
    estimates honest when the rate changes between blocks, which biases
    any pooled estimate toward positive values. Degenerate blocks yield
    nan.
    """
    x = np.asarray(intervals, dtype=float)
    if lag < 1:
        raise ValueError("lag must be at least 1")
    if section_len < lag + 2:
        raise ValueError("sections too short for this lag")
    n_sections = x.size // section_len
    sections = x[:n_sections * section_len].reshape(n_sections, section_len)
    a = sections[:, :-lag]
    b = sections[:, lag:]
    a_c = a - a.mean(axis=1, keepdims=True)
    b_c = b - b.mean(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (a_c * b_c).sum(axis=1) / np.sqrt(
            (a_c * a_c).sum(axis=1) * (b_c * b_c).sum(axis=1))
    return r


def signed_rank_test(values) -> float:
    """Two-sided one-sample Wilcoxon signed-rank p-value for zero median.

    Zero values are discarded. With ten or more remaining values the
    normal approximation with continuity correction is used; below that
    the exact null distribution of the positive-rank sum is enumerated
    (tied ranks enter as midranks). Returns 1.0 when nothing remains.
    """
    d = np.asarray(values, dtype=float)
    d = d[np.isfinite(d) & (d != 0.0)]
    n = d.size
    if n == 0:
        return 1.0
    ranks = stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n >= 10:
        mean = n * (n + 1) / 4.0
        sd = math.sqrt(n * (n + 1) * (2 * n + 1) / 24.0)
        z = w_plus - mean
        z -= 0.5 * math.copysign(1.0, z) if z != 0 else 0.0
        z /= sd
        return min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    # exact distribution; doubled ranks stay integral under midranks
    r2 = np.rint(2.0 * ranks).astype(int)
    counts = np.zeros(int(r2.sum()) + 1)
    counts[0] = 1.0
    for r in r2:
        counts[r:] = counts[r:] + counts[:counts.size - r]
    total = counts.sum()
    w2 = int(np.rint(2.0 * w_plus))
    p_low = counts[:w2 + 1].sum() / total
    p_high = counts[w2:].sum() / total
    return min(1.0, 2.0 * min(p_low, p_high))


@dataclass(frozen=True)
class LagScreen:
    """Windowed correlations of one lag and their deviation-from-zero test."""

    lag: int
    correlations: np.ndarray
    median: float
    p_value: float


@dataclass(frozen=True)
class DependenceOrder:
    """Result of the data-driven dependence-order selection."""

    order: int
    lags: tuple[LagScreen, ...]
    section_len: int
    alpha: float

    @property
    def first_nonsignificant_lag(self) -> int:
        return self.order + 1


def dependence_order(train_or_intervals, section_len: int = 50,
                     max_lag: int = 10, alpha: float = 0.05,
                     min_sections: int = 5) -> DependenceOrder:
    """Estimate the dependence order from windowed serial correlations.

    The intervals are split into disjoint sections of ``section_len``;
    for each lag the per-section correlations are tested against zero
    median with a Wilcoxon signed-rank test. The selected order is one
    less than the smallest non-significant lag, or ``max_lag`` when all
    lags are significant.
    """
    if isinstance(train_or_intervals, SpikeTrain):
        x = interspike_intervals(train_or_intervals)
    else:
        x = np.asarray(train_or_intervals, dtype=float)
    n_sections = x.size // section_len
    if n_sections < min_sections:
        raise InsufficientDataError(
            f"only {n_sections} sections of {section_len} intervals "
            f"(need {min_sections}); record longer or reduce section_len")
    screens = []
    first_nonsignificant = None
    for lag in range(1, max_lag + 1):
        r = section_correlations(x, lag, section_len)
        finite = r[np.isfinite(r)]
        p = signed_rank_test(finite)
        median = float(np.median(finite)) if finite.size else math.nan
        screens.append(LagScreen(lag, r, median, p))
        if p >= alpha and first_nonsignificant is None:
            first_nonsignificant = lag
            # keep screening the remaining lags for the full report
    order = max_lag if first_nonsignificant is None \
        else first_nonsignificant - 1
    return DependenceOrder(order=order, lags=tuple(screens),
                           section_len=section_len, alpha=alpha)
