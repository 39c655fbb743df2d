"""Generators for spike trains with short-range dependent intervals.

Four interval models are provided: an independent Gamma renewal process,
a moving-average process with positive or signed serial correlation, a
jittered-rhythm process with negative lag-one correlation, and an
oscillatory bursty process with negative correlation up to lag two. Each
model has a closed-form (or high-precision Monte Carlo) moment oracle in
:func:`theoretical_moments`, and piecewise-rate alternatives are built by
concatenating independent sections.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .core import SpikeTrain

__all__ = [
    "GammaDist",
    "UniformDist",
    "GammaRenewal",
    "MovingAverageProcess",
    "JitteredRhythm",
    "BurstyProcess",
    "Segment",
    "ProcessMoments",
    "simulate_train",
    "simulate_piecewise",
    "theoretical_moments",
    "stream_rng",
]


def stream_rng(seed, *stream) -> np.random.Generator:
    """Generator for (master seed, stream indices).

    Derived streams are independent and reproducible, so replicates run
    in parallel produce exactly the same trains as a serial loop.
    """
    if isinstance(seed, np.random.Generator):
        if stream:
            raise ValueError("cannot derive a stream from a live Generator")
        return seed
    if isinstance(seed, np.random.SeedSequence):
        entropy = list(seed.entropy) if isinstance(seed.entropy, (list, tuple)) \
            else [seed.entropy]
        return np.random.default_rng(
            np.random.SeedSequence(entropy + list(stream)))
    return np.random.default_rng(np.random.SeedSequence([int(seed), *stream]))


# ---------------------------------------------------------------------------
# base distributions


@dataclass(frozen=True)
class GammaDist:
    """Gamma distribution parameterized by mean and standard deviation."""

    mean: float
    sd: float

    def __post_init__(self):
        if self.mean <= 0 or self.sd <= 0:
            raise ValueError("Gamma mean and sd must be positive")

    @property
    def var(self) -> float:
        return self.sd ** 2

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        shape = (self.mean / self.sd) ** 2
        scale = self.sd ** 2 / self.mean
        return rng.gamma(shape, scale, size)


@dataclass(frozen=True)
class UniformDist:
    """Uniform distribution on [low, high]."""

    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("need low < high")

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    @property
    def var(self) -> float:
        return (self.high - self.low) ** 2 / 12.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, size)


def _positive_dist(dist, what: str) -> None:
    low = dist.low if isinstance(dist, UniformDist) else 0.0
    if isinstance(dist, UniformDist) and low <= 0:
        raise ValueError(f"{what} must have strictly positive support")


# ---------------------------------------------------------------------------
# interval models


@dataclass(frozen=True)
class GammaRenewal:
    """Independent, identically Gamma-distributed intervals."""

    mean: float
    sd: float

    def __post_init__(self):
        if self.mean <= 0 or self.sd <= 0:
            raise ValueError("interval mean and sd must be positive")


@dataclass(frozen=True)
class MovingAverageProcess:
    """Intervals formed as a moving average of positive base draws.

    Each interval is ``sum_j coeffs[j] * X_{i-j}`` with independent base
    draws X. The dependence order equals ``len(coeffs) - 1``. With
    nonnegative coefficients and a positive base the intervals are
    automatically positive; signed coefficients fall back to redrawing
    the newest base value whenever an interval comes out nonpositive,
    and the number of redraws is reported on the train's meta dict.
    """

    coeffs: tuple[float, ...]
    base: GammaDist | UniformDist

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.coeffs)
        if not coeffs or coeffs[0] == 0.0:
            raise ValueError("leading coefficient must be nonzero")
        _positive_dist(self.base, "base distribution")
        if self.base.mean * sum(coeffs) <= 0:
            raise ValueError("coefficients give a nonpositive mean interval")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    @classmethod
    def from_interval_moments(cls, coeffs, mean, sd, base="gamma"):
        """Pick base-draw moments so intervals get the target mean and sd."""
        coeffs = tuple(float(c) for c in coeffs)
        base_mean = mean / sum(coeffs)
        base_sd = sd / math.sqrt(sum(c * c for c in coeffs))
        if base == "gamma":
            return cls(coeffs, GammaDist(base_mean, base_sd))
        if base == "uniform":
            half = math.sqrt(3.0) * base_sd
            return cls(coeffs, UniformDist(base_mean - half, base_mean + half))
        raise ValueError(f"unknown base distribution {base!r}")


@dataclass(frozen=True)
class JitteredRhythm:
    """Spikes jittered around the beats of a hidden uniform rhythm.

    Beat intervals are uniform on ``period +- period_spread`` and every
    spike is displaced by an independent uniform jitter on
    ``+- jitter``. Intervals are one-dependent with negative lag-one
    covariance ``-jitter^2 / 3``. Positivity of the intervals requires
    ``period_spread + 2 * jitter <= period``.
    """

    period: float
    period_spread: float
    jitter: float

    def __post_init__(self):
        if min(self.period, self.period_spread, self.jitter) <= 0:
            raise ValueError("period, period_spread and jitter must be positive")
        if self.period_spread + 2 * self.jitter > self.period + 1e-12:
            raise ValueError("need period_spread + 2*jitter <= period for "
                             "positive intervals")


@dataclass(frozen=True)
class BurstyProcess:
    """Oscillatory bursty intervals, two-dependent and negatively correlated.

    A Bernoulli indicator I (probability ``long_prob``) starts a long
    interval from ``long_isi`` whenever it fires after a quiet step; the
    two following intervals are short draws from ``short_isi`` with
    probability ``follow_prob`` each. A final short draw guards every
    remaining case so intervals stay positive.
    """

    long_prob: float
    follow_prob: float
    long_isi: GammaDist | UniformDist
    short_isi: GammaDist | UniformDist

    def __post_init__(self):
        for p, name in ((self.long_prob, "long_prob"),
                        (self.follow_prob, "follow_prob")):
            if not 0.0 < p < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1)")
        _positive_dist(self.long_isi, "long_isi")
        _positive_dist(self.short_isi, "short_isi")


@dataclass(frozen=True)
class Segment:
    """A constant-rate section of a piecewise process."""

    model: object
    length: float

    def __post_init__(self):
        if self.length <= 0:
            raise ValueError("segment length must be positive")

    @property
    def rate(self) -> float:
        """Events per second implied by the model's mean interval."""
        return 1.0 / theoretical_moments(self.model).mean


# ---------------------------------------------------------------------------
# interval samplers: each returns (chunk of intervals, carried state)


def _sample_renewal(model, n, rng, state):
    return GammaDist(model.mean, model.sd).sample(rng, n), state


def _sample_ma(model, n, rng, state):
    a = np.asarray(model.coeffs)
    m = model.order
    if state is None:
        state = model.base.sample(rng, m) if m else np.empty(0)
    draws = np.concatenate([state, model.base.sample(rng, n)])
    xi = np.convolve(draws, a, mode="valid")
    # Signed coefficients can produce nonpositive intervals. Redraw the
    # newest contributing base value for the earliest offender; intervals
    # before it do not depend on that draw, later ones are re-checked.
    resamples = 0
    while True:
        bad = np.flatnonzero(xi <= 0)
        if bad.size == 0:
            break
        i = int(bad[0])
        draws[i + m] = model.base.sample(rng, 1)[0]
        hi = min(i + m + 1, n)
        xi[i:hi] = np.convolve(draws[i:hi + m], a, mode="valid")
        resamples += 1
        if resamples > max(1000, 10 * n):
            raise ValueError("moving-average coefficients make positive "
                             "intervals too rare; adjust the model")
    return xi, draws[n:], resamples


def _sample_jitter(model, n, rng, state):
    if state is None:
        state = rng.uniform(-model.jitter, model.jitter, 1)
    z = np.concatenate([state, rng.uniform(-model.jitter, model.jitter, n)])
    u = rng.uniform(model.period - model.period_spread,
                    model.period + model.period_spread, n)
    xi = u + z[1:] - z[:-1]
    return xi, z[-1:]


def _sample_bursty(model, n, rng, state):
    if state is None:
        state = (rng.random(2) < model.long_prob).astype(float)
    ind = np.concatenate([state, (rng.random(n) < model.long_prob)
                          .astype(float)])
    follow1 = (rng.random(n) < model.follow_prob).astype(float)
    follow2 = (rng.random(n) < model.follow_prob).astype(float)
    long_draw = model.long_isi.sample(rng, n)
    short1 = model.short_isi.sample(rng, n)
    short2 = model.short_isi.sample(rng, n)
    fallback = model.short_isi.sample(rng, n)
    i_now, i_prev, i_prev2 = ind[2:], ind[1:-1], ind[:-2]
    start_long = i_now * (1.0 - i_prev)
    guard = 1.0 - np.maximum(start_long,
                             np.maximum(i_prev, i_prev2 * follow1))
    xi = (start_long * long_draw
          + i_prev * follow1 * short1
          + i_prev2 * follow2 * short2
          + guard * fallback)
    return xi, ind[-2:]


_SAMPLERS = {
    GammaRenewal: _sample_renewal,
    MovingAverageProcess: _sample_ma,
    JitteredRhythm: _sample_jitter,
    BurstyProcess: _sample_bursty,
}


def _simulate_intervals(model, duration, rng):
    """Draw intervals until their sum exceeds the duration."""
    sampler = _SAMPLERS[type(model)]
    mean = theoretical_moments(model).mean
    chunk = max(32, int(1.3 * duration / mean) + 16)
    pieces, state, total, resamples = [], None, 0.0, 0
    while total <= duration:
        out = sampler(model, chunk, rng, state)
        if len(out) == 3:
            xi, state, redrawn = out
            resamples += redrawn
        else:
            xi, state = out
        pieces.append(xi)
        total += float(xi.sum())
        chunk = max(32, chunk // 2)
    return np.concatenate(pieces), resamples


def simulate_train(model, duration, seed) -> SpikeTrain:
    """Simulate one stationary train of the given model on (0, duration].

    The same seed always yields a bit-identical train. Moving-average
    models report the number of positivity redraws under
    ``train.meta["resamples"]``.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = stream_rng(seed)
    intervals, resamples = _simulate_intervals(model, duration, rng)
    times = np.cumsum(intervals)
    times = times[times <= duration]
    meta = {"model": model}
    if resamples:
        meta["resamples"] = resamples
    return SpikeTrain(times, float(duration), meta=meta,
                      allow_empty=times.size == 0)


def simulate_piecewise(segments, seed):
    """Concatenate independent constant-rate sections.

    Returns ``(train, change_points)`` where the change points are the
    cumulative segment boundaries (the ground truth for detection
    experiments). Each section restarts its interval process, so the
    sections are independent.
    """
    segments = list(segments)
    if not segments:
        raise ValueError("need at least one segment")
    times, offset, resamples = [], 0.0, 0
    boundaries = []
    for j, seg in enumerate(segments):
        rng = stream_rng(seed, j) if not isinstance(seed, np.random.Generator) \
            else seed
        intervals, redrawn = _simulate_intervals(seg.model, seg.length, rng)
        resamples += redrawn
        local = np.cumsum(intervals)
        times.append(offset + local[local <= seg.length])
        offset += seg.length
        boundaries.append(offset)
    all_times = np.concatenate(times)
    meta = {"segments": tuple(segments)}
    if resamples:
        meta["resamples"] = resamples
    train = SpikeTrain(all_times, offset, meta=meta,
                       allow_empty=all_times.size == 0)
    return train, np.asarray(boundaries[:-1])


# ---------------------------------------------------------------------------
# moment oracles


@dataclass(frozen=True)
class ProcessMoments:
    """Interval moments of a stationary model.

    ``autocovariances`` holds the lag 1..m covariances; the long-run
    variance is the variance plus twice their sum, the quantity that
    replaces the plain variance in the scaling of the count difference
    when intervals are dependent.
    """

    mean: float
    variance: float
    autocovariances: tuple[float, ...]
    long_run_variance: float
    exact: bool = True

    @property
    def order(self) -> int:
        return len(self.autocovariances)


@functools.lru_cache(maxsize=None)
def theoretical_moments(model) -> ProcessMoments:
    """Interval mean, variance, autocovariances and long-run variance.

    Closed forms for the renewal, moving-average and jittered models;
    the bursty model uses a high-precision Monte Carlo evaluation
    (two million intervals, fixed internal seed) and is tagged
    ``exact=False``.
    """
    if isinstance(model, GammaRenewal):
        return ProcessMoments(model.mean, model.sd ** 2, (), model.sd ** 2)
    if isinstance(model, MovingAverageProcess):
        a = np.asarray(model.coeffs)
        mean = model.base.mean * float(a.sum())
        var = model.base.var * float(a @ a)
        covs = tuple(model.base.var * float(a[:-k] @ a[k:])
                     for k in range(1, len(a)))
        return ProcessMoments(mean, var, covs, var + 2 * sum(covs))
    if isinstance(model, JitteredRhythm):
        var = (model.period_spread ** 2 + 2 * model.jitter ** 2) / 3.0
        cov1 = -model.jitter ** 2 / 3.0
        return ProcessMoments(model.period, var, (cov1,), var + 2 * cov1)
    if isinstance(model, BurstyProcess):
        rng = np.random.default_rng(np.random.SeedSequence([0x6D66, 2]))
        xi, _ = _sample_bursty(model, 2_000_000, rng, None)
        mean = float(xi.mean())
        centered = xi - mean
        var = float(centered @ centered) / xi.size
        covs = tuple(float(centered[:-k] @ centered[k:]) / (xi.size - k)
                     for k in (1, 2))
        return ProcessMoments(mean, var, covs, var + 2 * sum(covs),
                              exact=False)
    raise TypeError(f"unknown model type {type(model).__name__}")
