"""Monte Carlo calibration of rejection thresholds.

Under a constant rate the standardized windowed count difference behaves
like the double increment of a standard Brownian motion,
``(W(t+h) + W(t-h) - 2 W(t)) / sqrt(2h)``, which is free of all process
parameters. Simulating that functional once per window set therefore
calibrates the test for every spike train of the same length: per window
the mean and standard deviation of the maximal absolute excursion are
recorded, and the rejection threshold is the upper quantile of the
standardized across-window maximum. A block bootstrap variant rebuilds
the null distribution from the recording itself, which can help when the
smallest window holds few spikes, at the price of a data-dependent
threshold.
"""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import SpikeTrain, as_window_set, interspike_intervals

__all__ = [
    "ThresholdTable",
    "CalibrationError",
    "simulate_maxima",
    "calibrate_threshold",
    "load_or_calibrate",
    "bootstrap_threshold",
    "default_cache_dir",
]

CACHE_ENV_VAR = "MULTIFILTER_CACHE"
_CACHE_FORMAT = 1
_BATCH = 512  # fixed so draws are reproducible regardless of memory


class CalibrationError(RuntimeError):
    """Threshold table missing, degenerate or incompatible."""


@dataclass(frozen=True)
class ThresholdTable:
    """Simulated moments of per-window maxima and the global threshold.

    ``means[i]`` and ``sds[i]`` standardize the absolute count-difference
    field of ``windows[i]`` so every window carries comparable weight;
    ``q`` is the (1 - alpha) quantile of the standardized across-window
    maximum. Tables are tied to their full metadata; mixing a table with
    a different grid or duration would silently change the test level.
    """

    windows: tuple[float, ...]
    duration: float
    grid_step: float
    alpha: float
    n_sims: int
    seed: int
    means: tuple[float, ...]
    sds: tuple[float, ...]
    q: float

    def row(self, window: float) -> tuple[float, float]:
        """Mean and sd of the maximal excursion for one window width."""
        for h, mean, sd in zip(self.windows, self.means, self.sds):
            if h == window:
                return mean, sd
        raise CalibrationError(f"no threshold row for window {window}")

    @property
    def meta(self) -> dict:
        return {
            "format": _CACHE_FORMAT,
            "windows": list(self.windows),
            "duration": self.duration,
            "grid_step": self.grid_step,
            "alpha": self.alpha,
            "n_sims": self.n_sims,
            "seed": self.seed,
        }

    def matches(self, windows, duration, grid_step, alpha) -> bool:
        return (tuple(windows) == self.windows
                and float(duration) == self.duration
                and float(grid_step) == self.grid_step
                and float(alpha) == self.alpha)

    def to_json(self) -> str:
        payload = dict(self.meta)
        payload.update(means=list(self.means), sds=list(self.sds), q=self.q)
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ThresholdTable":
        d = json.loads(text)
        if d.get("format") != _CACHE_FORMAT:
            raise CalibrationError(f"unsupported table format {d.get('format')}")
        return cls(windows=tuple(d["windows"]), duration=d["duration"],
                   grid_step=d["grid_step"], alpha=d["alpha"],
                   n_sims=d["n_sims"], seed=d["seed"],
                   means=tuple(d["means"]), sds=tuple(d["sds"]), q=d["q"])


def meta_hash(windows, duration, grid_step, alpha, n_sims, seed) -> str:
    key = json.dumps([_CACHE_FORMAT, list(windows), duration, grid_step,
                      alpha, n_sims, seed], sort_keys=True)
    return hashlib.sha256(key.encode()).hexdigest()[:16]


class _Lattice:
    """Brownian evaluation lattice shared by all windows of one setup.

    Per window the field needs W at ``t - h``, ``t`` and ``t + h`` for
    every grid time t; the union of those points over all windows forms
    one sorted lattice, so a single path per simulation serves every
    window. That sharing is required: the across-window maximum is a
    joint quantity of one underlying path.
    """

    def __init__(self, window_set, duration):
        ws = window_set
        ws.check_duration(duration)
        if ws.grid_step > ws.smallest / 2:
            raise ValueError(
                f"grid step {ws.grid_step} coarser than half the smallest "
                f"window {ws.smallest}")
        needed = []
        self.grids = []
        for h in ws.windows:
            t = ws.grid(h, duration)
            self.grids.append(t)
            needed.extend([t - h, t, t + h])
        self.points = np.unique(np.concatenate(needed))
        self.idx = []
        for h, t in zip(ws.windows, self.grids):
            self.idx.append(tuple(
                np.searchsorted(self.points, v) for v in (t - h, t, t + h)))
        first = self.points[0] if self.points.size else 0.0
        self.increment_sd = np.sqrt(np.diff(self.points, prepend=0.0)
                                    if first > 0 else
                                    np.concatenate([[0.0],
                                                    np.diff(self.points)]))
        self.windows = ws.windows


def simulate_maxima(windows, duration, grid_step=None, n_sims=10000,
                    seed=0, return_marginals=False):
    """Per-simulation maxima of the absolute Brownian double increment.

    Returns an ``(n_sims, n_windows)`` array of ``max_t |field|`` per
    window, all windows sharing one Brownian path per simulation. With
    ``return_marginals=True`` additionally returns the field value at the
    middle grid point of every window, an i.i.d. standard normal sample
    useful for calibration checks.
    """
    ws = as_window_set(windows, grid_step)
    if n_sims < 1:
        raise ValueError("n_sims must be at least 1")
    lat = _Lattice(ws, float(duration))
    n_h = len(ws.windows)
    maxima = np.empty((n_sims, n_h))
    marginals = np.empty((n_sims, n_h)) if return_marginals else None
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB0]))
    done = 0
    while done < n_sims:
        batch = min(_BATCH, n_sims - done)
        z = rng.standard_normal((batch, lat.points.size))
        w = np.cumsum(z * lat.increment_sd, axis=1)
        for j, (h, (ile, ic, iri)) in enumerate(zip(ws.windows, lat.idx)):
            field = (w[:, iri] + w[:, ile] - 2.0 * w[:, ic]) \
                / np.sqrt(2.0 * h)
            maxima[done:done + batch, j] = np.abs(field).max(axis=1)
            if return_marginals:
                marginals[done:done + batch, j] = field[:, field.shape[1] // 2]
        done += batch
    if return_marginals:
        return maxima, marginals
    return maxima


def calibrate_threshold(windows, duration, grid_step=None, alpha=0.05,
                        n_sims=10000, seed=0) -> ThresholdTable:
    """Simulate the limit maxima and build a :class:`ThresholdTable`.

    Deterministic for fixed arguments. Below 1000 simulations the
    quantile is noisy and a warning is emitted.
    """
    ws = as_window_set(windows, grid_step)
    if n_sims < 1000:
        warnings.warn(f"n_sims={n_sims} gives a noisy threshold; "
                      "1000 or more recommended", stacklevel=2)
    maxima = simulate_maxima(ws, duration, n_sims=n_sims, seed=seed)
    means = maxima.mean(axis=0)
    sds = maxima.std(axis=0, ddof=1)
    if np.any(sds <= 0) or not np.all(np.isfinite(sds)):
        raise CalibrationError("degenerate spread of simulated maxima; "
                               "increase n_sims or refine the grid")
    standardized = (maxima - means) / sds
    q = float(np.quantile(standardized.max(axis=1), 1.0 - alpha))
    return ThresholdTable(windows=ws.windows, duration=float(duration),
                          grid_step=ws.grid_step, alpha=float(alpha),
                          n_sims=int(n_sims), seed=int(seed),
                          means=tuple(float(v) for v in means),
                          sds=tuple(float(v) for v in sds), q=q)


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "multifilter"


def load_or_calibrate(windows, duration, grid_step=None, alpha=0.05,
                      n_sims=10000, seed=0, cache_dir=None) -> ThresholdTable:
    """Fetch a cached threshold table or calibrate and store it.

    The cache key covers every quantity the table depends on, so repeated
    detections with the same setup skip recalibration. Set the
    ``MULTIFILTER_CACHE`` environment variable to relocate the cache.
    """
    ws = as_window_set(windows, grid_step)
    directory = Path(cache_dir) if cache_dir is not None else default_cache_dir()
    key = meta_hash(ws.windows, float(duration), ws.grid_step, float(alpha),
                    int(n_sims), int(seed))
    path = directory / f"threshold-{key}.json"
    if path.exists():
        table = ThresholdTable.from_json(path.read_text())
        if table.matches(ws.windows, duration, ws.grid_step, alpha):
            return table
    table = calibrate_threshold(ws, duration, alpha=alpha, n_sims=n_sims,
                                seed=seed)
    directory.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(table.to_json())
    os.replace(tmp, path)
    return table


def bootstrap_threshold(train: SpikeTrain, windows, grid_step=None,
                        alpha=0.05, order=0, block_len=None, n_boot=500,
                        seed=0, table=None, cache_dir=None,
                        n_sims=10000) -> float:
    """Block-bootstrap rejection threshold for the test statistic.

    Contiguous blocks of intervals are resampled with replacement until
    each replicate spans the full recording, preserving serial
    correlation within blocks; the threshold is the (1 - alpha) quantile
    of the replicate statistics. The default block length is
    ``10 * (order + 1)`` intervals. Data-dependent and experimental:
    unlike the asymptotic threshold it is affected by rate changes in
    the recording.
    """
    from .detect import multiple_filter_test

    ws = as_window_set(windows, grid_step)
    intervals = interspike_intervals(train)
    n = intervals.size
    if block_len is None:
        block_len = 10 * (order + 1)
    if n < 10 * block_len:
        raise ValueError(f"recording has {n} intervals, need at least "
                         f"{10 * block_len} for blocks of {block_len}")
    if table is None:
        table = load_or_calibrate(ws, train.duration, alpha=alpha,
                                  n_sims=n_sims, seed=seed,
                                  cache_dir=cache_dir)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB5]))
    n_starts = n - block_len + 1
    blocks_per_draw = int(np.ceil(n / block_len)) + 2
    stats = []
    dropped = 0
    for _ in range(int(n_boot)):
        pieces = []
        total = 0.0
        while total <= train.duration:
            starts = rng.integers(0, n_starts, size=blocks_per_draw)
            for s in starts:
                block = intervals[s:s + block_len]
                pieces.append(block)
                total += float(block.sum())
                if total > train.duration:
                    break
        times = np.cumsum(np.concatenate(pieces))
        times = times[times <= train.duration]
        replicate = SpikeTrain(times, train.duration,
                               allow_empty=times.size == 0)
        result = multiple_filter_test(replicate, ws, order=order,
                                      table=table, warn_few_spikes=False)
        if result.decidable:
            stats.append(result.statistic)
        else:
            dropped += 1
    if not stats:
        raise CalibrationError("all bootstrap replicates were undecidable")
    if dropped:
        warnings.warn(f"{dropped} of {n_boot} bootstrap replicates "
                      "undecidable and dropped", stacklevel=2)
    return float(np.quantile(np.asarray(stats), 1.0 - alpha))
