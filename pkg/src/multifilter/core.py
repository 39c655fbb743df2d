"""Spike-train containers, counting primitives and the analysis grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpikeTrain",
    "WindowSet",
    "SpikeTrainFormatError",
    "InsufficientDataError",
    "count_events",
    "interspike_intervals",
    "window_intervals",
    "read_spike_train",
    "write_spike_train",
]


class SpikeTrainFormatError(ValueError):
    """A spike-train text file could not be parsed."""

    def __init__(self, path, lineno, message):
        super().__init__(f"{path}, line {lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


class InsufficientDataError(ValueError):
    """A recording is too short for the requested estimate."""


@dataclass(frozen=True, eq=False)
class SpikeTrain:
    """A finite spike train on the interval (0, T].

    Parameters
    ----------
    times : array_like
        Strictly increasing event times in seconds, all inside
        ``(0, duration]``.
    duration : float
        Observation length T in seconds.
    meta : dict, optional
        Free-form provenance information (for example simulator
        diagnostics). Never inspected by any computation.
    allow_empty : bool
        Permit a train without any event. Off by default so that empty
        inputs are caught early; degenerate-input tests switch it on.
    """

    times: np.ndarray
    duration: float
    meta: dict | None = None
    allow_empty: bool = False

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=float)
        if times.ndim != 1:
            raise ValueError("spike times must be one-dimensional")
        if not np.isfinite(self.duration) or self.duration <= 0:
            raise ValueError("duration must be a positive finite number")
        if times.size == 0:
            if not self.allow_empty:
                raise ValueError("empty spike train (pass allow_empty=True "
                                 "if this is intentional)")
        else:
            if not np.all(np.isfinite(times)):
                raise ValueError("spike times must be finite")
            if np.any(np.diff(times) <= 0):
                raise ValueError("spike times must be strictly increasing")
            if times[0] <= 0 or times[-1] > self.duration:
                raise ValueError("spike times must lie in (0, duration]")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    @property
    def mean_rate(self) -> float:
        """Events per second over the full recording."""
        return self.n_events / self.duration


def count_events(train: SpikeTrain, a: float, b: float) -> int:
    """Number of events in the half-open interval ``(a, b]``.

    The left-exclusive / right-inclusive convention guarantees that the
    counts of adjacent intervals never share an event, so the counts in
    the left and right window around a time t always add up.
    """
    if not (0.0 <= a <= b <= train.duration):
        raise ValueError(f"interval ({a}, {b}] outside [0, {train.duration}]")
    times = train.times
    return int(np.searchsorted(times, b, side="right")
               - np.searchsorted(times, a, side="right"))


def interspike_intervals(train: SpikeTrain) -> np.ndarray:
    """All inter-spike intervals, with the first one measured from time 0.

    Returns an empty array for an empty train.
    """
    times = train.times
    if times.size == 0:
        return np.empty(0, dtype=float)
    out = np.empty(times.size, dtype=float)
    out[0] = times[0]
    np.subtract(times[1:], times[:-1], out=out[1:])
    return out


def window_intervals(train: SpikeTrain, a: float, b: float) -> np.ndarray:
    """Inter-spike intervals fully contained in the window ``(a, b]``.

    An interval belongs to the window only when both of its endpoint
    spikes lie inside ``(a, b]``; intervals straddling a window border are
    dropped on both sides, so adjacent windows never share an interval.
    The interval from time 0 to the first spike has no spike at its left
    end and is therefore never part of any window.
    """
    if not (0.0 <= a < b <= train.duration):
        raise ValueError(f"invalid window ({a}, {b}] for duration "
                         f"{train.duration}")
    times = train.times
    lo = np.searchsorted(times, a, side="right")
    hi = np.searchsorted(times, b, side="right")
    if hi - lo < 2:
        return np.empty(0, dtype=float)
    return np.diff(times[lo:hi])


@dataclass(frozen=True)
class WindowSet:
    """An ascending set of half-window widths with a shared grid step.

    Every window h is evaluated on the grid ``t = h, h + dt, ...`` up to
    ``T - h``. The default step is ``min(windows) / 100``, fine enough
    because the count difference only changes at spike times.
    """

    windows: tuple[float, ...]
    grid_step: float | None = None

    def __post_init__(self):
        windows = tuple(float(h) for h in self.windows)
        if not windows:
            raise ValueError("window set must not be empty")
        if any(h <= 0 for h in windows):
            raise ValueError("window widths must be positive")
        if any(b <= a for a, b in zip(windows, windows[1:])):
            raise ValueError("window widths must be strictly ascending")
        step = self.grid_step
        if step is None:
            step = min(windows) / 100.0
        step = float(step)
        if step <= 0:
            raise ValueError("grid step must be positive")
        object.__setattr__(self, "windows", windows)
        object.__setattr__(self, "grid_step", step)

    @property
    def smallest(self) -> float:
        return self.windows[0]

    def check_duration(self, duration: float) -> None:
        if self.windows[-1] > duration / 2:
            raise ValueError(
                f"largest window {self.windows[-1]} exceeds half the "
                f"recording length {duration}")

    def grid(self, window: float, duration: float) -> np.ndarray:
        """Evaluation times ``[window, duration - window]`` for one h."""
        if window > duration / 2:
            raise ValueError(f"window {window} exceeds half the duration")
        n = int(np.floor((duration - 2 * window) / self.grid_step + 1e-9))
        return window + self.grid_step * np.arange(n + 1)


def as_window_set(windows, grid_step=None) -> WindowSet:
    """Coerce a WindowSet or a plain sequence of widths."""
    if isinstance(windows, WindowSet):
        if grid_step is not None and grid_step != windows.grid_step:
            return WindowSet(windows.windows, grid_step)
        return windows
    return WindowSet(tuple(windows), grid_step)


def read_spike_train(path) -> SpikeTrain:
    """Read the plain-text spike format: one ascending time per line.

    Lines starting with ``#`` are comments; a ``# T=<seconds>`` comment
    sets the recording length. Without it, the duration defaults to the
    last spike time rounded up to the next integer second.
    """
    times = []
    duration = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("T=") and duration is None:
                    try:
                        duration = float(body[2:])
                    except ValueError:
                        raise SpikeTrainFormatError(
                            path, lineno, f"bad duration header {body!r}")
                continue
            try:
                value = float(line)
            except ValueError:
                raise SpikeTrainFormatError(
                    path, lineno, f"not a number: {line!r}")
            if times and value <= times[-1]:
                raise SpikeTrainFormatError(
                    path, lineno, "spike times must be strictly increasing")
            times.append(value)
    if duration is None:
        if not times:
            raise SpikeTrainFormatError(
                path, 0, "empty file without a '# T=' header")
        duration = float(math.ceil(times[-1]))
    return SpikeTrain(np.asarray(times), duration, allow_empty=not times)


def write_spike_train(train: SpikeTrain, path, comments=()) -> None:
    """Write the plain-text spike format with a ``# T=`` header.

    Extra comment lines (without the leading ``#``) can be passed to
    embed provenance such as the generating configuration.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# T={train.duration!r}\n")
        for comment in comments:
            fh.write(f"# {comment}\n")
        for t in train.times:
            fh.write(f"{t!r}\n")
