"""Random energy-readout curves and their post-processing.

A readout curve is one candidate record E(t) of the monitored energy on a
uniform time grid.  Curves are drawn from a stationary Ornstein-Uhlenbeck
prior (exact discretization, so statistics do not depend on the step),
then smoothed with a running mean and classified by where they sit
relative to the midpoint between the two levels at the start and end of
the observation window.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigurationError

# relative tolerance for "this grid is uniform"
_GRID_RTOL = 1e-9


def _as_uniform_grid(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2:
        raise ConfigurationError("time grid must be 1-d with at least 2 points")
    if not np.all(np.isfinite(times)):
        raise ConfigurationError("time grid contains non-finite entries")
    steps = np.diff(times)
    dt = (times[-1] - times[0]) / (times.size - 1)
    if dt <= 0:
        raise ConfigurationError("time grid must be strictly increasing")
    if np.max(np.abs(steps - dt)) > _GRID_RTOL * max(1.0, abs(dt)):
        raise ConfigurationError("time grid must be uniformly spaced")
    return times


@dataclass
class ReadoutCurve:
    """One energy record E(t) on a uniform grid.

    Parameters
    ----------
    times : array_like
        Uniform, strictly increasing time grid.
    values : array_like
        Energy sample at each grid time, same length as `times`.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = _as_uniform_grid(self.times)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.times.shape:
            raise ConfigurationError("values and times must have the same shape")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("readout values contain non-finite entries")

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def dt(self) -> float:
        return (self.times[-1] - self.times[0]) / (self.times.size - 1)


@dataclass
class ReadoutProcess:
    """Stationary Ornstein-Uhlenbeck prior for readout curves.

    The process has mean `mean`, standard deviation `stddev` and
    exponential autocorrelation exp(-|t-t'| / correlation_time).  Samples
    are clipped to `bounds` after generation, which keeps rare excursions
    from dominating the weighting stage.

    Parameters
    ----------
    mean : float
        Stationary mean of the record.
    stddev : float
        Stationary standard deviation; zero gives the constant record.
    correlation_time : float
        Autocorrelation time, must be positive.
    bounds : (float, float)
        Clipping interval, must contain `mean`.
    """

    mean: float
    stddev: float
    correlation_time: float
    bounds: tuple[float, float]

    def __post_init__(self):
        self.mean = float(self.mean)
        self.stddev = float(self.stddev)
        self.correlation_time = float(self.correlation_time)
        lo, hi = (float(self.bounds[0]), float(self.bounds[1]))
        self.bounds = (lo, hi)
        if self.stddev < 0:
            raise ConfigurationError("stddev must be >= 0")
        if self.correlation_time <= 0:
            raise ConfigurationError("correlation_time must be > 0")
        if not lo < hi:
            raise ConfigurationError("bounds must satisfy lo < hi")
        if not lo <= self.mean <= hi:
            raise ConfigurationError("mean must lie inside bounds")

    @classmethod
    def from_levels(cls, e1: float, e2: float, pulse_duration: float) -> "ReadoutProcess":
        """Default prior for a two-level monitor.

        Centered between the levels, wide enough to visit both (stddev
        equal to the level spacing), correlated over a tenth of the drive
        pulse, clipped at three standard deviations.
        """
        e1, e2 = float(e1), float(e2)
        if e2 <= e1:
            raise ConfigurationError("need e1 < e2")
        if pulse_duration <= 0:
            raise ConfigurationError("pulse_duration must be > 0")
        mid = 0.5 * (e1 + e2)
        span = e2 - e1
        return cls(
            mean=mid,
            stddev=span,
            correlation_time=pulse_duration / 10.0,
            bounds=(mid - 3.0 * span, mid + 3.0 * span),
        )


def sample_readout(process: ReadoutProcess, times, rng: np.random.Generator) -> ReadoutCurve:
    """Draw one curve from the stationary OU prior on the given grid.

    Uses the exact one-step transition: x_{k+1} = m + (x_k - m) rho +
    s sqrt(1 - rho^2) xi with rho = exp(-dt/tau), so the discrete chain
    has exactly the stationary mean, variance and autocorrelation of the
    continuous process at the grid times.  Consumes a single block of
    n standard normals from `rng`.
    """
    times = _as_uniform_grid(times)
    n = times.size
    if process.stddev == 0.0:
        vals = np.full(n, process.mean)
        return ReadoutCurve(times, np.clip(vals, *process.bounds))
    dt = (times[-1] - times[0]) / (n - 1)
    rho = np.exp(-dt / process.correlation_time)
    z = rng.standard_normal(n)
    e = np.empty(n)
    e[0] = process.stddev * z[0]
    e[1:] = process.stddev * np.sqrt(1.0 - rho * rho) * z[1:]
    # x_k = sum_j rho^(k-j) e_j, i.e. AR(1) driven by e
    centered = lfilter([1.0], [1.0, -rho], e)
    vals = process.mean + centered
    return ReadoutCurve(times, np.clip(vals, *process.bounds))


def smooth_values(values: np.ndarray, dt: float, window: float) -> np.ndarray:
    """Running mean with half-width window/2, truncated at the edges.

    Interior points average 2k+1 samples with k = round((window/2)/dt);
    near the edges the average runs over whatever part of the window
    falls inside the record, so the first and last points are still
    genuine averages rather than raw samples.  Works along the last axis
    so a whole batch of records can be smoothed in one call.
    """
    values = np.asarray(values, dtype=float)
    if window < 0:
        raise ConfigurationError("smoothing window must be >= 0")
    k = int(round((0.5 * window) / dt))
    if k <= 0:
        return values.copy()
    n = values.shape[-1]
    csum = np.zeros(values.shape[:-1] + (n + 1,))
    np.cumsum(values, axis=-1, out=csum[..., 1:])
    idx = np.arange(n)
    lo = np.maximum(idx - k, 0)
    hi = np.minimum(idx + k, n - 1)
    return (csum[..., hi + 1] - csum[..., lo]) / (hi - lo + 1)


def smooth(curve: ReadoutCurve, window: float) -> ReadoutCurve:
    """Smoothed copy of a curve (running mean over `window`)."""
    return ReadoutCurve(curve.times, smooth_values(curve.values, curve.dt, window))


class ReadoutClass(Enum):
    """Coarse classification of a smoothed record by its endpoints.

    The digit pair gives (level at window start, level at window end),
    where level 1 means the smoothed record sits below the midpoint
    between the two energies and level 2 means at or above it.
    """

    E11 = "E11"
    E12 = "E12"
    E21 = "E21"
    E22 = "E22"


def classify(curve: ReadoutCurve, e_mid: float) -> ReadoutClass:
    """Classify a (smoothed) curve by endpoint levels relative to e_mid.

    Ties go to the upper level.
    """
    start = 1 if curve.values[0] < e_mid else 2
    end = 1 if curve.values[-1] < e_mid else 2
    return ReadoutClass(f"E{start}{end}")


def write_curve_csv(path, curve: ReadoutCurve, header_lines=()) -> None:
    """Write a curve as two-column CSV; values use full float precision."""
    with open(path, "w") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("time,energy\n")
        for t, v in zip(curve.times, curve.values):
            fh.write(f"{t:.17g},{v:.17g}\n")


def read_curve_csv(path) -> ReadoutCurve:
    """Read a curve written by `write_curve_csv`."""
    times = []
    values = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("time"):
                continue
            t, v = line.split(",")
            times.append(float(t))
            values.append(float(v))
    return ReadoutCurve(np.array(times), np.array(values))
