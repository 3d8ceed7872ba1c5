"""Weighted Monte Carlo ensembles of readout records.

Each record is a candidate energy curve drawn from a known sampling law,
integrated through the norm-decaying dynamics, smoothed and classified.
The monitor's probability density for a record is its final squared
norm, so ensemble averages are self-normalized importance-sampling
estimates with

    weight = prior(record) / sampler(record) * final_norm^2.

Two samplers are available.  "prior" draws records straight from the
OU prior, which is simple but wasteful once monitoring is strong: almost
all prior records stray from the levels and end up with negligible
weight.  "guided" draws from an exponentially tilted OU process whose
attractor follows the instantaneous level occupation of a cheap
provisional integration, which keeps proposals near the records the
monitor actually favours.  The tilt parameters come from the ground
state of the OU generator with quadratic killing, and the weights use
the exact transition densities of both processes, so the estimand is
unchanged; only the variance drops.

Randomness is organized so results are reproducible bit for bit for a
given master seed, independent of chunking into threads: record i draws
from its own generator seeded by (master_seed, domain, i).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dynamics import MeasurementConfig, Trajectory, _evolve_batch, substeps_for
from .errors import ConfigurationError
from .readout import (
    ReadoutClass,
    ReadoutCurve,
    ReadoutProcess,
    sample_readout,
    smooth_values,
)

# record classes in code order used throughout: 2*start + end, level 1 -> 0
_CLASS_ORDER = (ReadoutClass.E11, ReadoutClass.E12, ReadoutClass.E21, ReadoutClass.E22)

_DOMAIN_READOUT = 0
_DOMAIN_EVENTS = 1
_DOMAIN_BOOTSTRAP = 2


def record_stream(master_seed, domain: int, index: int) -> np.random.Generator:
    """Independent generator for one record, stable under chunking order."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(domain, index))
    )


def resolve_threads(threads=None) -> int:
    """Thread count from the argument or the FUZZWATCH_THREADS variable."""
    if threads is None:
        raw = os.environ.get("FUZZWATCH_THREADS", "").strip()
        if not raw:
            return 1
        try:
            threads = int(raw)
        except ValueError as exc:
            raise ConfigurationError(f"FUZZWATCH_THREADS must be an integer, got {raw!r}") from exc
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    return int(threads)


@dataclass
class GuidedLaw:
    """Tilted OU parameters for the guided sampler.

    The tilt is the ground-state transform of the OU generator with
    killing rate 2*kappa*(E - attractor)^2: relaxation speeds up from
    lam to lam_star, the stationary variance shrinks to var_star, and
    the process mean is pulled a fraction `pull` of the way from the
    prior mean toward the attractor.
    """

    lam: float
    lam_star: float
    var_star: float
    pull: float

    @classmethod
    def build(cls, process: ReadoutProcess, kappa: float) -> "GuidedLaw":
        lam = 1.0 / process.correlation_time
        sig2 = process.stddev**2
        if sig2 == 0.0:
            raise ConfigurationError("guided sampling needs a spread-out prior (stddev > 0)")
        a = 2.0 * kappa
        lam_star = math.sqrt(lam * lam + 4.0 * lam * sig2 * a)
        var_star = sig2 * lam / lam_star
        pull = 4.0 * a * sig2 * lam / lam_star**2
        return cls(lam=lam, lam_star=lam_star, var_star=var_star, pull=pull)


def _gauss_logpdf(x, mean, var):
    return -0.5 * ((x - mean) ** 2 / var + np.log(2.0 * math.pi * var))


def _provisional_step(a1, a2, v, h, substeps, ea, eb, kappa, e1, e2):
    """One renormalized RK4 grid step for the guidance integrator.

    Stage energies interpolate linearly between the step endpoints; this
    path only has to produce a sensible attractor, the official
    integration redoes the dynamics properly.
    """
    hs = h / substeps
    for j in range(substeps):
        f0 = j / substeps
        f1 = (j + 1) / substeps
        sa = ea + f0 * (eb - ea)
        sm = ea + 0.5 * (f0 + f1) * (eb - ea)
        sb = ea + f1 * (eb - ea)
        d1a = kappa * (e1 - sa) ** 2
        d2a = kappa * (e2 - sa) ** 2
        d1m = kappa * (e1 - sm) ** 2
        d2m = kappa * (e2 - sm) ** 2
        d1b = kappa * (e1 - sb) ** 2
        d2b = kappa * (e2 - sb) ** 2
        k1_1 = -1j * v * a2 - d1a * a1
        k1_2 = -1j * v * a1 - d2a * a2
        t1 = a1 + 0.5 * hs * k1_1
        t2 = a2 + 0.5 * hs * k1_2
        k2_1 = -1j * v * t2 - d1m * t1
        k2_2 = -1j * v * t1 - d2m * t2
        t1 = a1 + 0.5 * hs * k2_1
        t2 = a2 + 0.5 * hs * k2_2
        k3_1 = -1j * v * t2 - d1m * t1
        k3_2 = -1j * v * t1 - d2m * t2
        t1 = a1 + hs * k3_1
        t2 = a2 + hs * k3_2
        k4_1 = -1j * v * t2 - d1b * t1
        k4_2 = -1j * v * t1 - d2b * t2
        a1 = a1 + (hs / 6.0) * (k1_1 + 2.0 * (k2_1 + k3_1) + k4_1)
        a2 = a2 + (hs / 6.0) * (k1_2 + 2.0 * (k2_2 + k3_2) + k4_2)
    nrm = np.sqrt(a1.real**2 + a1.imag**2 + a2.real**2 + a2.imag**2)
    return a1 / nrm, a2 / nrm


def _sample_prior_chunk(process, grid, master_seed, indices):
    values = np.empty((len(indices), grid.size))
    for row, i in enumerate(indices):
        rng = record_stream(master_seed, _DOMAIN_READOUT, i)
        values[row] = sample_readout(process, grid, rng).values
    return values, np.zeros(len(indices))


def _sample_guided_chunk(process, config, law, substeps, master_seed, indices):
    """Tilted OU proposals plus exact log density ratio prior/proposal."""
    npts = config.n_steps + 1
    m = len(indices)
    zs = np.empty((m, npts))
    for row, i in enumerate(indices):
        rng = record_stream(master_seed, _DOMAIN_READOUT, i)
        zs[row] = rng.standard_normal(npts)

    h = config.dt
    mu = process.mean
    sig2 = process.stddev**2
    rho = math.exp(-law.lam * h)
    rho_s = math.exp(-law.lam_star * h)
    ivar = sig2 * (1.0 - rho * rho)
    ivar_s = law.var_star * (1.0 - rho_s * rho_s)
    ps = int(round((config.pulse_start - config.t1) / h))
    pe = int(round((config.pulse_end - config.t1) / h))

    a1 = np.full(m, complex(config.initial_state[0]))
    a2 = np.full(m, complex(config.initial_state[1]))
    p2 = np.abs(a2) ** 2
    attractor = config.e1 * (1.0 - p2) + config.e2 * p2

    values = np.empty((m, npts))
    center = mu + law.pull * (attractor - mu)
    values[:, 0] = center + math.sqrt(law.var_star) * zs[:, 0]
    log_ratio = _gauss_logpdf(values[:, 0], mu, sig2)
    log_ratio -= _gauss_logpdf(values[:, 0], center, law.var_star)

    for k in range(npts - 1):
        center = mu + law.pull * (attractor - mu)
        q_mean = center + (values[:, k] - center) * rho_s
        values[:, k + 1] = q_mean + math.sqrt(ivar_s) * zs[:, k + 1]
        p_mean = mu + (values[:, k] - mu) * rho
        log_ratio += _gauss_logpdf(values[:, k + 1], p_mean, ivar)
        log_ratio -= _gauss_logpdf(values[:, k + 1], q_mean, ivar_s)
        v = config.v0 if ps <= k < pe else 0.0
        a1, a2 = _provisional_step(a1, a2, v, h, substeps,
                                   values[:, k], values[:, k + 1],
                                   config.kappa, config.e1, config.e2)
        p2 = a2.real**2 + a2.imag**2
        attractor = config.e1 * (1.0 - p2) + config.e2 * p2

    return values, log_ratio


@dataclass
class EnsembleRecord:
    """One readout record with its integrated trajectory and weight."""

    index: int
    readout: ReadoutCurve
    smoothed: ReadoutCurve
    trajectory: Trajectory
    probability_density: float
    log_weight: float
    weight: float
    readout_class: ReadoutClass


class EnsembleResult:
    """Arrays and per-record views for one ensemble run.

    The heavy data live in flat arrays (weights, classes, populations,
    readout values); `record(i)` wraps row i in convenience objects.
    """

    def __init__(self, *, config, process, mode, master_seed, smoothing_window,
                 substeps, times, readout_values, smoothed_values, amps,
                 scale_logs, log_norms, populations, log_weights):
        self.config = config
        self.process = process
        self.mode = mode
        self.master_seed = master_seed
        self.smoothing_window = smoothing_window
        self.substeps = substeps
        self.times = times
        self.readout_values = readout_values
        self.smoothed_values = smoothed_values
        self._amps = amps
        self._scale_logs = scale_logs
        self.log_norms = log_norms
        self.populations = populations
        self.log_weights = log_weights
        # shifted so the largest weight is 1; all estimators self-normalize
        self.weights = np.exp(log_weights - np.max(log_weights))
        start = smoothed_values[:, 0] >= config.e_mid
        end = smoothed_values[:, -1] >= config.e_mid
        self.class_codes = (2 * start + end).astype(np.int64)
        self._boot_idx = None

    @property
    def n(self) -> int:
        return self.log_weights.size

    @property
    def final_p2(self) -> np.ndarray:
        return self.populations[:, -1]

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))

    @property
    def ess(self) -> float:
        return effective_sample_size(self.log_weights)

    def record(self, i: int) -> EnsembleRecord:
        slog = self._scale_logs[i]
        physical = self._amps[i] * np.exp(slog)[:, None]
        traj = Trajectory(
            times=self.times,
            amplitudes=physical,
            norms=np.exp(self.log_norms[i]),
            log_norms=self.log_norms[i],
            populations=self.populations[i],
            substeps=self.substeps,
        )
        lw_density = 2.0 * self.log_norms[i, -1]
        return EnsembleRecord(
            index=i,
            readout=ReadoutCurve(self.times, self.readout_values[i]),
            smoothed=ReadoutCurve(self.times, self.smoothed_values[i]),
            trajectory=traj,
            probability_density=math.exp(lw_density),
            log_weight=float(self.log_weights[i]),
            weight=float(math.exp(self.log_weights[i])),
            readout_class=_CLASS_ORDER[self.class_codes[i]],
        )

    def records(self):
        return [self.record(i) for i in range(self.n)]

    def bootstrap_indices(self, reps: int = 200) -> np.ndarray:
        if self._boot_idx is None or self._boot_idx.shape[0] < reps:
            rng = record_stream(self.master_seed, _DOMAIN_BOOTSTRAP, 0)
            self._boot_idx = rng.integers(0, self.n, size=(reps, self.n))
        return self._boot_idx[:reps]


def effective_sample_size(log_weights) -> float:
    lw = np.asarray(log_weights, dtype=float)
    w = np.exp(lw - np.max(lw))
    s = np.sum(w)
    return float(s * s / np.sum(w * w))


def run_ensemble(config: MeasurementConfig, process: ReadoutProcess | None = None,
                 n: int = 1000, master_seed=0, *, mode: str = "guided",
                 smoothing_window: float | None = None, substeps: int | None = None,
                 threads: int | None = None, chunk_size: int = 512) -> EnsembleResult:
    """Sample, integrate, smooth and classify n readout records.

    mode "prior" samples records from the OU prior itself; "guided"
    (default) samples from the tilted proposal and corrects the weights
    exactly.  The two agree in expectation; guided keeps the effective
    sample size usable at strong monitoring.

    Results are independent of `threads` and `chunk_size`: record i is
    always generated from its own seed stream.
    """
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if mode not in ("prior", "guided"):
        raise ConfigurationError(f"unknown sampling mode {mode!r}")
    if process is None:
        dur = config.pulse_duration if config.pulse_duration > 0 else 0.5 * config.rabi_period
        process = ReadoutProcess.from_levels(config.e1, config.e2, dur)
    if smoothing_window is None:
        smoothing_window = config.pulse_duration if config.pulse_duration > 0 else 0.5 * config.rabi_period
    threads = resolve_threads(threads)
    grid = config.grid()
    npts = grid.size
    if substeps is None:
        off = max(abs(process.bounds[0] - config.e1), abs(process.bounds[0] - config.e2),
                  abs(process.bounds[1] - config.e1), abs(process.bounds[1] - config.e2))
        substeps = substeps_for(config.kappa, config.dt, off)
    law = GuidedLaw.build(process, config.kappa) if mode == "guided" else None

    readout_values = np.empty((n, npts))
    log_ratios = np.empty(n)
    amps = np.empty((n, npts, 2), dtype=complex)
    scale_logs = np.empty((n, npts))

    spans = [(s, min(s + chunk_size, n)) for s in range(0, n, chunk_size)]

    def work(span):
        lo, hi = span
        idx = range(lo, hi)
        if mode == "prior":
            vals, ratio = _sample_prior_chunk(process, grid, master_seed, idx)
        else:
            vals, ratio = _sample_guided_chunk(process, config, law, substeps,
                                               master_seed, idx)
        a, s = _evolve_batch(vals, config, substeps)
        return lo, hi, vals, ratio, a, s

    if threads == 1:
        parts = [work(sp) for sp in spans]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, spans))
    for lo, hi, vals, ratio, a, s in parts:
        readout_values[lo:hi] = vals
        log_ratios[lo:hi] = ratio
        amps[lo:hi] = a
        scale_logs[lo:hi] = s

    nrm2 = np.abs(amps[:, :, 0]) ** 2 + np.abs(amps[:, :, 1]) ** 2
    log_norms = 0.5 * np.log(nrm2) + scale_logs
    populations = np.abs(amps[:, :, 1]) ** 2 / nrm2
    log_weights = log_ratios + 2.0 * log_norms[:, -1]
    smoothed = smooth_values(readout_values, config.dt, smoothing_window)

    return EnsembleResult(
        config=config, process=process, mode=mode, master_seed=master_seed,
        smoothing_window=smoothing_window, substeps=substeps, times=grid,
        readout_values=readout_values, smoothed_values=smoothed, amps=amps,
        scale_logs=scale_logs, log_norms=log_norms, populations=populations,
        log_weights=log_weights,
    )


# -- estimators --------------------------------------------------------------


def class_probabilities(result: EnsembleResult, bootstrap: int = 200):
    """Weighted probability of each readout class, with bootstrap errors.

    Returns {ReadoutClass: (p, se)}; the four p sum to one exactly.
    """
    w = result.weights
    codes = result.class_codes
    sums = np.bincount(codes, weights=w, minlength=4)
    probs = sums / np.sum(sums)
    ses = np.zeros(4)
    if bootstrap > 0:
        idx = result.bootstrap_indices(bootstrap)
        reps = np.empty((bootstrap, 4))
        for b in range(bootstrap):
            rows = idx[b]
            s = np.bincount(codes[rows], weights=w[rows], minlength=4)
            reps[b] = s / np.sum(s)
        ses = reps.std(axis=0, ddof=1)
    return {cls: (float(probs[k]), float(ses[k])) for k, cls in enumerate(_CLASS_ORDER)}


def mean_final_p2(result: EnsembleResult, readout_class: ReadoutClass | None = None,
                  bootstrap: int = 200):
    """Weighted mean of the final upper-level occupation, with error.

    Restricting to a readout class conditions on the classifier output.
    Returns (mean, se); mean is nan when the class never occurs.
    """
    w = result.weights.copy()
    if readout_class is not None:
        code = _CLASS_ORDER.index(readout_class)
        w = np.where(result.class_codes == code, w, 0.0)
    x = result.final_p2
    tot = np.sum(w)
    if tot == 0.0:
        return math.nan, math.nan
    mean = float(np.sum(w * x) / tot)
    se = 0.0
    if bootstrap > 0:
        idx = result.bootstrap_indices(bootstrap)
        reps = np.empty(bootstrap)
        for b in range(bootstrap):
            rows = idx[b]
            tw = np.sum(w[rows])
            reps[b] = np.sum(w[rows] * x[rows]) / tw if tw > 0 else np.nan
        good = reps[np.isfinite(reps)]
        se = float(good.std(ddof=1)) if good.size > 1 else math.nan
    return mean, se


def mean_population_curve(result: EnsembleResult,
                          readout_class: ReadoutClass | None = None):
    """Weighted average upper-level occupation versus time.

    Returns (times, curve).
    """
    w = result.weights.copy()
    if readout_class is not None:
        code = _CLASS_ORDER.index(readout_class)
        w = np.where(result.class_codes == code, w, 0.0)
    tot = np.sum(w)
    if tot == 0.0:
        return result.times, np.full(result.times.size, np.nan)
    return result.times, (w @ result.populations) / tot


# -- density grids -----------------------------------------------------------


@dataclass
class DensityGrid:
    """Weighted occupancy of (time, value) cells.

    mass[iy, it] is the total record weight deposited in that cell; each
    record spreads its weight evenly over the grid samples inside a time
    column, so every column of `mass` sums to the same total weight.
    """

    field: str
    t_edges: np.ndarray
    y_edges: np.ndarray
    mass: np.ndarray
    total_weight: float

    def column_normalized(self) -> np.ndarray:
        """Mass scaled so each time column peaks at 1 (for image export)."""
        peaks = self.mass.max(axis=0)
        safe = np.where(peaks > 0, peaks, 1.0)
        return self.mass / safe


def density_grid(result: EnsembleResult, field: str = "readout",
                 t_bins: int = 100, y_bins: int = 100,
                 y_range: tuple[float, float] | None = None,
                 readout_class: ReadoutClass | None = None) -> DensityGrid:
    """Histogram record mass over (time, value) cells.

    field "readout" bins the smoothed records; "population" bins the
    upper-level occupation.  Values outside y_range land in the edge
    bins, times exactly at the window end in the last column.
    """
    if field == "readout":
        data = result.smoothed_values
        if y_range is None:
            mid, span = result.config.e_mid, result.config.delta_e
            y_range = (mid - 2.0 * span, mid + 2.0 * span)
    elif field == "population":
        data = result.populations
        if y_range is None:
            y_range = (0.0, 1.0)
    else:
        raise ConfigurationError(f"unknown density field {field!r}")
    w = result.weights.copy()
    if readout_class is not None:
        code = _CLASS_ORDER.index(readout_class)
        w = np.where(result.class_codes == code, w, 0.0)

    t_edges = np.linspace(result.times[0], result.times[-1], t_bins + 1)
    y_edges = np.linspace(y_range[0], y_range[1], y_bins + 1)
    tb = np.clip(np.searchsorted(t_edges, result.times, side="right") - 1, 0, t_bins - 1)
    col_counts = np.bincount(tb, minlength=t_bins)
    yb = np.clip(np.searchsorted(y_edges, data, side="right") - 1, 0, y_bins - 1)
    # each sample deposits weight / (samples in its column)
    samp_w = (w[:, None] / col_counts[tb][None, :])
    flat = (yb * t_bins + tb[None, :]).ravel()
    mass = np.bincount(flat, weights=samp_w.ravel(), minlength=y_bins * t_bins)
    return DensityGrid(field=field, t_edges=t_edges, y_edges=y_edges,
                       mass=mass.reshape(y_bins, t_bins),
                       total_weight=float(np.sum(w)))


def class_conditional_grids(result: EnsembleResult, field: str = "readout",
                            t_bins: int = 100, y_bins: int = 100,
                            y_range: tuple[float, float] | None = None):
    """One DensityGrid per readout class, on a shared binning."""
    return {cls: density_grid(result, field=field, t_bins=t_bins, y_bins=y_bins,
                              y_range=y_range, readout_class=cls)
            for cls in _CLASS_ORDER}


# -- comparisons and scans ---------------------------------------------------


def weighted_ks_distance(values_a, weights_a, values_b, weights_b) -> float:
    """Kolmogorov distance between two weighted empirical distributions."""
    xa = np.asarray(values_a, dtype=float)
    xb = np.asarray(values_b, dtype=float)
    wa = np.asarray(weights_a, dtype=float)
    wb = np.asarray(weights_b, dtype=float)
    oa = np.argsort(xa, kind="stable")
    ob = np.argsort(xb, kind="stable")
    xa, wa = xa[oa], wa[oa]
    xb, wb = xb[ob], wb[ob]
    ca = np.cumsum(wa) / np.sum(wa)
    cb = np.cumsum(wb) / np.sum(wb)
    points = np.concatenate([xa, xb])
    fa = np.concatenate([np.zeros(1), ca])[np.searchsorted(xa, points, side="right")]
    fb = np.concatenate([np.zeros(1), cb])[np.searchsorted(xb, points, side="right")]
    return float(np.max(np.abs(fa - fb)))


def regime_scan(config: MeasurementConfig, ratios, n: int = 10_000, master_seed=0,
                *, process: ReadoutProcess | None = None, mode: str = "guided",
                threads: int | None = None, bootstrap: int = 200):
    """Mean final upper-level occupation across monitoring strengths.

    ratios are fuzziness ratios 4*pi*T_lr/T_Rabi.  All points reuse the
    same seed streams (common random numbers), which sharpens
    comparisons along the scan.  Returns a list of row dicts.
    """
    rows = []
    for ratio in ratios:
        cfg = config.with_fuzziness(ratio)
        res = run_ensemble(cfg, process=process, n=n, master_seed=master_seed,
                           mode=mode, threads=threads)
        mean, se = mean_final_p2(res, bootstrap=bootstrap)
        rows.append({
            "fuzziness_ratio": float(ratio),
            "kappa": cfg.kappa,
            "mean_final_p2": mean,
            "se": se,
            "ess": res.ess,
            "n": n,
        })
    return rows
