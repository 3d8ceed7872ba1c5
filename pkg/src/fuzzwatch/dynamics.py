"""Norm-decaying dynamics of a driven two-level system under fuzzy monitoring.

For a candidate energy record E(t) the (unnormalized) amplitudes of the
two levels obey, in the frame rotating with the bare level phases,

    dC1/dt = -i v(t) C2 - kappa (e1 - E(t))^2 C1
    dC2/dt = -i v(t) C1 - kappa (e2 - E(t))^2 C2

where v(t) is the resonant drive envelope (a flat pulse here) and kappa
sets how sharply the monitor punishes records that stray from whichever
level the atom occupies.  The squared norm of the final state is the
probability density assigned to that record.

The integrator is a fixed-step RK4 on the readout grid.  The drive is
decided once per step (a step is driven when its midpoint falls inside
the pulse; pulse edges must sit on grid points), which keeps the flat
pulse exact instead of smearing it across stage evaluations.  Readout
values at stage times come from a local cubic through the neighbouring
samples, so step-halving studies on smooth records show clean fourth
order behaviour.  Strong monitoring is handled by automatic substepping
and by rescaling amplitudes long before they underflow; the log of the
accumulated scale is tracked so the final norm is available in log form
at any monitoring strength.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError
from .readout import ReadoutCurve

# rescale work amplitudes once their squared norm drops below this
_RESCALE_FLOOR = 1e-240
# target per-substep damping exponent; RK4 is stable up to ~2.785
_SUBSTEP_TARGET = 0.8
# safety margin for cubic interpolation overshoot between samples
_OVERSHOOT = 1.3


@dataclass
class AtomState:
    """Two complex level amplitudes at a time.

    Not forced to unit norm; use `normalized()` when one is needed.
    """

    c1: complex
    c2: complex
    t: float = 0.0

    def __post_init__(self):
        self.c1 = complex(self.c1)
        self.c2 = complex(self.c2)
        self.t = float(self.t)
        if not (np.isfinite(self.c1) and np.isfinite(self.c2) and np.isfinite(self.t)):
            raise ConfigurationError("state entries must be finite")

    @property
    def norm_sq(self) -> float:
        return abs(self.c1) ** 2 + abs(self.c2) ** 2

    @property
    def p1(self) -> float:
        return abs(self.c1) ** 2 / self.norm_sq

    @property
    def p2(self) -> float:
        return abs(self.c2) ** 2 / self.norm_sq

    def normalized(self) -> "AtomState":
        n = math.sqrt(self.norm_sq)
        if n == 0.0:
            raise ConfigurationError("cannot normalize the zero state")
        return AtomState(self.c1 / n, self.c2 / n, self.t)


def kappa_for_fuzziness(ratio: float, rabi_period: float, delta_e: float) -> float:
    """Monitoring strength giving 4*pi*T_lr / T_Rabi = ratio.

    T_lr = 1 / (kappa * delta_e^2) is the time the monitor needs to tell
    the two levels apart.  ratio = inf maps to kappa = 0 (no monitoring).
    """
    if ratio <= 0:
        raise ConfigurationError("fuzziness ratio must be > 0")
    if math.isinf(ratio):
        return 0.0
    return 4.0 * math.pi / (ratio * rabi_period * delta_e**2)


@dataclass
class MeasurementConfig:
    """Geometry and strength of one monitored drive experiment.

    Times are in units where the Rabi period of the default drive is 1.
    The observation window [t1, t2] must be an integer number of steps,
    and the pulse edges must land on grid points because the integrator
    treats each step as wholly driven or wholly free.

    Parameters
    ----------
    e1, e2 : float
        Level energies, e1 < e2.
    v0 : float
        Drive amplitude during the pulse (Rabi period pi / v0).
    pulse_start, pulse_end : float
        Flat drive pulse; equal values mean no drive.
    t1, t2 : float
        Observation window, containing the pulse.
    kappa : float
        Monitoring strength, >= 0.
    dt : float
        Integration and readout step, at most rabi_period / 200.
    initial_state : (complex, complex)
        Level amplitudes at t1, must be normalized.
    """

    e1: float = -0.5
    e2: float = 0.5
    v0: float = math.pi
    pulse_start: float = 0.0
    pulse_end: float = 0.5
    t1: float = -0.25
    t2: float = 0.75
    kappa: float = 2.4 * math.pi
    dt: float = 1.0 / 400.0
    initial_state: tuple = (1.0 + 0.0j, 0.0j)

    def __post_init__(self):
        if not self.e2 > self.e1:
            raise ConfigurationError("need e1 < e2")
        if self.v0 <= 0:
            raise ConfigurationError("v0 must be > 0")
        if self.kappa < 0:
            raise ConfigurationError("kappa must be >= 0")
        if self.dt <= 0:
            raise ConfigurationError("dt must be > 0")
        if not (self.t1 <= self.pulse_start <= self.pulse_end <= self.t2):
            raise ConfigurationError("need t1 <= pulse_start <= pulse_end <= t2")
        if self.dt > self.rabi_period / 200.0 * (1 + 1e-12):
            raise ConfigurationError("dt must resolve the drive: dt <= rabi_period/200")
        for name, x in (("t2", self.t2 - self.t1),
                        ("pulse_start", self.pulse_start - self.t1),
                        ("pulse_end", self.pulse_end - self.t1)):
            k = (x) / self.dt
            if abs(k - round(k)) > 1e-9 * max(1.0, abs(k)):
                raise ConfigurationError(f"{name} must sit on the time grid")
        c1, c2 = complex(self.initial_state[0]), complex(self.initial_state[1])
        nrm = abs(c1) ** 2 + abs(c2) ** 2
        if abs(nrm - 1.0) > 1e-9:
            raise ConfigurationError("initial_state must be normalized")
        self.initial_state = (c1, c2)
        dur = self.pulse_end - self.pulse_start
        # full inversion needs v0 * duration = pi/2 (populations go as sin^2(v0 t))
        if dur > 0 and abs(2.0 * self.v0 * dur - math.pi) > 1e-9 * math.pi:
            warnings.warn("drive pulse is not a pi pulse", UserWarning, stacklevel=2)

    # -- derived quantities ------------------------------------------------

    @property
    def delta_e(self) -> float:
        return self.e2 - self.e1

    @property
    def e_mid(self) -> float:
        return 0.5 * (self.e1 + self.e2)

    @property
    def rabi_period(self) -> float:
        return math.pi / self.v0

    @property
    def pulse_duration(self) -> float:
        return self.pulse_end - self.pulse_start

    @property
    def level_resolution_time(self) -> float:
        if self.kappa == 0.0:
            return math.inf
        return 1.0 / (self.kappa * self.delta_e**2)

    @property
    def fuzziness_ratio(self) -> float:
        """4*pi*T_lr / T_Rabi; large means weak monitoring."""
        if self.kappa == 0.0:
            return math.inf
        return 4.0 * math.pi * self.level_resolution_time / self.rabi_period

    @property
    def n_steps(self) -> int:
        return int(round((self.t2 - self.t1) / self.dt))

    def grid(self) -> np.ndarray:
        return self.t1 + self.dt * np.arange(self.n_steps + 1)

    def with_fuzziness(self, ratio: float) -> "MeasurementConfig":
        """Copy of this config with kappa set from the fuzziness ratio."""
        return replace(self, kappa=kappa_for_fuzziness(ratio, self.rabi_period, self.delta_e))

    def drive_amplitude(self, t: float) -> float:
        """Pointwise envelope (closed pulse interval); reference only.

        The integrator itself gates whole steps by their midpoints.
        """
        return self.v0 if self.pulse_start <= t <= self.pulse_end else 0.0


def two_level_rhs(amps, t: float, config: MeasurementConfig, e_readout: float) -> np.ndarray:
    """Right-hand side of the rotating-frame amplitude equations."""
    c1, c2 = amps
    v = config.drive_amplitude(t)
    d1 = -1j * v * c2 - config.kappa * (config.e1 - e_readout) ** 2 * c1
    d2 = -1j * v * c1 - config.kappa * (config.e2 - e_readout) ** 2 * c2
    return np.array([d1, d2])


def general_rhs(psi, h0_diag, v_matrix, kappa: float, e_readout: float) -> np.ndarray:
    """Lab-frame right-hand side for an n-level system.

    d psi/dt = -i (H0 + V) psi - kappa (H0 - E)^2 psi with diagonal H0.
    """
    psi = np.asarray(psi, dtype=complex)
    h0 = np.asarray(h0_diag, dtype=float)
    damp = kappa * (h0 - e_readout) ** 2
    return -1j * (h0 * psi + np.asarray(v_matrix) @ psi) - damp * psi


def _cubic_coeffs(values: np.ndarray):
    """Per-step Catmull-Rom coefficients for readout samples.

    values has shape (m, n+1); returns four (m, n) arrays c0..c3 so the
    record inside step i is c0 + c1*th + c2*th^2 + c3*th^3, th in [0, 1].
    End steps use cubic-extrapolated ghost samples to keep full order.
    """
    m, npts = values.shape
    ext = np.empty((m, npts + 2))
    ext[:, 1:-1] = values
    if npts >= 4:
        ext[:, 0] = 4 * values[:, 0] - 6 * values[:, 1] + 4 * values[:, 2] - values[:, 3]
        ext[:, -1] = 4 * values[:, -1] - 6 * values[:, -2] + 4 * values[:, -3] - values[:, -4]
    else:
        ext[:, 0] = values[:, 0]
        ext[:, -1] = values[:, -1]
    a = ext[:, :-3]   # E_{i-1}
    b = ext[:, 1:-2]  # E_i
    c = ext[:, 2:-1]  # E_{i+1}
    d = ext[:, 3:]    # E_{i+2}
    c0 = b
    c1 = 0.5 * (c - a)
    c2 = 0.5 * (2 * a - 5 * b + 4 * c - d)
    c3 = 0.5 * (3 * (b - c) + d - a)
    return c0, c1, c2, c3


def substeps_for(kappa: float, dt: float, max_offset: float) -> int:
    """Substep count keeping the stiff damping term well inside RK4 stability."""
    z = kappa * dt * (_OVERSHOOT * max_offset) ** 2
    return max(1, int(math.ceil(z / _SUBSTEP_TARGET)))


@dataclass
class Trajectory:
    """Integrated history for one readout record.

    `amplitudes` are the physical (decaying) amplitudes and can flush to
    zero under very strong monitoring; `populations` and
    `final_log_norm` stay meaningful there.
    """

    times: np.ndarray
    amplitudes: np.ndarray      # (n+1, 2) complex, physical scale
    norms: np.ndarray           # (n+1,) physical norm, exp of log_norms
    log_norms: np.ndarray       # (n+1,) log of the state norm
    populations: np.ndarray     # (n+1,) occupation of the upper level
    substeps: int = 1

    @property
    def final_log_norm(self) -> float:
        return float(self.log_norms[-1])

    def state(self, i: int) -> AtomState:
        c1, c2 = self.amplitudes[i]
        n = math.hypot(abs(c1), abs(c2))
        if n == 0.0:
            raise ConfigurationError("amplitudes underflowed; state unavailable")
        return AtomState(c1 / n, c2 / n, self.times[i])


def readout_probability(traj: Trajectory) -> float:
    """Probability density the monitor assigns to the record: final norm^2."""
    return math.exp(2.0 * traj.final_log_norm)


def _evolve_batch(values: np.ndarray, config: MeasurementConfig, substeps: int):
    """Integrate a batch of readout records on the config grid.

    values : (m, n+1) readout samples.
    Returns (amps, scale_logs): work amplitudes (m, n+1, 2) kept near unit
    norm by rescaling, and the accumulated log scale (m, n+1) so that the
    physical amplitude is amps * exp(scale_logs).
    """
    m, npts = values.shape
    n = npts - 1
    h = config.dt
    kappa = config.kappa
    e1, e2, v0 = config.e1, config.e2, config.v0
    ps = int(round((config.pulse_start - config.t1) / h))
    pe = int(round((config.pulse_end - config.t1) / h))
    s = int(substeps)
    hs = h / s

    c0, c1co, c2co, c3co = _cubic_coeffs(values)

    amps = np.empty((m, npts, 2), dtype=complex)
    scale_logs = np.zeros((m, npts))
    a1 = np.full(m, complex(config.initial_state[0]))
    a2 = np.full(m, complex(config.initial_state[1]))
    amps[:, 0, 0] = a1
    amps[:, 0, 1] = a2
    slog = np.zeros(m)

    # stage offsets within a step, reused across substeps
    theta = np.empty(2 * s + 1)
    theta[:] = np.arange(2 * s + 1) / (2.0 * s)

    for i in range(n):
        v = v0 if ps <= i < pe else 0.0
        b0 = c0[:, i]
        b1 = c1co[:, i]
        b2 = c2co[:, i]
        b3 = c3co[:, i]
        # readout at all substep stage points: (m, 2s+1)
        e_stage = b0[:, None] + theta * (b1[:, None] + theta * (b2[:, None] + theta * b3[:, None]))
        for j in range(s):
            ea = e_stage[:, 2 * j]
            em = e_stage[:, 2 * j + 1]
            eb = e_stage[:, 2 * j + 2]
            da_1 = kappa * (e1 - ea) ** 2
            da_2 = kappa * (e2 - ea) ** 2
            dm_1 = kappa * (e1 - em) ** 2
            dm_2 = kappa * (e2 - em) ** 2
            db_1 = kappa * (e1 - eb) ** 2
            db_2 = kappa * (e2 - eb) ** 2

            k1_1 = -1j * v * a2 - da_1 * a1
            k1_2 = -1j * v * a1 - da_2 * a2
            t1_1 = a1 + 0.5 * hs * k1_1
            t1_2 = a2 + 0.5 * hs * k1_2
            k2_1 = -1j * v * t1_2 - dm_1 * t1_1
            k2_2 = -1j * v * t1_1 - dm_2 * t1_2
            t2_1 = a1 + 0.5 * hs * k2_1
            t2_2 = a2 + 0.5 * hs * k2_2
            k3_1 = -1j * v * t2_2 - dm_1 * t2_1
            k3_2 = -1j * v * t2_1 - dm_2 * t2_2
            t3_1 = a1 + hs * k3_1
            t3_2 = a2 + hs * k3_2
            k4_1 = -1j * v * t3_2 - db_1 * t3_1
            k4_2 = -1j * v * t3_1 - db_2 * t3_2

            a1 = a1 + (hs / 6.0) * (k1_1 + 2.0 * (k2_1 + k3_1) + k4_1)
            a2 = a2 + (hs / 6.0) * (k1_2 + 2.0 * (k2_2 + k3_2) + k4_2)

        nrm2 = a1.real**2 + a1.imag**2 + a2.real**2 + a2.imag**2
        low = nrm2 < _RESCALE_FLOOR
        if np.any(low):
            good = low & (nrm2 > 0.0)
            fac = np.ones(m)
            fac[good] = 1.0 / np.sqrt(nrm2[good])
            a1 = a1 * fac
            a2 = a2 * fac
            slog = slog + np.where(good, 0.5 * np.log(np.where(good, nrm2, 1.0)), 0.0)
        amps[:, i + 1, 0] = a1
        amps[:, i + 1, 1] = a2
        scale_logs[:, i + 1] = slog

    return amps, scale_logs


def _trajectory_from_batch(amps_row, slog_row, grid, substeps) -> Trajectory:
    nrm2 = np.abs(amps_row[:, 0]) ** 2 + np.abs(amps_row[:, 1]) ** 2
    log_norms = 0.5 * np.log(nrm2) + slog_row
    populations = np.abs(amps_row[:, 1]) ** 2 / nrm2
    physical = amps_row * np.exp(slog_row)[:, None]
    return Trajectory(
        times=grid,
        amplitudes=physical,
        norms=np.exp(log_norms),
        log_norms=log_norms,
        populations=populations,
        substeps=substeps,
    )


def evolve(config: MeasurementConfig, readout: ReadoutCurve, substeps: int | None = None) -> Trajectory:
    """Integrate one readout record; returns the full Trajectory.

    substeps=None picks a count from the record's actual excursions so
    the stiff damping term stays well inside the RK4 stability region.
    """
    grid = config.grid()
    if readout.n != grid.size or np.max(np.abs(readout.times - grid)) > 1e-9:
        raise ConfigurationError("readout grid does not match the config grid")
    if substeps is None:
        off = max(np.max(np.abs(readout.values - config.e1)),
                  np.max(np.abs(readout.values - config.e2)))
        substeps = substeps_for(config.kappa, config.dt, off)
    amps, slogs = _evolve_batch(readout.values[None, :], config, substeps)
    return _trajectory_from_batch(amps[0], slogs[0], grid, substeps)


def evolve_general(h0_diag, v_of_t, kappa: float, readout: ReadoutCurve, psi0, substeps: int = 1):
    """Lab-frame RK4 for an n-level system with a smooth drive matrix.

    v_of_t(t) must return the (Hermitian) drive matrix and must be smooth
    over each step: stages are evaluated at true stage times, so a drive
    that switches discontinuously mid-grid will cost integration order.
    Returns (times, psis) with psis of shape (n+1, dim).  No rescaling is
    done here; intended for moderate kappa cross-checks and demos.
    """
    times = readout.times
    values = readout.values
    n = times.size - 1
    h = readout.dt
    hs = h / substeps
    h0 = np.asarray(h0_diag, dtype=float)
    psi = np.asarray(psi0, dtype=complex).copy()
    if psi.shape != h0.shape:
        raise ConfigurationError("psi0 and h0_diag must have the same length")
    psis = np.empty((n + 1, psi.size), dtype=complex)
    psis[0] = psi

    c0, c1co, c2co, c3co = _cubic_coeffs(values[None, :])

    def rhs(p, t, e):
        damp = kappa * (h0 - e) ** 2
        return -1j * (h0 * p + v_of_t(t) @ p) - damp * p

    for i in range(n):
        b0, b1, b2, b3 = c0[0, i], c1co[0, i], c2co[0, i], c3co[0, i]
        for j in range(substeps):
            t0 = times[i] + j * hs
            th0 = j / substeps
            thm = (j + 0.5) / substeps
            th1 = (j + 1) / substeps
            ea = b0 + th0 * (b1 + th0 * (b2 + th0 * b3))
            em = b0 + thm * (b1 + thm * (b2 + thm * b3))
            eb = b0 + th1 * (b1 + th1 * (b2 + th1 * b3))
            k1 = rhs(psi, t0, ea)
            k2 = rhs(psi + 0.5 * hs * k1, t0 + 0.5 * hs, em)
            k3 = rhs(psi + 0.5 * hs * k2, t0 + 0.5 * hs, em)
            k4 = rhs(psi + hs * k3, t0 + hs, eb)
            psi = psi + (hs / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        psis[i + 1] = psi

    return times, psis
