"""Key-value config files, run manifests, and artifact writers.

Configs are flat text: one `key = value` per line, `#` starts a comment.
Every artifact the command line emits carries the run manifest as
`# key: value` header lines, so any file can be traced back to the
inputs that produced it.  Floats are written with %.17g, which
round-trips doubles exactly; re-reading an emitted CSV reproduces the
in-memory arrays bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .dynamics import MeasurementConfig
from .ensemble import _CLASS_ORDER, DensityGrid
from .errors import ConfigurationError
from .readout import ReadoutProcess
from .scattering import ScatteringSetup


def parse_config_file(path) -> dict:
    """Read a flat key-value file into an ordered {key: raw string} dict."""
    values = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            val = val.strip()
            if not key:
                raise ConfigurationError(f"{path}:{lineno}: empty key")
            if key in values:
                raise ConfigurationError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = val
    return values


class ConfigMap:
    """Typed, consumed-key view of a parsed config file.

    take_* methods pop keys so that `finish()` can reject typos: any key
    nobody asked for is an error naming the key and the file.
    """

    def __init__(self, values: dict, source: str):
        self.values = dict(values)
        self.source = source

    def _take(self, key, cast, kind, default):
        if key not in self.values:
            return default
        raw = self.values.pop(key)
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigurationError(
                f"{self.source}: key {key!r} must be {kind}, got {raw!r}") from exc

    def take_float(self, key, default=None):
        return self._take(key, float, "a number", default)

    def take_int(self, key, default=None):
        return self._take(key, int, "an integer", default)

    def take_complex(self, key, default=None):
        return self._take(key, complex, "a complex number like 1+0j", default)

    def take_str(self, key, default=None):
        return self._take(key, str, "a string", default)

    def finish(self):
        if self.values:
            stray = ", ".join(sorted(self.values))
            raise ConfigurationError(f"{self.source}: unknown key(s): {stray}")


@dataclass
class RunSettings:
    """A measurement config plus the optional prior/smoothing overrides."""

    config: MeasurementConfig
    process: ReadoutProcess | None
    smoothing_window: float | None


def load_run_settings(path) -> RunSettings:
    """Measurement run file -> RunSettings.

    Recognized keys (all optional; times in drive-period units):
    e1, e2, v0, pulse_start, pulse_end, t1, t2, dt, kappa OR
    fuzziness_ratio, initial_c1, initial_c2, smoothing_window, and the
    readout-prior overrides prior_mean, prior_stddev,
    prior_correlation_time, prior_bound_lo, prior_bound_hi.
    """
    cm = ConfigMap(parse_config_file(path), str(path))
    base = MeasurementConfig()
    fields = {}
    for key in ("e1", "e2", "v0", "pulse_start", "pulse_end", "t1", "t2",
                "dt", "kappa"):
        val = cm.take_float(key)
        if val is not None:
            fields[key] = val
    ratio = cm.take_float("fuzziness_ratio")
    if ratio is not None and "kappa" in fields:
        raise ConfigurationError(
            f"{path}: give kappa or fuzziness_ratio, not both")
    c1 = cm.take_complex("initial_c1")
    c2 = cm.take_complex("initial_c2")
    if (c1 is None) != (c2 is None):
        raise ConfigurationError(
            f"{path}: initial_c1 and initial_c2 must be given together")
    if c1 is not None:
        fields["initial_state"] = (c1, c2)
    try:
        config = replace(base, **fields)
        if ratio is not None:
            config = config.with_fuzziness(ratio)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc

    prior_keys = ("prior_mean", "prior_stddev", "prior_correlation_time",
                  "prior_bound_lo", "prior_bound_hi")
    overrides = {k: cm.take_float(k) for k in prior_keys}
    process = None
    if any(v is not None for v in overrides.values()):
        mid, span = config.e_mid, config.delta_e
        tau = overrides["prior_correlation_time"]
        if tau is None:
            if config.pulse_duration <= 0:
                raise ConfigurationError(
                    f"{path}: prior_correlation_time is required when the "
                    "config has no drive pulse")
            tau = config.pulse_duration / 10.0
        try:
            process = ReadoutProcess(
                mean=overrides["prior_mean"] if overrides["prior_mean"] is not None else mid,
                stddev=overrides["prior_stddev"] if overrides["prior_stddev"] is not None else span,
                correlation_time=tau,
                bounds=(
                    overrides["prior_bound_lo"] if overrides["prior_bound_lo"] is not None else mid - 3.0 * span,
                    overrides["prior_bound_hi"] if overrides["prior_bound_hi"] is not None else mid + 3.0 * span,
                ),
            )
        except ConfigurationError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    smoothing = cm.take_float("smoothing_window")
    cm.finish()
    return RunSettings(config=config, process=process, smoothing_window=smoothing)


_SETUP_KEYS = {
    # config key -> ScatteringSetup.from_si keyword
    "d1": "d1_cm",
    "alpha1": "alpha1_si",
    "alpha2": "alpha2_si",
    "field": "field_v_per_m",
    "electron_energy_ev": "electron_energy_ev",
    "distance": "distance_m",
    "beam_width": "beam_width_m",
    "collimation_length": "collimation_length_m",
    "energy_selectivity": "energy_selectivity",
    "electron_density": "electron_density_per_m2",
}


def load_setup(path) -> ScatteringSetup:
    """Scattering setup file (SI units) -> ScatteringSetup (CGS inside).

    Required keys: d1 (C*m), alpha1, alpha2 (C*m^2/V), field (V/m),
    electron_energy_ev (eV), distance, beam_width, collimation_length
    (m), energy_selectivity (fraction), electron_density (1/m^2).
    """
    cm = ConfigMap(parse_config_file(path), str(path))
    kwargs = {}
    missing = []
    for key, kw in _SETUP_KEYS.items():
        val = cm.take_float(key)
        if val is None:
            missing.append(key)
        else:
            kwargs[kw] = val
    if missing:
        raise ConfigurationError(
            f"{path}: missing required key(s): {', '.join(missing)}")
    cm.finish()
    try:
        return ScatteringSetup.from_si(**kwargs)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


# -- run manifests -------------------------------------------------------------


@dataclass
class Manifest:
    """Provenance block embedded as comment lines in every artifact."""

    subcommand: str
    config_paths: tuple
    master_seed: int
    out_dir: str
    tool_version: str = __version__
    timestamp: str = ""

    def __post_init__(self):
        if not self.timestamp:
            self.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.config_paths = tuple(str(p) for p in self.config_paths)

    def header_lines(self) -> list:
        lines = [f"tool: fuzzwatch {self.tool_version}",
                 f"subcommand: {self.subcommand}"]
        lines += [f"config: {p}" for p in self.config_paths]
        lines += [f"master_seed: {self.master_seed}",
                  f"out_dir: {self.out_dir}",
                  f"timestamp: {self.timestamp}"]
        return lines


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_text(path, manifest: Manifest, lines) -> None:
    """Plain-text artifact: manifest header then one line per entry."""
    with open(path, "w") as fh:
        for line in manifest.header_lines():
            fh.write(f"# {line}\n")
        for line in lines:
            fh.write(f"{line}\n")


def write_table_csv(path, manifest: Manifest, columns, *,
                    extra_header=(), footer=()) -> None:
    """CSV artifact from [(name, values), ...] columns of equal length."""
    names = [name for name, _ in columns]
    cols = [list(vals) for _, vals in columns]
    n_rows = len(cols[0]) if cols else 0
    if any(len(c) != n_rows for c in cols):
        raise ConfigurationError("all columns must have the same length")
    with open(path, "w") as fh:
        for line in list(manifest.header_lines()) + list(extra_header):
            fh.write(f"# {line}\n")
        fh.write(",".join(names) + "\n")
        for i in range(n_rows):
            fh.write(",".join(_fmt(col[i]) for col in cols) + "\n")
        for line in footer:
            fh.write(f"# {line}\n")


def read_table_csv(path) -> dict:
    """Read back a write_table_csv artifact.

    Returns {name: float ndarray} for numeric columns, {name: list of
    str} otherwise.  Comment lines anywhere are skipped.
    """
    names = None
    rows = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if names is None:
                names = line.split(",")
                continue
            rows.append(line.split(","))
    if names is None:
        raise ConfigurationError(f"{path}: no header row found")
    out = {}
    for j, name in enumerate(names):
        col = [r[j] for r in rows]
        try:
            out[name] = np.array([float(x) for x in col])
        except ValueError:
            out[name] = col
    return out


# -- density grids -------------------------------------------------------------


def write_density_csv(path, manifest: Manifest, grid: DensityGrid) -> None:
    """Full-precision density grid: edges in the header, mass as rows.

    Data rows run from the lowest value bin to the highest; row i column
    j is the record mass in value bin i during time bin j.
    """
    ny, nt = grid.mass.shape
    extra = [
        f"field: {grid.field}",
        f"total_weight: {_fmt(grid.total_weight)}",
        f"t_edges: {' '.join(_fmt(v) for v in grid.t_edges)}",
        f"y_edges: {' '.join(_fmt(v) for v in grid.y_edges)}",
        f"shape: {ny} {nt}",
    ]
    with open(path, "w") as fh:
        for line in list(manifest.header_lines()) + extra:
            fh.write(f"# {line}\n")
        for i in range(ny):
            fh.write(",".join(_fmt(v) for v in grid.mass[i]) + "\n")


def read_density_csv(path) -> DensityGrid:
    """Read back a write_density_csv artifact."""
    meta = {}
    rows = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                key, sep, val = body.partition(":")
                if sep:
                    meta[key.strip()] = val.strip()
                continue
            rows.append([float(x) for x in line.split(",")])
    for need in ("field", "t_edges", "y_edges", "total_weight"):
        if need not in meta:
            raise ConfigurationError(f"{path}: missing '{need}' header line")
    return DensityGrid(
        field=meta["field"],
        t_edges=np.array([float(x) for x in meta["t_edges"].split()]),
        y_edges=np.array([float(x) for x in meta["y_edges"].split()]),
        mass=np.array(rows),
        total_weight=float(meta["total_weight"]),
    )


def write_density_pgm(path, manifest: Manifest, grid: DensityGrid) -> None:
    """8-bit binary PGM of the column-normalized density.

    Each time column is scaled to peak at 255 (the usual way these
    occupation maps are plotted); image rows run top to bottom from the
    highest value bin to the lowest.
    """
    img = np.flipud(grid.column_normalized())
    pix = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    ny, nt = pix.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n")
        for line in manifest.header_lines() + [f"field: {grid.field}"]:
            fh.write(f"# {line}\n".encode())
        fh.write(f"{nt} {ny}\n255\n".encode())
        fh.write(pix.tobytes())


# -- specialized tables --------------------------------------------------------


def write_records_csv(path, manifest: Manifest, result) -> None:
    """Per-record ensemble table: class, weight and endpoint data."""
    n = result.n
    labels = [_CLASS_ORDER[c].value for c in result.class_codes]
    columns = [
        ("index", list(range(n))),
        ("readout_class", labels),
        ("log_weight", result.log_weights),
        ("weight", result.weights),
        ("final_p2", result.final_p2),
        ("smoothed_start", result.smoothed_values[:, 0]),
        ("smoothed_end", result.smoothed_values[:, -1]),
    ]
    extra = [
        "weight = exp(log_weight - max(log_weight)); estimators self-normalize",
    ]
    write_table_csv(path, manifest, columns, extra_header=extra)


def write_event_csv(path, manifest: Manifest, trajectory) -> None:
    """Per-electron event log (time, deflected, p2 before/after)."""
    columns = [
        ("time", trajectory.event_times),
        ("deflected", trajectory.event_deflected),
        ("p2_before", trajectory.event_p2_before),
        ("p2_after", trajectory.event_p2_after),
    ]
    write_table_csv(path, manifest, columns)


def float_list(raw: str, *, what: str) -> list:
    """Comma-separated floats from a CLI argument ('inf' allowed)."""
    parts = [p.strip() for p in str(raw).split(",") if p.strip()]
    if not parts:
        raise ConfigurationError(f"{what} must contain at least one number")
    out = []
    for p in parts:
        try:
            out.append(float(p))
        except ValueError as exc:
            raise ConfigurationError(f"{what}: {p!r} is not a number") from exc
        if math.isnan(out[-1]):
            raise ConfigurationError(f"{what}: nan is not allowed")
    return out
