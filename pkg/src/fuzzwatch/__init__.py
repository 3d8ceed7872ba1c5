"""fuzzwatch: continuous fuzzy monitoring of a driven two-level system.

The package simulates an atom whose energy is watched continuously but
imprecisely while an external field drives transitions between the two
levels.  A norm-decaying Schrodinger equation weights each candidate
energy record; Monte Carlo ensembles over random records give the
statistics of what such a monitor would actually show.  A companion
module models one concrete realization (electron scattering off the
atom's state-dependent dipole) and a cross-check ties the two pictures
together.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .dynamics import (
    AtomState,
    MeasurementConfig,
    Trajectory,
    evolve,
    kappa_for_fuzziness,
    readout_probability,
)
from .ensemble import (
    DensityGrid,
    EnsembleResult,
    class_probabilities,
    density_grid,
    mean_final_p2,
    mean_population_curve,
    regime_scan,
    run_ensemble,
)
from .errors import ConfigurationError, DegenerateMeasurementError
from .events import (
    EventParams,
    EventTrajectory,
    cross_check,
    energy_readout_from_events,
    estimate_sigma,
    run_event_ensemble,
    run_event_trajectory,
)
from .io import Manifest, load_run_settings, load_setup
from .readout import (
    ReadoutClass,
    ReadoutCurve,
    ReadoutProcess,
    classify,
    sample_readout,
    smooth,
)
from .scattering import (
    DipoleDerived,
    ScatteringSetup,
    born_ratio,
    derived_dipoles,
    feasibility_report,
    resolution_time,
    scattered_flux,
    total_cross_section_approx,
    total_cross_section_exact,
)

__all__ = [
    "AtomState",
    "ConfigurationError",
    "DegenerateMeasurementError",
    "DensityGrid",
    "DipoleDerived",
    "EnsembleResult",
    "EventParams",
    "EventTrajectory",
    "Manifest",
    "MeasurementConfig",
    "ReadoutClass",
    "ReadoutCurve",
    "ReadoutProcess",
    "ScatteringSetup",
    "Trajectory",
    "born_ratio",
    "class_probabilities",
    "classify",
    "cross_check",
    "density_grid",
    "derived_dipoles",
    "energy_readout_from_events",
    "estimate_sigma",
    "evolve",
    "feasibility_report",
    "kappa_for_fuzziness",
    "load_run_settings",
    "load_setup",
    "mean_final_p2",
    "mean_population_curve",
    "readout_probability",
    "regime_scan",
    "resolution_time",
    "run_ensemble",
    "run_event_ensemble",
    "run_event_trajectory",
    "sample_readout",
    "scattered_flux",
    "smooth",
    "total_cross_section_approx",
    "total_cross_section_exact",
    "__version__",
]
