"""Exception types shared across the package."""

from __future__ import annotations


class ConfigurationError(ValueError):
    """Raised when a configuration is self-inconsistent or physically invalid.

    Examples: a measurement window that is not commensurate with the time
    step, a scattering setup whose total cross section exceeds the beam
    cross section, or a config file with a malformed entry.
    """


class DegenerateMeasurementError(ValueError):
    """Raised when a requested inversion has no information to work with.

    The main case is mapping a cross section back to an energy when the
    two levels scatter identically (chi = 0), so the readout carries no
    energy signal at all.
    """
