"""Exception types shared across the package."""


class SnnAccelError(Exception):
    """Base class for all package-specific errors."""


class DegenerateRange(SnnAccelError):
    """Scale computation was asked for an all-zero (or zero-max) tensor."""


class IndivisibleGroups(SnnAccelError):
    """Channel count is not divisible by the group count."""


class InvalidConfig(SnnAccelError):
    """Network or run configuration violates a structural constraint."""


class ShapeMismatch(SnnAccelError):
    """Operands have incompatible shapes."""


class ScaleMismatch(SnnAccelError):
    """Accumulator maps carry different fixed-point scales."""


class GeometryMismatch(SnnAccelError):
    """PE-array geometry is incompatible with the layer being scheduled."""


class CapacityExceeded(SnnAccelError):
    """Modeled on-chip memory occupancy exceeds the configured capacity."""


class CorruptFile(SnnAccelError):
    """File fails structural validation (magic, version, lengths)."""


class BadLabel(SnnAccelError):
    """Dataset record carries a label outside the valid class range."""
