"""Exception hierarchy shared across the package."""


class DiffMPCError(Exception):
    """Base class for all package errors."""


class DomainError(DiffMPCError, ValueError):
    """A primitive was evaluated outside its real domain."""


class TapeMismatch(DiffMPCError):
    """Values recorded on two different tapes were combined."""


class SeedNotScalar(DiffMPCError, TypeError):
    """``backward`` was seeded with something other than a scalar Var."""


class LengthMismatch(DiffMPCError, ValueError):
    pass


class DimensionMismatch(DiffMPCError, ValueError):
    pass


class InfeasibleConstraint(DiffMPCError):
    """The box and the rate window around the anchor do not intersect."""


class StaticPlantHasNoStep(DiffMPCError):
    pass


class WrongPlantKind(DiffMPCError):
    pass


class NonpositiveTheta(DiffMPCError, ValueError):
    pass


class EmptyWindow(DiffMPCError, ValueError):
    pass


class ConfigError(DiffMPCError, ValueError):
    """Invalid experiment configuration; message carries the key path."""
