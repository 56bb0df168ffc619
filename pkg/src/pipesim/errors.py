"""Exception hierarchy shared across the package."""


class PipesimError(Exception):
    """Base class for all pipesim errors."""


class ProfileFormatError(PipesimError, ValueError):
    """A profile file could not be parsed in the documented format."""


class ValidationError(PipesimError, ValueError):
    """An input object violates a documented invariant or precondition."""


class SimulationError(PipesimError, RuntimeError):
    """The simulator could not make progress or produce a valid measurement."""


class ConsistencyError(PipesimError, RuntimeError):
    """A version ledger references weights that were never committed."""
