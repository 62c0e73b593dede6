"""Exception types shared across the toolkit."""


class MicrofitError(Exception):
    """Base class for all toolkit errors."""


class InvalidGeneError(MicrofitError):
    """A gene vector or space config is outside the legal search space."""


class ShapeMismatchError(MicrofitError):
    """Tensor shape does not match what the network expects."""


class UnsupportedBitWidthError(MicrofitError):
    """Parameter size accounting supports 8-bit and 4-bit only."""


class TilingError(MicrofitError):
    """Column buffer cannot host a single column of the given layer."""


class ArenaOverflowError(MicrofitError):
    """Live executor memory exceeded the planned peak (planner bug)."""


class EmptySpaceError(MicrofitError):
    """No (width, resolution) config produced a single deployable network."""


class SpaceSelectionError(MicrofitError):
    """No config met the minimum deployable fraction required to win."""


class EvolutionInitError(MicrofitError):
    """Could not seed the population with enough feasible candidates."""


class LayoutError(MicrofitError):
    """Static buffer layout does not fit inside the planned arena."""
