"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ParameterError(ValueError):
    """Flux ratios / unbalancing parameters outside their admissible window."""


class ConfigurationError(ValueError):
    """A (k, m, variant) configuration fails a validity gate."""


class ExtensionDivergesError(RuntimeError):
    """A piecewise extension never reaches the requested flux target
    (the solution has fewer jump latitudes than asked for)."""


class SolverError(RuntimeError):
    """A numerical solve failed to converge; carries diagnostic data."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class ResolutionError(RuntimeError):
    """A grid or mode cutoff is too coarse for the requested tolerance."""


class TopologyError(ValueError):
    """A mesh is not watertight / connected / orientable as required."""


class GluingError(ValueError):
    """Bridge scale vs gluing radius ordering violated."""


class EmbeddingError(RuntimeError):
    """Heuristic self-intersection check failed for an initial surface."""
