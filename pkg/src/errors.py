from typing import Any, Dict, Optional


class ConfigError(ValueError):
    """Raised when a run configuration is malformed or violates a constraint."""


class InvalidGenomeError(ValueError):
    """Raised when an operation needs a valid genome and gets one that fails validation."""


class ShapeError(ValueError):
    """Raised when tensor shapes do not line up for a layer operation."""


class GenomeParseError(ValueError):
    """
    Raised when a genome document cannot be parsed.

    Carries the JSON path of the offending field (e.g. "modules[2].streams[0].type")
    and, for malformed JSON text, the line and column reported by the decoder.
    """

    def __init__(
        self,
        path: str,
        reason: str,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ):
        self.path = path
        self.reason = reason
        self.line = line
        self.column = column
        where = f"line {line}, column {column}" if line is not None else path
        super().__init__(f"{where}: {reason}")


class MutationError(RuntimeError):
    """Raised when a mutation operator cannot be applied to the chosen target."""


class MutationExhaustedError(MutationError):
    """Raised when every resample attempt for a batch of mutations has failed."""


class TrainingDivergedError(RuntimeError):
    """
    Raised when the training loss becomes non-finite.

    Keeps the last iteration whose loss was finite together with a copy of the
    parameters at that point, so callers can inspect or checkpoint them.
    """

    def __init__(
        self,
        iteration: int,
        last_finite_iteration: int,
        last_finite_params: Dict[str, Any],
    ):
        self.iteration = iteration
        self.last_finite_iteration = last_finite_iteration
        self.last_finite_params = last_finite_params
        super().__init__(
            f"Loss became non-finite at iteration {iteration} "
            f"(last finite iteration: {last_finite_iteration})."
        )


class ArchiveError(RuntimeError):
    """Raised when a run archive on disk is missing or inconsistent."""
