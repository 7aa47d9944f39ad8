"""Exception types shared across the toolkit."""


class PmrsError(Exception):
    """Base class for all toolkit errors."""


class ProtocolError(PmrsError):
    """Acquisition protocol is inconsistent or does not match the data."""


class CorruptionPlanError(PmrsError):
    """A synthetic corruption plan references frames outside the protocol."""


class QuantFitError(PmrsError):
    """Nonlinear quantification hit its iteration cap without converging.

    ``best`` carries the best-so-far frame fit (flagged as unconverged) so a
    series run can record it and keep going.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class FitFailure(PmrsError):
    """A kinetic fit did not converge; optimizer diagnostics attached."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UnphysicalSaturationError(PmrsError):
    """Short-TR amplitude is not attenuated relative to long-TR."""


class OutOfRangeError(PmrsError):
    """A value fell outside the physically meaningful interval."""


class DomainError(PmrsError):
    """An argument violates a function's domain."""


class ConfigurationError(PmrsError):
    """Requested analysis mode is missing a required input."""


class ReferenceScaleError(PmrsError):
    """Concentration referencing is impossible (zero reference amplitude)."""


class DegenerateSeriesError(PmrsError):
    """A series is constant and cannot anchor a kinetic fit."""


class DegenerateSampleError(PmrsError):
    """A statistical sample has no variance."""


class UnsupportedSizeError(PmrsError):
    """Sample size is outside the supported range of a statistical routine."""


class UnattainablePowerError(PmrsError):
    """No finite sample size can reach the requested power."""


class IncompleteInputError(PmrsError):
    """A required quality-control variable is missing."""

    def __init__(self, variable):
        super().__init__(f"missing QC variable: {variable}")
        self.variable = variable


class ReselectionError(PmrsError):
    """A recovery start-index reselection request was rejected."""


class SubjectParseError(PmrsError):
    """A subject file violates the documented schema."""

    def __init__(self, message, json_path="$"):
        super().__init__(f"{json_path}: {message}")
        self.json_path = json_path


class RevisionConflictError(PmrsError):
    """An optimistic write raced a newer mutation; carries current state."""

    def __init__(self, message, current=None):
        super().__init__(message)
        self.current = current
