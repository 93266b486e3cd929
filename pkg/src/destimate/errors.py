"""Exception hierarchy shared across the toolkit."""


class DestimateError(Exception):
    """Base class for all toolkit errors."""


class PreconditionError(DestimateError, ValueError):
    """An operation was called with inputs that violate its contract."""


class NumericFailure(DestimateError):
    """A numerical kernel failed (non-convergence, singular system, ...)."""


class ScenarioError(DestimateError):
    """A scenario or estimator file is malformed or inconsistent."""


class DimensionError(DestimateError):
    """Matrices that must work together have incompatible shapes."""


class TopologyError(DestimateError):
    """The communication graph does not meet the connectivity assumption."""


class SynthesisFailure(DestimateError):
    """Estimator synthesis could not produce a verified design."""


class DetectabilityError(SynthesisFailure):
    """Synthesis refused: the plant is not (jointly) partially detectable.

    Carries the rank-test witnesses that certify the refusal.
    """

    def __init__(self, message, witnesses=()):
        super().__init__(message)
        self.witnesses = list(witnesses)


class InternalInconsistencyError(DestimateError):
    """Two independent decision routes disagreed; tolerances likely misconfigured."""
