"""Exception hierarchy shared by every module of the package."""


class FormationError(Exception):
    """Base class for all package errors."""


# model
class OutOfEnvelope(FormationError):
    pass


class OutsideWindDomain(FormationError):
    pass


class NearPoleSingularity(FormationError):
    pass


class SingularInterpolationMatrix(FormationError):
    pass


class EmptyGrid(FormationError):
    pass


# mission
class MismatchedAircraftCount(FormationError):
    pass


class InfeasibleTransitionGraph(FormationError):
    pass


class AmbiguousMode(FormationError):
    """A relaxed mode variable could not be rounded to a binary value."""


# transcription
class DegenerateGrid(FormationError):
    pass


class InconsistentInstanceTemplates(FormationError):
    pass


# nlp
class LayoutMismatch(FormationError):
    pass


class NonFiniteEvaluation(FormationError):
    pass


# uq
class MomentComputationFailure(FormationError):
    pass


class EigSolverFailure(FormationError):
    pass


class InconsistentModeSequences(FormationError):
    """Quadrature nodes disagree on the discrete-state sequence."""

    def __init__(self, message, sequences=None):
        super().__init__(message)
        self.sequences = sequences or {}


class GridMismatch(FormationError):
    pass


# delays
class DegenerateComponent(FormationError):
    pass


class TooFewSamples(FormationError):
    pass


# sensitivity
class ZeroVariance(FormationError):
    pass


class UndefinedOnWindow(FormationError):
    pass


# pipeline
class SolveFailure(FormationError):
    pass


# ingestion
class SchemaError(FormationError):
    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class UnitRangeError(SchemaError):
    pass


class RaggedGrid(FormationError):
    pass


class NonFiniteEntry(FormationError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row
