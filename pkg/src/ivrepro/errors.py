"""Exception types shared across the pipeline.

Stage code catches ``PipelineError`` subclasses and converts them into failed
stage records; anything else is a bug and propagates.
"""


class PipelineError(Exception):
    """Base class for all expected failure modes."""


# -- workspace / execution ------------------------------------------------

class InvalidStudyId(PipelineError):
    pass


class StageFailed(PipelineError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


class ResumePrereqMissing(PipelineError):
    pass


class InterpreterMissing(PipelineError):
    pass


# -- acquisition -----------------------------------------------------------

class NoRepositoryUrl(PipelineError):
    pass


class RetrievalFailed(PipelineError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


# -- parsing / extraction --------------------------------------------------

class NoSpecificationsFound(PipelineError):
    pass


class ParseFailure(PipelineError):
    def __init__(self, message, span=None):
        super().__init__(message)
        self.span = span


class MarkerNotFound(PipelineError):
    pass


# -- janitor ---------------------------------------------------------------

class EsampleSourceNotFound(PipelineError):
    pass


class AnchorNotFound(PipelineError):
    pass


class AnchorAmbiguous(PipelineError):
    pass


# -- name resolution -------------------------------------------------------

class PanelRequired(PipelineError):
    pass


class DegenerateFactor(PipelineError):
    pass


class NotAnExpression(PipelineError):
    pass


class UnresolvedOperand(PipelineError):
    pass


# -- estimation ------------------------------------------------------------

class UnresolvedTerm(PipelineError):
    pass


class EmptySample(PipelineError):
    pass


class ConditionParseError(PipelineError):
    pass


class RankDeficient(PipelineError):
    pass


class WeakRankInstrument(PipelineError):
    pass


class NonConvergence(PipelineError):
    def __init__(self, message, sweeps=None):
        super().__init__(message)
        self.sweeps = sweeps


# -- diagnostics -----------------------------------------------------------

class SingularVcov(PipelineError):
    pass


class ZeroVariance(PipelineError):
    pass


class TooManyDegenerateReplicates(PipelineError):
    pass


# -- reporting -------------------------------------------------------------

class NoSpecs(PipelineError):
    pass
