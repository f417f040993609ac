"""Exception and warning classes shared across the package."""


class HistoMRIError(Exception):
    """Base class for all errors raised by histomri."""


# imaging core
class UnreadableFile(HistoMRIError, OSError):
    pass


class UnsupportedFormat(HistoMRIError, ValueError):
    pass


class HeaderMismatch(HistoMRIError, ValueError):
    pass


class UnsupportedEncoding(HistoMRIError, ValueError):
    pass


class LevelTooCoarse(HistoMRIError, ValueError):
    pass


class GeometryMismatch(HistoMRIError, ValueError):
    pass


# segmentation
class NotColorImage(HistoMRIError, ValueError):
    pass


class DegenerateInput(HistoMRIError, ValueError):
    pass


class TooFewSamples(HistoMRIError, ValueError):
    pass


class EmptyInitMask(HistoMRIError, ValueError):
    pass


class NoTissueFound(HistoMRIError):
    pass


class EmptyForeground(HistoMRIError):
    pass


# registration
class WindowExceedsImage(HistoMRIError, ValueError):
    pass


class InsufficientOverlap(HistoMRIError):
    pass


class NonPositiveJacobian(HistoMRIError, AssertionError):
    pass


# volume assembly
class InconsistentSliceGeometry(HistoMRIError, ValueError):
    pass


class EmptyStack(HistoMRIError, ValueError):
    pass


class TooFewSlices(HistoMRIError, ValueError):
    pass


class MissingTransform(HistoMRIError, KeyError):
    def __init__(self, index):
        super().__init__(index)
        self.index = index

    def __str__(self):
        return f"no stored 2D transform for slice {self.index}"


class ChannelGeometryMismatch(HistoMRIError, ValueError):
    pass


class NonPositiveScale(HistoMRIError, ValueError):
    pass


# reference preprocessing
class EmptyMask(HistoMRIError, ValueError):
    pass


class NonFiniteInput(HistoMRIError, ValueError):
    pass


# evaluation
class MaskTooSmall(HistoMRIError, ValueError):
    pass


class SolverFailure(HistoMRIError, RuntimeError):
    pass


class UnpairedLabel(HistoMRIError, KeyError):
    pass


# phantom
class OverlappingStructures(HistoMRIError, ValueError):
    pass


# pipeline
class ConfigInvalid(HistoMRIError, ValueError):
    pass


class StageFailure(HistoMRIError, RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class MissingUpstream(HistoMRIError, RuntimeError):
    def __init__(self, stage, missing=()):
        detail = f" (missing: {', '.join(missing)})" if missing else ""
        super().__init__(f"upstream outputs for stage {stage!r} not found{detail}")
        self.stage = stage
        self.missing = tuple(missing)


# warnings
class DidNotConverge(RuntimeWarning):
    """Optimizer hit its iteration cap; the best parameters seen are returned."""


class DegenerateMask(RuntimeWarning):
    """Principal axes are undefined for the mask; alignment fell back to centroids."""
