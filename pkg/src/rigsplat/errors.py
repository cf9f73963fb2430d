"""Exception hierarchy shared by all pipeline stages."""


class PipelineError(Exception):
    """Base class for all rigsplat errors."""


# -- geometry ---------------------------------------------------------------

class PointBehindCamera(PipelineError):
    """3D point has non-positive depth in the camera frame."""


class NoConvergence(PipelineError):
    """Iterative inversion failed; carries the final residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


# -- imaging ----------------------------------------------------------------

class EmptyImage(PipelineError):
    """Image has a zero dimension."""


class DegenerateSpectrum(PipelineError):
    """Phase correlation input has zero variance."""


# -- sync -------------------------------------------------------------------

class TooFewFrames(PipelineError):
    """Fewer than two frames supplied for shift-signal construction."""


class NoOverlap(PipelineError):
    """Offset leaves no overlapping entries between two shift signals."""


# -- matching ---------------------------------------------------------------

class InsufficientFrames(PipelineError):
    """Not enough synced triplets to select the requested count."""


class UnknownImage(PipelineError):
    """Match document references an image absent from the schedule."""


class IndexOutOfRange(PipelineError):
    """Match references a keypoint index beyond the keypoint count."""


class DuplicateMatch(PipelineError):
    """A keypoint is matched twice within one pair."""


class DegenerateConfiguration(PipelineError):
    """RANSAC could not find a model with enough inliers."""


# -- sfm --------------------------------------------------------------------

class NotConverged(PipelineError):
    """Optimizer hit the iteration cap with neither gradient nor cost
    plateau criteria met; carries the best iterate found."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class RankDeficient(PipelineError):
    """Calibration views lack the pose diversity to constrain the model."""


class NoValidSeedPair(PipelineError):
    """No verified pair passes the seed inlier/parallax thresholds."""


class RegistrationFailed(PipelineError):
    """Resectioning found too few inliers to register an image."""


# -- splat ------------------------------------------------------------------

class EmptyModel(PipelineError):
    """Sparse model has no points to seed Gaussians from."""


class DivergenceDetected(PipelineError):
    """Training loss stayed above twice its initial value for too long."""


class IoFailure(PipelineError):
    """File export or import failed."""


# -- cli --------------------------------------------------------------------

class ConfigInvalid(PipelineError):
    """Run configuration violates an invariant."""


class MissingInput(PipelineError):
    """A stage input file or directory does not exist."""


class StageFailed(PipelineError):
    """A pipeline stage exited with an error; carries the stage name."""

    def __init__(self, message: str, stage: str = None):
        super().__init__(message)
        self.stage = stage
