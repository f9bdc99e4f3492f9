class GraspScopeError(Exception):
    """Base class for every error raised by GraspScope."""


class InvalidRotationError(GraspScopeError):
    pass


class DegenerateRotationError(GraspScopeError):
    pass


class SdfUndefinedError(GraspScopeError):
    """Signed distance requested on a mesh that is not watertight."""


class EmptyMeshError(GraspScopeError):
    pass


class EmptyCloudError(GraspScopeError):
    pass


class EmptyBatchError(GraspScopeError):
    pass


class DimensionMismatchError(GraspScopeError):
    pass


class NonFiniteLossError(GraspScopeError):
    def __init__(self, message: str, breakdown: dict | None = None):
        super().__init__(message)
        self.breakdown = breakdown or {}


class NoGraspsError(GraspScopeError):
    pass


class EmptyReconstructionError(GraspScopeError):
    pass


class TooFewCorrespondencesError(GraspScopeError):
    def __init__(self, found: int, required: int):
        super().__init__(f"ICP found {found} correspondences, needs at least {required}")
        self.found = found
        self.required = required


class FormatError(GraspScopeError):
    """File does not start with the expected magic."""


class VersionMismatchError(FormatError):
    """Right artifact kind, unsupported format version."""


class ConfigError(GraspScopeError):
    pass
