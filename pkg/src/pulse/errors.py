"""Exception hierarchy shared by every module.

Each error carries a stable machine-readable ``code`` (used in the HTTP
error envelope) and a default HTTP status for the API layer.
"""


class PulseError(Exception):
    code = "error"
    http_status = 400

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)

    @property
    def message(self) -> str:
        return str(self)


class NotFoundError(PulseError):
    code = "not-found"
    http_status = 404


class UnknownRasterError(NotFoundError):
    code = "unknown-raster"


class UnknownModelError(NotFoundError):
    code = "unknown-model"


class UnknownParentError(NotFoundError):
    code = "unknown-parent"


class UnknownSetError(NotFoundError):
    code = "unknown-set"


class UnknownFeatureError(NotFoundError):
    code = "unknown-feature"


class UnknownTileError(NotFoundError):
    code = "unknown-tile"


class UnknownJobError(NotFoundError):
    code = "unknown-job"


class UnknownProjectError(NotFoundError):
    code = "unknown-project"


class UnknownTopicError(NotFoundError):
    code = "unknown-topic"


class ValidationError(PulseError):
    code = "validation"
    http_status = 422


class SingularTransformError(ValidationError):
    code = "singular-transform"


class OutOfRangeError(ValidationError):
    code = "out-of-range"


class InvalidGeometryError(ValidationError):
    code = "invalid-geometry"


class InvalidPayloadError(ValidationError):
    code = "invalid-payload"


class InvalidParamsError(ValidationError):
    code = "invalid-params"


class MultiBandInputError(ValidationError):
    code = "multi-band-input"


class ShapeMismatchError(ValidationError):
    code = "shape-mismatch"


class EmptyTrainingSetError(ValidationError):
    code = "empty-training-set"


class TaskMismatchError(ValidationError):
    code = "task-mismatch"


class IllegalTransitionError(ValidationError):
    code = "illegal-transition"


class TileNotReadyError(PulseError):
    # Distinct from an empty tile, which renders as a transparent PNG.
    code = "tile-not-ready"
    http_status = 409


class ConflictError(PulseError):
    code = "conflict"
    http_status = 409


class IntegrityError(PulseError):
    code = "integrity-violation"
    http_status = 409


class CorruptArchiveError(PulseError):
    code = "corrupt-archive"
    http_status = 400


class AuthError(PulseError):
    code = "unauthorized"
    http_status = 401
