"""Exception hierarchy shared across the pipeline."""


class SegPipeError(Exception):
    """Base class for all segpipe errors."""


class CapacityError(SegPipeError):
    """No color assignment satisfies the requested separation."""


class LabelOutOfRange(SegPipeError):
    """A category label exceeds the declared number of categories."""


class FormatError(SegPipeError):
    """A byte stream is not in the expected external format."""


class UnknownSegment(SegPipeError):
    """A panoptic pixel references a segment id missing from segments_info."""


class IdOverflow(SegPipeError):
    """A segment id does not fit the 24-bit RGB encoding."""


class SchemaError(SegPipeError):
    """A manifest or config declares an unsupported schema version."""


class DuplicateId(SegPipeError):
    """A sample_id already exists in the target manifest."""


class DanglingSource(SegPipeError):
    """A synthetic record references a real sample that does not exist."""


class ShapeMismatch(SegPipeError):
    """Two maps that must share dimensions do not."""


class EmptyEvaluation(SegPipeError):
    """No valid (non-ignored) pixels were available for a metric."""


class BackendError(SegPipeError):
    """Base class for generator-backend failures."""


class BackendUnavailable(BackendError):
    """The backend endpoint could not be reached after all retries."""


class ProtocolError(BackendError):
    """The backend request or response violates the wire protocol."""


class Timeout(BackendError):
    """The backend did not answer within the configured timeout."""


class ShapeError(BackendError):
    """A backend returned payloads with the wrong dimensions."""


class BindError(SegPipeError):
    """The mock server could not bind its port."""
