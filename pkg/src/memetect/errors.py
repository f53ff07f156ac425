"""Exception hierarchy shared across the pipeline."""


class MemetectError(Exception):
    """Base class for all package errors."""

    code = "internal_error"


class InputError(MemetectError):
    """Bad user-supplied input (files, manifests, arguments)."""

    code = "input_error"


class ImageDecodeError(InputError):
    code = "image_decode_error"


class BackendMissingError(MemetectError):
    """A configured external adapter (e.g. OCR backend) is not available."""

    code = "backend_missing"


class NothingLeftAfterCropError(MemetectError):
    """Text regions cover so much of the image that no usable crop remains."""

    code = "nothing_left_after_crop"


class ContractViolationError(MemetectError):
    """An operation was called outside its stated precondition."""

    code = "contract_violation"


class InsufficientFeaturesError(MemetectError):
    """Image too small to extract local keypoint features."""

    code = "insufficient_features"


class ProviderUnavailableError(MemetectError):
    """Search provider failed (network, quota); distinct from an empty result."""

    code = "provider_unavailable"


class IndexFormatError(MemetectError):
    """Index file is corrupt or has a mismatched format version."""

    code = "index_format_error"


class StateError(MemetectError):
    """Operation not valid in the current session state."""

    code = "state_error"


class ConflictError(MemetectError):
    """Duplicate or stale judgement submitted for a session."""

    code = "conflict"
