"""Exception taxonomy shared across the toolkit.

Plain I/O failures (unreadable files, refused sockets) surface as the
builtin OSError / ConnectionError families; everything that is a contract
violation of this package raises a ModguardError subclass.
"""


class ModguardError(Exception):
    """Base class for all modguard errors."""


class InvalidInput(ModguardError):
    """A precondition on an argument was violated."""


# --- embedding ---------------------------------------------------------


class BackendFailure(ModguardError):
    """The embedding backend failed to produce a vector.

    Carries the index of the failing item when known.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (item {index})")
        self.index = index


class ImageDecodeError(ModguardError):
    """An image could not be decoded to RGB pixels."""


class ZeroVector(ModguardError):
    """Normalization of an all-zero vector was requested."""


class FormatError(ModguardError):
    """A serialized artifact has a bad magic, version, or structure."""


# --- classifiers -------------------------------------------------------


class DegenerateData(ModguardError):
    """Training data does not contain both classes."""


class DimMismatch(ModguardError):
    """Vector dimensionality does not match the expected dimension."""


class EvenK(ModguardError):
    """k-NN requires an odd neighbor count."""


class UnsupportedKind(ModguardError):
    """The operation does not apply to this classifier kind."""


# --- metrics -----------------------------------------------------------


class LengthMismatch(ModguardError):
    """Parallel label/prediction sequences have different lengths."""


class SingleClass(ModguardError):
    """ROC/AUC needs at least one positive and one negative example."""


# --- projection --------------------------------------------------------


class DegenerateInput(ModguardError):
    """Too few points for the requested decomposition."""


class TooFewPoints(ModguardError):
    """Point count must exceed the neighborhood size."""


# --- augmentation / retrieval clients ----------------------------------


class EndpointUnreachable(ModguardError):
    """The remote endpoint could not be reached or returned an error."""


class MalformedResponse(ModguardError):
    """No usable payload could be parsed from the endpoint response."""


class EmptyAfterFiltering(ModguardError):
    """The endpoint responded, but no variant survived validation."""


class QuotaExceeded(ModguardError):
    """The search endpoint rejected the request for quota reasons."""


# --- corpus ------------------------------------------------------------


class SchemaError(ModguardError):
    """A corpus record is missing or mistypes a required field."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class DuplicateId(ModguardError):
    """Two corpus records share an id."""


class TooFewExamples(ModguardError):
    """Not enough examples per class for the requested split."""
