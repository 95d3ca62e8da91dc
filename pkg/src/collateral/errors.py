"""Exception hierarchy.

Everything derived from :class:`InputError` describes a problem with user
input (malformed files, inconsistent annotations) and maps to exit code 2
in the CLI.
"""


class InputError(ValueError):
    """Invalid or inconsistent input data."""


class AnnotationError(InputError):
    """An annotation violates the timeline invariants."""


class ExtentMismatchError(AnnotationError):
    """Reference and hypothesis do not share the same extent."""


class TextGridError(InputError):
    """Malformed or unsupported Praat TextGrid."""


class SchemaError(InputError):
    """Alignment / annotation JSON does not follow the schema."""


class WavError(InputError):
    """Unreadable WAV payload."""


class UnsupportedChannelsError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


class TruncatedWavError(WavError):
    pass
