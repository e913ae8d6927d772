"""Exception hierarchy shared across the pipeline."""


class EgoAudioError(ValueError):
    """Base class for all pipeline errors."""


class FormatError(EgoAudioError):
    """Malformed container or binary file."""


class UnsupportedEncodingError(EgoAudioError):
    pass


class UnsupportedChannelCountError(EgoAudioError):
    pass


class InvalidRangeError(EgoAudioError):
    pass


class EmptySegmentError(EgoAudioError):
    pass


class TooShortError(EgoAudioError):
    """Signal shorter than one analysis frame."""


class InvalidLengthError(EgoAudioError):
    pass


class DomainError(EgoAudioError):
    pass


class ShapeError(EgoAudioError):
    pass


class ConfigError(EgoAudioError):
    pass


class LabelError(EgoAudioError):
    pass


class ManifestError(EgoAudioError):
    """Bad manifest CSV: missing column, bad number, duplicate id, bad row."""
