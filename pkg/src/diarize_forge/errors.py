"""Exception hierarchy shared by all diarize-forge modules."""


class DiarizeForgeError(Exception):
    """Base class for all toolkit errors."""


class MalformedLineError(DiarizeForgeError):
    """An RTTM/UEM/matrix-file line could not be parsed."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class NonPositiveDurationError(MalformedLineError):
    """A parsed turn has duration <= 0."""

    def __init__(self, line_no: int):
        super().__init__(line_no, "turn duration must be > 0")


class NonPositiveWeightError(DiarizeForgeError):
    """A manual hypothesis weight is <= 0."""


class DegenerateClassesError(DiarizeForgeError):
    """PLDA training needs >= 2 classes with >= 2 samples each."""


class DimensionMismatchError(DiarizeForgeError):
    """Operands have incompatible dimensions."""


class EmptyInitError(DiarizeForgeError):
    """VBx initialization contains no clusters."""


class LengthMismatchError(DiarizeForgeError):
    """Frame streams disagree on length or frame shift."""


class EvenWindowError(DiarizeForgeError):
    """Median filter window must be odd."""


class MissingPosteriorsError(DiarizeForgeError):
    """A frame needed for speaker recovery has no posterior column."""


class SourceFailureError(DiarizeForgeError):
    """A posterior source failed to decode."""


class MissingRecordingError(DiarizeForgeError):
    """A posterior source has no data for the requested recording."""


class FormatError(DiarizeForgeError):
    """A matrix/embedding/posterior file is malformed."""


class InfeasibleOverlapError(DiarizeForgeError):
    """Requested overlap ratio cannot be realized (e.g. one speaker)."""


class WeightCountMismatchError(DiarizeForgeError):
    """Number of --weights entries does not match number of hypotheses."""


class GridMismatchError(DiarizeForgeError):
    """Posterior streams are on inconsistent frame grids."""


class ConfigError(DiarizeForgeError):
    """Pipeline configuration is invalid."""

    def __init__(self, message: str, section: str | None = None, key: str | None = None):
        where = ""
        if section:
            where = f" [{section}]" + (f".{key}" if key else "")
        super().__init__(f"config error{where}: {message}")
        self.section = section
        self.key = key
