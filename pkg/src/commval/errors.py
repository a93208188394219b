"""Exception and warning types raised across the pipeline."""


class CommvalError(Exception):
    """Base class for every error raised by commval."""


# corpus
class FileUnreadable(CommvalError):
    pass


class SchemaError(CommvalError):
    pass


# shared
class EmptyInput(CommvalError, ValueError):
    pass


class InsufficientData(CommvalError, ValueError):
    pass


# labeling
class CommunitySkipped(CommvalError):
    pass


# extraction
class TemplateError(CommvalError):
    pass


class ParseError(CommvalError):
    pass


class ProviderUnavailable(CommvalError):
    pass


class Quarantined(CommvalError):
    def __init__(self, message, raw_responses=()):
        super().__init__(message)
        self.raw_responses = list(raw_responses)


# canonicalize
class EmbedderUnavailable(CommvalError):
    pass


class BadK(CommvalError, ValueError):
    pass


class UnknownLabel(CommvalError, KeyError):
    pass


class UnknownKeyword(CommvalError, KeyError):
    pass


# scales
class UnmappedKeyword(CommvalError, KeyError):
    pass


class UnknownValue(CommvalError, KeyError):
    pass


class UnknownCommunity(CommvalError, KeyError):
    pass


# prosocial
class CollinearInput(CommvalError, ValueError):
    pass


class DegenerateColumn(CommvalError, ValueError):
    pass


class DegenerateInput(CommvalError, ValueError):
    pass


class SeparationDetected(CommvalError):
    pass


class SingleClass(CommvalError, ValueError):
    pass


# reliability
class UnadjudicatedItem(CommvalError):
    pass


# cli / pipeline
class ConfigError(CommvalError):
    pass


class MissingStageOutput(CommvalError):
    pass


class StageFailed(CommvalError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class CommvalWarning(UserWarning):
    pass


class DegenerateColumnWarning(CommvalWarning):
    pass


class CommunityTooSmall(CommvalWarning):
    pass


class EmptyValueWarning(CommvalWarning):
    pass
