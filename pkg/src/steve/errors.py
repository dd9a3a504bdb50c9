"""Exception hierarchy shared by every module in the package."""


class SteveError(Exception):
    """Base class for all package errors."""

    code = "steve"


class ValidationError(SteveError):
    """Bad user input: malformed configs, invalid distributions, bad labels."""

    code = "validation"


class NormalizationError(ValidationError):
    code = "normalization"


class DomainError(ValidationError):
    code = "domain"


class EmptyGroupError(ValidationError):
    code = "empty_group"


class ConfigError(ValidationError):
    code = "config"


class FormatError(ValidationError):
    code = "format"


class VersionError(FormatError):
    code = "version"


class InsufficientHistoryError(ValidationError):
    code = "insufficient_history"


class UnknownScenarioError(ValidationError):
    code = "unknown_scenario"


class DegenerateDataError(ValidationError):
    code = "degenerate_data"


class ShapeError(ValidationError):
    code = "shape"


class LabelError(ValidationError):
    code = "label"


class EmptyScenarioError(ValidationError):
    code = "empty_scenario"


class NonFiniteError(SteveError):
    code = "non_finite"


class DivergenceError(NonFiniteError):
    code = "divergence"
