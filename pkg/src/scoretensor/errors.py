"""Exception hierarchy shared across the package."""


class ScoreTensorError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(ScoreTensorError, ValueError):
    pass


class DuplicateIndexError(ScoreTensorError, ValueError):
    pass


class FormatError(ScoreTensorError, ValueError):
    """A tensor file does not follow the COO text or dense binary layout."""


class EvaluationError(ScoreTensorError, ArithmeticError):
    """A primitive was evaluated outside its domain or produced non-finite values."""


class ArgumentError(ScoreTensorError, ValueError):
    pass


class OptimizerError(ScoreTensorError, FloatingPointError):
    pass


class TrainingError(ScoreTensorError, RuntimeError):
    """Training diverged. ``trace`` holds the per-epoch losses recorded so far."""

    def __init__(self, message, trace=None, diagnostics=None):
        super().__init__(message)
        self.trace = list(trace or [])
        self.diagnostics = dict(diagnostics or {})


class SamplerError(ScoreTensorError, RuntimeError):
    pass


class ConfigurationError(ScoreTensorError, ValueError):
    """Invalid configuration. ``fields`` lists every offending key."""

    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = list(fields)


class GenerationError(ScoreTensorError, ValueError):
    pass
