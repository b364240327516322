class NlabError(Exception):
    """Base class for every error raised by the lab."""


class ConfigurationError(NlabError, ValueError):
    pass


class NumericError(NlabError, ArithmeticError):
    pass


class FormatError(NlabError, ValueError):
    pass


class InsufficientDataError(NlabError, ValueError):
    pass


class DiagnosticError(NlabError, ValueError):
    pass


class UsageError(NlabError):
    pass


class HarnessIOError(NlabError, OSError):
    def __init__(self, path, error: Exception):
        self.path = path
        super().__init__(f"{path}: {error}")
