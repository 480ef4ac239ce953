class PreviewMpcError(Exception):
    """Base class of every error raised by previewmpc.

    Each subclass carries the process `exit_code` the command line front end
    uses when the error escapes a command.
    """

    exit_code: int = 1


class ConfigError(PreviewMpcError, ValueError):
    """Unreadable or inconsistent configuration, or a violated call contract."""

    exit_code = 2


class DimensionError(ConfigError):
    exit_code = 2


class DisturbanceBoundError(ConfigError):
    """A disturbance value lies outside the disturbance set."""

    exit_code = 2


class SynthesisError(PreviewMpcError, RuntimeError):
    """Offline computation of the terminal ingredients failed."""

    exit_code = 3


class ConvergenceError(SynthesisError):
    exit_code = 3


class CertificationError(SynthesisError):
    exit_code = 3


class InfeasibleError(PreviewMpcError, RuntimeError):
    exit_code = 4


class MaxIterError(PreviewMpcError, RuntimeError):
    exit_code = 5
