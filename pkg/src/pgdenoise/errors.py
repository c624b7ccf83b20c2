"""Exception types.  Each carries a short ``category`` the CLI prints."""


class PGDenoiseError(Exception):
    category = "error"


class ImageIOError(PGDenoiseError, OSError):
    category = "image-io"

    def __init__(self, path, reason):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"{self.path}: {reason}")


class DomainError(PGDenoiseError, ValueError):
    """A variance or denominator left its valid domain."""

    category = "domain"


class DegenerateMaskError(PGDenoiseError, ValueError):
    category = "degenerate-mask"


class InfeasibleStartError(PGDenoiseError, ValueError):
    category = "infeasible-start"


class TrainingDivergedError(PGDenoiseError, RuntimeError):
    category = "training-diverged"

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}


class CheckpointNotFoundError(PGDenoiseError, FileNotFoundError):
    category = "checkpoint-not-found"


class ConfigError(PGDenoiseError, ValueError):
    category = "config"
