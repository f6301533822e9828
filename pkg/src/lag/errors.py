"""Exception hierarchy shared by all lag modules.

Each error class carries the process exit code the CLI maps it to, so
failures surface with distinct codes (config=2, input=3, backend=4,
incompatibility=5).
"""


class LagError(Exception):
    """Base class for all lag errors."""

    exit_code = 1


class ConfigurationError(LagError):
    """Invalid model or run configuration (odd head_dim, zero layers, ...)."""

    exit_code = 2


class InputError(LagError):
    """Bad caller-supplied data (token ids, dimensions, malformed files)."""

    exit_code = 3


class CapacityError(InputError):
    """A sequence would overflow the model's position budget."""


class PositionError(InputError):
    """Position metadata violates ordering or length constraints."""


class FormatError(InputError):
    """Serialized bytes do not match the log entry format."""


class ChecksumError(FormatError):
    """CRC mismatch while decoding a log entry."""


class NotFoundError(InputError):
    """Lookup of an unknown entry id."""


class DegenerateStatisticError(InputError):
    """A statistic is undefined for the given input (e.g. zero variance)."""


class BackendError(LagError):
    """A generator/retriever/embedder backend failed."""

    exit_code = 4


class IncompatibilityError(LagError):
    """Fingerprint or dimension mismatch between artifacts."""

    exit_code = 5
