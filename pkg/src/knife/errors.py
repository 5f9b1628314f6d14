"""Exception taxonomy shared across the package.

Every failure mode that callers are expected to handle gets its own class so
the CLI can map them to structured `error:` lines and tests can assert on the
exact kind.
"""


class KnifeError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(KnifeError, ValueError):
    """Operand shape/content violates an operation's precondition."""


class InvalidParameterError(KnifeError, ValueError):
    """A scalar parameter is outside its allowed range."""


class ReconstructionResidueError(KnifeError):
    """Inverse transform produced an imaginary residue above tolerance."""


class GraphError(KnifeError):
    """Graph construction failed (incompatible shapes)."""


class NumericError(KnifeError):
    """A non-finite value appeared; carries the name of the offending node."""

    def __init__(self, node: str, message: str = ""):
        self.node = node
        super().__init__(message or f"non-finite value in node '{node}'")


class FormatError(KnifeError):
    """A binary file failed magic/version validation."""


class CorruptionError(KnifeError):
    """A binary payload is truncated or inconsistent with its header."""

    def __init__(self, message: str, expected_bytes: int | None = None,
                 actual_bytes: int | None = None):
        self.expected_bytes = expected_bytes
        self.actual_bytes = actual_bytes
        super().__init__(message)


class InvalidSpecError(KnifeError, ValueError):
    """A synthetic-data spec is degenerate or inconsistent."""


class InvalidDatasetError(KnifeError, ValueError):
    """A dataset cannot satisfy a structural requirement (e.g. stratification)."""


class InvalidConfigError(KnifeError, ValueError):
    """A model/train configuration is internally inconsistent."""


class ConfigurationError(KnifeError):
    """A runtime constraint derived from the configuration is unsatisfiable."""


class InsufficientSamplesError(KnifeError, ValueError):
    """Too few samples for a statistic (covariance needs >= 2 rows)."""


class InsufficientDomainsError(KnifeError, ValueError):
    """An alignment term needs at least two domains."""


class TrainingDivergedError(KnifeError):
    """Training loss became non-finite; carries the epoch index."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class DegenerateTestError(KnifeError, ValueError):
    """A statistical test is undefined for the given data (zero variance)."""


class CorrelationUndefinedError(KnifeError, ValueError):
    """Pearson correlation undefined for constant input.

    The euclidean distance is still well defined and is carried on the
    exception so callers can recover it.
    """

    def __init__(self, euclidean: float, message: str = "correlation undefined for constant input"):
        self.euclidean = euclidean
        super().__init__(message)
