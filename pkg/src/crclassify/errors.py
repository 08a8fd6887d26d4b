"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: data/shape problems exit 3,
numerical failures exit 4, I/O problems exit 5 (see cli.py).
"""


class CrcError(Exception):
    """Base class for all package-specific errors."""


# --- data / shape problems -------------------------------------------------

class InvalidData(CrcError):
    """Input values are unusable (non-finite entries, bad labels, ...)."""


class TooFewSamples(CrcError):
    """Not enough rows (or rows per class) for the requested operation."""


class ShapeError(CrcError):
    """Dimension mismatch between inputs."""


class NonFiniteInput(CrcError):
    """A prediction target contains NaN or infinite entries."""


class FoldClassEmpty(CrcError):
    """A leave-one-out fold would leave one class without members."""


class UnknownLabel(CrcError):
    """Label file contains values outside the declared two-class mapping."""


class DuplicateId(CrcError):
    """Sample or feature identifiers are not unique."""


class RaggedRows(CrcError):
    """Rows of a delimited matrix file have differing lengths."""


class NonNumericCell(CrcError):
    """A matrix cell could not be parsed as a finite number."""


class SplitInfeasible(CrcError):
    """A balanced train/test split cannot be formed from the given classes."""


class VersionMismatch(CrcError):
    """Model file was written by an unsupported format version."""


class CorruptModel(CrcError):
    """Model file is truncated or fails its checksum."""


# --- numerical failures ----------------------------------------------------

class DegenerateGram(CrcError):
    """The Gram matrix carries no usable spectrum (zero or near-zero)."""


class DowndateSingular(CrcError):
    """A rank-one downdate hit a numerically singular leave-one-out Gram."""


class DegenerateContrast(CrcError):
    """The label contrast T' G^-1 T is numerically zero."""


class SingularDenseFit(CrcError):
    """The inner matrix of the dense-component score is singular."""


# --- configuration ----------------------------------------------------------

class ConfigError(CrcError):
    """Simulator or CLI configuration is invalid."""
