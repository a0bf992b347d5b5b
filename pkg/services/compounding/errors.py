class CidNetError(Exception):
    """Base error for the compounding pipeline."""

    pass


class DimensionError(CidNetError):
    """Operand shapes or channel counts do not line up."""

    pass


class ConfigurationError(CidNetError):
    """Invalid network, trainer or pipeline configuration."""

    pass


class ArchiveError(CidNetError):
    """Weight archive could not be read or applied."""

    pass


class ArchiveMagicError(ArchiveError):
    pass


class ArchiveTruncatedError(ArchiveError):
    pass


class FingerprintMismatchError(ArchiveError):
    pass


class MetricError(CidNetError):
    """A metric is undefined for the given image or regions."""

    pass


class WindowTooSmallError(MetricError):
    """The lateral profile never drops below half maximum."""

    pass


class DatasetError(CidNetError):
    """Dataset missing, empty or misaligned."""

    pass
