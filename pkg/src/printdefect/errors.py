"""Exception hierarchy shared by every module."""


class PrintDefectError(Exception):
    """Base class for all errors raised by printdefect."""


class RegionOutOfBounds(PrintDefectError, ValueError):
    pass


class RankDeficient(PrintDefectError, ArithmeticError):
    """The unregularized design matrix is numerically singular."""


class SourceTooSmall(PrintDefectError, ValueError):
    pass


class ImageTooSmall(PrintDefectError, ValueError):
    pass


class SegmenterFailure(PrintDefectError, RuntimeError):
    pass


class ChannelCountMismatch(PrintDefectError, ValueError):
    pass


class DimMismatch(PrintDefectError, ValueError):
    pass


class LabelOutOfRange(PrintDefectError, ValueError):
    pass


class AllClassesEmpty(PrintDefectError, ValueError):
    """No class has a nonzero union, so mIoU is undefined."""


class ConfigError(PrintDefectError, ValueError):
    pass


class FormatError(PrintDefectError, ValueError):
    """A file does not follow its documented layout."""
