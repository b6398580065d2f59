"""Exception hierarchy shared by every module."""


class RescaleError(Exception):
    """Base class for all errors raised by depthrescale."""


class InvalidConfig(RescaleError, ValueError):
    pass


class OutOfBounds(RescaleError, ValueError):
    pass


class EmptyPairs(RescaleError):
    """No valid (disparity, inverse depth) pair survived sampling."""


class DegenerateFit(RescaleError):
    """Too few pairs, or no spread in disparity, to determine a line."""


class AllOutliers(RescaleError):
    pass


class NoValidPoints(RescaleError):
    pass


class EmptyResult(RescaleError):
    pass


class EmptyMask(RescaleError):
    pass


class GateRejected(RescaleError):
    """The relative motion between two frames is too small to triangulate."""


class FormatError(RescaleError, ValueError):
    pass


class UnsupportedFormat(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class ManifestError(RescaleError, ValueError):
    pass
