"""Exception types raised across the package."""


class TreeSlamError(Exception):
    """Base class for all package errors."""


class DataError(TreeSlamError):
    """Bad or inconsistent input data (CLI exit code 2)."""


class NumericalError(TreeSlamError):
    """A numerical procedure could not produce a result (CLI exit code 3)."""


class NonOrthonormalInput(DataError):
    pass


class NonUnitAxis(DataError):
    pass


class EmptyCloud(DataError):
    pass


class DegenerateCloud(DataError):
    pass


class DegenerateCorrespondences(NumericalError):
    pass


class InvalidRatio(DataError):
    pass


class IndexOutOfRange(DataError):
    pass


class NonFiniteTransform(NumericalError):
    pass


class EmptySpan(DataError):
    pass


class MatchFailed(NumericalError):
    def __init__(self, frame: int, reason: str = "") -> None:
        super().__init__(f"match failed at frame {frame}" + (f": {reason}" if reason else ""))
        self.frame = frame


class EmptyCandidateSet(DataError):
    pass


class UnknownStrategy(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyMap(DataError):
    pass


class NoClusters(DataError):
    pass


class DegenerateFit(NumericalError):
    pass


class AreaTooSmall(DataError):
    pass


class InvalidConfig(DataError):
    pass


class ParseError(DataError):
    def __init__(self, path: str, line: int, reason: str) -> None:
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line
