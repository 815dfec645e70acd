"""Exception hierarchy shared by all modules."""


class CRCError(Exception):
    """Base class for every error raised by the package."""


class InvalidConfig(CRCError, ValueError):
    pass


class InvalidInput(CRCError, ValueError):
    pass


class EmptyResult(CRCError):
    """An operation produced nothing usable (e.g. no peaks, no anchors)."""


class InsufficientData(CRCError):
    """Too little data for the requested computation (beats, pairs, windows)."""


class OutOfRange(CRCError, ValueError):
    pass


class AlignmentError(CRCError):
    """Two curves could not be paired well enough to compare them."""


class ParseError(InvalidInput):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class RateMismatch(InvalidInput):
    pass


class NonUniform(InvalidInput):
    pass


class ManifestError(InvalidInput):
    pass


class MissingFile(InvalidInput, FileNotFoundError):
    pass
