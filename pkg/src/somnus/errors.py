"""Exception hierarchy. Each error carries the fields a caller needs to
report it without parsing the message."""


class SomnusError(Exception):
    """Base class for every error raised by this package."""

    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "message": str(self)}


class ShapeError(SomnusError, ValueError):
    kind = "shape"

    def __init__(self, message, *shapes):
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)

    def to_dict(self):
        d = super().to_dict()
        d["shapes"] = [list(s) for s in self.shapes]
        return d


class BoundsError(SomnusError, IndexError):
    """An index or label outside its declared range."""

    kind = "bounds"

    def __init__(self, message, position=None, offset=None):
        super().__init__(message)
        self.position = position
        self.offset = offset

    def to_dict(self):
        d = super().to_dict()
        if self.position is not None:
            d["position"] = self.position
        if self.offset is not None:
            d["offset"] = self.offset
        return d


class FormatError(SomnusError):
    """Malformed binary file; ``offset`` is the byte where parsing failed."""

    kind = "format"

    def __init__(self, message, offset=None, path=None):
        super().__init__(message)
        self.offset = offset
        self.path = path

    def to_dict(self):
        d = super().to_dict()
        d["offset"] = self.offset
        if self.path is not None:
            d["path"] = str(self.path)
        return d


class ChecksumError(FormatError):
    kind = "checksum"


class ConfigError(SomnusError):
    kind = "config"


class DivergenceError(SomnusError, FloatingPointError):
    """A loss or gradient became non-finite."""

    kind = "divergence"

    def __init__(self, message, parameter=None, partial=None):
        super().__init__(message)
        self.parameter = parameter
        self.partial = partial


class DataError(SomnusError, ValueError):
    """A dataset that cannot be used as asked (for example, empty)."""

    kind = "data"
