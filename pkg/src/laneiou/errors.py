"""Exception types raised across the package."""


class LaneIoUError(ValueError):
    """Base class for all package errors."""


class InvalidAnnotationError(LaneIoUError):
    pass


class DegenerateLaneError(LaneIoUError):
    pass


class DegenerateAnchorError(LaneIoUError):
    pass


class UndefinedIoUError(LaneIoUError):
    pass


class MaskError(LaneIoUError):
    pass


class ParseError(LaneIoUError):
    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        self.line = line
        self.offset = offset
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class SchemaError(LaneIoUError):
    pass


class DatasetError(LaneIoUError):
    pass
