"""Exception types shared across the package.

Every error carries a stable ``code`` string so the HTTP service can relay
machine-readable error identifiers without string-matching messages.
"""


class LayoutGenError(ValueError):
    code = "LayoutGenError"


class EmptyLayout(LayoutGenError):
    code = "EmptyLayout"


class TooManyObjects(LayoutGenError):
    code = "TooManyObjects"


class InvalidBBox(LayoutGenError):
    code = "InvalidBBox"


class TooManyAttributes(LayoutGenError):
    code = "TooManyAttributes"


class UnknownIndex(LayoutGenError):
    code = "UnknownIndex"


class ShiftOutOfCanvas(LayoutGenError):
    code = "ShiftOutOfCanvas"


class ParseError(LayoutGenError):
    code = "ParseError"


class EmptyObjectList(LayoutGenError):
    code = "EmptyObjectList"


class EmptyInput(LayoutGenError):
    code = "EmptyInput"


class NonFiniteLoss(RuntimeError):
    """Raised by the trainer when any loss term becomes NaN/Inf."""

    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite loss term {term!r}: {value!r}")
        self.term = term
        self.value = value


class MissingAnnotationFile(LayoutGenError):
    code = "MissingAnnotationFile"


class SchemaError(LayoutGenError):
    code = "SchemaError"
