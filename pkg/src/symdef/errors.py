"""Exception hierarchy.

Anything deriving from :class:`ValidationError` is a user-input problem and
maps to CLI exit code 1; everything else is a runtime failure (exit 2).
"""


class SymdefError(Exception):
    pass


class ValidationError(SymdefError):
    pass


class FormulaSyntaxError(ValidationError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class FormulaTypeError(ValidationError):
    pass


class UnknownAlgorithmError(ValidationError):
    pass
