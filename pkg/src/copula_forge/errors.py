"""Exception types shared across the package."""


class CopulaForgeError(Exception):
    """Base class for all package errors."""


class ExpressionError(CopulaForgeError):
    """Problem with a label-function expression."""


class ExpressionSyntaxError(ExpressionError):
    """Lexical, syntax or arity error, with the character offset where it was found."""

    def __init__(self, message: str, position: int, kind: str = "syntax"):
        super().__init__(f"{kind} error at offset {position}: {message}")
        self.position = position
        self.kind = kind


class UnboundVariableError(ExpressionError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable {name!r}")
        self.name = name


class NonFiniteError(ExpressionError):
    """Evaluation produced inf/nan. ``node_kind`` names the operation that did it."""

    def __init__(self, node_kind: str, row: int | None = None):
        where = "" if row is None else f" at row {row}"
        super().__init__(f"non-finite value produced by {node_kind!r}{where}")
        self.node_kind = node_kind
        self.row = row


class DifferentiationError(ExpressionError):
    pass


class NotPositiveDefiniteError(CopulaForgeError):
    def __init__(self, pivot: int):
        super().__init__(f"matrix is not positive definite (failed at pivot {pivot})")
        self.pivot = pivot


class SpecValidationError(CopulaForgeError):
    """Raised with every violation found, not only the first."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


class TrainingError(CopulaForgeError):
    pass
