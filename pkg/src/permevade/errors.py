"""Exception hierarchy shared by every stage of the pipeline."""


class PermEvadeError(Exception):
    """Base class for all errors raised by this package."""


class DuplicatePermission(PermEvadeError, ValueError):
    pass


class EmptyVocabulary(PermEvadeError, ValueError):
    pass


class VocabularyMismatch(PermEvadeError, ValueError):
    pass


class MalformedCell(PermEvadeError, ValueError):
    def __init__(self, row, col, value):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(f"row {row}, column {col}: expected 0 or 1, got {value!r}")


class InsufficientData(PermEvadeError, ValueError):
    pass


class SingleClassDataset(PermEvadeError, ValueError):
    pass


class IndexOutOfRange(PermEvadeError, IndexError):
    pass


class ParseError(PermEvadeError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class NotAManifest(PermEvadeError, ValueError):
    pass


class EmptyCorpus(PermEvadeError, ValueError):
    pass


class UnsupportedModel(PermEvadeError, TypeError):
    pass


class InvalidAction(PermEvadeError, ValueError):
    pass


class EmptyPool(PermEvadeError, ValueError):
    pass


class DimensionMismatch(PermEvadeError, ValueError):
    pass


class EmptyPolicySet(PermEvadeError, ValueError):
    pass


class EmptySet(PermEvadeError, ValueError):
    pass


class BufferFull(PermEvadeError, RuntimeError):
    pass


class ConfigError(PermEvadeError, ValueError):
    pass


class StageError(PermEvadeError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
