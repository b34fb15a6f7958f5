"""Exception types raised across the package."""


class CollapseScopeError(Exception):
    """Base class for all package errors."""


class ValidationError(CollapseScopeError, ValueError):
    """Bad input: maps to CLI exit code 1."""


class InvalidSpectrum(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class DegenerateFeature(ValidationError):
    def __init__(self, feature_index: int, name: str | None = None):
        self.feature_index = feature_index
        label = f"{feature_index}" if name is None else f"{feature_index} ({name})"
        super().__init__(f"feature {label} has zero standard deviation on the source rows")


class NoCoordinates(ValidationError):
    pass


class InvalidBlockSize(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class EmptyDataset(ValidationError):
    pass


class NotSymmetric(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class InvalidTau(ValidationError):
    pass


class LogDomainError(ValidationError):
    pass


class NonFiniteLoss(CollapseScopeError, ArithmeticError):
    def __init__(self, term: str, update: int | None = None):
        self.term = term
        self.update = update
        where = "" if update is None else f" at update {update}"
        super().__init__(f"non-finite {term}{where}")


class NonFiniteGradient(CollapseScopeError, ArithmeticError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient for {name}")


class NoActiveBranch(CollapseScopeError):
    def __init__(self, rank: int | None = None):
        self.rank = rank
        which = "" if rank is None else f" for rank {rank}"
        super().__init__(f"fewer than two active points{which}")


class NothingToCompare(CollapseScopeError):
    pass


class NothingToPlot(CollapseScopeError):
    pass


class ScanPointFailed(CollapseScopeError):
    """Training at one grid temperature failed; the original error is the __cause__."""

    def __init__(self, temperature: float, cause: BaseException):
        self.temperature = temperature
        super().__init__(f"scan point T={temperature:.6g} failed: {cause}")


class MissingInput(ValidationError):
    pass
