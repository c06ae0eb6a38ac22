"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each family of failure gets its own
class rather than a generic ``ValueError``.
"""


class LipCLTError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(LipCLTError):
    """Invalid configuration or parameter (bad range, unknown family, ...)."""

    exit_code = 2

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class ParameterError(ConfigError, ValueError):
    """A numeric argument is outside its admissible range."""


class DomainError(LipCLTError, ValueError):
    """A state point lies outside the state space of the model."""

    exit_code = 2


class SpecError(ConfigError):
    """A model specification violates its invariants (e.g. non-allowable matrix)."""


class HypothesisFailure(LipCLTError):
    """A hypothesis of the limit theorems could not be established."""

    exit_code = 3

    def __init__(self, message, details=None):
        self.details = details or {}
        super().__init__(message)


class NumericalError(LipCLTError, ArithmeticError):
    """Non-convergence, non-finite values or an internal inconsistency."""

    exit_code = 4

    def __init__(self, message, details=None):
        self.details = details or {}
        super().__init__(message)


class EvaluationError(NumericalError):
    """The observable returned NaN or overflowed."""

    def __init__(self, message, maps=None, x=None, step=None):
        self.maps = maps
        self.x = x
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


class AmbiguousDominanceError(NumericalError):
    """Two eigenvalues of (almost) equal modulus compete for dominance."""

    def __init__(self, message, candidates=()):
        self.candidates = tuple(candidates)
        super().__init__(message, {"candidates": [complex(c) for c in candidates]})


class UnsupportedModelError(LipCLTError):
    """The requested route needs a finite-support map distribution."""

    exit_code = 2
