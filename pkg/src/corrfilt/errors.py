"""Exception hierarchy shared by every corrfilt module."""

from __future__ import annotations


class CorrfiltError(Exception):
    """Base class for all package errors."""


class ModelValidationError(CorrfiltError, ValueError):
    """A model ingredient violates its declared invariants."""


class NonsingularityError(ModelValidationError):
    """A Markov noise transition matrix is (numerically) singular."""

    def __init__(self, message: str, k: int):
        super().__init__(message)
        self.k = k


class ShapeError(CorrfiltError, ValueError):
    """Array dimensions do not match the declared model dimensions."""


class SequencingError(CorrfiltError, ValueError):
    """A recursion was fed a state or record with the wrong time index."""


class EvaluationError(CorrfiltError, ArithmeticError):
    """The observation function returned a non-finite value."""

    def __init__(self, message: str, k: int):
        super().__init__(message)
        self.k = k


class NumericalFailure(CorrfiltError, ArithmeticError):
    """An estimator quantity became unusable (indefinite, non-finite, overflow).

    ``k``, ``run`` and ``seed`` are filled in as the error propagates up
    through the Monte Carlo harness so the failing replication can be
    replayed.
    """

    def __init__(self, message: str, k: int | None = None,
                 run: int | None = None, seed: int | None = None):
        super().__init__(message)
        self.k = k
        self.run = run
        self.seed = seed

    def __str__(self) -> str:
        base = super().__str__()
        where = [f"{name}={val}" for name, val in
                 (("k", self.k), ("run", self.run), ("seed", self.seed))
                 if val is not None]
        return f"{base} ({', '.join(where)})" if where else base


class OracleFailure(CorrfiltError, ArithmeticError):
    """The batch projection Gram matrix could not be factorized."""


class ConfigError(CorrfiltError, ValueError):
    """Invalid configuration value; ``key`` names the offending entry."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
