"""
Errors — Exception hierarchy shared by every batchbound module.

Invariant-class errors (ConsistencyBreach, InvariantBreach, PigeonholeViolated)
abort a session; the CLI maps them to exit code 2. ConfigError maps to exit code 3.
"""

from __future__ import annotations

from typing import Sequence


class BatchboundError(Exception):
    """Base class for all batchbound errors."""


class DimensionMismatchError(BatchboundError, ValueError):
    """Vectors or subspaces live in different ambient dimensions."""


class NoComplementError(BatchboundError):
    """The given vectors already span the whole space."""

    def __init__(self, message: str = "no complement"):
        super().__init__(message)


class PackingTooCoarseError(BatchboundError):
    """A packing is too small or its members are too close for the pigeonhole selector."""

    def __init__(self, message: str = "packing too coarse"):
        super().__init__(message)


class InvariantBreach(BatchboundError):
    """A structural invariant (evasion, independence, containment) does not hold."""


class PigeonholeViolated(InvariantBreach):
    """A selector returned a member whose sector contains a query."""

    def __init__(self, message: str = "pigeonhole selection violated"):
        super().__init__(message)


class ConsistencyBreach(InvariantBreach):
    """Replaying a transcript against the finalized instances produced different feedback."""

    def __init__(self, message: str = "consistency breach"):
        super().__init__(message)


class SubspaceNotFound(BatchboundError):
    """The evading-subspace search exhausted its candidate budget."""

    def __init__(self, examined: int, best_cosine: float):
        self.examined = examined
        self.best_cosine = best_cosine
        super().__init__(
            f"no evading subspace after {examined} candidates (best max-cosine {best_cosine:.6f})"
        )


class AdversaryDefeated(BatchboundError):
    """The adversary could not find an evading subspace for a round.

    This is a legitimate outcome of a game, not a bug: the learner's queries
    exceeded what the search could evade at this dimension.
    """

    def __init__(self, round_index: int, queries: Sequence, reason: str = ""):
        self.round_index = round_index
        self.queries = list(queries)
        self.reason = reason
        detail = f" ({reason})" if reason else ""
        super().__init__(
            f"adversary defeated at round {round_index} with {len(self.queries)} queries{detail}"
        )


class IllConditionedError(BatchboundError):
    """A linear system is too ill-conditioned to certify an exact solution."""

    def __init__(self, condition_number: float):
        self.condition_number = condition_number
        super().__init__(f"ill-conditioned (condition number {condition_number:.3e})")


class ConfigError(BatchboundError, ValueError):
    """An experiment configuration field is missing or invalid."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
