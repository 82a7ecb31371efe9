"""
Learner — The exact d-query fully adaptive policy-evaluation solver and the baseline
multi-batch learners used to drive the adversary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import linalg

from core.errors import IllConditionedError, InvariantBreach, NoComplementError
from core.geometry import orthonormal_complement_basis, orthonormalize, random_unit, unit
from core.mdp import START, Family, Policy, StateAction, at_start
from core.protocol import (
    FeedbackRecord,
    LearnerOutput,
    PolicyInducedQuery,
    QueryBatch,
    QueryMode,
    Transcript,
)

logger = logging.getLogger('batchbound.learner')

INDEPENDENCE_TOL = 1e-9
MAX_CONDITION = 1e12
SOLVE_RESIDUAL_TOL = 1e-9


# ─────────────────────── Exact solver ───────────────────────

@dataclass(frozen=True, slots=True)
class SolverState:
    d: int
    residual_vectors: tuple[np.ndarray, ...] = ()
    rewards: tuple[float, ...] = ()

    @property
    def k(self) -> int:
        """Index of the next query (1-based)."""
        return len(self.residual_vectors) + 1

    @property
    def complete(self) -> bool:
        return len(self.residual_vectors) == self.d


def next_query(state: SolverState, d: int) -> StateAction:
    """Unit action orthogonal to every stored residual, asked at START."""
    if state.k > d:
        raise InvariantBreach(f"solver already holds {d} residuals")
    try:
        complement = orthonormal_complement_basis(list(state.residual_vectors), d)
    except NoComplementError as e:
        raise InvariantBreach("residuals span R^d before d queries") from e
    return at_start(complement.basis[:, 0])


def absorb_feedback(state: SolverState, fb: FeedbackRecord, gamma: float,
                    policy_eval: np.ndarray | None = None) -> SolverState:
    """Append v = a - gamma * phi(s', pi(s')) and r.

    For BPI feedback the successor's single action is the successor itself.
    """
    if policy_eval is None:
        policy_eval = fb.policy_eval if fb.policy_eval is not None else fb.successor
    v = np.asarray(fb.query.action, dtype=float) - gamma * np.asarray(policy_eval, dtype=float)
    residuals = state.residual_vectors + (v,)
    smallest = float(linalg.svdvals(np.vstack(residuals))[-1])
    if len(residuals) > state.d or smallest <= INDEPENDENCE_TOL:
        logger.error(f"❌ Residual {len(residuals)} is dependent (smallest singular value {smallest:.3e})")
        raise InvariantBreach(
            f"independence violated at query {len(residuals)}: smallest singular value {smallest:.3e}"
        )
    return replace(state, residual_vectors=residuals, rewards=state.rewards + (float(fb.reward),))


def solve(state: SolverState) -> np.ndarray:
    """QR solve of the stacked d x d system (Phi - gamma Phi+) theta = r."""
    if not state.complete:
        raise ValueError(f"solve needs {state.d} residuals, holds {len(state.residual_vectors)}")
    V = np.vstack(state.residual_vectors)
    r = np.asarray(state.rewards, dtype=float)
    condition = float(np.linalg.cond(V))
    if condition > MAX_CONDITION:
        raise IllConditionedError(condition)
    Q, R = linalg.qr(V)
    theta = linalg.solve_triangular(R, Q.T @ r)
    residual = float(np.max(np.abs(V @ theta - r)))
    if residual > SOLVE_RESIDUAL_TOL:
        raise InvariantBreach(f"solve residual {residual:.3e} above tolerance")
    return theta


def solve_partial(state: SolverState) -> np.ndarray:
    """Minimum-norm least-squares theta from however many residuals are held."""
    if not state.residual_vectors:
        return np.zeros(state.d)
    V = np.vstack(state.residual_vectors)
    theta, *_ = np.linalg.lstsq(V, np.asarray(state.rewards, dtype=float), rcond=None)
    return theta


def _first_action(theta: np.ndarray, d: int) -> np.ndarray:
    norm = float(np.linalg.norm(theta))
    return theta / norm if norm > 0.0 else np.array(unit(0, d))


class ExactEvaluationLearner:
    """Fully adaptive solver: one query per round, exact after d rounds.

    `max_queries` truncates the run; the output is then the min-norm guess and is
    flagged incomplete. Rounds past the last query repeat the first one and are ignored.
    """

    def __init__(self, d: int, gamma: float, family: Family | str = Family.PE,
                 max_queries: int | None = None):
        self.d = d
        self.gamma = gamma
        self.family = Family(family)
        self.max_queries = d if max_queries is None else max(1, min(max_queries, d))
        self.state = SolverState(d)
        self.policy: Policy | None = None
        self._absorbed_rounds = 0
        self._first_query: StateAction | None = None

    def _absorb(self, transcript: Transcript):
        for _, records in transcript.batches[self._absorbed_rounds:]:
            for record in records:
                if len(self.state.residual_vectors) < self.max_queries:
                    self.state = absorb_feedback(self.state, record, self.gamma)
        self._absorbed_rounds = transcript.rounds

    def select_batch(self, round_index: int, transcript: Transcript) -> QueryBatch:
        self._absorb(transcript)
        if len(self.state.residual_vectors) >= self.max_queries:
            return QueryBatch(round_index, (self._first_query,))
        query = next_query(self.state, self.d)
        if self._first_query is None:
            self._first_query = query
        return QueryBatch(round_index, (query,))

    def receive_policy(self, policy: Policy) -> None:
        self.policy = policy

    def output(self, transcript: Transcript) -> LearnerOutput:
        self._absorb(transcript)
        queries = len(self.state.residual_vectors)
        if self.state.complete:
            theta = solve(self.state)
            logger.info(f"✅ Solver recovered theta from {queries} queries")
        else:
            theta = solve_partial(self.state)
            logger.info(f"Solver stopped after {queries}/{self.d} queries; min-norm estimate")
        return LearnerOutput(
            family=self.family, theta=theta,
            first_action=_first_action(theta, self.d) if self.family is Family.BPI else None,
            complete=self.state.complete, queries=queries,
        )


# ─────────────────────── Baselines ───────────────────────

class BaselineKind(str, Enum):
    RANDOM_UNIT = "random_unit"
    COORDINATE = "coordinate"
    GREEDY_ORTHOGONAL = "greedy_orthogonal"


def bellman_least_squares(records: Sequence[FeedbackRecord], gamma: float, d: int) -> np.ndarray:
    """Min-norm theta fitting r = (a - gamma * phi(s', pi(s')))^T theta over all records."""
    if not records:
        return np.zeros(d)
    rows, rhs = [], []
    for record in records:
        follow = record.policy_eval if record.policy_eval is not None else record.successor
        rows.append(np.asarray(record.query.action, dtype=float) - gamma * np.asarray(follow))
        rhs.append(record.reward)
    theta, *_ = np.linalg.lstsq(np.vstack(rows), np.asarray(rhs), rcond=None)
    return theta


def _halving_policy(first: np.ndarray) -> Policy:
    """Play `first` at START, then half the current state."""
    return lambda s: first if s is START else 0.5 * np.asarray(s, dtype=float)


class BaselineBatchLearner:
    """Baseline learners: random, coordinate sweep, greedy in the revealed span."""

    INDUCED_HORIZON = 3

    def __init__(self, kind: BaselineKind | str, n_k: int | Sequence[int], seed: int, *,
                 d: int, gamma: float, family: Family | str = Family.PE,
                 query_mode: QueryMode | str = QueryMode.POLICY_FREE):
        self.kind = BaselineKind(kind)
        self.sizes = n_k
        if any(n < 1 for n in ([n_k] if isinstance(n_k, int) else n_k)):
            raise ValueError("every batch size must be >= 1")
        self.seed = seed
        self.d = d
        self.gamma = gamma
        self.family = Family(family)
        self.query_mode = QueryMode(query_mode)
        if self.query_mode is QueryMode.POLICY_INDUCED and self.family is Family.BPI:
            raise ValueError("policy-induced queries are only supported for PE")
        self.policy: Policy | None = None

    def batch_size(self, round_index: int) -> int:
        if isinstance(self.sizes, int):
            return self.sizes
        return self.sizes[round_index - 1]

    def _rng(self, round_index: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, round_index])

    def _actions(self, round_index: int, transcript: Transcript) -> list[np.ndarray]:
        n = self.batch_size(round_index)
        rng = self._rng(round_index)
        if self.kind is BaselineKind.COORDINATE:
            offset = sum(self.batch_size(k) for k in range(1, round_index))
            return [np.array(unit((offset + i) % self.d, self.d)) for i in range(n)]
        if self.kind is BaselineKind.GREEDY_ORTHOGONAL:
            revealed = [r.policy_eval if r.policy_eval is not None else r.successor
                        for r in transcript.last_records()]
            basis = orthonormalize(revealed, self.d) if revealed else np.zeros((self.d, 0))
            if basis.shape[1] > 0:
                out = []
                for _ in range(n):
                    v = basis @ random_unit(basis.shape[1], rng)
                    out.append(v / np.linalg.norm(v))
                return out
        return [np.array(random_unit(self.d, rng)) for _ in range(n)]

    def select_batch(self, round_index: int, transcript: Transcript) -> QueryBatch:
        actions = self._actions(round_index, transcript)
        if self.query_mode is QueryMode.POLICY_INDUCED:
            induced = tuple(PolicyInducedQuery(START, _halving_policy(a), self.INDUCED_HORIZON)
                            for a in actions)
            return QueryBatch(round_index, induced=induced)
        return QueryBatch(round_index, tuple(at_start(a) for a in actions))

    def receive_policy(self, policy: Policy) -> None:
        self.policy = policy

    def output(self, transcript: Transcript) -> LearnerOutput:
        theta = bellman_least_squares(list(transcript.records()), self.gamma, self.d)
        return LearnerOutput(
            family=self.family, theta=theta,
            first_action=_first_action(theta, self.d) if self.family is Family.BPI else None,
            complete=False, queries=transcript.n_total,
        )


def baseline_batch_learner(kind: BaselineKind | str, n_k: int | Sequence[int], seed: int, *,
                           d: int, gamma: float, family: Family | str = Family.PE,
                           query_mode: QueryMode | str = QueryMode.POLICY_FREE) -> BaselineBatchLearner:
    return BaselineBatchLearner(kind, n_k, seed, d=d, gamma=gamma, family=family,
                                query_mode=query_mode)
