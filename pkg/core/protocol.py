"""
Protocol — The multi-batch learning model: query batches, feedback, policy-induced
expansion, transcripts and soundness grading.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, Protocol, Sequence

import numpy as np

from core.errors import InvariantBreach
from core.geometry import BALL_TOL, ball_vector
from core.mdp import (
    START,
    Family,
    HardInstance,
    Policy,
    State,
    StateAction,
    reward,
    successor,
    target_policy,
    target_policy_action,
    true_q,
)

logger = logging.getLogger('batchbound.protocol')


class QueryMode(str, Enum):
    POLICY_FREE = "policy_free"
    POLICY_INDUCED = "policy_induced"


@dataclass(frozen=True, slots=True)
class PolicyInducedQuery:
    """Roll `policy` from `start` for `horizon` steps and query every visited pair."""
    start: State
    policy: Policy
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"policy-induced horizon must be >= 1, got {self.horizon}")


@dataclass(slots=True)
class QueryBatch:
    round: int
    queries: tuple[StateAction, ...] = ()
    induced: tuple[PolicyInducedQuery, ...] = ()

    def __post_init__(self):
        self.queries = tuple(self.queries)
        self.induced = tuple(self.induced)
        if self.round < 1:
            raise ValueError(f"round must be >= 1, got {self.round}")
        if not self.queries and not self.induced:
            raise ValueError(f"round {self.round}: learner emitted an empty batch")

    @property
    def actions(self) -> list[np.ndarray]:
        return [np.asarray(q.action, dtype=float) for q in self.queries]


@dataclass(slots=True)
class FeedbackRecord:
    round: int
    query: StateAction
    reward: float
    successor: np.ndarray
    policy_eval: np.ndarray | None = None
    deterministic: bool = True

    def same_as(self, other: FeedbackRecord) -> bool:
        """Bitwise equality of every field."""
        if self.round != other.round or self.query.key() != other.query.key():
            return False
        if self.reward != other.reward or not np.array_equal(self.successor, other.successor):
            return False
        if (self.policy_eval is None) != (other.policy_eval is None):
            return False
        return self.policy_eval is None or np.array_equal(self.policy_eval, other.policy_eval)

    def key(self) -> tuple:
        pe = None if self.policy_eval is None else np.asarray(self.policy_eval).tobytes()
        return (self.query.key(), self.reward, np.asarray(self.successor).tobytes(), pe)

    def to_dict(self) -> dict:
        data = {"round": self.round, **self.query.to_dict(), "r": self.reward,
                "s_next": np.asarray(self.successor).tolist()}
        if self.policy_eval is not None:
            data["pi_eval"] = np.asarray(self.policy_eval).tolist()
        if not self.deterministic:
            data["deterministic"] = False
        return data

    @classmethod
    def from_dict(cls, data: dict) -> FeedbackRecord:
        pe = data.get("pi_eval")
        return cls(
            round=int(data["round"]),
            query=StateAction.from_dict(data),
            reward=float(data["r"]),
            successor=np.asarray(data["s_next"], dtype=float),
            policy_eval=None if pe is None else np.asarray(pe, dtype=float),
            deterministic=bool(data.get("deterministic", True)),
        )


class Transcript:
    """Round-ordered batches with their feedback."""

    __slots__ = ('K', 'batches')

    def __init__(self, K: int):
        self.K = K
        self.batches: list[tuple[QueryBatch, list[FeedbackRecord]]] = []

    @property
    def n_total(self) -> int:
        return sum(len(batch.queries) for batch, _ in self.batches)

    @property
    def rounds(self) -> int:
        return len(self.batches)

    def records(self) -> Iterator[FeedbackRecord]:
        for _, records in self.batches:
            yield from records

    def last_records(self) -> list[FeedbackRecord]:
        return self.batches[-1][1] if self.batches else []

    def append(self, batch: QueryBatch, records: Sequence[FeedbackRecord]):
        expected = self.rounds + 1
        if batch.round != expected:
            raise InvariantBreach(f"batch for round {batch.round} arrived, expected round {expected}")
        if len(records) != len(batch.queries):
            raise InvariantBreach(
                f"round {batch.round}: {len(records)} feedback records for {len(batch.queries)} queries"
            )
        for query, record in zip(batch.queries, records):
            if record.query.key() != query.key() or record.round != batch.round:
                raise InvariantBreach(f"round {batch.round}: feedback does not match its query")
        self.batches.append((batch, list(records)))

    def to_jsonl(self) -> str:
        return "".join(json.dumps(record.to_dict()) + "\n" for record in self.records())

    def serialize(self) -> bytes:
        return self.to_jsonl().encode("utf-8")

    @classmethod
    def from_jsonl(cls, text: str, K: int | None = None) -> Transcript:
        by_round: dict[int, list[FeedbackRecord]] = {}
        for line in text.splitlines():
            if line.strip():
                record = FeedbackRecord.from_dict(json.loads(line))
                by_round.setdefault(record.round, []).append(record)
        transcript = cls(K if K is not None else max(by_round, default=0))
        for round_index in sorted(by_round):
            records = by_round[round_index]
            transcript.append(QueryBatch(round_index, tuple(r.query for r in records)), records)
        return transcript


# ─────────────────────── Environments and learners ───────────────────────

class Environment(Protocol):
    family: Family
    d: int
    gamma: float

    def respond(self, batch: QueryBatch) -> list[FeedbackRecord]: ...

    def step(self, sa: StateAction) -> State: ...

    def reveal_policy(self) -> Policy: ...


@dataclass(slots=True)
class LearnerOutput:
    """Q-hat(s-bar, .) for PE, first action of pi-hat for BPI."""
    family: Family
    theta: np.ndarray | None = None
    first_action: np.ndarray | None = None
    complete: bool = True
    queries: int = 0

    def qhat(self, action: np.ndarray) -> float:
        if self.theta is None:
            return 0.0
        return float(np.asarray(action, dtype=float) @ self.theta)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "theta": None if self.theta is None else self.theta.tolist(),
            "first_action": None if self.first_action is None else self.first_action.tolist(),
            "complete": self.complete,
            "queries": self.queries,
        }


class Learner(Protocol):
    def select_batch(self, round_index: int, transcript: Transcript) -> QueryBatch: ...

    def receive_policy(self, policy: Policy) -> None: ...

    def output(self, transcript: Transcript) -> LearnerOutput: ...


def feedback_for(inst: HardInstance, round_index: int, sa: StateAction) -> FeedbackRecord:
    """Feedback of a committed instance for one query."""
    s_next = successor(inst, sa)
    policy_eval = target_policy_action(inst, s_next) if inst.family is Family.PE else None
    return FeedbackRecord(round=round_index, query=sa, reward=reward(inst, sa),
                          successor=s_next, policy_eval=policy_eval)


class FixedInstanceEnvironment:
    """Environment backed by a fully committed hard instance."""

    def __init__(self, inst: HardInstance):
        self.inst = inst
        self.family = inst.family
        self.d = inst.d
        self.gamma = inst.gamma

    def respond(self, batch: QueryBatch) -> list[FeedbackRecord]:
        return [feedback_for(self.inst, batch.round, sa) for sa in batch.queries]

    def step(self, sa: StateAction) -> State:
        return successor(self.inst, sa)

    def reveal_policy(self) -> Policy:
        return target_policy(self.inst)


@dataclass(slots=True)
class ProtocolResult:
    transcript: Transcript
    output: LearnerOutput


def expand_policy_induced(env: Environment,
                          triples: Sequence[PolicyInducedQuery]) -> list[StateAction]:
    """Reach sets of deterministic rollouts, deduplicated by exact coordinates."""
    seen: set[tuple] = set()
    pairs: list[StateAction] = []
    for triple in triples:
        state = triple.start
        for _ in range(triple.horizon):
            action = ball_vector(np.asarray(triple.policy(state), dtype=float))
            sa = StateAction(state, action)
            if sa.key() not in seen:
                seen.add(sa.key())
                pairs.append(sa)
            state = env.step(sa)
    return pairs


def _check_feedback(family: Family, batch: QueryBatch, records: Sequence[FeedbackRecord]):
    if len(records) != len(batch.queries):
        raise InvariantBreach(
            f"round {batch.round}: environment answered {len(records)} of {len(batch.queries)} queries"
        )
    for record in records:
        if (record.policy_eval is None) == (family is Family.PE):
            raise InvariantBreach(f"round {batch.round}: policy evaluation present iff PE is violated")
        if float(np.linalg.norm(record.successor)) > 1.0 + BALL_TOL:
            raise InvariantBreach(f"round {batch.round}: successor left the unit ball")


def run_protocol(env: Environment, learner: Learner, K: int, problem: Family | str) -> ProtocolResult:
    """K rounds of select / answer; the target policy is revealed after round K (PE)."""
    problem = Family(problem)
    if K < 1:
        raise ValueError("K must be >= 1")
    transcript = Transcript(K)
    for round_index in range(1, K + 1):
        batch = learner.select_batch(round_index, transcript)
        if batch.round != round_index:
            raise ValueError(f"learner answered round {round_index} with a batch for round {batch.round}")
        if batch.induced:
            expanded = expand_policy_induced(env, batch.induced)
            known = {q.key() for q in batch.queries}
            extra = tuple(sa for sa in expanded if sa.key() not in known)
            batch = QueryBatch(round_index, batch.queries + extra)
        records = env.respond(batch)
        _check_feedback(problem, batch, records)
        transcript.append(batch, records)
        logger.debug(f"Round {round_index}/{K}: {len(batch.queries)} queries answered")
    if problem is Family.PE:
        learner.receive_policy(env.reveal_policy())
    output = learner.output(transcript)
    return ProtocolResult(transcript=transcript, output=output)


# ─────────────────────── Soundness ───────────────────────

@dataclass(slots=True)
class PeSoundness:
    max_error: float
    sound: bool


@dataclass(slots=True)
class BpiSoundness:
    suboptimality: float
    sound: bool


def default_probes(inst: HardInstance) -> list[np.ndarray]:
    """w, -w and the standard basis."""
    return [np.asarray(inst.w), -np.asarray(inst.w)] + list(np.eye(inst.d))


def evaluate_pe_soundness(inst: HardInstance, qhat: Callable[[np.ndarray], float], eps: float,
                          probe_actions: Sequence[np.ndarray]) -> PeSoundness:
    if len(probe_actions) == 0:
        raise ValueError("probe_actions must be nonempty")
    errors = [abs(true_q(inst, StateAction(START, np.asarray(a, dtype=float))) - qhat(a))
              for a in probe_actions]
    max_error = float(max(errors))
    return PeSoundness(max_error=max_error, sound=max_error < eps)


def evaluate_bpi_soundness(inst: HardInstance, first_action: np.ndarray, eps: float) -> BpiSoundness:
    """V*(s-bar) - V^pi(s-bar) = 1 - sign * a^T w."""
    a = ball_vector(np.asarray(first_action, dtype=float))
    suboptimality = 1.0 - inst.sign * float(a @ inst.w)
    return BpiSoundness(suboptimality=suboptimality, sound=suboptimality < eps)


def sample_efficiency_check(t: Transcript, d: int, alpha: float, T: int) -> bool:
    if alpha <= 0 or T < 1:
        raise ValueError("need alpha > 0 and T >= 1")
    return t.n_total <= alpha * d ** T
