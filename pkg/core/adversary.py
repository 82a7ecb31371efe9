"""
Adversary — Lazily committing environment: each round it commits a nested subspace
that evades every query so far, answers from committed structure only, and at the end
exhibits two instances (sign + and sign -) that reproduce the transcript exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from core.errors import (
    AdversaryDefeated,
    ConsistencyBreach,
    InvariantBreach,
    SubspaceNotFound,
)
from core.geometry import Subspace, orthonormalize, restrict_and_lift, sector_contains
from core.mdp import (
    START,
    Family,
    HardInstance,
    NestedChain,
    Policy,
    State,
    StateAction,
    forced_policy,
    shell_image,
    target_policy,
    true_q,
    value_of_policy,
)
from core.packing import DEFAULT_SEARCH_BUDGET, Packing, find_evading_subspace
from core.protocol import FeedbackRecord, QueryBatch, Transcript, feedback_for

logger = logging.getLogger('batchbound.adversary')


class AdversaryMode(str, Enum):
    MULTI_BATCH = "multi_batch"
    FULLY_ADAPTIVE = "fully_adaptive"


class DefeatPolicy(str, Enum):
    COMMIT = "commit"
    RAISE = "raise"


# ─────────────────────── Schedules ───────────────────────

@dataclass(frozen=True, slots=True)
class DimsSchedule:
    dims: tuple[int, ...]
    source: str
    clamped: bool = False

    def __len__(self) -> int:
        return len(self.dims)

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "source": self.source, "clamped": self.clamped}


def _validate_override(d: int, dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(x) for x in dims)
    if not dims:
        raise ValueError("schedule override must be nonempty")
    if any(not 1 <= x <= d for x in dims):
        raise ValueError(f"schedule override {list(dims)} must stay within [1, {d}]")
    if any(b >= a for a, b in zip(dims, dims[1:])):
        raise ValueError(f"schedule override {list(dims)} must be strictly decreasing")
    return dims


def multi_batch_schedule(d: int, K: int, mode: str = "theoretical",
                         override: Sequence[int] | None = None) -> DimsSchedule:
    """Target dimension of B_k for k = 1..K.

    theoretical: 2^ceil(N / 4^k) with 2^N the largest power of two <= d.
    geometric:   max(1, floor(d / 2^k)), the desk-scale default.
    """
    if d < 2 or K < 1:
        raise ValueError(f"need d >= 2 and K >= 1, got d={d}, K={K}")
    if override is not None:
        dims = _validate_override(d, override)
        if len(dims) != K:
            raise ValueError(f"schedule override has {len(dims)} entries for K={K}")
        return DimsSchedule(dims, "override")

    if mode == "theoretical":
        N = d.bit_length() - 1
        dims = tuple(2 ** -(-N // 4 ** k) for k in range(1, K + 1))
        clamped = any(b >= a for a, b in zip(dims, dims[1:]))
    elif mode == "geometric":
        raw = [d // 2 ** k for k in range(1, K + 1)]
        dims = tuple(max(1, x) for x in raw)
        clamped = any(x < 1 for x in raw)
    else:
        raise ValueError(f"unknown schedule mode {mode!r}")
    if clamped:
        logger.warning(f"⚠️ {mode} schedule for d={d}, K={K} bottoms out: {list(dims)}")
    return DimsSchedule(dims, mode, clamped)


def fully_adaptive_schedule(d: int) -> DimsSchedule:
    """One dimension lost per single-query round: d-1, d-2, ..., 1."""
    if d < 2:
        raise ValueError(f"need d >= 2, got {d}")
    return DimsSchedule(tuple(range(d - 1, 0, -1)), "fully_adaptive")


def illustration_schedule() -> DimsSchedule:
    """Three dimensions, two rounds: a plane, then a line."""
    return DimsSchedule((2, 1), "illustration")


# ─────────────────────── State ───────────────────────

@dataclass(slots=True)
class Commitment:
    round: int
    dim: int
    method: str
    guarantee: str
    examined: int
    worst_cosine: float
    raw_dim: int | None = None

    def to_dict(self) -> dict:
        return {
            "round": self.round, "dim": self.dim, "method": self.method,
            "guarantee": self.guarantee, "examined": self.examined,
            "worst_cosine": self.worst_cosine, "raw_dim": self.raw_dim,
        }


@dataclass(slots=True)
class AdversaryState:
    d: int
    gamma: float
    family: Family
    chain_so_far: NestedChain
    history: Transcript
    mode: AdversaryMode
    dims_schedule: DimsSchedule
    seed: int
    search_budget: int = DEFAULT_SEARCH_BUDGET
    packing: Packing | None = None
    on_defeat: DefeatPolicy = DefeatPolicy.COMMIT
    commitments: list[Commitment] = field(default_factory=list)
    committed_w: np.ndarray | None = None
    fallback: HardInstance | None = None
    defeat: AdversaryDefeated | None = None
    rng: np.random.Generator = field(init=False)

    def __post_init__(self):
        self.family = Family(self.family)
        self.mode = AdversaryMode(self.mode)
        self.on_defeat = DefeatPolicy(self.on_defeat)
        self.rng = np.random.default_rng(self.seed)

    @classmethod
    def start(cls, d: int, gamma: float, family: Family | str, mode: AdversaryMode | str,
              K: int, seed: int, schedule: DimsSchedule | None = None, **kwargs) -> AdversaryState:
        mode = AdversaryMode(mode)
        if schedule is None:
            schedule = (fully_adaptive_schedule(d) if mode is AdversaryMode.FULLY_ADAPTIVE
                        else multi_batch_schedule(d, K, mode="geometric"))
        return cls(d=d, gamma=gamma, family=Family(family), chain_so_far=NestedChain([]),
                   history=Transcript(K), mode=mode, dims_schedule=schedule, seed=seed, **kwargs)

    @property
    def committed_upto(self) -> int:
        return len(self.chain_so_far.subspaces)

    @property
    def defeated(self) -> bool:
        return self.fallback is not None

    @property
    def current_space(self) -> Subspace:
        return self.chain_so_far.innermost or Subspace.full(self.d)


# ─────────────────────── Rounds ───────────────────────

def _lazy_feedback(state: AdversaryState, round_index: int, sa: StateAction) -> FeedbackRecord:
    a = np.asarray(sa.action, dtype=float)
    image = shell_image(a, state.chain_so_far.subspaces, state.gamma)
    if image is None:
        raise InvariantBreach(f"round {round_index}: a query sits in the committed sector")
    if state.family is Family.PE:
        return FeedbackRecord(round=round_index, query=sa, reward=0.0,
                              successor=np.array(a), policy_eval=image)
    return FeedbackRecord(round=round_index, query=sa, reward=0.0, successor=image)


def _commit_fallback(state: AdversaryState, batch: QueryBatch, reason: str) -> list[FeedbackRecord]:
    defeat = AdversaryDefeated(batch.round, batch.actions, reason)
    if state.on_defeat is DefeatPolicy.RAISE:
        logger.warning(f"⚠️ {defeat}")
        raise defeat
    space = state.current_space
    w = space.basis[:, 0]
    chain = state.chain_so_far if state.chain_so_far.subspaces else NestedChain([space])
    state.fallback = HardInstance(state.family, chain.closed(w), +1, state.gamma)
    state.defeat = defeat
    logger.warning(f"⚠️ {defeat}; committing sign + and answering truthfully")
    records = [feedback_for(state.fallback, batch.round, sa) for sa in batch.queries]
    state.history.append(batch, records)
    return records


def respond_batch(state: AdversaryState, batch: QueryBatch) -> list[FeedbackRecord]:
    """Commit B_round evading the new queries and answer from committed structure."""
    if batch.round != state.history.rounds + 1:
        raise ValueError(f"expected round {state.history.rounds + 1}, got {batch.round}")
    if batch.induced:
        raise ValueError("expand policy-induced queries before they reach the adversary")
    if state.family is Family.BPI:
        for sa in batch.queries:
            if not sa.at_start and not np.array_equal(np.asarray(sa.state), np.asarray(sa.action)):
                raise ValueError("BPI states other than START have the single action a = s")

    if state.fallback is not None:
        records = [feedback_for(state.fallback, batch.round, sa) for sa in batch.queries]
        state.history.append(batch, records)
        return records

    if batch.round > len(state.dims_schedule):
        return _commit_fallback(state, batch, "dimension schedule exhausted")

    outer = state.current_space
    target = min(state.dims_schedule.dims[batch.round - 1], outer.dim)
    actions = batch.actions
    searches = []

    def inner_find(points: list[np.ndarray], dim: int) -> Subspace:
        packing = state.packing if state.packing is not None and state.packing.d == dim else None
        result = find_evading_subspace(points, dim, target, state.gamma,
                                       budget=state.search_budget, rng=state.rng, packing=packing)
        searches.append((result, points))
        if not result.found:
            raise SubspaceNotFound(result.examined, result.worst_cosine)
        return result.subspace

    try:
        B = restrict_and_lift(outer, actions, inner_find)
    except SubspaceNotFound as e:
        return _commit_fallback(state, batch, str(e))

    for a in actions:
        if sector_contains(B, state.gamma, a):
            logger.error(f"❌ Round {batch.round}: lifted subspace fails to evade a query")
            raise InvariantBreach(f"round {batch.round}: evasion invariant broken after lifting")

    result, points = searches[-1]
    raw_dim = None
    if result.method == "complement":
        raw_dim = outer.dim - orthonormalize(points, outer.dim).shape[1]
    state.chain_so_far = state.chain_so_far.extended(B)
    state.commitments.append(Commitment(
        round=batch.round, dim=B.dim, method=result.method, guarantee=result.guarantee,
        examined=result.examined, worst_cosine=result.worst_cosine, raw_dim=raw_dim,
    ))
    logger.info(
        f"Round {batch.round}: committed B_{batch.round} (dim {B.dim}) via {result.method} "
        f"after {result.examined} candidates, worst cosine {result.worst_cosine:.4f}"
    )

    records = [_lazy_feedback(state, batch.round, sa) for sa in batch.queries]
    state.history.append(batch, records)
    return records


def reveal_policy(state: AdversaryState) -> Policy:
    """Fix w (never the sign) and hand out the PE target policy."""
    if state.fallback is not None:
        return target_policy(state.fallback)
    if state.family is not Family.PE:
        raise ValueError("only the PE family reveals a target policy")
    if not state.chain_so_far.subspaces:
        raise ValueError("no round committed yet")
    if state.committed_w is None:
        state.committed_w = state.chain_so_far.innermost.basis[:, 0].copy()
    inst = HardInstance(Family.PE, state.chain_so_far.closed(state.committed_w), +1, state.gamma)
    return target_policy(inst)


# ─────────────────────── Certificates ───────────────────────

@dataclass(slots=True)
class IndistinguishabilityCertificate:
    instance_plus: HardInstance
    instance_minus: HardInstance
    transcript: Transcript
    q_gap: float
    replay_match: bool
    sign_blind: bool
    value_gap: float | None = None
    commitments: list[Commitment] = field(default_factory=list)

    @property
    def w(self) -> np.ndarray:
        return self.instance_plus.w

    def to_dict(self) -> dict:
        return {
            "q_gap": self.q_gap,
            "replay_match": self.replay_match,
            "w": self.w.tolist(),
            "sign_pair": True,
            "sign_blind": self.sign_blind,
            "value_gap": self.value_gap,
            "family": self.instance_plus.family.value,
            "gamma": self.instance_plus.gamma,
            "rounds": self.transcript.rounds,
            "n_total": self.transcript.n_total,
            "chain": self.instance_plus.chain.to_dict(),
            "commitments": [c.to_dict() for c in self.commitments],
        }


def _replay(inst: HardInstance, transcript: Transcript) -> Transcript:
    replayed = Transcript(transcript.K)
    for batch, _ in transcript.batches:
        replayed.append(batch, [feedback_for(inst, batch.round, sa) for sa in batch.queries])
    return replayed


def finalize(state: AdversaryState) -> IndistinguishabilityCertificate:
    """Pick w, build both signed instances and replay the whole transcript against them."""
    if state.fallback is not None:
        raise state.defeat
    if not state.chain_so_far.subspaces:
        raise ValueError("finalize needs at least one committed round")
    innermost = state.chain_so_far.innermost
    w = state.committed_w if state.committed_w is not None else innermost.basis[:, 0].copy()
    plus = HardInstance(state.family, state.chain_so_far.closed(w), +1, state.gamma)
    minus = plus.with_sign(-1)

    for record in state.history.records():
        if sector_contains(innermost, state.gamma, record.query.action):
            logger.error(f"❌ Round {record.round}: query inside the final committed sector")
            raise InvariantBreach("evasion invariant violated at finalize")

    replays = {}
    for inst in (plus, minus):
        replays[inst.sign] = _replay(inst, state.history)
        for recorded, fresh in zip(state.history.records(), replays[inst.sign].records()):
            if not recorded.same_as(fresh):
                logger.error(f"❌ Replay mismatch in round {recorded.round} for sign {inst.sign:+d}")
                raise ConsistencyBreach(
                    f"consistency breach: round {recorded.round} differs under sign {inst.sign:+d}"
                )

    sign_blind = replays[1].serialize() == replays[-1].serialize() == state.history.serialize()
    probe = StateAction(START, np.asarray(w))
    q_gap = abs(true_q(plus, probe) - true_q(minus, probe))
    value_gap = None
    if state.family is Family.BPI:
        value_gap = abs(value_of_policy(plus, forced_policy(plus, w), START)
                        - value_of_policy(minus, forced_policy(minus, w), START))

    logger.info(
        f"✅ Certificate issued: {state.history.rounds} rounds, {state.history.n_total} queries, "
        f"dims {state.chain_so_far.dims}, q_gap {q_gap:.1f}"
    )
    return IndistinguishabilityCertificate(
        instance_plus=plus, instance_minus=minus, transcript=state.history,
        q_gap=q_gap, replay_match=True, sign_blind=sign_blind, value_gap=value_gap,
        commitments=list(state.commitments),
    )


class LazyAdversary:
    """Environment adapter over an AdversaryState."""

    def __init__(self, state: AdversaryState):
        self.state = state
        self.family = state.family
        self.d = state.d
        self.gamma = state.gamma

    def respond(self, batch: QueryBatch) -> list[FeedbackRecord]:
        return respond_batch(self.state, batch)

    def step(self, sa: StateAction) -> State:
        if self.family is not Family.PE:
            raise ValueError("policy-induced queries against the BPI adversary are not supported")
        return np.array(sa.action, dtype=float)

    def reveal_policy(self) -> Policy:
        return reveal_policy(self.state)

    def finalize(self) -> IndistinguishabilityCertificate:
        return finalize(self.state)
