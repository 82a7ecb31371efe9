"""
MDP — The two hard families (policy evaluation and best-policy identification):
rewards, transitions, target policies, action values, Bellman operator and
realizability checks.

States, actions and features all live in the unit ball; phi(s, a) = a.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from core.errors import InvariantBreach
from core.geometry import (
    BALL_TOL,
    ORTHO_TOL,
    Subspace,
    ball_vector,
    cap_contains,
    orthonormal_complement_basis,
    random_subspace,
    random_unit,
    sector_contains,
)
from core.packing import GAMMA_FLOOR

logger = logging.getLogger('batchbound.mdp')

RESIDUAL_TOL = 1e-9


class Family(str, Enum):
    PE = "PE"
    BPI = "BPI"


class _StartState:
    """The distinguished start state s-bar."""

    _instance: _StartState | None = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "START"

    def __reduce__(self):
        return (_StartState, ())


START = _StartState()

State = np.ndarray | _StartState
Policy = Callable[[State], np.ndarray]
QFunction = Callable[['StateAction'], float]


@dataclass(frozen=True, slots=True)
class StateAction:
    state: State
    action: np.ndarray

    @property
    def at_start(self) -> bool:
        return self.state is START

    def key(self) -> tuple:
        """Exact-coordinate identity used for deduplication."""
        state = "START" if self.at_start else np.asarray(self.state, dtype=float).tobytes()
        return state, np.asarray(self.action, dtype=float).tobytes()

    def to_dict(self) -> dict:
        return {
            "s": "START" if self.at_start else np.asarray(self.state).tolist(),
            "a": np.asarray(self.action).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> StateAction:
        state = START if data["s"] == "START" else ball_vector(data["s"])
        return cls(state=state, action=ball_vector(data["a"]))


def at_start(action: np.ndarray) -> StateAction:
    return StateAction(START, ball_vector(action))


# ─────────────────────── Chains and instances ───────────────────────

class NestedChain:
    """B_1 ⊇ B_2 ⊇ ... ⊇ B_L, optionally closed by a unit direction w ∈ B_L."""

    __slots__ = ('subspaces', 'w', 'committed_upto')

    def __init__(self, subspaces: Sequence[Subspace], w: np.ndarray | None = None,
                 committed_upto: int | None = None):
        self.subspaces: tuple[Subspace, ...] = tuple(subspaces)
        self.w = None if w is None else ball_vector(w)
        self.committed_upto = len(self.subspaces) if committed_upto is None else committed_upto
        self._validate()

    def _validate(self):
        if not self.subspaces:
            if self.w is not None:
                raise InvariantBreach("w given for an empty chain")
            return
        d = self.subspaces[0].ambient_dim
        for k in range(1, len(self.subspaces)):
            outer, inner = self.subspaces[k - 1], self.subspaces[k]
            if inner.ambient_dim != d:
                raise InvariantBreach(f"B_{k + 1} lives in R^{inner.ambient_dim}, chain in R^{d}")
            if inner.dim > outer.dim or not outer.contains_subspace(inner):
                raise InvariantBreach(f"B_{k + 1} is not contained in B_{k}")
        if self.w is not None:
            if self.w.size != d:
                raise InvariantBreach(f"w has length {self.w.size}, chain lives in R^{d}")
            if abs(float(np.linalg.norm(self.w)) - 1.0) > BALL_TOL:
                raise InvariantBreach(f"w must be a unit vector (norm {np.linalg.norm(self.w):.12f})")
            inner = self.subspaces[-1]
            if float(np.linalg.norm(inner.project(self.w) - self.w)) > ORTHO_TOL:
                raise InvariantBreach("w does not lie in the innermost subspace")

    @property
    def d(self) -> int:
        return self.subspaces[0].ambient_dim

    @property
    def innermost(self) -> Subspace | None:
        return self.subspaces[-1] if self.subspaces else None

    @property
    def dims(self) -> list[int]:
        return [B.dim for B in self.subspaces]

    def extended(self, subspace: Subspace) -> NestedChain:
        return NestedChain(self.subspaces + (subspace,), self.w)

    def closed(self, w: np.ndarray) -> NestedChain:
        return NestedChain(self.subspaces, w)

    def to_dict(self) -> dict:
        return {
            "subspaces": [B.to_dict() for B in self.subspaces],
            "w": None if self.w is None else self.w.tolist(),
            "committed_upto": self.committed_upto,
        }

    @classmethod
    def from_dict(cls, data: dict) -> NestedChain:
        return cls([Subspace.from_dict(item) for item in data["subspaces"]],
                   w=data.get("w"), committed_upto=data.get("committed_upto"))


class HardInstance:
    """A fully committed member of the PE or BPI hard family.

    gamma is accepted down to sqrt(3/4) inclusive so boundary budgets can be tabulated;
    experiment configs keep the open interval.
    """

    __slots__ = ('family', 'chain', 'sign', 'gamma', 'levels', 'w_line')

    def __init__(self, family: Family | str, chain: NestedChain, sign: int, gamma: float):
        self.family = Family(family)
        if chain.w is None or not chain.subspaces:
            raise InvariantBreach("instance needs a committed chain with w")
        if sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {sign}")
        if not (GAMMA_FLOOR - 1e-12 <= gamma < 1.0):
            raise ValueError(f"gamma={gamma} must lie in [sqrt(3/4), 1)")
        self.chain = chain
        self.sign = int(sign)
        self.gamma = float(gamma)
        self.w_line = Subspace(chain.w.reshape(-1, 1) / np.linalg.norm(chain.w))
        # B_1..B_K followed by <w>
        self.levels: tuple[Subspace, ...] = chain.subspaces + (self.w_line,)

    @property
    def d(self) -> int:
        return self.chain.d

    @property
    def w(self) -> np.ndarray:
        return self.chain.w

    @property
    def K(self) -> int:
        return len(self.chain.subspaces)

    def with_sign(self, sign: int) -> HardInstance:
        return HardInstance(self.family, self.chain, sign, self.gamma)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "gamma": self.gamma,
            "sign": self.sign,
            "chain": self.chain.to_dict(),
            "w": self.w.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> HardInstance:
        chain_data = dict(data["chain"])
        chain_data["w"] = data.get("w", chain_data.get("w"))
        return cls(data["family"], NestedChain.from_dict(chain_data),
                   int(data["sign"]), float(data["gamma"]))

    def __repr__(self) -> str:
        return (f"HardInstance({self.family.value}, d={self.d}, dims={self.chain.dims}, "
                f"sign={self.sign:+d}, gamma={self.gamma})")


# ─────────────────────── Case split ───────────────────────

def rescaled_projection(x: np.ndarray, B: Subspace, gamma: float) -> np.ndarray:
    """(1/gamma) proj_B(x). Shared by the lazy adversary so replays are bit-identical."""
    return (B.basis @ (B.basis.T @ x)) / gamma


def in_caps(w: np.ndarray, gamma: float, a: np.ndarray) -> bool:
    return cap_contains(w, gamma, a) or cap_contains(-w, gamma, a)


def shell_image(x: np.ndarray, levels: Sequence[Subspace], gamma: float) -> np.ndarray | None:
    """Image of x under the shell rule for the nested levels L_1 ⊇ ... ⊇ L_J.

    For the largest j with x in sector(L_j) the image is (1/gamma) proj_{L_{j+1}}(x);
    outside every sector it is (1/gamma) proj_{L_1}(x). Returns None when x sits in the
    innermost sector, which has no next level.
    """
    x = np.asarray(x, dtype=float)
    for j in range(len(levels) - 1, -1, -1):
        if sector_contains(levels[j], gamma, x):
            if j == len(levels) - 1:
                return None
            return rescaled_projection(x, levels[j + 1], gamma)
    return rescaled_projection(x, levels[0], gamma)


def case_of(inst: HardInstance, x: np.ndarray) -> str:
    """Name of the case branch x falls in: 'cap', 'ring' or 'shell-k'."""
    x = np.asarray(x, dtype=float)
    if in_caps(inst.w, inst.gamma, x):
        return "cap"
    for j in range(len(inst.levels) - 1, -1, -1):
        if sector_contains(inst.levels[j], inst.gamma, x):
            return "ring" if j == len(inst.levels) - 1 else f"shell-{j + 1}"
    return "shell-0"


def _policy_image(inst: HardInstance, x: np.ndarray) -> np.ndarray:
    if in_caps(inst.w, inst.gamma, x):
        return np.array(x, dtype=float)
    image = shell_image(x, inst.levels, inst.gamma)
    if image is None:
        # ring: sector(<w>) minus the caps
        return rescaled_projection(x, inst.w_line, inst.gamma)
    return image


def _state_vector(inst: HardInstance, s: State) -> np.ndarray:
    if s is START:
        return np.zeros(inst.d)
    return np.asarray(s, dtype=float)


def _check_sa(inst: HardInstance, sa: StateAction):
    if inst.family is Family.BPI and not sa.at_start:
        if not np.array_equal(np.asarray(sa.state), np.asarray(sa.action)):
            raise ValueError("BPI states other than START have the single action a = s")


# ─────────────────────── Dynamics ───────────────────────

def reward(inst: HardInstance, sa: StateAction) -> float:
    a = np.asarray(sa.action, dtype=float)
    if not in_caps(inst.w, inst.gamma, a):
        return 0.0
    return inst.sign * (1.0 - inst.gamma) * float(a @ inst.w)


def successor(inst: HardInstance, sa: StateAction) -> np.ndarray:
    _check_sa(inst, sa)
    a = np.asarray(sa.action, dtype=float)
    if inst.family is Family.PE:
        return np.array(a)
    return _policy_image(inst, a)


def target_policy_action(inst: HardInstance, s: State) -> np.ndarray:
    if inst.family is not Family.PE:
        raise ValueError("target policies exist only for the PE family")
    return _policy_image(inst, _state_vector(inst, s))


def target_policy(inst: HardInstance) -> Policy:
    return lambda s: target_policy_action(inst, s)


def forced_policy(inst: HardInstance, first_action: np.ndarray) -> Policy:
    """BPI policy: `first_action` at START, the single action elsewhere."""
    first = np.asarray(first_action, dtype=float)
    return lambda s: first if s is START else np.asarray(s, dtype=float)


def next_action(inst: HardInstance, policy: Policy, s: State) -> np.ndarray:
    if inst.family is Family.BPI and s is not START:
        return np.asarray(s, dtype=float)
    return np.asarray(policy(s), dtype=float)


def true_q(inst: HardInstance, sa: StateAction) -> float:
    return inst.sign * float(np.asarray(sa.action, dtype=float) @ inst.w)


def bellman_apply(inst: HardInstance, policy: Policy | None, qfun: QFunction,
                  sa: StateAction) -> float:
    """r(s, a) + gamma * Q(s', pi(s')); BPI successors have their single forced action."""
    s_next = successor(inst, sa)
    if inst.family is Family.BPI:
        a_next = s_next
    else:
        a_next = np.asarray((policy or target_policy(inst))(s_next), dtype=float)
    return reward(inst, sa) + inst.gamma * qfun(StateAction(s_next, a_next))


def default_horizon(gamma: float) -> int:
    return math.ceil(math.log(1e-9) / math.log(gamma))


def value_of_policy(inst: HardInstance, policy: Policy, s0: State,
                    horizon: int | None = None, first_action: np.ndarray | None = None) -> float:
    """Truncated discounted rollout; exact up to gamma^horizon."""
    horizon = default_horizon(inst.gamma) if horizon is None else horizon
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    total, discount, state = 0.0, 1.0, s0
    for t in range(horizon):
        if t == 0 and first_action is not None:
            action = np.asarray(first_action, dtype=float)
        else:
            action = next_action(inst, policy, state)
        sa = StateAction(state, action)
        total += discount * reward(inst, sa)
        state = successor(inst, sa)
        discount *= inst.gamma
    return total


# ─────────────────────── Generators ───────────────────────

def random_chain(d: int, dims: Sequence[int], rng: np.random.Generator) -> NestedChain:
    """Random nested chain with the given (nonincreasing) dims and a unit w ∈ B_K."""
    if not dims or any(b > a for a, b in zip(dims, dims[1:])) or dims[-1] < 1 or dims[0] > d:
        raise ValueError(f"dims {list(dims)} must be nonincreasing within [1, {d}]")
    subspaces = [random_subspace(d, dims[0], rng)]
    for dim in dims[1:]:
        outer = subspaces[-1]
        inner = random_subspace(outer.dim, dim, rng)
        lifted = outer.basis @ inner.basis
        q, _ = np.linalg.qr(lifted)
        subspaces.append(Subspace(q))
    innermost = subspaces[-1]
    w = innermost.basis @ random_unit(innermost.dim, rng)
    return NestedChain(subspaces, w / np.linalg.norm(w))


def random_instance(family: Family | str, d: int, dims: Sequence[int], gamma: float,
                    sign: int, rng: np.random.Generator) -> HardInstance:
    return HardInstance(family, random_chain(d, dims, rng), sign, gamma)


class StratifiedSampler:
    """Draws state-actions from every case branch: shells 0..K, the <w> ring, both caps."""

    DELTA = 1e-3

    def __init__(self, inst: HardInstance, rng: np.random.Generator):
        self.inst = inst
        self.rng = rng
        self.d = inst.d
        self.strata = self._build_strata()

    def _build_strata(self) -> list[tuple[str, Callable[[], np.ndarray]]]:
        inst = self.inst
        outers = [Subspace.full(self.d)] + list(inst.levels[:-1])
        strata = []
        for k, (outer, inner) in enumerate(zip(outers, inst.levels)):
            if outer.dim == inner.dim:
                continue
            ring_dirs = self._complement_within(outer, inner)
            strata.append((f"shell-{k}", self._shell_sampler(outer, inner, ring_dirs, k == 0)))
        strata.append(("ring", self._ring_sampler))
        strata.append(("cap+", lambda: self._cap_sampler(1.0)))
        strata.append(("cap-", lambda: self._cap_sampler(-1.0)))
        return strata

    def _complement_within(self, outer: Subspace, inner: Subspace) -> np.ndarray:
        coords = outer.basis.T @ inner.basis
        comp = orthonormal_complement_basis(list(coords.T), outer.dim)
        return outer.basis @ comp.basis

    def _unit_in(self, basis: np.ndarray) -> np.ndarray:
        coeffs = random_unit(basis.shape[1], self.rng)
        v = basis @ coeffs
        return v / np.linalg.norm(v)

    def _orthogonal_to(self, basis: np.ndarray) -> np.ndarray | None:
        if basis.shape[1] >= self.d:
            return None
        comp = orthonormal_complement_basis(list(basis.T), self.d)
        return self._unit_in(comp.basis)

    def _shell_sampler(self, outer: Subspace, inner: Subspace, ring_dirs: np.ndarray,
                       outermost: bool) -> Callable[[], np.ndarray]:
        gamma, delta = self.inst.gamma, self.DELTA

        def draw() -> np.ndarray:
            # cosine to inner below gamma, cosine to outer above gamma
            escape = None if outermost else self._orthogonal_to(outer.basis)
            c_out = 1.0 if escape is None else self.rng.uniform(gamma + delta, 1.0)
            c_in = self.rng.uniform(0.0, gamma - delta) * c_out
            v = self._unit_in(inner.basis)
            u = self._unit_in(ring_dirs)
            x = c_in * v + math.sqrt(max(0.0, c_out ** 2 - c_in ** 2)) * u
            if escape is not None:
                x = x + math.sqrt(max(0.0, 1.0 - c_out ** 2)) * escape
            return self.rng.uniform(0.05, 1.0) * x / np.linalg.norm(x)

        return draw

    def _ring_sampler(self) -> np.ndarray:
        gamma, delta = self.inst.gamma, self.DELTA
        w = np.asarray(self.inst.w)
        c = self.rng.uniform(gamma + delta, 1.0)
        side = 1.0 if self.rng.random() < 0.5 else -1.0
        r = self._orthogonal_to(w.reshape(-1, 1))
        x = side * c * w
        if r is not None:
            x = x + math.sqrt(1.0 - c * c) * r
        rho = self.rng.uniform(0.05, (gamma - delta) / c)
        return rho * x / np.linalg.norm(x)

    def _cap_sampler(self, side: float) -> np.ndarray:
        gamma, delta = self.inst.gamma, self.DELTA
        w = np.asarray(self.inst.w)
        c = self.rng.uniform(gamma + 2 * delta, 1.0)
        r = self._orthogonal_to(w.reshape(-1, 1))
        x = side * c * w
        if r is not None:
            x = x + math.sqrt(1.0 - c * c) * r
        x = x / np.linalg.norm(x)
        rho = self.rng.uniform((gamma + delta) / c, 1.0)
        return rho * x

    def _pair(self, action: np.ndarray) -> StateAction:
        action = ball_vector(action)
        if self.inst.family is Family.BPI:
            if self.rng.random() < 0.5:
                return StateAction(START, action)
            return StateAction(action, action)
        if self.rng.random() < 0.5:
            return StateAction(START, action)
        state = self._unit_in(np.eye(self.d)) * self.rng.uniform(0.0, 1.0)
        return StateAction(ball_vector(state), action)

    def draw(self, samples: int) -> list[tuple[str, StateAction]]:
        out = []
        for i in range(samples):
            name, sampler = self.strata[i % len(self.strata)]
            out.append((name, self._pair(sampler())))
        return out


def stratified_state_actions(inst: HardInstance, samples: int,
                             rng: np.random.Generator) -> list[tuple[str, StateAction]]:
    return StratifiedSampler(inst, rng).draw(samples)


@dataclass(slots=True)
class RealizabilityReport:
    max_residual: float
    passed: bool
    samples: int
    strata: dict[str, int]
    cases: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"max_residual": self.max_residual, "pass": self.passed,
                "samples": self.samples, "strata": dict(self.strata), "cases": dict(self.cases)}


def verify_realizability(inst: HardInstance, samples: int, seed: int | None = 0) -> RealizabilityReport:
    """Max |T(Q) - Q| over stratified samples with Q = sign * a^T w."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    policy = target_policy(inst) if inst.family is Family.PE else None
    qfun: QFunction = lambda sa: true_q(inst, sa)
    worst = 0.0
    counts: dict[str, int] = {}
    cases: dict[str, int] = {}
    for name, sa in stratified_state_actions(inst, samples, rng):
        residual = abs(bellman_apply(inst, policy, qfun, sa) - true_q(inst, sa))
        worst = max(worst, residual)
        counts[name] = counts.get(name, 0) + 1
        branch = case_of(inst, sa.action)
        cases[branch] = cases.get(branch, 0) + 1
    passed = worst <= RESIDUAL_TOL
    if not passed:
        logger.error(f"❌ Realizability residual {worst:.3e} on {inst!r}")
    else:
        logger.debug(f"Realizability residual {worst:.3e} over {samples} samples on {inst!r}")
    return RealizabilityReport(max_residual=worst, passed=passed, samples=samples, strata=counts,
                               cases=cases)
