"""
Packing — Grassmannian packings, budget formulas and the evading-subspace search.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from core.errors import (
    DimensionMismatchError,
    PigeonholeViolated,
    PackingTooCoarseError,
)
from core.geometry import (
    BALL_TOL,
    Subspace,
    chordal_distance,
    orthonormal_complement_basis,
    orthonormalize,
    random_subspace,
    sector_contains,
)

logger = logging.getLogger('batchbound.packing')

GAMMA_FLOOR = math.sqrt(3.0 / 4.0)
DEFAULT_SEARCH_BUDGET = 100_000
EVASION_MARGIN = 1e-9


def g_of_gamma(gamma: float) -> float:
    """Cosine threshold 2 gamma^2 - 1."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return 2.0 * gamma * gamma - 1.0


# ─────────────────────── Packings ───────────────────────

@dataclass(slots=True)
class Packing:
    members: tuple[Subspace, ...]
    gamma: float
    d_min: float | None = None

    def __post_init__(self):
        self.members = tuple(self.members)
        if not self.members:
            raise ValueError("packing needs at least one member")
        d, m = self.members[0].ambient_dim, self.members[0].dim
        for idx, member in enumerate(self.members):
            if (member.ambient_dim, member.dim) != (d, m):
                raise DimensionMismatchError(
                    f"member {idx} is {member.dim}-dim in R^{member.ambient_dim}, expected {m}-dim in R^{d}"
                )
        if self.d_min is not None and len(self.members) >= 2:
            actual = min_pairwise_distance(self.members)
            if actual < self.d_min - 1e-9:
                raise ValueError(f"recorded d_min {self.d_min} exceeds actual {actual}")

    @property
    def d(self) -> int:
        return self.members[0].ambient_dim

    @property
    def m(self) -> int:
        return self.members[0].dim

    def __len__(self) -> int:
        return len(self.members)

    def to_dict(self) -> dict:
        data = {
            "d": self.d,
            "m": self.m,
            "gamma": self.gamma,
            "members": [member.to_dict() for member in self.members],
        }
        if self.d_min is not None:
            data["d_min"] = self.d_min
        return data

    @classmethod
    def from_dict(cls, data: dict) -> Packing:
        members = tuple(Subspace.from_dict(item) for item in data["members"])
        packing = cls(members=members, gamma=float(data["gamma"]), d_min=data.get("d_min"))
        if (packing.d, packing.m) != (int(data["d"]), int(data["m"])):
            raise DimensionMismatchError(
                f"header says ({data['d']}, {data['m']}), members are ({packing.d}, {packing.m})"
            )
        return packing


@dataclass(slots=True)
class PackingCheck:
    ok: bool
    actual_dmin: float
    violating_pair: tuple[int, int] | None = None


def min_pairwise_distance(members: Sequence[Subspace]) -> float:
    return _closest_pair(members)[0]


def _closest_pair(members: Sequence[Subspace]) -> tuple[float, tuple[int, int]]:
    best, pair = math.inf, (0, 1)
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            dist = chordal_distance(members[i], members[j])
            if dist < best:
                best, pair = dist, (i, j)
    return best, pair


def verify_packing(P: Packing, required_dmin: float) -> PackingCheck:
    if len(P.members) < 2:
        raise ValueError("verify_packing needs at least 2 members")
    actual, pair = _closest_pair(P.members)
    ok = actual >= required_dmin - 1e-9
    if not ok:
        logger.debug(f"Packing fails d_min {required_dmin:.6f}: members {pair} at {actual:.6f}")
    return PackingCheck(ok=ok, actual_dmin=actual, violating_pair=None if ok else pair)


def max_cross_cosine(P: Packing) -> float:
    """Largest cos(theta_1) over member pairs; 0.0 for a single member."""
    best = 0.0
    for i in range(len(P.members)):
        for j in range(i + 1, len(P.members)):
            cos1 = float(linalg.svdvals(P.members[i].basis.T @ P.members[j].basis)[0])
            best = max(best, min(cos1, 1.0))
    return best


def distance_implies_cosine_bound(P: Packing, gamma: float) -> bool:
    """d_min >= sqrt(m - g^2) must force every pairwise cos(theta_1) below g.

    Returns True vacuously when the packing does not meet the distance hypothesis.
    """
    g = g_of_gamma(gamma)
    if len(P.members) < 2:
        return True
    threshold = math.sqrt(max(0.0, P.m - g * g))
    if min_pairwise_distance(P.members) < threshold:
        return True
    return max_cross_cosine(P) < g


def search_packing(d: int, m: int, size: int, required_dmin: float,
                   rng: np.random.Generator, budget: int = 10_000,
                   gamma: float = 0.9) -> Packing:
    """Greedy Haar sampling: keep candidates at chordal distance >= required_dmin.

    Stops after `size` members or `budget` candidates; the result may be smaller than
    requested and makes no existence claim.
    """
    if not 1 <= m <= d:
        raise ValueError(f"m={m} must lie in [1, {d}]")
    members: list[Subspace] = []
    examined = 0
    while len(members) < size and examined < budget:
        candidate = random_subspace(d, m, rng)
        examined += 1
        if all(chordal_distance(candidate, other) >= required_dmin for other in members):
            members.append(candidate)
    if len(members) < size:
        logger.debug(
            f"Packing search kept {len(members)}/{size} members in G({m},{d}) "
            f"after {examined} candidates"
        )
    return Packing(members=tuple(members), gamma=gamma,
                   d_min=required_dmin if len(members) >= 2 else None)


# ─────────────────────── Budget formulas ───────────────────────

@dataclass(slots=True)
class PackingGuarantee:
    size: int
    d_min: float


def _is_power_of_two(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def guaranteed_packing_size(d: int, m: int, k: int) -> PackingGuarantee:
    """Guaranteed packing size (d/2)^(ceil(k/2)-1) * floor(d/m) and its d_min.

    Only the bound is reported; no members are produced.
    """
    if not _is_power_of_two(d):
        raise ValueError(f"d={d} must be a power of two")
    if not (1 <= k < d and 1 <= m < d):
        raise ValueError(f"need 1 <= k < d and 1 <= m < d, got k={k}, m={m}, d={d}")
    size = (d // 2) ** (-(-k // 2) - 1) * (d // m)
    d_min = math.sqrt(m) * math.sqrt(max(0.0, 1.0 - m * (k - 1) ** 2 / d))
    return PackingGuarantee(size=size, d_min=d_min)


@dataclass(slots=True)
class BudgetReport:
    d: int
    d_plus: int
    K: int
    gamma: float
    g: float
    W: float
    per_round_caps: list[float] = field(default_factory=list)
    k_threshold: float | None = None
    n: int | None = None
    case: str | None = None

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "d_plus": self.d_plus,
            "K": self.K,
            "gamma": self.gamma,
            "g": self.g,
            "W": self.W,
            "per_round_caps": list(self.per_round_caps),
            "k_threshold": self.k_threshold,
            "n": self.n,
            "case": self.case,
        }

    @classmethod
    def from_dict(cls, data: dict) -> BudgetReport:
        return cls(**{key: data.get(key) for key in (
            "d", "d_plus", "K", "gamma", "g", "W", "per_round_caps", "k_threshold", "n", "case"
        )})


def _safe_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def case1_threshold(d: int, g: float, n: int) -> float:
    """(1/log 4) * log(log(d/2) / log((8/g) log n)); nan outside the formula's domain."""
    try:
        inner = math.log((8.0 / g) * math.log(n))
        value = math.log((math.log(d) - math.log(2.0)) / inner) / math.log(4.0)
    except (ValueError, ZeroDivisionError):
        return math.nan
    return value


def budget_report(d: int, K: int, gamma: float, n: int | None = None) -> BudgetReport:
    """Per-round caps exp((g/8) d_+^(1/4^k)) and W = the round-K cap.

    gamma may equal sqrt(3/4) exactly (g = 1/2) so the boundary case can be tabulated;
    anything below is rejected. Exponents are taken in log space, so any integer d works.
    """
    if d < 2 or K < 1:
        raise ValueError(f"need d >= 2 and K >= 1, got d={d}, K={K}")
    if not (GAMMA_FLOOR - 1e-12 <= gamma < 1.0):
        raise ValueError(f"gamma={gamma} must lie in [sqrt(3/4), 1)")
    d_plus = 1 << (d.bit_length() - 1)
    g = g_of_gamma(gamma)
    log_d_plus = math.log(d_plus)
    caps = [_safe_exp((g / 8.0) * math.exp(log_d_plus / 4 ** k)) for k in range(1, K + 1)]
    report = BudgetReport(d=d, d_plus=d_plus, K=K, gamma=gamma, g=g, W=caps[-1],
                          per_round_caps=caps)
    if n is not None:
        report.n = n
        threshold = case1_threshold(d, g, n)
        report.k_threshold = None if math.isnan(threshold) else threshold
        report.case = "case1" if n > report.W else "case2"
    return report


# ─────────────────────── Evading subspaces ───────────────────────

def pigeonhole_select(P: Packing, queries: Sequence[np.ndarray]) -> Subspace:
    """Return a member whose gamma-sector holds none of the queries.

    Each query is assigned to the member it is closest to (largest normalized
    projection, lowest index on ties); some member is left unassigned.
    """
    return P.members[pigeonhole_index(P, queries)]


def pigeonhole_index(P: Packing, queries: Sequence[np.ndarray]) -> int:
    if len(P.members) < len(queries) + 1:
        raise PackingTooCoarseError(
            f"packing too coarse: {len(P.members)} members for {len(queries)} queries"
        )
    g = g_of_gamma(P.gamma)
    cross = max_cross_cosine(P)
    if cross >= g:
        raise PackingTooCoarseError(f"packing too coarse: max cos(theta_1)={cross:.6f} >= g={g:.6f}")

    assigned: set[int] = set()
    for q in queries:
        q = np.asarray(q, dtype=float)
        if q.shape != (P.d,):
            raise DimensionMismatchError(f"query has shape {q.shape}, expected ({P.d},)")
        norm = float(np.linalg.norm(q))
        scores = [0.0 if norm == 0.0 else float(np.linalg.norm(A.basis.T @ q)) / norm
                  for A in P.members]
        assigned.add(int(np.argmax(scores)))

    free = next(idx for idx in range(len(P.members)) if idx not in assigned)
    chosen = P.members[free]
    for q in queries:
        if sector_contains(chosen, P.gamma, q):
            raise PigeonholeViolated(
                f"lemma hypothesis violated: member {free} holds a query in its sector"
            )
    return free


@dataclass(slots=True)
class EvasionSearch:
    subspace: Subspace | None
    method: str
    examined: int
    worst_cosine: float

    @property
    def found(self) -> bool:
        return self.subspace is not None

    @property
    def guarantee(self) -> str:
        if self.method == "pigeonhole":
            return "theoretical"
        if self.method in ("complement", "trivial"):
            return "exact"
        return "empirical-search"


class EvadingSubspaceSearch:
    """Layered search for an m-dim subspace avoiding every query's gamma-sector.

    Layers, in order: nothing to evade, orthogonal complement, pigeonhole over a
    supplied packing, batched Haar sampling with Riemannian local descent on the
    softmax of the squared query cosines.
    """

    BATCH = 64
    DESCENT_STEPS = 40
    STEP_SIZE = 0.3
    TEMPERATURE = 0.02

    def __init__(self, d: int, m: int, gamma: float, rng: np.random.Generator,
                 budget: int = DEFAULT_SEARCH_BUDGET, packing: Packing | None = None,
                 margin: float = EVASION_MARGIN):
        if not 1 <= m <= d:
            raise ValueError(f"m={m} must lie in [1, {d}]")
        self.d = d
        self.m = m
        self.gamma = gamma
        self.rng = rng
        self.budget = budget
        self.packing = packing
        self.margin = margin

    def run(self, queries: Sequence[np.ndarray]) -> EvasionSearch:
        rows = []
        for q in queries:
            q = np.asarray(q, dtype=float)
            if q.shape != (self.d,):
                raise DimensionMismatchError(f"query has shape {q.shape}, expected ({self.d},)")
            norm = float(np.linalg.norm(q))
            if norm > 1.0 + BALL_TOL:
                raise ValueError(f"query norm {norm:.12f} is outside the unit ball")
            if norm > 0.0:
                rows.append(q / norm)

        if not rows:
            return EvasionSearch(Subspace.standard(self.d, self.m), "trivial", 1, 0.0)
        Y = np.vstack(rows)

        rank = orthonormalize(Y.T, self.d).shape[1]
        if rank <= self.d - self.m:
            complement = orthonormal_complement_basis(list(Y), self.d)
            H = Subspace(complement.basis[:, : self.m])
            return self._accept(H, Y, "complement", 1)

        if self.packing is not None:
            result = self._try_packing(queries, Y)
            if result is not None:
                return result

        return self._sample_and_descend(Y)

    # ─────────────────────── Layers ───────────────────────

    def _worst(self, basis: np.ndarray, Y: np.ndarray) -> float:
        return float(np.max(np.linalg.norm(Y @ basis, axis=1)))

    def _accept(self, H: Subspace, Y: np.ndarray, method: str, examined: int) -> EvasionSearch:
        worst = self._worst(H.basis, Y)
        if worst > self.gamma - self.margin:
            return EvasionSearch(None, method, examined, worst)
        return EvasionSearch(H, method, examined, worst)

    def _try_packing(self, queries: Sequence[np.ndarray], Y: np.ndarray) -> EvasionSearch | None:
        P = self.packing
        if (P.d, P.m) != (self.d, self.m):
            logger.debug(f"Packing is G({P.m},{P.d}); search needs G({self.m},{self.d}), skipping")
            return None
        try:
            H = pigeonhole_select(P, queries)
        except PackingTooCoarseError as e:
            logger.debug(f"Pigeonhole layer skipped: {e}")
            return None
        result = self._accept(H, Y, "pigeonhole", 1)
        return result if result.found else None

    def _sample_and_descend(self, Y: np.ndarray) -> EvasionSearch:
        examined = 0
        best = math.inf
        target = self.gamma - self.margin
        while examined < self.budget:
            size = min(self.BATCH, self.budget - examined)
            gaussian = self.rng.standard_normal((size, self.d, self.m))
            Q, R = np.linalg.qr(gaussian)
            signs = np.sign(np.diagonal(R, axis1=1, axis2=2))
            signs[signs == 0] = 1.0
            Q = Q * signs[:, None, :]
            examined += size

            scores = np.max(np.linalg.norm(np.einsum('nd,bdm->bnm', Y, Q), axis=2), axis=1)
            idx = int(np.argmin(scores))
            best = min(best, float(scores[idx]))
            if scores[idx] <= target:
                return EvasionSearch(Subspace(Q[idx]), "search", examined, float(scores[idx]))

            U = Q[idx]
            steps = min(self.DESCENT_STEPS, self.budget - examined)
            for _ in range(steps):
                U = self._descend(U, Y)
                examined += 1
                worst = self._worst(U, Y)
                best = min(best, worst)
                if worst <= target:
                    return EvasionSearch(Subspace(U), "search", examined, worst)

        logger.debug(f"Search exhausted {examined} candidates, best max-cosine {best:.6f}")
        return EvasionSearch(None, "search", examined, best)

    def _descend(self, U: np.ndarray, Y: np.ndarray) -> np.ndarray:
        proj = Y @ U
        energy = np.sum(proj * proj, axis=1)
        weights = np.exp((energy - energy.max()) / self.TEMPERATURE)
        weights /= weights.sum()
        grad = 2.0 * Y.T @ (weights[:, None] * proj)
        grad -= U @ (U.T @ grad)
        norm = float(np.linalg.norm(grad))
        if norm == 0.0:
            return U
        q, r = np.linalg.qr(U - (self.STEP_SIZE / norm) * grad)
        signs = np.sign(np.diag(r))
        signs[signs == 0] = 1.0
        return q * signs


def find_evading_subspace(queries: Sequence[np.ndarray], d: int, m: int, gamma: float,
                          budget: int = DEFAULT_SEARCH_BUDGET,
                          rng: np.random.Generator | None = None,
                          packing: Packing | None = None) -> EvasionSearch:
    """Search for an m-dim subspace of R^d whose gamma-sector avoids every query.

    Returns an EvasionSearch whose `subspace` is None only after the budget is spent.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    return EvadingSubspaceSearch(d, m, gamma, rng, budget=budget, packing=packing).run(queries)
