"""
Verify — Property suites for realizability, geometry and packings, plus the
`packing verify` and `mdp verify-realizability` file checks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from core.errors import PigeonholeViolated, PackingTooCoarseError
from core.geometry import (
    Subspace,
    chordal_distance,
    project,
    random_subspace,
    random_unit,
    sector_contains,
)
from core.mdp import Family, HardInstance, RealizabilityReport, random_instance, verify_realizability
from core.packing import (
    Packing,
    PackingCheck,
    g_of_gamma,
    distance_implies_cosine_bound,
    pigeonhole_select,
    search_packing,
    verify_packing,
)
from utils.artifact_store import load_json

logger = logging.getLogger('batchbound.verify')

SUITES = ("realizability", "geometry", "packing")
GAMMAS = (0.87, 0.9, 0.95)
REALIZABILITY_INSTANCES = 50   # per family and sign
GRID_POINTS = 1_000_000


@dataclass(slots=True)
class CheckResult:
    name: str
    passed: bool
    count: int
    detail: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "passed": self.passed, "count": self.count, "detail": self.detail}


@dataclass(slots=True)
class VerifySummary:
    what: str
    seed: int
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def to_dict(self) -> Dict[str, Any]:
        return {"what": self.what, "seed": self.seed, "passed": self.passed,
                "checks": [check.to_dict() for check in self.checks]}


# ─────────────────────── Realizability ───────────────────────

def _random_dims(d: int, K: int, rng: np.random.Generator) -> list[int]:
    dims = sorted(rng.integers(1, d + 1, size=K).tolist(), reverse=True)
    return [int(x) for x in dims]


def realizability_checks(d: int = 4, samples: int = 1000, seed: int = 0,
                         instances: int = REALIZABILITY_INSTANCES, K: int = 2,
                         gammas: tuple[float, ...] = GAMMAS) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    checks = []
    for family in Family:
        for sign in (1, -1):
            worst, total = 0.0, 0
            for i in range(instances):
                gamma = gammas[i % len(gammas)]
                inst = random_instance(family, d, _random_dims(d, K, rng), gamma, sign, rng)
                report = verify_realizability(inst, samples, seed=int(rng.integers(2 ** 31)))
                worst = max(worst, report.max_residual)
                total += report.samples
            checks.append(CheckResult(
                name=f"realizability {family.value} sign {sign:+d}",
                passed=worst <= 1e-9, count=total, detail=f"max residual {worst:.3e}",
            ))
    return checks


# ─────────────────────── Geometry ───────────────────────

def chordal_check(pairs: int, d_max: int, rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for _ in range(pairs):
        d = int(rng.integers(2, d_max + 1))
        a, b = random_unit(d, rng), random_unit(d, rng)
        brute = math.sin(math.acos(min(1.0, abs(float(a @ b)))))
        got = chordal_distance(Subspace(a), Subspace(b))
        worst = max(worst, abs(got - brute))
    return CheckResult("chordal distance vs line brute force", worst <= 1e-6, pairs,
                       f"max deviation {worst:.3e}")


def grid_max_cosine(H: Subspace, x: np.ndarray, grid_cos: np.ndarray, grid_sin: np.ndarray) -> float:
    """max over a grid of unit v in H (dim <= 2) of x^T v / ||x||."""
    coords = H.basis.T @ x / np.linalg.norm(x)
    if H.dim == 1:
        return float(abs(coords[0]))
    return float(np.max(coords[0] * grid_cos + coords[1] * grid_sin))


def sector_grid_check(cases: int, d_max: int, grid_points: int, rng: np.random.Generator,
                      gammas: tuple[float, ...] = GAMMAS) -> CheckResult:
    angles = np.linspace(0.0, 2.0 * math.pi, grid_points, endpoint=False)
    grid_cos, grid_sin = np.cos(angles), np.sin(angles)
    resolution = 1.0 - math.cos(math.pi / grid_points) + 1e-12
    mismatches = skipped = 0
    for i in range(cases):
        d = int(rng.integers(2, d_max + 1))
        m = 1 if d == 2 else int(rng.integers(1, 3))
        gamma = gammas[i % len(gammas)]
        H = random_subspace(d, m, rng)
        # bias half the cases toward the sector boundary
        x = random_unit(d, rng)
        if i % 2:
            inside = H.basis @ random_unit(m, rng)
            x = 0.8 * inside + 0.2 * x
        best = grid_max_cosine(H, x, grid_cos, grid_sin)
        if abs(best - gamma) <= resolution:
            skipped += 1
            continue
        if sector_contains(H, gamma, x) != (best > gamma):
            mismatches += 1
    return CheckResult("sector membership vs grid maximization", mismatches == 0, cases,
                       f"{mismatches} mismatches, {skipped} within grid resolution")


def projection_check(cases: int, d_max: int, rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    two_sided = True
    for _ in range(cases):
        d = int(rng.integers(1, d_max + 1))
        H = random_subspace(d, int(rng.integers(1, d + 1)), rng)
        x = random_unit(d, rng) * rng.uniform(0.0, 1.0)
        once = project(x, H)
        worst = max(worst, float(np.max(np.abs(project(once, H) - once))))
        two_sided &= sector_contains(H, 0.9, x) == sector_contains(H, 0.9, -x)
    return CheckResult("projection idempotence and two-sided sectors",
                       worst <= 1e-9 and two_sided, cases, f"max deviation {worst:.3e}")


def geometry_checks(pairs: int = 10_000, cases: int = 1000, d_max: int = 8,
                    grid_points: int = GRID_POINTS, seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        chordal_check(pairs, d_max, rng),
        sector_grid_check(cases, d_max, grid_points, rng),
        projection_check(cases, 32, rng),
    ]


# ─────────────────────── Packings ───────────────────────

def random_verified_packing(rng: np.random.Generator, d_max: int = 8,
                            max_queries: int = 3) -> tuple[Packing, int] | None:
    """A packing with pairwise cos(theta_1) < g, sized for 1..max_queries queries."""
    d = int(rng.integers(2, d_max + 1))
    m = 2 if d >= 6 and rng.random() < 0.3 else 1
    gamma = GAMMAS[int(rng.integers(len(GAMMAS)))]
    g = g_of_gamma(gamma)
    wanted = int(rng.integers(1, max_queries + 1)) + 1
    required = math.sqrt(max(0.0, m - g * g)) + 1e-6
    packing = search_packing(d, m, wanted, required, rng, budget=2000, gamma=gamma)
    if len(packing) < 2:
        return None
    return packing, len(packing) - 1


def packing_checks(configs: int = 1000, d_max: int = 8, seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    run = violations = coarse = bridge_failures = 0
    while run < configs:
        made = random_verified_packing(rng, d_max)
        if made is None:
            continue
        packing, n = made
        run += 1
        if not distance_implies_cosine_bound(packing, packing.gamma):
            bridge_failures += 1
        queries = [random_unit(packing.d, rng) * rng.uniform(0.1, 1.0) for _ in range(n)]
        try:
            chosen = pigeonhole_select(packing, queries)
        except PackingTooCoarseError:
            coarse += 1
            continue
        except PigeonholeViolated:
            violations += 1
            continue
        if any(sector_contains(chosen, packing.gamma, q) for q in queries):
            violations += 1
    return [
        CheckResult("pigeonhole selector evades every query", violations == 0 and coarse == 0,
                    configs, f"{violations} violations, {coarse} rejected as coarse"),
        CheckResult("distance bound implies cosine bound", bridge_failures == 0, configs,
                    f"{bridge_failures} failures"),
    ]


# ─────────────────────── Commands ───────────────────────

def cmd_verify(what: str, seed: int = 0, **params: Any) -> VerifySummary:
    """Run one suite (or 'all') and log a pass/fail line per check."""
    if what != "all" and what not in SUITES:
        raise ValueError(f"unknown suite {what!r}; choose from {', '.join(SUITES)} or all")
    summary = VerifySummary(what=what, seed=seed)
    if what in ("realizability", "all"):
        summary.checks += realizability_checks(
            d=params.get("d", 4), samples=params.get("samples", 1000), seed=seed,
            instances=params.get("instances", REALIZABILITY_INSTANCES))
    if what in ("geometry", "all"):
        summary.checks += geometry_checks(
            pairs=params.get("pairs", 10_000), cases=params.get("cases", 1000),
            grid_points=params.get("grid_points", GRID_POINTS), seed=seed)
    if what in ("packing", "all"):
        summary.checks += packing_checks(configs=params.get("configs", 1000), seed=seed)
    for check in summary.checks:
        log = logger.info if check.passed else logger.error
        log(f"{'✅' if check.passed else '❌'} {check.name}: {check.count} cases ({check.detail})")
    return summary


def cmd_packing_verify(path: Path | str, dmin: float) -> PackingCheck:
    packing = Packing.from_dict(load_json(path))
    check = verify_packing(packing, dmin)
    if check.ok:
        logger.info(f"✅ {path}: d_min {check.actual_dmin:.6f} >= {dmin}")
    else:
        logger.error(f"❌ {path}: d_min {check.actual_dmin:.6f} < {dmin} at pair {check.violating_pair}")
    return check


def cmd_mdp_verify(path: Path | str, samples: int, seed: int) -> RealizabilityReport:
    inst = HardInstance.from_dict(load_json(path))
    report = verify_realizability(inst, samples, seed)
    mark = "✅" if report.passed else "❌"
    logger.info(f"{mark} {path}: max residual {report.max_residual:.3e} over {samples} samples")
    return report
