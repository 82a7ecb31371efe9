"""
Harness — Game orchestration: simulate, sweep, adversary play, learner solve, bounds.
"""

from __future__ import annotations

import asyncio
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np

from core.adversary import (
    AdversaryState,
    DimsSchedule,
    IndistinguishabilityCertificate,
    LazyAdversary,
    finalize,
    fully_adaptive_schedule,
    multi_batch_schedule,
)
from core.errors import AdversaryDefeated
from core.learner import ExactEvaluationLearner, baseline_batch_learner
from core.mdp import Family, HardInstance, random_instance
from core.packing import BudgetReport, budget_report
from core.protocol import (
    FixedInstanceEnvironment,
    LearnerOutput,
    Transcript,
    default_probes,
    evaluate_bpi_soundness,
    evaluate_pe_soundness,
    run_protocol,
)
from utils.artifact_store import ArtifactStore, load_json
from utils.config import ExperimentConfig, env_flag
from utils.run_monitor import RunMonitor

logger = logging.getLogger('batchbound.harness')

LEARNER_SOUND = "learner_sound"
INDISTINGUISHABLE = "indistinguishable"
ADVERSARY_DEFEATED = "adversary_defeated"
LEARNER_UNSOUND = "learner_unsound"   # fixed-instance runs only

SWEEP_SCHEMA_VERSION = 1
SWEEP_HEADER = [
    "schema_version", "cell", "d", "K", "n_k", "problem", "learner_kind", "adversary_mode",
    "seed", "outcome", "n_total", "q_gap", "max_error", "suboptimality",
]


@dataclass(slots=True)
class GameReport:
    config: Dict[str, Any]
    outcome: str
    n_total: int
    q_gap: float | None = None
    max_error: float | None = None
    suboptimality: float | None = None
    budget: Dict[str, Any] | None = None
    timings: Dict[str, float] = field(default_factory=dict)
    certificate: Dict[str, Any] | None = None
    defeat: Dict[str, Any] | None = None
    schedule: Dict[str, Any] | None = None
    learner_output: Dict[str, Any] | None = None
    artifacts: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.outcome == INDISTINGUISHABLE and not (self.certificate or {}).get("replay_match"):
            raise ValueError("an indistinguishable outcome needs a certificate with replay_match")

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> GameReport:
        return cls(**{name: data[name] for name in cls.__dataclass_fields__ if name in data})

    @property
    def budget_report(self) -> BudgetReport | None:
        return BudgetReport.from_dict(self.budget) if self.budget else None


@dataclass(slots=True)
class GameResult:
    """Everything a finished game produced, before it is written out."""
    report: GameReport
    transcript: Transcript
    certificate: IndistinguishabilityCertificate | None = None
    instance: HardInstance | None = None


# ─────────────────────── Wiring ───────────────────────

def build_learner(config: ExperimentConfig):
    if config.learner_kind == "exact":
        return ExactEvaluationLearner(config.d, config.gamma, family=config.problem,
                                      max_queries=config.truncate_queries)
    return baseline_batch_learner(config.learner_kind, config.n_per_round, config.seed,
                                  d=config.d, gamma=config.gamma, family=config.problem,
                                  query_mode=config.query_mode)


def build_schedule(config: ExperimentConfig) -> DimsSchedule:
    if config.adversary_mode == "fully_adaptive":
        return fully_adaptive_schedule(config.d)
    if isinstance(config.schedule, list):
        return multi_batch_schedule(config.d, config.K, override=config.schedule)
    return multi_batch_schedule(config.d, config.K, mode=config.schedule)


def grade(inst: HardInstance, output: LearnerOutput, eps: float) -> tuple[float, bool]:
    """(error, sound): Q error over the default probes for PE, suboptimality for BPI."""
    if inst.family is Family.PE:
        pe = evaluate_pe_soundness(inst, output.qhat, eps, default_probes(inst))
        return pe.max_error, pe.sound
    first = output.first_action if output.first_action is not None else np.eye(inst.d)[0]
    bpi = evaluate_bpi_soundness(inst, first, eps)
    return bpi.suboptimality, bpi.sound


def _error_fields(family: Family, error: float) -> Dict[str, float]:
    return {"max_error": error} if family is Family.PE else {"suboptimality": error}


def play_game(config: ExperimentConfig) -> GameResult:
    """Run one session end to end; synchronous and self-contained."""
    monitor = RunMonitor(trace_memory=env_flag("BATCHBOUND_TRACE_MEMORY"))
    family = Family(config.problem)
    learner = build_learner(config)
    schedule = build_schedule(config)
    rng = np.random.default_rng(config.seed)

    if config.adversary_mode == "fixed_instance":
        sign = 1 if rng.random() < 0.5 else -1
        inst = random_instance(family, config.d, list(schedule.dims), config.gamma, sign, rng)
        env = FixedInstanceEnvironment(inst)
        state = None
    else:
        state = AdversaryState.start(
            config.d, config.gamma, family, config.adversary_mode, config.K, config.seed,
            schedule=schedule, search_budget=config.search_budget, on_defeat=config.on_defeat,
        )
        env = LazyAdversary(state)

    defeat_info = None
    try:
        with monitor.phase("protocol"):
            result = run_protocol(env, learner, config.K, family)
        transcript, output = result.transcript, result.output
    except AdversaryDefeated as e:
        transcript, output = state.history, None
        defeat_info = {"round": e.round_index, "reason": e.reason, "queries": len(e.queries)}

    common = dict(config=config.to_dict(), n_total=transcript.n_total,
                  schedule=schedule.to_dict(),
                  budget=budget_report(config.d, config.K, config.gamma,
                                       n=max(transcript.n_total, 1)).to_dict(),
                  learner_output=None if output is None else output.to_dict())

    if output is None:
        report = GameReport(outcome=ADVERSARY_DEFEATED, defeat=defeat_info,
                            timings=monitor.snapshot(), **common)
        return GameResult(report=report, transcript=transcript)

    if state is None:
        error, sound = grade(inst, output, config.eps)
        report = GameReport(outcome=LEARNER_SOUND if sound else LEARNER_UNSOUND,
                            timings=monitor.snapshot(), **_error_fields(family, error), **common)
        return GameResult(report=report, transcript=transcript, instance=inst)

    if state.defeated:
        error, sound = grade(state.fallback, output, config.eps)
        defeat = state.defeat
        report = GameReport(outcome=LEARNER_SOUND if sound else ADVERSARY_DEFEATED,
                            defeat={"round": defeat.round_index, "reason": defeat.reason,
                                    "queries": len(defeat.queries)},
                            timings=monitor.snapshot(), **_error_fields(family, error), **common)
        return GameResult(report=report, transcript=transcript, instance=state.fallback)

    with monitor.phase("finalize"):
        certificate = finalize(state)
    error = max(grade(inst, output, config.eps)[0]
                for inst in (certificate.instance_plus, certificate.instance_minus))
    report = GameReport(outcome=INDISTINGUISHABLE, q_gap=certificate.q_gap,
                        certificate=certificate.to_dict(), timings=monitor.snapshot(),
                        **_error_fields(family, error), **common)
    return GameResult(report=report, transcript=transcript, certificate=certificate,
                      instance=certificate.instance_plus)


def run_name(config: ExperimentConfig) -> str:
    return (f"{config.problem.lower()}-{config.adversary_mode}-{config.learner_kind}"
            f"-d{config.d}-K{config.K}-seed{config.seed}")


async def write_game(store: ArtifactStore, game: GameResult, name: str) -> GameReport:
    """Write transcript, certificate, instance and report under `name/`."""
    report = game.report
    report.artifacts["transcript"] = str(
        await store.write_jsonl(f"{name}/transcript.jsonl", game.transcript.to_jsonl()))
    if game.certificate is not None:
        report.artifacts["certificate"] = str(
            await store.write_json(f"{name}/certificate.json", game.certificate.to_dict()))
    if game.instance is not None:
        report.artifacts["instance"] = str(
            await store.write_json(f"{name}/instance.json", game.instance.to_dict()))
    report.artifacts["report"] = str(store.path(f"{name}/report.json"))
    await store.write_json(f"{name}/report.json", report.to_dict())
    logger.info(f"📝 Report written to {report.artifacts['report']}")
    return report


# ─────────────────────── Commands ───────────────────────

async def cmd_simulate(config: ExperimentConfig, store: ArtifactStore | None = None) -> GameReport:
    """Play one game and write its artifacts."""
    store = store or ArtifactStore(config.output_dir)
    loop = asyncio.get_running_loop()
    game = await loop.run_in_executor(None, play_game, config)
    report = await write_game(store, game, run_name(config))
    if report.outcome == ADVERSARY_DEFEATED:
        logger.warning(f"⚠️ Adversary defeated: {report.defeat}")
    else:
        logger.info(f"✅ Game finished: {report.outcome}")
    return report


def cell_config(base: Dict[str, Any], d: int, K: int, n: int) -> ExperimentConfig:
    data = dict(base)
    data.update(d=d, K=K, n_per_round=[1 if data.get("learner_kind") == "exact" else n] * K)
    return ExperimentConfig.from_dict(data)


async def cmd_sweep(ds: Sequence[int], Ks: Sequence[int], ns: Sequence[int], base: Dict[str, Any],
                    jobs: int = 1, store: ArtifactStore | None = None) -> List[Dict[str, Any]]:
    """One game per (d, K, n) cell; rows come back in cell order."""
    cells = list(enumerate(product(ds, Ks, ns)))
    if not cells:
        raise ValueError("sweep grid is empty")
    configs = [(index, cell_config(base, d, K, n), n) for index, (d, K, n) in cells]
    store = store or ArtifactStore(configs[0][1].output_dir)
    loop = asyncio.get_running_loop()
    semaphore = asyncio.Semaphore(max(1, jobs))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        async def run_cell(index: int, config: ExperimentConfig, n: int) -> Dict[str, Any]:
            async with semaphore:
                game = await loop.run_in_executor(executor, play_game, config)
            report = game.report
            logger.info(f"Cell {index}: d={config.d} K={config.K} n_k={n} -> {report.outcome}")
            return {
                "schema_version": SWEEP_SCHEMA_VERSION, "cell": index, "d": config.d,
                "K": config.K, "n_k": n, "problem": config.problem,
                "learner_kind": config.learner_kind, "adversary_mode": config.adversary_mode,
                "seed": config.seed, "outcome": report.outcome, "n_total": report.n_total,
                "q_gap": report.q_gap, "max_error": report.max_error,
                "suboptimality": report.suboptimality,
            }

        rows = await asyncio.gather(*(run_cell(*item) for item in configs))

    rows = sorted(rows, key=lambda row: row["cell"])
    path = await store.write_csv("sweep.csv", SWEEP_HEADER, rows)
    logger.info(f"📝 Sweep of {len(rows)} cells written to {path}")
    return rows


@dataclass(slots=True)
class SolveResult:
    theta: np.ndarray
    queries: int
    error: float
    complete: bool

    def to_dict(self) -> Dict[str, Any]:
        return {"theta": self.theta.tolist(), "queries": self.queries,
                "error": self.error, "complete": self.complete}


def cmd_learner_solve(env_path: Path | str, gamma: float | None = None) -> SolveResult:
    """Run the exact solver against a stored instance; error is ||theta - sign * w||."""
    inst = HardInstance.from_dict(load_json(env_path))
    learner_gamma = inst.gamma if gamma is None else gamma
    if abs(learner_gamma - inst.gamma) > 1e-12:
        logger.warning(f"⚠️ Learner discount {learner_gamma} differs from the instance's {inst.gamma}")
    learner = ExactEvaluationLearner(inst.d, learner_gamma, family=inst.family)
    result = run_protocol(FixedInstanceEnvironment(inst), learner, inst.d, inst.family)
    theta = result.output.theta
    error = float(np.linalg.norm(theta - inst.sign * np.asarray(inst.w)))
    logger.info(f"Solver used {result.output.queries} queries, ||theta - sign*w|| = {error:.3e}")
    return SolveResult(theta=theta, queries=result.output.queries, error=error,
                       complete=result.output.complete)


def cmd_bounds(d: int, K: int, gamma: float, n: int | None = None) -> BudgetReport:
    report = budget_report(d, K, gamma, n=n)
    if report.W < 2.0:
        logger.warning(f"⚠️ W={report.W:.4f} at d={d}: the packing guarantee is vacuous here")
    return report
