"""
Config — ExperimentConfig loading, validation and environment overrides.

Config files are JSON. BATCHBOUND_SEED and BATCHBOUND_OUT override the file;
BATCHBOUND_SEARCH_BUDGET only fills in a missing search_budget. Boolean switches such as
BATCHBOUND_TRACE_MEMORY are read with env_flag.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping

from core.errors import ConfigError
from core.packing import DEFAULT_SEARCH_BUDGET, GAMMA_FLOOR

logger = logging.getLogger('batchbound.config')

PROBLEMS = ("PE", "BPI")
QUERY_MODES = ("policy_free", "policy_induced")
LEARNER_KINDS = ("random_unit", "coordinate", "greedy_orthogonal", "exact")
ADVERSARY_MODES = ("multi_batch", "fully_adaptive", "fixed_instance")
SCHEDULE_MODES = ("geometric", "theoretical")
DEFEAT_POLICIES = ("commit", "raise")


def env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise ConfigError(name, f"expected an integer, got {raw!r}") from e


def env_flag(name: str, default: bool = False) -> bool:
    """1/true/yes/on and 0/false/no/off, case-insensitive; unset or blank gives the default."""
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(name, f"expected a boolean flag, got {raw!r}")


@dataclass(slots=True)
class ExperimentConfig:
    d: int
    gamma: float
    K: int
    n_per_round: list[int]
    problem: str = "PE"
    query_mode: str = "policy_free"
    learner_kind: str = "coordinate"
    adversary_mode: str = "multi_batch"
    seed: int = 0
    output_dir: str = "runs"
    schedule: str | list[int] = "geometric"
    search_budget: int = DEFAULT_SEARCH_BUDGET
    eps: float = 1.0
    truncate_queries: int | None = None
    on_defeat: str = "commit"

    def validate(self) -> ExperimentConfig:
        if not isinstance(self.d, int) or self.d < 2:
            raise ConfigError("d", f"must be an integer >= 2, got {self.d!r}")
        if not (GAMMA_FLOOR < self.gamma < 1.0):
            raise ConfigError("gamma", f"must lie in (sqrt(3/4), 1), got {self.gamma!r}")
        if not isinstance(self.K, int) or self.K < 1:
            raise ConfigError("K", f"must be an integer >= 1, got {self.K!r}")
        if len(self.n_per_round) != self.K:
            raise ConfigError("n_per_round", f"has {len(self.n_per_round)} entries for K={self.K}")
        if any(not isinstance(n, int) or n < 1 for n in self.n_per_round):
            raise ConfigError("n_per_round", f"all counts must be integers >= 1, got {self.n_per_round}")
        _choice("problem", self.problem, PROBLEMS)
        _choice("query_mode", self.query_mode, QUERY_MODES)
        _choice("learner_kind", self.learner_kind, LEARNER_KINDS)
        _choice("adversary_mode", self.adversary_mode, ADVERSARY_MODES)
        _choice("on_defeat", self.on_defeat, DEFEAT_POLICIES)
        if self.query_mode == "policy_induced" and self.problem == "BPI":
            raise ConfigError("query_mode", "policy-induced queries are only supported for PE")
        if self.query_mode == "policy_induced" and self.learner_kind == "exact":
            raise ConfigError("query_mode", "the exact solver issues policy-free queries")
        if self.learner_kind == "exact" and any(n != 1 for n in self.n_per_round):
            raise ConfigError("n_per_round", "the exact solver asks one query per round")
        if isinstance(self.schedule, str):
            _choice("schedule", self.schedule, SCHEDULE_MODES)
        elif not all(isinstance(x, int) for x in self.schedule):
            raise ConfigError("schedule", "explicit schedules must be lists of integers")
        if self.search_budget < 1:
            raise ConfigError("search_budget", "must be >= 1")
        if self.eps <= 0:
            raise ConfigError("eps", "must be > 0")
        if self.truncate_queries is not None and self.truncate_queries < 1:
            raise ConfigError("truncate_queries", "must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExperimentConfig:
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        for required in ("d", "gamma", "K", "n_per_round"):
            if required not in data:
                raise ConfigError(required, "missing required key")
        values = dict(data)
        if isinstance(values["n_per_round"], int):
            values["n_per_round"] = [values["n_per_round"]] * int(values["K"])
        try:
            values["gamma"] = float(values["gamma"])
            values["n_per_round"] = list(values["n_per_round"])
        except (TypeError, ValueError) as e:
            raise ConfigError("gamma", str(e)) from e
        return cls(**values).validate()


def _choice(name: str, value: Any, options: tuple[str, ...]):
    if value not in options:
        raise ConfigError(name, f"must be one of {', '.join(options)}; got {value!r}")


def apply_env_overrides(data: dict) -> dict:
    data = dict(data)
    seed = os.getenv("BATCHBOUND_SEED")
    if seed:
        data["seed"] = env_int("BATCHBOUND_SEED", 0)
        logger.info(f"Seed overridden from environment: {data['seed']}")
    out = os.getenv("BATCHBOUND_OUT")
    if out:
        data["output_dir"] = out
    if "search_budget" not in data:
        data["search_budget"] = env_int("BATCHBOUND_SEARCH_BUDGET", DEFAULT_SEARCH_BUDGET)
    return data


def read_config_file(path: Path | str) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError("config", f"{path} does not exist") from e
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"{path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a JSON object")
    return raw


def load_config(path: Path | str, **overrides: Any) -> ExperimentConfig:
    """Read a JSON config, apply env then explicit overrides, validate."""
    data = apply_env_overrides(read_config_file(path))
    data.update({key: value for key, value in overrides.items() if value is not None})
    config = ExperimentConfig.from_dict(data)
    logger.debug(f"Loaded config {path}: {config.to_dict()}")
    return config
