"""Run configuration: JSON file fields mirror RunConfig, command-line values win."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..errors import ConfigError
from ..evolve.search import SearchConfig
from ..prunespace import MODES, STRATEGIES


def _default_data():
    return {"format": "synthetic", "classes": 4, "dims": [3, 8, 8], "samples": 4096,
            "seed": 7, "separation": 1.0}


@dataclass
class RunConfig:
    # model: a built-in generator name or a model spec JSON path
    model: str = "toy_cnn"
    model_args: dict = field(default_factory=dict)
    weights: str | None = None          # EAPW path; None -> seeded init + readout fit
    model_seed: int = 0
    space_mode: str = "cnn-channels"
    min_ratio: float = 0.1
    strategy: str = "random"
    # search
    population: int = 32
    mutations: int | None = None
    crossovers: int | None = None
    generations: int = 17
    initial: int = 56
    seed: int | None = None
    divisions: int = 99
    mutation_prob: float = 0.1
    front_size: int | None = None
    # data
    data: dict = field(default_factory=_default_data)
    reconstruction: int = 512
    evaluation: int = 1024
    pretrain: int = 2048
    patches: int = 10
    tokens: int = 20
    bn_recalibrate: bool = False
    # run
    output: str = "runs/latest"
    threads: int | None = None       # None -> machine parallelism
    log_timing: bool = False

    def check(self, need_seed=True) -> "RunConfig":
        if need_seed and self.seed is None:
            raise ConfigError("a seed is required (--seed or \"seed\" in the config)")
        if self.space_mode not in MODES:
            raise ConfigError(f"space_mode must be one of {MODES}, got {self.space_mode!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        for name in ("population", "generations", "initial", "divisions", "reconstruction",
                     "evaluation", "patches", "tokens"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < (0 if name == "generations" else 1):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.threads is not None and (not isinstance(self.threads, int) or self.threads < 1):
            raise ConfigError(f"threads must be a positive integer, got {self.threads!r}")
        if self.pretrain < 0:
            raise ConfigError("pretrain must be non-negative")
        if not isinstance(self.data, dict) or "format" not in self.data:
            raise ConfigError("data must be an object with a \"format\" key")
        self.search_config()
        return self

    def search_config(self) -> SearchConfig:
        return SearchConfig(
            population=self.population, mutations=self.mutations, crossovers=self.crossovers,
            generations=self.generations, initial=self.initial, seed=self.seed or 0,
            divisions=self.divisions, mutation_prob=self.mutation_prob,
            front_size=self.front_size, threads=self.threads or os.cpu_count() or 1,
            log_timing=self.log_timing,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def config_fields():
    return {f.name: f for f in fields(RunConfig)}


def load_config(path=None, overrides=None) -> RunConfig:
    """Read ``path`` (JSON) if given, then apply non-None ``overrides``."""
    values = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    known = config_fields()
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
