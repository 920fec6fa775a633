"""Run configuration shared by the command-line entry points."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ParameterError
from .pipelines import COMBINE_RULES, METHODS

WORKERS_ENV = "COXIMPUTE_WORKERS"


@dataclass(frozen=True)
class RunConfig:
    methods: tuple = ("ap1",)
    K: int = 10
    L: int = 10
    replicates: int = 1
    horizons: tuple = (12.0, 60.0)
    combine: str = "mean"
    seed: int = 0
    cycles: int = 5
    input: str | None = None
    schema: str | None = None
    newdata: str | None = None
    predictions: str | None = None
    output: str = "coximpute-out"

    def __post_init__(self):
        methods = (self.methods,) if isinstance(self.methods, str) else tuple(self.methods)
        object.__setattr__(self, "methods", methods)
        object.__setattr__(self, "horizons", tuple(float(h) for h in self.horizons))
        self.validate()

    def validate(self):
        if not self.methods or set(self.methods) - set(METHODS):
            raise ParameterError(f"methods must be a non-empty subset of {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ParameterError("methods must not repeat")
        if min(self.K, self.L, self.replicates, self.cycles) < 1:
            raise ParameterError("K, L, replicates and cycles must be at least 1")
        h = self.horizons
        if not h or any(x <= 0 for x in h) or list(h) != sorted(set(h)):
            raise ParameterError("horizons must be positive, distinct and sorted")
        if self.combine not in COMBINE_RULES:
            raise ParameterError(f"combine must be one of {COMBINE_RULES}")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["methods"] = list(self.methods)
        d["horizons"] = list(self.horizons)
        return d

    @classmethod
    def field_names(cls) -> set:
        return {f.name for f in dataclasses.fields(cls)}


def read_config_file(path) -> dict:
    """Settings from a JSON config file or a previous run's manifest."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ParameterError(f"{path}: a config file must hold a JSON object")
    if "config" in raw and "config_hash" in raw:  # a manifest
        raw = raw["config"]
    return raw


def merge(base: dict, overrides: dict, allowed: set) -> dict:
    unknown = set(overrides) - allowed
    if unknown:
        raise ParameterError(f"unknown configuration keys: {sorted(unknown)}")
    out = dict(base)
    out.update(overrides)
    return out


def workers_from_env(default: int = 1) -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ParameterError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ParameterError(f"{WORKERS_ENV} must be at least 1")
    return value
