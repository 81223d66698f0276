"""Run configuration files (YAML or JSON).

Example::

    seed: 0
    out: runs/denn4
    data: {dir: prepared/}
    model: {kind: denn, order: 4, branches: [[50, 64], [50, 64]], activation: tanh}
    loss: {beta: 0.5, gamma: 2.0, K: 500}
    optim: {learning_rate: 0.001, max_epochs: 10}
    grid: {beta: [0.3, 0.7], gamma: [0, 2]}

Validation happens at load, before any work is done.
"""

from dataclasses import dataclass, field, fields
import os

import yaml

from dennlm.denn import LossWeights
from dennlm.optim import OptimConfig

GRID_KEYS = {"beta": "loss", "gamma": "loss", "K": "loss", "learning_rate": "optim", "l2": "optim", "l1": "optim"}


class ConfigError(ValueError):
    pass


@dataclass
class ModelSpec:
    kind: str = "denn"
    order: int = 4
    branches: list = field(default_factory=lambda: [[50, 64]])
    alpha: list = None
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in ("denn", "ngram"):
            raise ConfigError(f"model.kind must be 'denn' or 'ngram', got {self.kind!r}")
        if self.order < 1 or (self.kind == "denn" and self.order < 2):
            raise ConfigError("model.order too small")
        if not self.branches or any(len(b) != 2 or min(b) < 1 for b in self.branches):
            raise ConfigError("model.branches must be a non-empty list of [D, H] pairs")
        self.branches = [[int(d), int(h)] for d, h in self.branches]
        if self.alpha is not None:
            if len(self.alpha) != len(self.branches) or min(self.alpha) <= 0 or abs(sum(self.alpha) - 1) > 1e-12:
                raise ConfigError("model.alpha must be positive, one per branch, summing to 1")


@dataclass
class RunConfig:
    data_dir: str
    out: str = "run"
    seed: int = 0
    model: ModelSpec = field(default_factory=ModelSpec)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    grid: dict = field(default_factory=dict)

    def with_overrides(self, **values):
        """Copy with grid-style overrides such as ``beta=0.3, learning_rate=1e-3``."""
        loss = {f.name: getattr(self.loss, f.name) for f in fields(self.loss)}
        opt = {f.name: getattr(self.optim, f.name) for f in fields(self.optim)}
        for k, v in values.items():
            (loss if GRID_KEYS[k] == "loss" else opt)[k] = v
        return RunConfig(self.data_dir, self.out, self.seed, self.model, LossWeights(**loss), OptimConfig(**opt), {})

    def hyperparams(self):
        out = {f"loss.{f.name}": getattr(self.loss, f.name) for f in fields(self.loss)}
        out.update({f"optim.{f.name}": getattr(self.optim, f.name) for f in fields(self.optim)})
        out.update(seed=self.seed, order=self.model.order, branches=self.model.branches)
        return out


def _section(raw, name, cls):
    body = raw.get(name) or {}
    if not isinstance(body, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(body) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        return cls(**body)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from exc


def parse_config(raw, base_dir=".", check_paths=True):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    data = raw.get("data") or {}
    if "dir" not in data:
        raise ConfigError("data.dir is required")
    data_dir = os.path.normpath(os.path.join(base_dir, data["dir"]))
    if check_paths and not os.path.isdir(data_dir):
        raise ConfigError(f"data directory does not exist: {data_dir}")
    grid = raw.get("grid") or {}
    for k, vals in grid.items():
        if k not in GRID_KEYS:
            raise ConfigError(f"cannot grid over {k!r}; allowed: {sorted(GRID_KEYS)}")
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"grid.{k} must be a non-empty list")
    cfg = RunConfig(
        data_dir=data_dir,
        out=os.path.normpath(os.path.join(base_dir, raw.get("out", "run"))),
        seed=int(raw.get("seed", 0)),
        model=_section(raw, "model", ModelSpec),
        loss=_section(raw, "loss", LossWeights),
        optim=_section(raw, "optim", OptimConfig),
        grid=grid,
    )
    # every grid point must validate too
    for k, vals in grid.items():
        for v in vals:
            try:
                cfg.with_overrides(**{k: v})
            except ValueError as exc:
                raise ConfigError(f"grid.{k}={v!r}: {exc}") from exc
    return cfg


def load_config(path, check_paths=True):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return parse_config(raw, os.path.dirname(os.path.abspath(path)), check_paths)
