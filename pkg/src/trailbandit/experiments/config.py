"""Experiment configuration: suite defaults, YAML ingestion and overrides."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from ..environment import PriorSpec
from ..geometry import ActionSet, Ellipsoid, LpBall, Sphere, action_set_from_dict
from ..policies import KINDS, PolicyConfig

SUITES = ("sphere10", "ellipsoid", "lp_ball", "custom")


class ConfigError(ValueError):
    pass


# Reference hyperparameters per (suite, noise variance or dimension); the
# tuned knob is lambda for TS/LinUCB/BayesTS, c for FEL and D for TRAiL.
SPHERE_REFERENCE = {
    0.1: {"ts": 0.01, "linucb": 0.01, "fel": 0.4, "trail": 0.1},
    1.0: {"ts": 0.2, "linucb": 0.1, "fel": 0.6, "trail": 0.5},
}
ELLIPSOID_REFERENCE = {
    20: {"ts": 0.15, "fel": 0.3, "trail": 0.3, "linucb": 0.01},
    100: {"ts": 0.01, "fel": 0.07, "trail": 0.03, "linucb": 0.01},
}


def reference_grid(center: float, points: int = 10) -> list[float]:
    """Log-spaced grid spanning center/10 .. 10*center."""
    return [float(x) for x in np.geomspace(center / 10, center * 10, points)]


def grid_step_log10(points: int = 10) -> float:
    return 2.0 / (points - 1)


@dataclass
class ExperimentConfig:
    suite: str = "sphere10"
    dimension: int = 10
    horizon: int = 1000
    run_count: int = 20
    tuning_runs: int = 10
    noise_std: float = math.sqrt(0.1)
    policies: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)
    lam_trail: float = 0.01
    lam_fel: float = 1.0
    include_linucb: bool = False
    p: float = 10.0
    action_set: dict = field(default_factory=dict)
    prior: dict = field(default_factory=dict)
    master_seed: int = 0
    output_dir: str | None = None
    log_dense_until: int = 1000
    log_ratio: float = 1.05

    @property
    def noise_var(self) -> float:
        return self.noise_std**2

    def validate(self) -> "ExperimentConfig":
        if self.suite not in SUITES:
            raise ConfigError(f"unknown suite {self.suite!r}")
        if self.run_count < 1 or self.tuning_runs < 1:
            raise ConfigError("run_count and tuning_runs must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.dimension < 2:
            raise ConfigError("dimension must be >= 2")
        if not self.noise_std >= 0:
            raise ConfigError("noise_std must be nonnegative")
        for k in self.policies:
            if k not in KINDS:
                raise ConfigError(f"unknown policy {k!r}")
            if k not in self.params:
                raise ConfigError(f"no hyperparameter for policy {k!r}")
        for k, grid in self.grids.items():
            if k not in KINDS:
                raise ConfigError(f"grid for unknown policy {k!r}")
            if not grid:
                raise ConfigError(f"empty grid for policy {k!r}")
            if any(not v > 0 for v in grid):
                raise ConfigError(f"grid for {k!r} must be positive")
        if self.suite == "custom" and (not self.action_set or not self.prior):
            raise ConfigError("custom suite needs action_set and prior entries")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    # -- suite construction -------------------------------------------------

    def prior_spec(self) -> PriorSpec:
        if self.prior:
            return PriorSpec.from_dict(self.prior)
        if self.suite == "lp_ball":
            return PriorSpec.gaussian_at((1.0,) * self.dimension, 0.01)
        return PriorSpec.uniform_sphere(1.0)

    def fixed_action_set(self) -> ActionSet | None:
        """The suite's action set, or None if each run draws its own."""
        if self.suite == "sphere10":
            return Sphere(self.dimension)
        if self.suite == "lp_ball":
            return LpBall(self.dimension, self.p)
        if self.suite == "custom":
            return action_set_from_dict(self.action_set)
        return None

    def theta_max(self) -> float:
        prior = self.prior_spec()
        if prior.kind == "uniform_sphere":
            return prior.radius
        # mean norm plus four prior standard deviations per coordinate
        return float(np.linalg.norm(prior.mean) + 4 * math.sqrt(prior.variance * len(prior.mean)))

    def policy_config(self, kind: str, value: float | None = None,
                      aset: ActionSet | None = None) -> PolicyConfig:
        """PolicyConfig for ``kind`` with its tuned knob set to ``value``."""
        value = self.params[kind] if value is None else value
        common = dict(m_subg=self.noise_std, theta_max=self.theta_max(),
                      a_max=action_norm_max(aset) if aset is not None else 1.0,
                      horizon=self.horizon)
        if kind == "trail":
            return PolicyConfig.trail(value, lam=self.lam_trail, **common)
        if kind == "fel":
            return PolicyConfig.fel(value, lam=self.lam_fel, **common)
        return PolicyConfig(kind, lam=value, **common)


def action_norm_max(aset: ActionSet) -> float:
    if isinstance(aset, Sphere):
        return aset.radius
    if isinstance(aset, Ellipsoid):
        return float(1 / math.sqrt(aset.eigvals[0]))
    if isinstance(aset, LpBall):
        return aset.dim ** (0.5 - 1.0 / aset.p)
    raise ConfigError(f"no norm bound for {type(aset).__name__}")


def _suite_defaults(suite: str, dimension: int | None, noise_var: float | None) -> dict:
    if suite == "sphere10":
        var = 0.1 if noise_var is None else noise_var
        ref = SPHERE_REFERENCE.get(round(var, 12), SPHERE_REFERENCE[0.1])
        return dict(dimension=dimension or 10, noise_std=math.sqrt(var), horizon=1000,
                    policies=["trail", "ts", "linucb", "fel"], params=dict(ref),
                    grids={k: reference_grid(v) for k, v in ref.items()})
    if suite == "ellipsoid":
        n = dimension or 20
        var = 0.1 if noise_var is None else noise_var
        ref = ELLIPSOID_REFERENCE.get(n, ELLIPSOID_REFERENCE[20])
        return dict(dimension=n, noise_std=math.sqrt(var), horizon=1000,
                    policies=["trail", "ts", "fel"], params=dict(ref),
                    grids={k: reference_grid(v) for k, v in ref.items()})
    if suite == "lp_ball":
        var = 0.1 if noise_var is None else noise_var
        return dict(dimension=dimension or 2, noise_std=math.sqrt(var), horizon=100_000,
                    policies=["bayes_ts"], params={"bayes_ts": 0.01},
                    grids={"bayes_ts": reference_grid(0.01)})
    if suite == "custom":
        var = 0.1 if noise_var is None else noise_var
        return dict(dimension=dimension or 2, noise_std=math.sqrt(var))
    raise ConfigError(f"unknown suite {suite!r}")


def build_config(raw: dict | None = None, **overrides) -> ExperimentConfig:
    """Merge suite defaults, file values and overrides (later wins)."""
    merged = dict(raw or {})
    merged.update({k: v for k, v in overrides.items() if v is not None})
    suite = merged.get("suite", "sphere10")
    noise_var = merged.pop("noise_var", None)
    if "noise_std" in merged and noise_var is None:
        noise_var = float(merged["noise_std"]) ** 2
    base = _suite_defaults(suite, merged.get("dimension"), noise_var)
    params = dict(base.pop("params", {}))
    params.update(merged.pop("params", None) or {})
    grids = dict(base.pop("grids", {}))
    grids.update(merged.pop("grids", None) or {})
    base.update(merged)
    base["params"], base["grids"] = params, grids
    if noise_var is not None:
        base["noise_std"] = math.sqrt(noise_var)
    if base.get("suite") == "ellipsoid" and base.get("include_linucb") and "linucb" not in base.get("policies", []):
        base["policies"] = list(base["policies"]) + ["linucb"]
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(base) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base["grids"] = {k: [float(x) for x in v] for k, v in base["grids"].items()}
    base["params"] = {k: float(v) for k, v in base["params"].items()}
    return ExperimentConfig(**base).validate()


def load_config(path, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a mapping")
    return build_config(raw, **overrides)
