"""Ground-truth simulation: parameters, rewards, regret and trace logging."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .estimation import RlsState, rls_init, rls_update
from .geometry import ActionSet, action_set_from_dict
from .policies import FelState, PolicyConfig, policy_step

CSV_HEADER = ("t", "cum_regret", "lambda_min_v", "theta_err_sq", "wall_nanos")
FEASIBILITY_TOL = 1e-8


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    """Either a uniform law on a sphere or an isotropic Gaussian around a mean."""

    kind: str
    radius: float = 1.0
    mean: tuple = ()
    variance: float = 0.0

    def __post_init__(self):
        if self.kind == "uniform_sphere":
            if not self.radius > 0:
                raise SimulationError("prior radius must be positive")
        elif self.kind == "gaussian":
            if not self.variance > 0:
                raise SimulationError("prior variance must be positive")
            if len(self.mean) < 2:
                raise SimulationError("prior mean needs dimension >= 2")
        else:
            raise SimulationError(f"unknown prior kind {self.kind!r}")

    @classmethod
    def uniform_sphere(cls, radius: float = 1.0) -> "PriorSpec":
        return cls("uniform_sphere", radius=float(radius))

    @classmethod
    def gaussian_at(cls, mean, variance: float) -> "PriorSpec":
        return cls("gaussian", mean=tuple(float(m) for m in mean), variance=float(variance))

    @property
    def j_rho(self) -> float:
        """Fisher-information proxy of the prior (1/variance for the Gaussian)."""
        if self.kind == "gaussian":
            return 1.0 / self.variance
        return math.nan

    def describe(self) -> dict:
        if self.kind == "gaussian":
            return {"kind": "gaussian", "mean": list(self.mean), "variance": self.variance}
        return {"kind": "uniform_sphere", "radius": self.radius}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        if d["kind"] == "gaussian":
            return cls.gaussian_at(d["mean"], d["variance"])
        return cls.uniform_sphere(d.get("radius", 1.0))


def sample_theta_star(prior: PriorSpec, rng: np.random.Generator, dim: int | None = None) -> np.ndarray:
    if prior.kind == "uniform_sphere":
        if dim is None:
            raise SimulationError("a uniform sphere prior needs the dimension")
        while True:
            u = rng.standard_normal(dim)
            nrm = np.linalg.norm(u)
            if nrm > 0:
                return prior.radius * u / nrm
    mean = np.asarray(prior.mean)
    if dim is not None and dim != mean.size:
        raise SimulationError("prior mean dimension does not match")
    sd = math.sqrt(prior.variance)
    while True:
        th = mean + sd * rng.standard_normal(mean.size)
        if th.any():
            return th


@dataclass(eq=False)
class BanditEnvironment:
    theta_star: np.ndarray
    noise_std: float
    aset: ActionSet
    a_star: np.ndarray = field(init=False, repr=False)
    optimal_reward: float = field(init=False)

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, dtype=float)
        if not self.theta_star.any():
            raise SimulationError("theta_star must be nonzero")
        if self.theta_star.shape != (self.aset.dim,):
            raise SimulationError("theta_star dimension does not match the action set")
        if not self.noise_std >= 0:
            raise SimulationError("noise_std must be nonnegative")
        self.a_star = self.aset.argmax(self.theta_star)
        self.optimal_reward = float(self.theta_star @ self.a_star)

    def describe(self) -> dict:
        return {"theta_star": self.theta_star.tolist(), "noise_std": self.noise_std,
                "action_set": self.aset.describe()}


def observe(env: BanditEnvironment, a: np.ndarray, rng: np.random.Generator) -> float:
    y = float(env.theta_star @ a)
    if env.noise_std:
        y += env.noise_std * rng.standard_normal()
    return y


def per_step_regret(env: BanditEnvironment, a: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    if env.aset.g(a) > FEASIBILITY_TOL:
        raise SimulationError("action lies outside the action set")
    return max(0.0, env.optimal_reward - float(env.theta_star @ a))


def default_log_schedule(horizon: int, dense_until: int = 1000, ratio: float = 1.05) -> np.ndarray:
    """Every step up to ``dense_until``, then geometric spacing; always ends at T.

    Powers of ten are always included so that per-decade probes can read
    the trace directly.
    """
    if horizon < 1:
        raise SimulationError("horizon must be >= 1")
    steps = list(range(1, min(horizon, dense_until) + 1))
    t = float(steps[-1])
    while True:
        t *= ratio
        k = int(math.floor(t))
        if k >= horizon:
            break
        if k > steps[-1]:
            steps.append(k)
    if steps[-1] != horizon:
        steps.append(horizon)
    decades = [10**k for k in range(int(math.log10(horizon)) + 1) if 10**k <= horizon]
    return np.unique(np.asarray(steps + decades, dtype=np.int64))


@dataclass
class MetricTrace:
    t: np.ndarray
    cum_regret: np.ndarray
    lambda_min_v: np.ndarray
    theta_err_sq: np.ndarray
    wall_nanos: np.ndarray
    meta: dict = field(default_factory=dict)
    final_v: np.ndarray | None = None
    final_theta_hat: np.ndarray | None = None
    theta_star: np.ndarray | None = None
    a_star: np.ndarray | None = None
    lam: float | None = None

    @property
    def final_regret(self) -> float:
        return float(self.cum_regret[-1])

    def metric(self, name: str) -> np.ndarray:
        key = {"regret": "cum_regret", "lambda_min": "lambda_min_v"}.get(name, name)
        return getattr(self, key)

    def csv_rows(self):
        for i in range(self.t.size):
            yield (int(self.t[i]), repr(float(self.cum_regret[i])), repr(float(self.lambda_min_v[i])),
                   repr(float(self.theta_err_sq[i])), int(self.wall_nanos[i]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            w.writerows(self.csv_rows())

    def sidecar(self) -> dict:
        out = dict(self.meta)
        for key in ("final_v", "final_theta_hat", "theta_star", "a_star"):
            val = getattr(self, key)
            if val is not None:
                out[key] = np.asarray(val).tolist()
        if self.lam is not None:
            out["lam"] = self.lam
        return out

    def write(self, csv_path) -> None:
        """CSV plus a JSON sidecar next to it (same stem, .json)."""
        csv_path = Path(csv_path)
        self.write_csv(csv_path)
        with open(csv_path.with_suffix(".json"), "w") as fh:
            json.dump(self.sidecar(), fh, indent=1, sort_keys=True)

    @classmethod
    def read(cls, csv_path) -> "MetricTrace":
        csv_path = Path(csv_path)
        data = np.genfromtxt(csv_path, delimiter=",", names=True, dtype=None, encoding="ascii")
        data = np.atleast_1d(data)
        side = {}
        sc = csv_path.with_suffix(".json")
        if sc.exists():
            side = json.loads(sc.read_text())
        arrays = {k: side.pop(k, None) for k in ("final_v", "final_theta_hat", "theta_star", "a_star")}
        lam = side.pop("lam", None)
        return cls(
            t=data["t"].astype(np.int64), cum_regret=data["cum_regret"].astype(float),
            lambda_min_v=data["lambda_min_v"].astype(float),
            theta_err_sq=data["theta_err_sq"].astype(float),
            wall_nanos=data["wall_nanos"].astype(np.int64), meta=side, lam=lam,
            **{k: (None if v is None else np.asarray(v, dtype=float)) for k, v in arrays.items()},
        )


def seed_streams(seed) -> tuple[np.random.Generator, np.random.Generator]:
    """(noise rng, policy rng) derived from an int or SeedSequence without mutating it."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    kids = [np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (i,)) for i in (0, 1)]
    return np.random.default_rng(kids[0]), np.random.default_rng(kids[1])


def run_episode(
    config: PolicyConfig,
    env: BanditEnvironment,
    horizon: int,
    seed,
    log_schedule=None,
    theta_init: np.ndarray | None = None,
) -> MetricTrace:
    """Play ``horizon`` rounds of ``config`` against ``env``.

    ``theta_init`` seeds the estimate by setting b = lam * theta_init, so that
    V^-1 b starts exactly at it (an oracle start when theta_init = theta*).
    """
    if horizon < 1:
        raise SimulationError("horizon must be >= 1")
    aset = env.aset
    n = aset.dim
    sched = default_log_schedule(horizon) if log_schedule is None else np.asarray(log_schedule, dtype=np.int64)
    sched = np.unique(sched[(sched >= 1) & (sched <= horizon)])
    if sched.size == 0 or sched[-1] != horizon:
        sched = np.append(sched, horizon)
    noise_rng, policy_rng = seed_streams(seed)

    rls: RlsState = rls_init(n, config.lam)
    if theta_init is not None:
        rls.b = config.lam * np.asarray(theta_init, dtype=float)
        rls.theta_hat = rls.v_inv @ rls.b
    fel = FelState.for_set(aset, config.c_fel) if config.kind == "fel" else None

    m = sched.size
    out_regret = np.empty(m)
    out_lmin = np.empty(m)
    out_err = np.empty(m)
    out_wall = np.empty(m, dtype=np.int64)
    theta_star = env.theta_star
    opt = env.optimal_reward
    g = aset.g
    cum = 0.0
    k = 0
    next_log = int(sched[0])
    start = time.perf_counter_ns()
    for t in range(1, horizon + 1):
        a, absorb = policy_step(config, rls, aset, t, policy_rng, fel)
        if g(a) > FEASIBILITY_TOL:
            raise SimulationError(f"policy {config.kind} played an infeasible action at t={t}")
        mean_reward = float(theta_star @ a)
        cum += max(0.0, opt - mean_reward)
        y = mean_reward + env.noise_std * noise_rng.standard_normal()
        if absorb:
            rls_update(rls, a, y)
        if t == next_log:
            out_regret[k] = cum
            out_lmin[k] = np.linalg.eigvalsh(rls.v)[0]
            diff = rls.theta_hat - theta_star
            out_err[k] = diff @ diff
            out_wall[k] = time.perf_counter_ns() - start
            k += 1
            if k < m:
                next_log = int(sched[k])

    meta = {"seed": _seed_repr(seed), "policy": config.describe(), "environment": env.describe(),
            "horizon": int(horizon), "wall_seconds": (time.perf_counter_ns() - start) / 1e9}
    if fel is not None:
        meta["fel_explorations"] = fel.f
    return MetricTrace(sched, out_regret, out_lmin, out_err, out_wall, meta=meta,
                       final_v=rls.v.copy(), final_theta_hat=rls.theta_hat.copy(),
                       theta_star=theta_star.copy(), a_star=env.a_star.copy(), lam=config.lam)


def _seed_repr(seed):
    if isinstance(seed, np.random.SeedSequence):
        return {"entropy": seed.entropy, "spawn_key": list(seed.spawn_key)}
    return seed


def environment_from_dict(d: dict) -> BanditEnvironment:
    return BanditEnvironment(np.asarray(d["theta_star"], dtype=float), float(d["noise_std"]),
                             action_set_from_dict(d["action_set"]))
