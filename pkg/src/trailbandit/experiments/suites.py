"""Benchmark suites, grid search and the run-time bench."""
from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..environment import BanditEnvironment, MetricTrace, default_log_schedule, run_episode, sample_theta_star
from ..geometry import ActionSet, Ellipsoid
from .config import ExperimentConfig

EVAL, TUNE, BENCH = 0, 1, 2


def random_ellipsoid(n: int, rng: np.random.Generator) -> Ellipsoid:
    """{x : x^T S x <= 1} with S = I + (1/n) sum_i delta_i x_i x_i^T.

    x_i are standard normal and delta_i = 10^-(1 + v_i) with v_i ~ U[0, 1].
    """
    if n < 2:
        raise ValueError("dimension must be >= 2")
    x = rng.standard_normal((n, n))
    delta = 10.0 ** -(1.0 + rng.uniform(size=n))
    shape = np.eye(n) + (x.T * delta) @ x / n
    return Ellipsoid(0.5 * (shape + shape.T))


def default_workers() -> int:
    return os.cpu_count() or 1


def parallel_imap(fn, items, workers: int | None = None):
    """Ordered results of fn over items, inline when one worker suffices."""
    items = list(items)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        for x in items:
            yield fn(x)
        return
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        yield from pool.map(fn, items)


def parallel_map(fn, items, workers: int | None = None) -> list:
    return list(parallel_imap(fn, items, workers))


def _seed(config: ExperimentConfig, purpose: int, index: int, *extra) -> np.random.SeedSequence:
    return np.random.SeedSequence(config.master_seed, spawn_key=(purpose, index) + extra)


def make_environment(config: ExperimentConfig, purpose: int, index: int) -> BanditEnvironment:
    """Environment of run ``index``; shared by every policy (common random numbers)."""
    rng = np.random.default_rng(_seed(config, purpose, index, 0))
    aset = config.fixed_action_set()
    if aset is None:
        aset = random_ellipsoid(config.dimension, rng)
    theta = sample_theta_star(config.prior_spec(), rng, aset.dim)
    return BanditEnvironment(theta, config.noise_std, aset)


def log_schedule(config: ExperimentConfig) -> np.ndarray:
    return default_log_schedule(config.horizon, config.log_dense_until, config.log_ratio)


@dataclass(frozen=True)
class _Job:
    config: ExperimentConfig
    kind: str
    value: float | None
    purpose: int
    index: int


def _run_job(job: _Job) -> MetricTrace:
    env = make_environment(job.config, job.purpose, job.index)
    pcfg = job.config.policy_config(job.kind, job.value, env.aset)
    trace = run_episode(pcfg, env, job.config.horizon, _seed(job.config, job.purpose, job.index, 1),
                        log_schedule(job.config))
    trace.meta["run_index"] = job.index
    return trace


@dataclass
class SuiteResult:
    config: ExperimentConfig
    traces: dict = field(default_factory=dict)

    def final_regrets(self, kind: str) -> np.ndarray:
        return np.array([tr.final_regret for tr in self.traces[kind]])

    def mean_final_regret(self, kind: str) -> float:
        return float(self.final_regrets(kind).mean())

    def mean_wall_seconds(self, kind: str) -> float:
        return float(np.mean([tr.meta["wall_seconds"] for tr in self.traces[kind]]))

    def summary(self) -> tuple[np.ndarray, dict]:
        return summarize(self.traces)


def summarize(traces: dict) -> tuple[np.ndarray, dict]:
    """Common t grid and, per policy, (mean, std) of cumulative regret across runs."""
    t = None
    stats = {}
    for kind, runs in traces.items():
        for tr in runs:
            if t is None:
                t = tr.t
            elif not np.array_equal(t, tr.t):
                raise ValueError("traces do not share a log schedule")
        reg = np.vstack([tr.cum_regret for tr in runs])
        stats[kind] = (reg.mean(axis=0), reg.std(axis=0))
    return t, stats


def write_summary(path, t: np.ndarray, stats: dict) -> None:
    kinds = list(stats)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"{k}_{s}" for k in kinds for s in ("mean", "std")])
        for i in range(t.size):
            row = [int(t[i])]
            for k in kinds:
                row += [repr(float(stats[k][0][i])), repr(float(stats[k][1][i]))]
            w.writerow(row)


def run_suite(config: ExperimentConfig, workers: int | None = None,
              policies: list | None = None) -> SuiteResult:
    """Evaluate every policy on ``run_count`` fresh environments.

    With ``output_dir`` set, writes runs/<policy>/run_NNN.csv (+ .json),
    summary.csv, wall_time.csv and a frozen config.yaml.  Completed runs are
    flushed even if a later run fails.
    """
    config.validate()
    kinds = list(policies or config.policies)
    out = Path(config.output_dir) if config.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        config.dump(out / "config.yaml")
    jobs = [_Job(config, k, None, EVAL, i) for k in kinds for i in range(config.run_count)]
    result = SuiteResult(config, {k: [] for k in kinds})
    for job, tr in zip(jobs, parallel_imap(_run_job, jobs, workers)):
        result.traces[job.kind].append(tr)
        if out is not None:
            d = out / "runs" / job.kind
            d.mkdir(parents=True, exist_ok=True)
            tr.write(d / f"run_{job.index:03d}.csv")
    if out is not None:
        t, stats = result.summary()
        write_summary(out / "summary.csv", t, stats)
        with open(out / "wall_time.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "mean_seconds"])
            for k in kinds:
                w.writerow([k, repr(result.mean_wall_seconds(k))])
    return result


@dataclass
class GridResult:
    kind: str
    best: float
    table: list  # rows of (value, mean, std, score)

    def write(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value", "mean", "std", "score"])
            for row in self.table:
                w.writerow([repr(float(x)) for x in row])


def select_best(table: list) -> float:
    """Lowest score; ties go to the smaller hyperparameter value."""
    return min(table, key=lambda r: (r[3], r[0]))[0]


def grid_search(config: ExperimentConfig, kind: str, workers: int | None = None,
                grid: list | None = None) -> GridResult:
    """Score = mean + std of final regret over ``tuning_runs`` episodes per grid point."""
    grid = list(config.grids.get(kind, []) if grid is None else grid)
    if not grid:
        raise ValueError(f"empty grid for policy {kind!r}")
    jobs = [_Job(config, kind, float(v), TUNE, i) for v in grid for i in range(config.tuning_runs)]
    finals = np.array([tr.final_regret for tr in parallel_map(_run_job, jobs, workers)])
    finals = finals.reshape(len(grid), config.tuning_runs)
    table = [(float(v), float(f.mean()), float(f.std()), float(f.mean() + f.std()))
             for v, f in zip(grid, finals)]
    res = GridResult(kind, select_best(table), table)
    if config.output_dir:
        out = Path(config.output_dir) / kind
        out.mkdir(parents=True, exist_ok=True)
        res.write(out / "tuning.csv")
    return res


@dataclass(frozen=True)
class _BenchJob:
    config: ExperimentConfig
    kind: str
    trial: int


def _bench_job(job: _BenchJob) -> float:
    env = make_environment(job.config, BENCH, job.trial)
    pcfg = job.config.policy_config(job.kind, None, env.aset)
    start = time.perf_counter()
    run_episode(pcfg, env, job.config.horizon, _seed(job.config, BENCH, job.trial, 1), [job.config.horizon])
    return time.perf_counter() - start


def runtime_bench(dims, horizon: int = 10_000, trials: int = 5,
                  policies=("fel", "trail", "ts"), master_seed: int = 0,
                  workers: int = 1) -> list:
    """Rows (policy, n, mean seconds, std seconds) on random ellipsoids.

    Timed runs log only the final step so that logging costs stay out of
    the measurement.  Keep ``workers=1`` for clean timings.
    """
    from .config import build_config

    if trials < 1:
        raise ValueError("trials must be >= 1")
    rows = []
    for n in dims:
        cfg = build_config({"suite": "ellipsoid", "dimension": int(n), "horizon": int(horizon),
                            "master_seed": master_seed, "include_linucb": "linucb" in policies})
        for kind in policies:
            secs = parallel_map(_bench_job, [_BenchJob(cfg, kind, i) for i in range(trials)], workers)
            rows.append((kind, int(n), float(np.mean(secs)), float(np.std(secs))))
    return rows


def write_bench(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "n", "mean_seconds", "std_seconds"])
        for kind, n, m, s in rows:
            w.writerow([kind, n, repr(m), repr(s)])
