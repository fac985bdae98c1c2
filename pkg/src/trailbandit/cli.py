"""Command-line entry point: run, tune, verify, bench, slopes."""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .constants import ParameterSpace, estimate_constants
from .environment import MetricTrace
from .experiments.analysis import AnalysisError, estimate_van_trees_constants, slope_regression
from .experiments.config import ConfigError, load_config
from .experiments.suites import default_workers, grid_search, run_suite, runtime_bench, write_bench
from .geometry import GeometryError
from .policies import KINDS, PolicyError
from .verification import LEMMAS

log = logging.getLogger("trailbandit")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3


def parse_dims(text: str) -> list[int]:
    """'10,50,100' or 'a..b' (1-2-5 sequence from a to b inclusive)."""
    if ".." in text:
        lo, hi = (int(x) for x in text.split(".."))
        if lo < 2 or hi < lo:
            raise ConfigError(f"bad dimension range {text!r}")
        out = []
        decade = 10 ** int(math.floor(math.log10(lo)))
        while decade <= hi:
            out += [m * decade for m in (1, 2, 5) if lo <= m * decade <= hi]
            decade *= 10
        return sorted(set(out) | {lo, hi})
    return [int(x) for x in text.split(",") if x]


def _overrides(args) -> dict:
    keys = {"output": "output_dir", "seed": "master_seed", "runs": "run_count", "horizon": "horizon",
            "tuning_runs": "tuning_runs", "noise_var": "noise_var"}
    return {dst: getattr(args, src) for src, dst in keys.items() if getattr(args, src, None) is not None}


def write_constants(path, rows: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "value"])
        for k, v in rows.items():
            w.writerow([k, repr(v) if isinstance(v, float) else v])


def cmd_run(args) -> int:
    cfg = load_config(args.config, **_overrides(args))
    res = run_suite(cfg, workers=args.workers, policies=args.policies)
    for kind in res.traces:
        regs = res.final_regrets(kind)
        print(f"{kind:9s} final regret mean {regs.mean():.4f} std {regs.std():.4f} "
              f"wall {res.mean_wall_seconds(kind):.3f}s")
    aset = cfg.fixed_action_set()
    if cfg.output_dir and aset is not None:
        prior = cfg.prior_spec()
        rows = {}
        if prior.kind == "uniform_sphere":
            params = ParameterSpace(prior.radius, prior.radius, aset.dim)
        else:
            r = float(np.linalg.norm(prior.mean))
            spread = 4 * math.sqrt(prior.variance * aset.dim)
            params = ParameterSpace(max(r - spread, 1e-3), r + spread, aset.dim)
        rows.update(estimate_constants(aset, params).as_dict())
        if cfg.suite == "lp_ball" and "bayes_ts" in res.traces:
            est = estimate_van_trees_constants(aset, prior, 1000, res.traces["bayes_ts"], cfg.noise_std,
                                               np.random.default_rng(cfg.master_seed))
            rows.update({f"vt_{k}": v for k, v in est.as_dict().items()})
        write_constants(Path(cfg.output_dir) / "constants.csv", rows)
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = load_config(args.config, **_overrides(args))
    if args.policy not in KINDS:
        raise ConfigError(f"unknown policy {args.policy!r}")
    res = grid_search(cfg, args.policy, workers=args.workers)
    for value, mean, std, score in res.table:
        print(f"{value:12.6g} mean {mean:10.4f} std {std:9.4f} score {score:10.4f}")
    print(f"best {args.policy}: {res.best:.6g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verification as V

    lemmas = [args.lemma] if args.lemma else list(V.LEMMAS[:5])
    reports = []
    for lemma in lemmas:
        if lemma in ("inference_growth", "pathwise_tradeoff"):
            reports += _stochastic_reports(lemma, args)
        else:
            trials = args.trials or (1000 if lemma == "nabla_a_star" else 10_000)
            reports += V.verify_geometry(lemma, trials, seed=args.seed or 0)
    failed = False
    for rep in reports:
        control = "[control]" in rep.lemma
        ok = (not rep.passed) if control else rep.passed
        failed |= not ok
        print(f"{'ok  ' if ok else 'FAIL'} {rep.lemma:40s} trials {rep.trials:6d} "
              f"max_violation {rep.max_violation: .3e}")
    out = Path(args.output or ".")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "verify.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lemma", "trials", "max_violation", "pass"])
        w.writerows(rep.row() for rep in reports)
    return EXIT_CHECK if failed else EXIT_OK


def _stochastic_reports(lemma, args) -> list:
    from . import verification as V
    from .experiments.analysis import sample_c3

    consts = estimate_constants(V.Sphere(2), ParameterSpace(1.0, 1.0, 2))
    noise = math.sqrt(0.1)
    runs = args.runs or 50
    horizon = args.horizon or 100_000
    cfg = V.theory_trail_config(consts, noise, horizon)
    traces = V.sphere_traces(cfg, runs, horizon, noise, seed=args.seed or 0, workers=args.workers)
    if lemma == "inference_growth":
        return [V.verify_inference_growth(traces, consts, cfg.perturbation.d, noise)]
    return [V.verify_pathwise_tradeoff(traces, sample_c3(traces), np.random.default_rng(args.seed or 0))]


def cmd_bench(args) -> int:
    dims = parse_dims(args.dims)
    rows = runtime_bench(dims, args.t, args.trials, tuple(args.policies), args.seed or 0)
    for kind, n, mean, std in rows:
        print(f"{kind:7s} n={n:4d} mean {mean:.4f}s std {std:.4f}s")
    if args.output:
        Path(args.output).mkdir(parents=True, exist_ok=True)
        write_bench(Path(args.output) / "bench.csv", rows)
    return EXIT_OK


def cmd_slopes(args) -> int:
    files = sorted(Path(args.trace_dir).rglob("*.csv"))
    files = [f for f in files if f.read_text().startswith("t,cum_regret,")]
    if not files:
        raise ConfigError(f"no trace CSVs under {args.trace_dir}")
    rows = []
    for f in files:
        tr = MetricTrace.read(f)
        row = [str(f)]
        for metric in ("regret", "lambda_min"):
            est = slope_regression(tr, metric, args.window)
            row += [repr(est.exponent), repr(est.r_squared)]
        rows.append(row)
        print(f"{f}: e_R {float(row[1]):.4f} e_I {float(row[3]):.4f}")
    out = Path(args.output) if args.output else Path(args.trace_dir)
    with open(out / "slopes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trace", "e_r", "r2_regret", "e_i", "r2_lambda_min"])
        w.writerows(rows)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trailbandit", description=__doc__)
    p.add_argument("--workers", type=int, default=default_workers(),
                   help="worker processes (default: available CPUs)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def suite_args(sp):
        sp.add_argument("config")
        sp.add_argument("--output")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--runs", type=int)
        sp.add_argument("--tuning-runs", dest="tuning_runs", type=int)
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--noise-var", dest="noise_var", type=float)

    sp = sub.add_parser("run", help="evaluate the suite's policies")
    suite_args(sp)
    sp.add_argument("--policies", nargs="+", choices=KINDS)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("tune", help="grid search one policy's hyperparameter")
    suite_args(sp)
    sp.add_argument("--policy", required=True, choices=KINDS)
    sp.set_defaults(fn=cmd_tune)

    sp = sub.add_parser("verify", help="sampled checks of the geometric and inference claims")
    sp.add_argument("--lemma", choices=LEMMAS)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--runs", type=int)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--output")
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("bench", help="wall-clock comparison on random ellipsoids")
    sp.add_argument("--dims", default="10..200")
    sp.add_argument("--t", type=int, default=10_000)
    sp.add_argument("--trials", type=int, default=5)
    sp.add_argument("--policies", nargs="+", default=["fel", "trail", "ts"], choices=KINDS)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--output")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("slopes", help="log-log slopes of every trace CSV in a directory")
    sp.add_argument("trace_dir")
    sp.add_argument("--window", type=float, default=0.01)
    sp.add_argument("--output")
    sp.set_defaults(fn=cmd_slopes)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.fn(args)
    except (ConfigError, PolicyError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GeometryError, AnalysisError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
