"""Power-law slope fits and the regret/inference product check."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..environment import MetricTrace, PriorSpec, sample_theta_star
from ..geometry import ActionSet, GeometryError, nabla_a_star
from ..policies import greedy_action

C3_FLOOR = 1e-6
MIN_WINDOW_POINTS = 10


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class SlopeEstimate:
    exponent: float
    window: float
    r_squared: float
    intercept: float
    points: int


def fit_loglog(t: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """OLS of log y on log t; returns (slope, intercept, r^2)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0) or np.any(t <= 0):
        raise AnalysisError("log-log fit needs positive values")
    x, z = np.log(t), np.log(y)
    xc = x - x.mean()
    sxx = xc @ xc
    if sxx == 0:
        raise AnalysisError("log-log fit needs distinct t values")
    slope = (xc @ (z - z.mean())) / sxx
    intercept = z.mean() - slope * x.mean()
    resid = z - (intercept + slope * x)
    sst = (z - z.mean()) @ (z - z.mean())
    r2 = 1.0 - (resid @ resid) / sst if sst > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def slope_regression(trace, metric: str = "lambda_min", window_fraction: float = 1.0,
                     t_from: float | None = None) -> SlopeEstimate:
    """Fit log(metric) against log(t) over the final fraction of logged points.

    ``trace`` is a MetricTrace or a (t, values) pair.  ``t_from`` instead
    selects every logged point with t >= t_from (e.g. T/10 for the last decade).
    """
    if not 0 < window_fraction <= 1:
        raise AnalysisError("window_fraction must lie in (0, 1]")
    if isinstance(trace, MetricTrace):
        t, y = trace.t, trace.metric(metric)
    else:
        t, y = (np.asarray(v) for v in trace)
    if t_from is not None:
        sel = t >= t_from
        t, y = t[sel], y[sel]
    else:
        k = int(math.ceil(window_fraction * t.size))
        t, y = t[t.size - k:], y[y.size - k:]
    if t.size < MIN_WINDOW_POINTS:
        raise AnalysisError(f"window holds {t.size} points, need >= {MIN_WINDOW_POINTS}")
    if np.any(y <= 0):
        raise AnalysisError(f"nonpositive {metric} values inside the window")
    slope, icpt, r2 = fit_loglog(t, y)
    return SlopeEstimate(slope, window_fraction, r2, icpt, int(t.size))


@dataclass(frozen=True)
class VanTreesEstimate:
    lambda_c: float
    cos_alpha: float
    c3: float
    c_n: float
    i_eps: float
    j_rho: float
    skipped: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def decade_times(horizon: int, start: int = 10) -> list[int]:
    out = []
    t = start
    while t <= horizon:
        out.append(t)
        t *= 10
    return out


def sample_c3(traces, times=None) -> float:
    """min over traces and times of R(t) / lambda_min(V_t), floored at 1e-6.

    The default grid is every decade from t = 10: at t = 1 the design
    matrix is essentially the regularizer, so the ratio says nothing about
    the trade-off.
    """
    if not traces:
        raise AnalysisError("need at least one probe trace")
    best = math.inf
    for tr in traces:
        grid = decade_times(int(tr.t[-1])) if times is None else times
        idx = np.searchsorted(tr.t, grid)
        if np.any(idx >= tr.t.size) or np.any(tr.t[idx] != np.asarray(grid)):
            raise AnalysisError("probe time missing from a trace's log schedule")
        ratio = tr.cum_regret[idx] / tr.lambda_min_v[idx]
        best = min(best, float(ratio.min()))
    return max(best, C3_FLOOR)


def estimate_van_trees_constants(aset: ActionSet, prior: PriorSpec, sample_count: int,
                                 probe_traces, noise_std: float,
                                 rng: np.random.Generator | None = None,
                                 times=None) -> VanTreesEstimate:
    """Sampled lambda_C, cos alpha_A, c3 and c_N = lambda_C^2 cos^2(alpha_A) c3 / n.

    lambda_C is the smallest eigenvalue of grad a*(theta) on the complement of
    its kernel (theta spans the kernel), minimized over prior samples.
    """
    if sample_count < 100:
        raise AnalysisError("sample_count must be >= 100")
    rng = np.random.default_rng(0) if rng is None else rng
    n = aset.dim
    lam_c = math.inf
    cos_a = math.inf
    skipped = 0
    for _ in range(sample_count):
        theta = sample_theta_star(prior, rng, n)
        try:
            jac = nabla_a_star(aset, theta)
        except GeometryError:
            skipped += 1
            continue
        w = np.linalg.eigvalsh(jac)
        lam_c = min(lam_c, float(w[1]))
        a = greedy_action(aset, theta)
        cos_a = min(cos_a, float(a @ theta / (np.linalg.norm(a) * np.linalg.norm(theta))))
    if not math.isfinite(lam_c):
        raise AnalysisError("every sample hit a singular Hessian")
    c3 = sample_c3(probe_traces, times)
    c_n = lam_c**2 * cos_a**2 * c3 / n
    return VanTreesEstimate(lam_c, cos_a, c3, c_n, noise_std**-2 if noise_std > 0 else math.inf,
                            prior.j_rho, skipped)


@dataclass
class VanTreesCheck:
    t: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    passed: np.ndarray
    e_r: float
    e_i: float

    @property
    def all_pass(self) -> bool:
        return bool(self.passed.all())


def van_trees_check(traces, estimate: VanTreesEstimate, t_min: int, noise_var: float,
                    tail_fraction: float = 0.01) -> VanTreesCheck:
    """Mean regret times mean lambda_min against noise_var * c_N * t for t >= t_min."""
    t = traces[0].t
    for tr in traces[1:]:
        if not np.array_equal(tr.t, t):
            raise AnalysisError("traces do not share a log schedule")
    if t_min > t[-1]:
        raise AnalysisError("t_min lies beyond the traces")
    reg = np.mean([tr.cum_regret for tr in traces], axis=0)
    lmin = np.mean([tr.lambda_min_v for tr in traces], axis=0)
    sel = t >= t_min
    lhs = reg[sel] * lmin[sel]
    rhs = noise_var * estimate.c_n * t[sel]
    e_r = slope_regression((t, reg), "regret", tail_fraction).exponent
    e_i = slope_regression((t, lmin), "lambda_min", tail_fraction).exponent
    return VanTreesCheck(t[sel], lhs, rhs, lhs >= rhs, e_r, e_i)
