"""Sampled checks of the geometric identities and the inference/regret claims.

Every geometric verifier takes an optional ``consts`` so a negative control
can be produced by passing deliberately wrong constants (for instance
``consts.with_overrides(phi_g=10 * consts.phi_g)``); a verifier that still
passed under such an override would be vacuous.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import GeometryConstants, ParameterSpace, estimate_constants, theory_lambda
from .environment import BanditEnvironment, MetricTrace, PriorSpec, run_episode, sample_theta_star
from .estimation import f_delta
from .geometry import ActionSet, Ellipsoid, Sphere, householder_combine, nabla_a_star
from .policies import PolicyConfig

GEOM_TOL = 1e-8
FD_STEP = 1e-5
FD_TOL = 1e-4
PATHWISE_TOL = 1e-6

LEMMAS = ("collinearity", "quadratic_bounds", "projection_bound", "lipschitz", "nabla_a_star",
          "inference_growth", "pathwise_tradeoff")


@dataclass
class LemmaReport:
    lemma: str
    trials: int
    max_violation: float
    passed: bool
    tolerance: float
    witness: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def row(self) -> tuple:
        return (self.lemma, self.trials, repr(float(self.max_violation)), self.passed)


def _finish(lemma, trials, viol, witnesses, tol, info=None) -> LemmaReport:
    i = int(np.argmax(viol))
    worst = float(viol[i])
    return LemmaReport(lemma, trials, worst, worst <= tol, tol, witnesses(i), info or {})


def _consts(aset, params, consts):
    return estimate_constants(aset, params) if consts is None else consts


def verify_collinearity(aset: ActionSet, params: ParameterSpace, trials: int,
                        rng: np.random.Generator, consts: GeometryConstants | None = None) -> LemmaReport:
    """grad g(a*(theta)) = omega* theta with omega* inside [omega_lo, omega_hi].

    The violation is the larger of the angle between grad g(a*) and theta
    (radians) and the distance of omega* outside its bracket.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    c = _consts(aset, params, consts)
    thetas = params.sample(rng, trials)
    acts = aset.argmax_rows(thetas)
    viol = np.empty(trials)
    omegas = np.empty(trials)
    for k in range(trials):
        gv = aset.grad(acts[k])
        th = thetas[k]
        gn, tn = np.linalg.norm(gv), np.linalg.norm(th)
        angle = 2 * math.atan2(np.linalg.norm(gv / gn - th / tn), np.linalg.norm(gv / gn + th / tn))
        om = gn / tn
        omegas[k] = om
        viol[k] = max(angle, c.omega_lo - om, om - c.omega_hi)
    return _finish("collinearity", trials, viol, lambda i: {"theta": thetas[i].tolist()}, GEOM_TOL,
                   {"omega_range": [float(omegas.min()), float(omegas.max())]})


def _boundary_neighbors(aset, a_star, radius, rng):
    """Boundary points within ``radius`` of each row of a_star (rejection sampling)."""
    out = np.empty_like(a_star)
    for k, a in enumerate(a_star):
        while True:
            u = rng.standard_normal(a.size)
            u *= rng.uniform(0, radius) / np.linalg.norm(u)
            x = aset.radial_boundary(a + u)
            if np.linalg.norm(x - a) <= radius:
                out[k] = x
                break
    return out


def verify_quadratic_bounds(aset: ActionSet, params: ParameterSpace, trials: int,
                            rng: np.random.Generator, consts: GeometryConstants | None = None) -> LemmaReport:
    """Two-sided quadratic sandwich of the regret of boundary actions near a*(theta)."""
    c = _consts(aset, params, consts)
    thetas = params.sample(rng, trials)
    a_star = aset.argmax_rows(thetas)
    xs = _boundary_neighbors(aset, a_star, c.m_prime, rng)
    d2 = np.sum((a_star - xs) ** 2, axis=1)
    gap = np.einsum("ij,ij->i", thetas, a_star - xs)
    lo = c.theta_min * c.hess_min / (2 * c.grad_max) * d2
    hi = c.theta_max / (2 * c.phi_g) * d2
    viol = np.maximum(lo - gap, gap - hi)
    return _finish("quadratic_bounds", trials, viol,
                   lambda i: {"theta": thetas[i].tolist(), "x": xs[i].tolist()}, GEOM_TOL)


def verify_projection_bound(aset: ActionSet, params: ParameterSpace, trials: int,
                            rng: np.random.Generator, consts: GeometryConstants | None = None) -> LemmaReport:
    """||proj(a + m mu) - a - m mu|| <= m^2 / phi_g for tangent unit mu, m <= m_phi."""
    c = _consts(aset, params, consts)
    thetas = params.sample(rng, trials)
    a_star = aset.argmax_rows(thetas)
    viol = np.empty(trials)
    ms = rng.uniform(0, 1, size=trials) * c.m_phi
    for k in range(trials):
        a = a_star[k]
        gv = aset.grad(a)
        coeff = rng.standard_normal(aset.dim - 1)
        mu = householder_combine(gv / np.linalg.norm(gv), coeff / np.linalg.norm(coeff))
        y = a + ms[k] * mu
        viol[k] = np.linalg.norm(aset.project(y) - y) - ms[k] ** 2 / c.phi_g
    return _finish("projection_bound", trials, viol,
                   lambda i: {"theta": thetas[i].tolist(), "m": float(ms[i])}, GEOM_TOL,
                   {"m_range": [0.0, c.m_phi]})


def lipschitz_radius(c: GeometryConstants) -> float:
    return 0.999 * min(c.theta_min, c.hess_min * c.theta_min**2 * c.m_prime / (2 * c.grad_max * c.theta_max))


def lipschitz_constant(c: GeometryConstants) -> float:
    return 2 * c.grad_max * c.theta_max / (c.hess_min * c.theta_min**2)


def verify_lipschitz(aset: ActionSet, params: ParameterSpace, trials: int,
                     rng: np.random.Generator, consts: GeometryConstants | None = None) -> LemmaReport:
    """||a*(t1) - a*(t2)|| <= L ||t1 - t2|| for t2 within m_theta of t1 (both in Theta)."""
    c = _consts(aset, params, consts)
    m_theta = lipschitz_radius(c)
    lip = lipschitz_constant(c)
    t1 = params.sample(rng, trials)
    t2 = np.empty_like(t1)
    for k in range(trials):
        while True:
            u = rng.standard_normal(aset.dim)
            cand = t1[k] + u * (rng.uniform(0, m_theta) / np.linalg.norm(u))
            if params.theta_min <= np.linalg.norm(cand) <= params.theta_max:
                t2[k] = cand
                break
    da = np.linalg.norm(aset.argmax_rows(t1) - aset.argmax_rows(t2), axis=1)
    dt = np.linalg.norm(t1 - t2, axis=1)
    viol = da - lip * dt
    ratio = float(np.max(da / dt))
    return _finish("lipschitz", trials, viol,
                   lambda i: {"theta1": t1[i].tolist(), "theta2": t2[i].tolist()}, GEOM_TOL,
                   {"max_ratio": ratio, "constant": lip, "m_theta": m_theta})


def fd_jacobian(aset: ActionSet, theta: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central differences of theta -> a*(theta); column j is d a* / d theta_j."""
    n = theta.size
    pts = np.vstack([theta + h * np.eye(n), theta - h * np.eye(n)])
    acts = aset.argmax_rows(pts)
    return (acts[:n] - acts[n:]).T / (2 * h)


def verify_nabla_a_star(aset: ActionSet, params: ParameterSpace, trials: int,
                        rng: np.random.Generator, jacobian=None) -> LemmaReport:
    """Closed-form Jacobian of a* against central finite differences.

    ``jacobian`` replaces the closed form (used for negative controls).
    """
    jac_fn = nabla_a_star if jacobian is None else jacobian
    thetas = params.sample(rng, trials)
    viol = np.empty(trials)
    kernel = 0.0
    for k, th in enumerate(thetas):
        jac = jac_fn(aset, th)
        fd = fd_jacobian(aset, th)
        viol[k] = np.linalg.norm(jac - fd) / max(np.linalg.norm(fd), 1e-300)
        kernel = max(kernel, float(np.linalg.norm(jac @ th)))
    return _finish("nabla_a_star", trials, viol, lambda i: {"theta": thetas[i].tolist()}, FD_TOL,
                   {"max_kernel_residual": kernel})


def uncorrected_jacobian(aset: ActionSet, theta: np.ndarray) -> np.ndarray:
    """omega* H^-1 without the rank-one correction: a deliberately wrong Jacobian."""
    a = aset.argmax(theta)
    return np.linalg.norm(aset.grad(a)) / np.linalg.norm(theta) * np.linalg.inv(aset.hess(a))


GEOMETRIC = {
    "collinearity": verify_collinearity,
    "quadratic_bounds": verify_quadratic_bounds,
    "projection_bound": verify_projection_bound,
    "lipschitz": verify_lipschitz,
}


def negative_control(lemma: str, aset: ActionSet, params: ParameterSpace, trials: int,
                     rng: np.random.Generator) -> LemmaReport:
    """Run ``lemma`` with constants (or a Jacobian) that make the claim false."""
    if lemma == "nabla_a_star":
        rep = verify_nabla_a_star(aset, params, trials, rng, jacobian=uncorrected_jacobian)
    else:
        c = estimate_constants(aset, params)
        bad = {
            "collinearity": dict(omega_hi=0.5 * c.omega_lo),
            "quadratic_bounds": dict(phi_g=10 * c.phi_g),
            "projection_bound": dict(phi_g=10 * c.phi_g),
            "lipschitz": dict(grad_max=c.grad_max / 100),
        }[lemma]
        rep = GEOMETRIC[lemma](aset, params, trials, rng, c.with_overrides(**bad))
    rep.lemma = f"{lemma}[control]"
    return rep


def default_instances(rng: np.random.Generator | None = None) -> list:
    """(name, action set, parameter space) triples used by ``verify``."""
    rng = np.random.default_rng(12345) if rng is None else rng
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    spd = q @ np.diag([1.0, 2.0, 3.5]) @ q.T
    return [
        ("sphere2", Sphere(2), ParameterSpace(0.5, 2.0, 2)),
        ("sphere5", Sphere(5, 1.5), ParameterSpace(0.5, 2.0, 5)),
        ("ellipsoid_diag", Ellipsoid(np.diag([1.0, 4.0])), ParameterSpace(0.5, 2.0, 2)),
        ("ellipsoid_spd3", Ellipsoid(0.5 * (spd + spd.T)), ParameterSpace(0.5, 2.0, 3)),
    ]


def verify_geometry(lemma: str, trials: int, seed: int = 0, controls: bool = True) -> list:
    """Reports (and optional negative controls) for ``lemma`` over the default instances.

    Report names carry the instance, e.g. ``projection_bound@sphere2``.
    """
    out = []
    for k, (name, aset, params) in enumerate(default_instances()):
        rng = np.random.default_rng([seed, k, LEMMAS.index(lemma)])
        if lemma == "nabla_a_star":
            rep = verify_nabla_a_star(aset, params, trials, rng)
        else:
            rep = GEOMETRIC[lemma](aset, params, trials, rng)
        rep.lemma = f"{lemma}@{name}"
        out.append(rep)
        if controls:
            ctrl = negative_control(lemma, aset, params, min(trials, 1000), rng)
            ctrl.lemma = f"{lemma}[control]@{name}"
            out.append(ctrl)
    return out


# -- stochastic claims -----------------------------------------------------

def theory_trail_config(consts: GeometryConstants, noise_std: float, horizon: int) -> PolicyConfig:
    """TRAiL with D = d_max and the matching regularization."""
    d = consts.d_max
    return PolicyConfig.trail(d, lam=theory_lambda(consts, d), m_subg=noise_std,
                              theta_max=consts.theta_max, a_max=consts.a_max, horizon=horizon)


def _episode(args) -> MetricTrace:
    cfg, env, horizon, seed = args
    return run_episode(cfg, env, horizon, seed)


def sphere_traces(cfg: PolicyConfig, runs: int, horizon: int, noise_std: float, seed: int = 0,
                  dim: int = 2, workers: int = 1) -> list:
    """Episodes of ``cfg`` on the unit sphere with uniform theta* (one env per run)."""
    from .experiments.suites import parallel_map

    aset = Sphere(dim)
    jobs = []
    for r in range(runs):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r, 0)))
        env = BanditEnvironment(sample_theta_star(PriorSpec.uniform_sphere(1.0), rng, dim), noise_std, aset)
        jobs.append((cfg, env, horizon, np.random.SeedSequence(seed, spawn_key=(r, 1))))
    return parallel_map(_episode, jobs, workers)


def tail_slopes(traces, metric: str) -> np.ndarray:
    from .experiments.analysis import slope_regression

    return np.array([slope_regression(tr, metric, t_from=tr.t[-1] / 10).exponent for tr in traces])


def verify_inference_growth(traces, consts: GeometryConstants, d: float, m_subg: float,
                            delta: float = 0.1, band=(0.45, 0.55), min_fraction: float = 0.9,
                            name: str = "inference_growth") -> LemmaReport:
    """Eigenvalue growth of the design matrix on completed episodes.

    Two parts: (1) the tail (last decade) log-log slope of lambda_min(V_t)
    lies in ``band`` on at least ``min_fraction`` of runs; (2) for logged
    t >= F(delta), lambda_min(V_t) >= D c0 sqrt(t) / 2 and the squared
    estimation error is below 2 rho_t^2 / (D c0 sqrt(t)) on at least
    (1 - delta) of runs.  Part (2) is reported as inactive when F(delta)
    exceeds the horizon.  The violation is the shortfall of the worst
    passing fraction below its requirement.
    """
    slopes = tail_slopes(traces, "lambda_min")
    in_band = (slopes >= band[0]) & (slopes <= band[1])
    slope_frac = float(in_band.mean())
    horizon = int(traces[0].t[-1])
    f = f_delta(consts, consts.dim, d, delta)
    info = {"slopes": slopes.tolist(), "slope_fraction": slope_frac, "f_delta": f,
            "activated": f <= horizon}
    shortfall = min_fraction - slope_frac
    if f <= horizon:
        eig_ok, err_ok = [], []
        n = consts.dim
        for tr in traces:
            sel = tr.t >= f
            t = tr.t[sel].astype(float)
            eig_ok.append(bool(np.all(tr.lambda_min_v[sel] >= d * consts.c0 * np.sqrt(t) / 2)))
            rho = (m_subg * np.sqrt(n * np.log((3 + 3 * t * consts.a_max**2 / tr.lam) / delta))
                   + math.sqrt(tr.lam) * consts.theta_max)
            err_ok.append(bool(np.all(tr.theta_err_sq[sel] <= 2 * rho**2 / (d * consts.c0 * np.sqrt(t)))))
        info["eigen_fraction"] = float(np.mean(eig_ok))
        info["error_fraction"] = float(np.mean(err_ok))
        shortfall = max(shortfall, (1 - delta) - info["eigen_fraction"], (1 - delta) - info["error_fraction"])
    worst = int(np.argmax(np.abs(slopes - 0.5)))
    return LemmaReport(name, len(traces), float(shortfall), shortfall <= 0, 0.0,
                       {"run": worst, "slope": float(slopes[worst])}, info)


def random_orthogonal_units(a: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` random unit vectors orthogonal to a."""
    u = a / np.linalg.norm(a)
    z = rng.standard_normal((count, a.size))
    z -= np.outer(z @ u, u)
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def verify_pathwise_tradeoff(traces, c3: float, rng: np.random.Generator, z_count: int = 100,
                             name: str = "pathwise_tradeoff") -> LemmaReport:
    """z^T V_T z - lambda <= R(T) / c3 for random unit z orthogonal to a*(theta*)."""
    if not c3 > 0:
        raise ValueError("c3 must be positive")
    worst = -math.inf
    witness = {}
    violations = 0
    total = 0
    for k, tr in enumerate(traces):
        z = random_orthogonal_units(tr.a_star, z_count, rng)
        lhs = np.einsum("ij,jk,ik->i", z, tr.final_v, z) - tr.lam
        slack = lhs - tr.final_regret / c3
        violations += int(np.sum(slack > PATHWISE_TOL))
        total += z_count
        i = int(np.argmax(slack))
        if slack[i] > worst:
            worst = float(slack[i])
            witness = {"run": k, "z": z[i].tolist()}
    return LemmaReport(name, total, worst, violations == 0, PATHWISE_TOL, witness,
                       {"violations": violations, "violation_rate": violations / total, "c3": c3})
