"""Action selection for TRAiL and the baselines it is compared against.

Each ``*_step`` function is a pure function of (RLS state, action set,
policy-specific state, rng) that returns the action to play at step t.
``policy_step`` dispatches on a :class:`PolicyConfig`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .estimation import RlsState
from .geometry import ActionSet, Ellipsoid, GeometryError, Sphere, householder_combine

KINDS = ("trail", "linucb", "ts", "bayes_ts", "fel")


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationSpec:
    """Per-step tangential noise with second moment d / sqrt(t)."""

    d: float
    family: str = "gaussian"
    cap: float = 3.0  # truncation point in standard deviations

    def __post_init__(self):
        if self.d < 0:
            raise PolicyError("perturbation scale D must be nonnegative")
        if self.family not in ("gaussian", "truncated"):
            raise PolicyError(f"unknown perturbation family {self.family!r}")
        if self.family == "truncated" and not self.cap > 0:
            raise PolicyError("truncation cap must be positive")

    def variance(self, t: int) -> float:
        return self.d / math.sqrt(t)

    def draw(self, rng: np.random.Generator, t: int, size: int) -> np.ndarray:
        sd = math.sqrt(self.variance(t))
        if self.family == "gaussian":
            return sd * rng.standard_normal(size)
        c = self.cap
        z = rng.standard_normal(size)
        bad = np.abs(z) > c
        while bad.any():
            z[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(z) > c
        # rescale so the truncated law keeps second moment d / sqrt(t)
        mass = math.erf(c / math.sqrt(2))
        m2 = 1.0 - 2.0 * c * math.exp(-0.5 * c * c) / math.sqrt(2 * math.pi) / mass
        return sd / math.sqrt(m2) * z


@dataclass
class FelState:
    c: float
    eigvecs: np.ndarray
    eigvals: np.ndarray
    f: int = 0

    @classmethod
    def for_set(cls, aset: ActionSet, c: float) -> "FelState":
        if isinstance(aset, Sphere):
            n = aset.dim
            return cls(c, np.eye(n), np.full(n, aset.radius**-2))
        if isinstance(aset, Ellipsoid):
            return cls(c, aset.eigvecs, aset.eigvals)
        raise PolicyError("FEL exploration is defined only for spheres and ellipsoids")


@dataclass(frozen=True)
class PolicyConfig:
    kind: str
    lam: float = 0.01
    perturbation: PerturbationSpec | None = None
    c_fel: float | None = None
    m_subg: float = 1.0
    theta_max: float = 1.0
    a_max: float = 1.0
    horizon: int = 1000
    ucb_starts: int = 16
    ucb_iters: int = 200
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PolicyError(f"unknown policy kind {self.kind!r}")
        if not self.lam > 0:
            raise PolicyError("lambda must be positive")
        if self.kind == "trail" and self.perturbation is None:
            raise PolicyError("TRAiL needs a perturbation spec")
        if self.kind == "fel" and (self.c_fel is None or self.c_fel <= 0):
            raise PolicyError("FEL needs a positive exploration rate c_fel")

    @classmethod
    def trail(cls, d: float, lam: float = 0.01, family: str = "gaussian", **kw) -> "PolicyConfig":
        return cls("trail", lam=lam, perturbation=PerturbationSpec(d, family), **kw)

    @classmethod
    def fel(cls, c: float, lam: float = 1.0, **kw) -> "PolicyConfig":
        # FEL starts from V_0 = I
        return cls("fel", lam=lam, c_fel=c, **kw)

    def with_params(self, **kw) -> "PolicyConfig":
        return replace(self, **kw)

    def hyperparameter(self) -> tuple[str, float]:
        """Name and value of the knob tuned by grid search."""
        if self.kind == "trail":
            return "d", self.perturbation.d
        if self.kind == "fel":
            return "c_fel", self.c_fel
        return "lam", self.lam

    def with_hyperparameter(self, value: float) -> "PolicyConfig":
        if self.kind == "trail":
            return replace(self, perturbation=replace(self.perturbation, d=value))
        if self.kind == "fel":
            return replace(self, c_fel=value)
        return replace(self, lam=value)

    def describe(self) -> dict:
        d = {"kind": self.kind, "lam": self.lam, "m_subg": self.m_subg,
             "theta_max": self.theta_max, "a_max": self.a_max, "horizon": self.horizon}
        if self.perturbation is not None:
            d["perturbation"] = {"d": self.perturbation.d, "family": self.perturbation.family,
                                 "cap": self.perturbation.cap}
        if self.c_fel is not None:
            d["c_fel"] = self.c_fel
        if self.kind == "linucb":
            d["ucb_starts"], d["ucb_iters"] = self.ucb_starts, self.ucb_iters
        return d


def greedy_action(aset: ActionSet, theta: np.ndarray) -> np.ndarray:
    """a*(theta), or a*(e_1) when theta is exactly zero."""
    if not theta.any():
        e1 = np.zeros(aset.dim)
        e1[0] = 1.0
        return aset.argmax(e1)
    return aset.argmax(theta)


def tangential_action(aset: ActionSet, a_star: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """project(a* + sum_i nu_i mu_i) over the Householder tangent basis at a*."""
    gv = aset.grad(a_star)
    step = householder_combine(gv / math.sqrt(gv @ gv), nu)
    return aset.project(a_star + step)


def trail_step(rls: RlsState, aset: ActionSet, spec: PerturbationSpec, t: int,
               rng: np.random.Generator) -> np.ndarray:
    if t < 1:
        raise PolicyError("steps are numbered from 1")
    a_star = greedy_action(aset, rls.theta_hat)
    if spec.d == 0:
        return a_star
    nu = spec.draw(rng, t, aset.dim - 1)
    return tangential_action(aset, a_star, nu)


def ucb_objective(a: np.ndarray, theta: np.ndarray, v_inv: np.ndarray, beta: float) -> np.ndarray:
    a = np.atleast_2d(a)
    q = np.einsum("ij,jk,ik->i", a, v_inv, a)
    return a @ theta + beta * np.sqrt(np.maximum(q, 0.0))


def _unit_ball_factor(aset: ActionSet):
    """M with A = {M c : ||c|| <= 1} for spheres and ellipsoids, else None."""
    if isinstance(aset, Sphere):
        return aset.radius * np.eye(aset.dim)
    if isinstance(aset, Ellipsoid):
        return (aset.eigvecs / np.sqrt(aset.eigvals)) @ aset.eigvecs.T
    return None


def ucb_argmax_quadric(theta: np.ndarray, v_inv: np.ndarray, beta: float,
                       factor: np.ndarray) -> np.ndarray:
    """Global maximizer of a^T theta + beta ||a||_{V^-1} over {M c : ||c|| <= 1}.

    With theta' = M theta and W = M V^-1 M the problem becomes
    max_{||v|| <= 1} ||theta' + beta W^{1/2} v||, a maximization of a convex
    quadratic over the unit ball.  Its solution satisfies
    (mu I - beta^2 W) v = beta W^{1/2} theta' with mu >= beta^2 lambda_max(W),
    found by a safeguarded Newton iteration on the secular equation; the
    degenerate ("hard") case is handled explicitly.
    """
    tp = factor @ theta
    w_mat = factor @ v_inv @ factor
    wv, q = np.linalg.eigh(0.5 * (w_mat + w_mat.T))
    wv = np.maximum(wv, 0.0)
    alpha = beta**2 * wv
    bt = beta * np.sqrt(wv) * (q.T @ tp)
    top = alpha[-1]
    scale = max(top, float(np.abs(bt).max()), 1e-300)
    gap_tol = 1e-12 * scale
    is_top = alpha >= top - gap_tol
    b_top = float(np.sqrt(np.sum(bt[is_top] ** 2)))

    def phi(mu):
        return np.sum((bt / (mu - alpha)) ** 2)

    if b_top <= 1e-12 * scale:
        rest = ~is_top
        v_rest = np.zeros_like(bt)
        v_rest[rest] = bt[rest] / (top - alpha[rest])
        nr2 = float(v_rest @ v_rest)
        if nr2 <= 1.0:
            v = v_rest
            i = int(np.flatnonzero(is_top)[-1])
            v[i] = math.sqrt(1.0 - nr2)
            return _quadric_action(tp, q, wv, v, beta, factor)
    nb = float(np.linalg.norm(bt))
    lo, hi = top + b_top, top + nb
    mu = hi
    for _ in range(100):
        d = mu - alpha
        f = np.sum((bt / d) ** 2)
        if abs(f - 1.0) <= 1e-14:
            break
        if f > 1.0:
            lo = mu
        else:
            hi = mu
        # Newton on 1/sqrt(phi) - 1, which is nearly linear in mu
        df = -2.0 * np.sum(bt**2 / d**3)
        step = (1.0 / math.sqrt(f) - 1.0) / (-0.5 * f**-1.5 * df)
        nxt = mu - step
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - mu) <= 1e-15 * max(1.0, mu):
            mu = nxt
            break
        mu = nxt
    v = bt / (mu - alpha)
    v /= max(np.linalg.norm(v), 1e-300)
    return _quadric_action(tp, q, wv, v, beta, factor)


def _quadric_action(tp, q, wv, v, beta, factor):
    y = tp + beta * (q @ (np.sqrt(wv) * v))
    ny = np.linalg.norm(y)
    if ny == 0:
        y = q[:, -1]
        ny = 1.0
    return factor @ (y / ny)


def linucb_step(rls: RlsState, aset: ActionSet, beta_t: float, rng: np.random.Generator,
                starts: int = 16, iters: int = 200, tol: float = 1e-9) -> np.ndarray:
    """Argmax of a^T theta_hat + beta ||a||_{V^-1} over the set.

    Spheres and ellipsoids are solved exactly (:func:`ucb_argmax_quadric`).
    Other sets use multi-start ascent: the objective is convex in a, so each ascent step replaces an iterate by
    the maximizer of the objective's linearization (projected gradient ascent
    with an unbounded step); every step is monotone, and the ascent stops once
    no start improves the objective by more than ``tol`` (relative).  Starts
    are a*(theta_hat) plus ``starts - 1`` random boundary points.
    """
    if beta_t < 0:
        raise PolicyError("beta_t must be nonnegative")
    theta = rls.theta_hat
    w = rls.v_inv
    first = greedy_action(aset, theta)
    if beta_t == 0:
        return first
    factor = _unit_ball_factor(aset)
    if factor is not None:
        return ucb_argmax_quadric(theta, w, beta_t, factor)
    n = aset.dim
    pts = np.empty((starts, n))
    pts[0] = first
    if starts > 1:
        raw = rng.standard_normal((starts - 1, n))
        pts[1:] = np.array([aset.radial_boundary(r) for r in raw])
    vals = np.full(starts, -np.inf)
    for _ in range(iters):
        wa = pts @ w
        q = np.sqrt(np.einsum("ij,ij->i", pts, wa))
        cur = pts @ theta + beta_t * q
        if np.max(cur - vals) <= tol * (1.0 + np.max(np.abs(cur))):
            vals = cur
            break
        vals = cur
        pts = aset.argmax_rows(theta + beta_t * wa / q[:, None])
    else:
        vals = ucb_objective(pts, theta, w, beta_t)
    return pts[int(np.argmax(vals))]


def ts_step(rls: RlsState, aset: ActionSet, beta_prime_t: float,
            rng: np.random.Generator) -> np.ndarray:
    """Play a*(theta_hat + beta' V^{-1/2} eta) with eta standard normal."""
    eta = rng.standard_normal(aset.dim)
    if beta_prime_t == 0:
        return greedy_action(aset, rls.theta_hat)
    w, q = np.linalg.eigh(rls.v)
    theta_tilde = rls.theta_hat + beta_prime_t * (q @ (eta / np.sqrt(w)))
    return greedy_action(aset, theta_tilde)


def bayes_ts_step(rls: RlsState, aset: ActionSet, rng: np.random.Generator) -> np.ndarray:
    return ts_step(rls, aset, 1.0, rng)


def fel_step(rls: RlsState, fel: FelState, aset: ActionSet, t: int,
             rng: np.random.Generator) -> tuple[np.ndarray, bool]:
    """Explore along a random eigen-direction while f < c n sqrt(t), else exploit.

    Mutates ``fel.f`` on exploration steps.
    """
    n = aset.dim
    if fel.f < fel.c * n * math.sqrt(t):
        i = int(rng.integers(n))
        fel.f += 1
        return fel.eigvecs[:, i] / math.sqrt(fel.eigvals[i]), True
    return greedy_action(aset, rls.theta_hat), False


def beta_ucb(cfg: PolicyConfig, n: int, t: int) -> float:
    return (cfg.m_subg * math.sqrt(n * math.log(cfg.horizon * (1 + t * cfg.a_max**2 / cfg.lam)))
            + math.sqrt(cfg.lam) * cfg.theta_max)


def beta_ts(cfg: PolicyConfig, n: int, t: int) -> float:
    log_term = math.log(4 * cfg.horizon**2) + 0.5 * n * math.log(1 + cfg.a_max**2 * t / cfg.lam)
    return cfg.m_subg * math.sqrt(2 * log_term) + math.sqrt(cfg.lam) * cfg.theta_max


def policy_step(cfg: PolicyConfig, rls: RlsState, aset: ActionSet, t: int,
                rng: np.random.Generator, fel: FelState | None = None) -> tuple[np.ndarray, bool]:
    """Returns (action, whether the RLS state should absorb this step)."""
    kind = cfg.kind
    if kind == "trail":
        return trail_step(rls, aset, cfg.perturbation, t, rng), True
    if kind == "linucb":
        return linucb_step(rls, aset, beta_ucb(cfg, aset.dim, t), rng,
                           cfg.ucb_starts, cfg.ucb_iters), True
    if kind == "ts":
        return ts_step(rls, aset, beta_ts(cfg, aset.dim, t), rng), True
    if kind == "bayes_ts":
        return bayes_ts_step(rls, aset, rng), True
    if kind == "fel":
        if fel is None:
            raise PolicyError("FEL step needs its exploration state")
        return fel_step(rls, fel, aset, t, rng)
    raise PolicyError(f"unknown policy kind {kind!r}")


def validate_theory_config(consts, d: float, lam: float) -> list[str]:
    """Which preconditions of the inference guarantee (D bound, lambda) fail."""
    problems = []
    if not 0 < d <= consts.d_max:
        problems.append(f"D={d:.3e} outside (0, d_max={consts.d_max:.3e}]")
    expected = 8 * consts.dim * d**2 * (consts.c0 * consts.dim + 1) / consts.m_bar_phi**2
    if not math.isclose(lam, expected, rel_tol=1e-12):
        problems.append(f"lambda={lam:.3e} differs from the prescribed {expected:.3e}")
    if not consts.c0 < 0.5:
        problems.append("c0 must be below 1/2")
    return problems


__all__ = [
    "KINDS", "PolicyError", "PerturbationSpec", "FelState", "PolicyConfig",
    "greedy_action", "tangential_action", "trail_step", "linucb_step", "ts_step",
    "bayes_ts_step", "fel_step", "beta_ucb", "beta_ts", "policy_step",
    "ucb_objective", "ucb_argmax_quadric", "validate_theory_config", "GeometryError",
]
