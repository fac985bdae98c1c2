"""Geometric constants of an action set over a parameter annulus.

Raw bounds (gradient norm, Hessian spectrum, action norms, angle bound) are
exact for spheres and ellipsoids and Monte-Carlo estimates for Lp balls.
Everything else is derived from them with the formulas that govern the
perturbation scale D and the regularization used by TRAiL.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .geometry import ActionSet, Ellipsoid, GeometryError, LpBall, Sphere

DEFAULT_SAMPLES = 10_000


@dataclass(frozen=True)
class ParameterSpace:
    """Theta = {theta : theta_min <= ||theta|| <= theta_max}, all directions."""

    theta_min: float
    theta_max: float
    dim: int

    def __post_init__(self):
        if not 0 < self.theta_min <= self.theta_max:
            raise ValueError("need 0 < theta_min <= theta_max")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.standard_normal((size, self.dim))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = rng.uniform(self.theta_min, self.theta_max, size=size)
        return u * r[:, None]


@dataclass(frozen=True)
class GeometryConstants:
    grad_min: float
    grad_max: float
    hess_min: float
    hess_max: float
    a_min: float
    a_max: float
    m_prime: float
    alpha_a: float
    phi_g: float
    m_phi: float
    gamma: float
    m_bar_phi: float
    c0: float
    d_max: float
    lambda_rec: float
    omega_lo: float
    omega_hi: float
    dim: int
    theta_min: float
    theta_max: float

    def as_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "GeometryConstants":
        d = self.as_dict()
        d.update(kw)
        return GeometryConstants(**d)

    def alpha_bound_holds(self) -> bool:
        return self.alpha_a < math.atan(self.a_min / (self.dim * self.a_max))


def derive_constants(
    *, grad_min, grad_max, hess_min, hess_max, a_min, a_max, m_prime, alpha_a,
    params: ParameterSpace,
) -> GeometryConstants:
    n = params.dim
    phi = grad_min / hess_max
    m_phi_sq = min(phi**2 / 2.0, math.sqrt(phi**4 / 4.0 + m_prime**2 * phi**2) - phi**2 / 2.0)
    m_phi = math.sqrt(m_phi_sq)
    gamma = math.pi / 4 + 0.5 * math.acos(min(math.sqrt(3) * phi / (8 * n * a_max), math.sqrt(3) / 2))
    m_bar = min(m_phi, a_min * math.sin(math.pi / 4 - gamma / 2))
    c0 = max(0.5 - math.sqrt(3) / 4, 0.5 - math.sqrt(3) * n * a_max / phi)
    d_max = min(
        a_min * math.cos(alpha_a),
        2 * a_min**2 * math.cos(gamma),
        m_bar**2 / (2 * n * math.log(2 * n)),
    )
    lam = 8 * n * d_max**2 * (c0 * n + 1) / m_bar**2
    return GeometryConstants(
        grad_min=grad_min, grad_max=grad_max, hess_min=hess_min, hess_max=hess_max,
        a_min=a_min, a_max=a_max, m_prime=m_prime, alpha_a=alpha_a,
        phi_g=phi, m_phi=m_phi, gamma=gamma, m_bar_phi=m_bar, c0=c0, d_max=d_max,
        lambda_rec=lam,
        omega_lo=grad_min / params.theta_max, omega_hi=grad_max / params.theta_min,
        dim=n, theta_min=params.theta_min, theta_max=params.theta_max,
    )


def theory_lambda(consts: GeometryConstants, d: float) -> float:
    """Regularization 8 n D^2 (c0 n + 1) / m_bar^2 for a given D."""
    n = consts.dim
    return 8 * n * d**2 * (consts.c0 * n + 1) / consts.m_bar_phi**2


def _uniform_ball(rng, size, dim, radius):
    u = rng.standard_normal((size, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = radius * rng.uniform(size=size) ** (1.0 / dim)
    return u * r[:, None]


def _angle_rows(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xu = x / np.linalg.norm(x, axis=1, keepdims=True)
    yu = y / np.linalg.norm(y, axis=1, keepdims=True)
    return 2.0 * np.arctan2(np.linalg.norm(xu - yu, axis=1), np.linalg.norm(xu + yu, axis=1))


def estimate_constants(
    aset: ActionSet,
    params: ParameterSpace,
    m_prime: float | None = None,
    sample_count: int = DEFAULT_SAMPLES,
    rng: np.random.Generator | None = None,
) -> GeometryConstants:
    if sample_count < 1000:
        raise ValueError("sample_count must be >= 1000")
    if m_prime is not None and not m_prime > 0:
        raise ValueError("m_prime must be positive")
    if params.dim != aset.dim:
        raise ValueError("parameter space and action set dimensions differ")

    if isinstance(aset, Sphere):
        r = aset.radius
        m_prime = 0.1 * r if m_prime is None else m_prime
        raw = dict(grad_min=2 * r, grad_max=2 * r, hess_min=2.0, hess_max=2.0,
                   a_min=r, a_max=r, alpha_a=math.asin(min(1.0, m_prime / r)))
    elif isinstance(aset, Ellipsoid):
        lo, hi = float(aset.eigvals[0]), float(aset.eigvals[-1])
        a_min = 1 / math.sqrt(hi)
        m_prime = 0.1 * a_min if m_prime is None else m_prime
        kappa = hi / lo
        # worst angle between x and S x on the boundary (Kantorovich) plus the
        # widest angle a point of B(a, m') subtends at the origin
        alpha = math.acos(min(1.0, 2 * math.sqrt(kappa) / (1 + kappa))) + math.asin(min(1.0, m_prime / a_min))
        raw = dict(grad_min=2 * math.sqrt(lo), grad_max=2 * math.sqrt(hi), hess_min=2 * lo,
                   hess_max=2 * hi, a_min=a_min, a_max=1 / math.sqrt(lo), alpha_a=alpha)
    elif isinstance(aset, LpBall):
        raw, m_prime = _sample_lp_bounds(aset, params, m_prime, sample_count, rng)
    else:
        raise GeometryError(f"no constant estimator for {type(aset).__name__}")
    return derive_constants(m_prime=m_prime, params=params, **raw)


def _sample_lp_bounds(aset, params, m_prime, sample_count, rng):
    rng = np.random.default_rng(0) if rng is None else rng
    n = aset.dim
    radius = 0.5 * (params.theta_min + params.theta_max)
    thetas = rng.standard_normal((sample_count, n))
    thetas *= radius / np.linalg.norm(thetas, axis=1, keepdims=True)
    a_star = aset.argmax_rows(thetas)
    if not np.all(np.isfinite(a_star)):
        raise GeometryError("degenerate parameter sample")
    if m_prime is None:
        m_prime = 0.1 * float(np.linalg.norm(a_star, axis=1).min())
    pts = np.vstack([a_star, a_star + _uniform_ball(rng, sample_count, n, m_prime)])
    p = aset.p
    grads = p * np.sign(pts) * np.abs(pts) ** (p - 1)
    gnorm = np.linalg.norm(grads, axis=1)
    hdiag = p * (p - 1) * np.abs(pts) ** (p - 2)
    norms = np.linalg.norm(pts, axis=1)
    jitter = pts[sample_count:]
    base_grad = grads[:sample_count]
    alpha = float(_angle_rows(jitter, base_grad).max())
    raw = dict(grad_min=float(gnorm.min()), grad_max=float(gnorm.max()),
               hess_min=float(hdiag.min()), hess_max=float(hdiag.max()),
               a_min=float(norms.min()), a_max=float(norms.max()), alpha_a=alpha)
    return raw, m_prime
