"""Action sets given as sublevel sets {x : g(x) <= 0} of strongly convex g.

Three closed-form families are supported: a Euclidean sphere of radius r,
an ellipsoid {x : x^T S x <= 1} with SPD shape matrix S, and the unit
Lp ball for p >= 2.  Every family exposes g, its gradient and Hessian, the
reward-maximizing action and the Euclidean projection.  The free functions
below (tangent basis, Jacobian of the argmax map) only rely on that surface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_ITER = 100
RESIDUAL_TOL = 1e-10


class GeometryError(ValueError):
    """Raised when a geometric primitive is called outside its domain."""


class ProjectionError(GeometryError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class SingularHessianError(GeometryError):
    def __init__(self, direction: np.ndarray):
        super().__init__(
            f"Hessian of g is singular at a*(theta) along {np.array2string(direction, precision=4)}"
        )
        self.direction = direction


class ActionSet:
    """Base class; subclasses are frozen dataclasses with a ``dim`` field."""

    dim: int
    family: str = ""

    def g(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hess(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def argmax_rows(self, thetas: np.ndarray) -> np.ndarray:
        """Row-wise argmax of theta^T a over the set; rows must be nonzero."""
        raise NotImplementedError

    def argmax(self, theta: np.ndarray) -> np.ndarray:
        return self.argmax_rows(theta[None, :])[0]

    def project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def radial_boundary(self, y: np.ndarray) -> np.ndarray:
        """Scale a nonzero y along the ray through the origin onto the boundary."""
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(ActionSet):
    dim: int
    radius: float = 1.0
    family: str = field(default="sphere", init=False)

    def __post_init__(self):
        if self.dim < 2:
            raise GeometryError("dimension must be >= 2")
        if not self.radius > 0:
            raise GeometryError("radius must be positive")

    def g(self, x):
        return float(x @ x - self.radius**2)

    def grad(self, x):
        return 2.0 * np.asarray(x, dtype=float)

    def hess(self, x):
        return 2.0 * np.eye(self.dim)

    def argmax_rows(self, thetas):
        norms = np.linalg.norm(thetas, axis=1, keepdims=True)
        return self.radius * thetas / norms

    def project(self, x):
        nrm = math.sqrt(x @ x)
        if nrm <= self.radius:
            return x
        return (self.radius / nrm) * x

    def radial_boundary(self, y):
        return self.radius * y / np.linalg.norm(y)

    def describe(self):
        return {"family": "sphere", "dim": self.dim, "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Ellipsoid(ActionSet):
    """{x : x^T shape x <= 1}.  The eigendecomposition is cached at construction."""

    shape: np.ndarray
    dim: int = field(init=False)
    family: str = field(default="ellipsoid", init=False)
    eigvals: np.ndarray = field(init=False, repr=False)
    eigvecs: np.ndarray = field(init=False, repr=False)
    shape_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s = np.array(self.shape, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise GeometryError("shape matrix must be square")
        if s.shape[0] < 2:
            raise GeometryError("dimension must be >= 2")
        if np.max(np.abs(s - s.T)) > 1e-10:
            raise GeometryError("shape matrix must be symmetric")
        s = 0.5 * (s + s.T)
        w, q = np.linalg.eigh(s)
        if w[0] <= 0:
            raise GeometryError("shape matrix must be positive definite")
        s.setflags(write=False)
        object.__setattr__(self, "shape", s)
        object.__setattr__(self, "dim", s.shape[0])
        object.__setattr__(self, "eigvals", w)
        object.__setattr__(self, "eigvecs", q)
        object.__setattr__(self, "shape_inv", (q / w) @ q.T)

    def g(self, x):
        return float(x @ self.shape @ x - 1.0)

    def grad(self, x):
        return 2.0 * (self.shape @ x)

    def hess(self, x):
        return 2.0 * self.shape

    def argmax_rows(self, thetas):
        w = thetas @ self.shape_inv
        scale = np.sqrt(np.einsum("ij,ij->i", thetas, w))
        return w / scale[:, None]

    def project(self, x):
        z = self.eigvecs.T @ x
        lam = self.eigvals
        lz2 = lam * z * z
        if lz2.sum() <= 1.0:
            return x
        # phi(mu) = sum lam z^2 / (1 + mu lam)^2 - 1 is convex and decreasing,
        # so Newton from mu=0 increases monotonically towards the root.
        mu, lo, hi = 0.0, 0.0, math.inf
        resid = math.inf
        for _ in range(MAX_ITER):
            d = 1.0 + mu * lam
            phi = float(np.sum(lz2 / d**2)) - 1.0
            resid = abs(phi)
            if resid <= RESIDUAL_TOL:
                break
            if phi > 0:
                lo = mu
            else:
                hi = mu
            dphi = float(np.sum(-2.0 * lam * lz2 / d**3))
            step = mu - phi / dphi
            if not (lo < step < hi):
                step = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * lo + 1.0
            mu = step
        else:
            raise ProjectionError("ellipsoid projection did not converge", resid)
        y = self.eigvecs @ (z / (1.0 + mu * lam))
        return y

    def radial_boundary(self, y):
        return y / math.sqrt(y @ self.shape @ y)

    def describe(self):
        return {"family": "ellipsoid", "dim": self.dim, "shape": self.shape.tolist()}


@dataclass(frozen=True)
class LpBall(ActionSet):
    """Unit ball of the p-norm, g(x) = sum |x_i|^p - 1."""

    dim: int
    p: float
    family: str = field(default="lp_ball", init=False)

    def __post_init__(self):
        if self.dim < 2:
            raise GeometryError("dimension must be >= 2")
        if not self.p >= 2:
            raise GeometryError("Lp ball requires p >= 2")

    def g(self, x):
        return float(np.sum(np.abs(x) ** self.p) - 1.0)

    def grad(self, x):
        return self.p * np.sign(x) * np.abs(x) ** (self.p - 1)

    def hess(self, x):
        # singular where a coordinate vanishes and p > 2; callers decide
        return np.diag(self.p * (self.p - 1) * np.abs(x) ** (self.p - 2))

    def argmax_rows(self, thetas):
        u = np.sign(thetas) * np.abs(thetas) ** (1.0 / (self.p - 1))
        nrm = np.sum(np.abs(u) ** self.p, axis=1) ** (1.0 / self.p)
        return u / nrm[:, None]

    def _shrink(self, s: np.ndarray, c: float) -> np.ndarray:
        """Solve u + c u^(p-1) = s componentwise for u in [0, s]."""
        p = self.p
        if c == 0.0:
            return s.copy()
        u = np.minimum(s, (s / c) ** (1.0 / (p - 1)))
        # h is convex increasing with h(u0) >= 0: Newton decreases monotonically
        tol = 1e-15 * (1.0 + float(s.max()))
        for _ in range(MAX_ITER):
            h = u + c * u ** (p - 1) - s
            step = h / (1.0 + c * (p - 1) * u ** (p - 2))
            u = np.maximum(u - step, 0.0)
            if np.max(np.abs(step)) <= tol:
                break
        return u

    def project(self, x):
        p = self.p
        s = np.abs(x)
        if np.sum(s**p) <= 1.0:
            return x
        mu, lo, hi = 0.0, 0.0, math.inf
        resid = math.inf
        u = s
        for _ in range(MAX_ITER):
            u = self._shrink(s, mu * p)
            phi = float(np.sum(u**p)) - 1.0
            resid = abs(phi)
            if resid <= RESIDUAL_TOL:
                break
            if phi > 0:
                lo = mu
            else:
                hi = mu
            du = -p * u ** (p - 1) / (1.0 + mu * p * (p - 1) * u ** (p - 2))
            dphi = float(np.sum(p * u ** (p - 1) * du))
            step = mu - phi / dphi if dphi < 0 else math.nan
            if not (lo < step < hi):
                step = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * lo + 1.0
            mu = step
        else:
            raise ProjectionError("Lp projection did not converge", resid)
        return np.sign(x) * u

    def radial_boundary(self, y):
        return y / np.sum(np.abs(y) ** self.p) ** (1.0 / self.p)

    def describe(self):
        return {"family": "lp_ball", "dim": self.dim, "p": self.p}


def action_set_from_dict(d: dict) -> ActionSet:
    family = d["family"]
    if family == "sphere":
        return Sphere(int(d["dim"]), float(d.get("radius", 1.0)))
    if family == "ellipsoid":
        return Ellipsoid(np.asarray(d["shape"], dtype=float))
    if family == "lp_ball":
        return LpBall(int(d["dim"]), float(d["p"]))
    raise GeometryError(f"unknown action-set family {family!r}")


def eval_g(aset: ActionSet, x) -> float:
    return aset.g(np.asarray(x, dtype=float))


def grad_g(aset: ActionSet, x) -> np.ndarray:
    return aset.grad(np.asarray(x, dtype=float))


def hess_g(aset: ActionSet, x) -> np.ndarray:
    return aset.hess(np.asarray(x, dtype=float))


def reward_max_action(aset: ActionSet, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not np.any(theta):
        raise GeometryError("reward-maximizing action is undefined for theta = 0")
    return aset.argmax(theta)


def project(aset: ActionSet, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise GeometryError("cannot project a non-finite point")
    return aset.project(x)


def householder_complement(u: np.ndarray) -> np.ndarray:
    """Rows span the orthogonal complement of the unit vector u.

    Uses the reflector I - 2 v v^T / v^T v with v = u + sign(u_0) e_0, which
    maps e_0 to -sign(u_0) u; its remaining columns are orthonormal and
    orthogonal to u.
    """
    v = u.copy()
    v[0] += 1.0 if u[0] >= 0 else -1.0
    h = -2.0 / (v @ v) * np.outer(v[1:], v)
    h[:, 1:] += np.eye(u.shape[0] - 1)
    return h


def householder_combine(u: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """coeffs @ householder_complement(u) in O(n), without forming the basis."""
    v = u.copy()
    v[0] += 1.0 if u[0] >= 0 else -1.0
    w = np.empty_like(u)
    w[0] = 0.0
    w[1:] = coeffs
    return w - (2.0 * (v @ w) / (v @ v)) * v


def tangent_basis(aset: ActionSet, a) -> np.ndarray:
    """Orthonormal basis (as rows, shape (n-1, n)) of the tangent plane at a."""
    gvec = aset.grad(np.asarray(a, dtype=float))
    nrm = float(np.linalg.norm(gvec))
    if nrm <= 1e-10:
        raise GeometryError("gradient of g vanishes; tangent plane undefined")
    return householder_complement(gvec / nrm)


def multiplier(aset: ActionSet, theta: np.ndarray, a_star: np.ndarray | None = None) -> float:
    """omega*(theta) with grad g(a*(theta)) = omega* theta."""
    if a_star is None:
        a_star = aset.argmax(theta)
    return float(np.linalg.norm(aset.grad(a_star)) / np.linalg.norm(theta))


def nabla_a_star(aset: ActionSet, theta) -> np.ndarray:
    """Jacobian of theta -> a*(theta) in closed form.

    omega* (S^-1 - S^-1 theta theta^T S^-1 / theta^T S^-1 theta) with S the
    Hessian of g at a*(theta).  Symmetric PSD with theta in its kernel.
    """
    theta = np.asarray(theta, dtype=float)
    a = reward_max_action(aset, theta)
    h = aset.hess(a)
    w, q = np.linalg.eigh(h)
    if w[0] <= 1e-12 * max(1.0, abs(w[-1])):
        raise SingularHessianError(q[:, 0])
    h_inv = (q / w) @ q.T
    hv = h_inv @ theta
    jac = multiplier(aset, theta, a) * (h_inv - np.outer(hv, hv) / (theta @ hv))
    return 0.5 * (jac + jac.T)
