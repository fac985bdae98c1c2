"""Regularized least squares with an incrementally maintained inverse."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

REFRESH_EVERY = 1000


@dataclass
class RlsState:
    v: np.ndarray
    v_inv: np.ndarray
    b: np.ndarray
    theta_hat: np.ndarray
    lam: float
    t: int = 0

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    def copy(self) -> "RlsState":
        return RlsState(self.v.copy(), self.v_inv.copy(), self.b.copy(),
                        self.theta_hat.copy(), self.lam, self.t)


def rls_init(n: int, lam: float) -> RlsState:
    if not lam > 0:
        raise ValueError("regularization lambda must be positive")
    return RlsState(
        v=lam * np.eye(n),
        v_inv=np.eye(n) / lam,
        b=np.zeros(n),
        theta_hat=np.zeros(n),
        lam=float(lam),
    )


def refresh_inverse(state: RlsState) -> None:
    """Recompute the inverse by Cholesky to shed Sherman-Morrison drift."""
    c = np.linalg.cholesky(state.v)
    ci = np.linalg.inv(c)
    state.v_inv = ci.T @ ci
    state.theta_hat = state.v_inv @ state.b


def rls_update(state: RlsState, a: np.ndarray, y: float) -> RlsState:
    """Rank-one update V += a a^T, b += a y; returns the (mutated) state."""
    if not (math.isfinite(y) and np.isfinite(a).all()):
        raise ValueError("non-finite action or observation")
    va = state.v_inv @ a
    state.v_inv -= np.outer(va, va / (1.0 + a @ va))
    state.v += np.outer(a, a)
    state.b += y * a
    state.t += 1
    if state.t % REFRESH_EVERY == 0:
        refresh_inverse(state)
    else:
        state.theta_hat = state.v_inv @ state.b
    return state


def lambda_min(state: RlsState) -> float:
    return float(np.linalg.eigvalsh(state.v)[0])


def confidence_radius(
    state: RlsState,
    delta: float,
    m_subg: float,
    theta_max: float,
    a_max: float,
    form: str = "ucb",
) -> float:
    """Confidence radius rho_t(delta) of the RLS estimate.

    ``form="ucb"`` uses log((1 + t a_max^2 / lam) / delta), the form that
    LinUCB's beta_t is built from; ``form="inference"`` uses the
    (3 + 3 t a_max^2 / lam) variant of the inference guarantee.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    n, t, lam = state.dim, state.t, state.lam
    if form == "ucb":
        inner = (1.0 + t * a_max**2 / lam) / delta
    elif form == "inference":
        inner = (3.0 + 3.0 * t * a_max**2 / lam) / delta
    else:
        raise ValueError(f"unknown radius form {form!r}")
    return m_subg * math.sqrt(n * math.log(inner)) + math.sqrt(lam) * theta_max


def f_delta(consts, n: int, d: float, delta: float, check_domain: bool = True) -> float:
    """Horizon after which the inference guarantee is active.

    16 a_max^4 / (9 D^2 c0^2) * log(3n/delta)^2 * (768 n / c0 + 2)^2.
    ``consts`` needs ``a_max`` and ``c0`` attributes.  ``check_domain=False``
    admits any delta > 0 so the raw formula can be probed.
    """
    if not d > 0:
        raise ValueError("D must be positive")
    if not delta > 0 or (check_domain and not delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    c0 = consts.c0
    return (16 * consts.a_max**4 / (9 * d**2 * c0**2)
            * math.log(3 * n / delta) ** 2 * (768 * n / c0 + 2) ** 2)
