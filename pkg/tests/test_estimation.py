import math

import mpmath as mp
import numpy as np
import pytest

from trailbandit.constants import ParameterSpace, estimate_constants
from trailbandit.estimation import (
    REFRESH_EVERY, confidence_radius, f_delta, lambda_min, refresh_inverse, rls_init, rls_update,
)
from trailbandit.geometry import Sphere


def test_init():
    s = rls_init(2, 1.0)
    np.testing.assert_array_equal(s.v, np.eye(2))
    np.testing.assert_array_equal(s.theta_hat, np.zeros(2))
    assert lambda_min(rls_init(10, 0.01)) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        rls_init(2, 0.0)


def test_single_update_by_hand():
    s = rls_update(rls_init(2, 1.0), np.array([1.0, 0.0]), 2.0)
    np.testing.assert_allclose(s.v, np.diag([2.0, 1.0]))
    np.testing.assert_allclose(s.b, [2.0, 0.0])
    np.testing.assert_allclose(s.theta_hat, [1.0, 0.0])
    assert s.t == 1


def test_zero_action_update():
    s = rls_update(rls_init(2, 1.0), np.array([1.0, 0.5]), 1.0)
    v, th = s.v.copy(), s.theta_hat.copy()
    rls_update(s, np.zeros(2), 3.0)
    np.testing.assert_array_equal(s.v, v)
    np.testing.assert_allclose(s.theta_hat, th)
    assert s.t == 2


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        rls_update(rls_init(2, 1.0), np.array([np.nan, 0.0]), 1.0)
    with pytest.raises(ValueError):
        rls_update(rls_init(2, 1.0), np.ones(2), math.inf)


def test_matches_batch_ridge():
    rng = np.random.default_rng(0)
    n, lam = 4, 0.3
    a = rng.standard_normal((100, n))
    y = rng.standard_normal(100)
    s = rls_init(n, lam)
    for ai, yi in zip(a, y):
        rls_update(s, ai, yi)
    batch = np.linalg.solve(lam * np.eye(n) + a.T @ a, a.T @ y)
    np.testing.assert_allclose(s.theta_hat, batch, atol=1e-8)
    np.testing.assert_allclose(s.theta_hat, s.v_inv @ s.b, atol=1e-10)


def test_lambda_min_monotone_and_at_least_lambda():
    rng = np.random.default_rng(1)
    s = rls_init(3, 0.05)
    prev = lambda_min(s)
    for _ in range(200):
        rls_update(s, rng.standard_normal(3), 0.0)
        cur = lambda_min(s)
        assert cur >= prev - 1e-12
        assert cur >= 0.05 - 1e-12
        prev = cur


def test_lambda_min_matches_inverse_power_iteration():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((5, 5))
    s = rls_init(5, 1.0)
    s.v = a @ a.T + np.eye(5)
    x = np.ones(5)
    for _ in range(2000):
        x = np.linalg.solve(s.v, x)
        x /= np.linalg.norm(x)
    assert lambda_min(s) == pytest.approx(x @ s.v @ x, rel=1e-8)


def test_refresh_bounds_sherman_morrison_drift():
    rng = np.random.default_rng(3)
    s = rls_init(3, 0.01)
    for _ in range(100_000):
        rls_update(s, rng.uniform(-1, 1, 3), rng.standard_normal())
    assert np.linalg.norm(s.v @ s.v_inv - np.eye(3)) <= 1e-6


def test_refresh_inverse_happens_on_schedule():
    rng = np.random.default_rng(4)
    s = rls_init(2, 1.0)
    for _ in range(REFRESH_EVERY):
        rls_update(s, rng.standard_normal(2), 1.0)
    c = np.linalg.cholesky(s.v)
    ci = np.linalg.inv(c)
    np.testing.assert_array_equal(s.v_inv, ci.T @ ci)
    refresh_inverse(s)
    np.testing.assert_allclose(s.v @ s.v_inv, np.eye(2), atol=1e-12)


def test_copy_is_independent():
    s = rls_init(2, 1.0)
    c = s.copy()
    rls_update(s, np.ones(2), 1.0)
    assert c.t == 0 and np.all(c.b == 0)


class TestConfidenceRadius:
    def test_t_zero(self):
        s = rls_init(3, 0.25)
        r = confidence_radius(s, 0.1, 2.0, 1.5, 1.0)
        assert r == pytest.approx(2.0 * math.sqrt(3 * math.log(10)) + 0.5 * 1.5)

    def test_monotone(self):
        s = rls_init(2, 0.1)
        r0 = confidence_radius(s, 0.1, 1.0, 1.0, 1.0)
        rls_update(s, np.ones(2), 0.0)
        r1 = confidence_radius(s, 0.1, 1.0, 1.0, 1.0)
        assert r1 >= r0
        assert confidence_radius(s, 0.2, 1.0, 1.0, 1.0) <= r1

    def test_high_precision(self):
        s = rls_init(10, 0.01)
        s.t = 1000
        mp.mp.dps = 40
        m, lam = mp.sqrt(mp.mpf("0.1")), mp.mpf("0.01")
        ref = m * mp.sqrt(10 * mp.log((1 + 1000 / lam) / mp.mpf("1e-3"))) + mp.sqrt(lam)
        assert confidence_radius(s, 1e-3, math.sqrt(0.1), 1.0, 1.0) == pytest.approx(float(ref), rel=1e-13)
        ref3 = m * mp.sqrt(10 * mp.log((3 + 3000 / lam) / mp.mpf("1e-3"))) + mp.sqrt(lam)
        got = confidence_radius(s, 1e-3, math.sqrt(0.1), 1.0, 1.0, form="inference")
        assert got == pytest.approx(float(ref3), rel=1e-13)

    def test_errors(self):
        s = rls_init(2, 1.0)
        for delta in (0.0, 1.0, -0.5):
            with pytest.raises(ValueError):
                confidence_radius(s, delta, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            confidence_radius(s, 0.1, 1.0, 1.0, 1.0, form="other")


class TestFDelta:
    consts = estimate_constants(Sphere(2), ParameterSpace(1.0, 1.0, 2))

    def test_vanishing_log(self):
        assert f_delta(self.consts, 2, 0.1, 6.0, check_domain=False) == 0.0

    def test_scales_as_inverse_d_squared(self):
        a = f_delta(self.consts, 2, 0.1, 0.01)
        assert f_delta(self.consts, 2, 0.2, 0.01) == pytest.approx(a / 4, rel=1e-14)

    def test_high_precision(self):
        c = self.consts
        mp.mp.dps = 40
        c0, d = mp.mpf(c.c0), mp.mpf(c.d_max)
        ref = 16 * mp.mpf(c.a_max) ** 4 / (9 * d**2 * c0**2) * mp.log(6 / mp.mpf("0.01")) ** 2 \
            * (768 * 2 / c0 + 2) ** 2
        assert f_delta(c, 2, c.d_max, 0.01) == pytest.approx(float(ref), rel=1e-12)

    def test_errors(self):
        with pytest.raises(ValueError):
            f_delta(self.consts, 2, 0.0, 0.1)
        with pytest.raises(ValueError):
            f_delta(self.consts, 2, 0.1, 1.5)
