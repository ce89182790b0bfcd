"""Lambert W evaluation against an independent bisection oracle."""

import numpy as np
import pytest

from pmdlab.lambertw import lambert_w0, lambert_w0_exp


def bisect_w(z, lo=0.0, hi=None, iters=200):
    """Oracle: bisection on w e^w = z, independent of the implementation."""
    if hi is None:
        hi = max(1.0, np.log(max(z, 1.0)) + 1.0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid * np.exp(mid) < z:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bisect_w_exp(y, lo, hi, iters=200):
    """Oracle: bisection on w + log w = y."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid + np.log(mid) < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# frozen from bisect_w(1.0); the omega constant
W_OF_ONE = 0.5671432904097838


class TestLambertW0:
    def test_zero(self):
        assert lambert_w0(0.0) == 0.0

    def test_at_e(self):
        assert lambert_w0(np.e) == pytest.approx(1.0, abs=1e-14)

    def test_omega_constant(self):
        assert lambert_w0(1.0) == pytest.approx(W_OF_ONE, abs=1e-13)
        assert bisect_w(1.0) == pytest.approx(W_OF_ONE, abs=1e-12)

    def test_against_bisection_oracle(self):
        rng = np.random.default_rng(7)
        for z in 10.0 ** rng.uniform(-8, 8, size=200):
            assert lambert_w0(z) == pytest.approx(bisect_w(z), rel=1e-11, abs=1e-13)

    def test_defining_identity_bulk(self):
        rng = np.random.default_rng(11)
        z = rng.uniform(0.0, 1e8, size=200_000)
        w = lambert_w0(z)
        resid = np.abs(w * np.exp(w) - z) / np.maximum(1.0, z)
        assert resid.max() <= 1e-12

    def test_bracketing_bounds(self):
        rng = np.random.default_rng(13)
        z = 10.0 ** rng.uniform(-10, 10, size=50_000)
        w = lambert_w0(z)
        assert np.all(w >= z / (1.0 + z) - 1e-15)
        assert np.all(w <= z + 1e-15)
        big = z > np.e
        lz = np.log(z[big])
        assert np.all(w[big] >= lz - np.log(lz) - 1e-12)
        assert np.all(w[big] <= lz + 1e-12)

    def test_monotone_nondecreasing(self):
        z = np.geomspace(1e-12, 1e12, 100_000)
        w = lambert_w0(z)
        assert np.all(np.diff(w) >= 0.0)

    def test_concavity_spot_check(self):
        rng = np.random.default_rng(17)
        a = rng.uniform(0.0, 100.0, size=10_000)
        b = rng.uniform(0.0, 100.0, size=10_000)
        mid = lambert_w0(0.5 * (a + b))
        avg = 0.5 * (lambert_w0(a) + lambert_w0(b))
        assert np.all(mid >= avg - 1e-12)

    def test_rejects_negative_and_nonfinite(self):
        with pytest.raises(ValueError):
            lambert_w0(-1e-9)
        with pytest.raises(ValueError):
            lambert_w0(np.inf)


class TestLambertW0Exp:
    def test_matches_omega_at_zero_exponent(self):
        # y = 0 is z = 1
        assert lambert_w0_exp(0.0) == pytest.approx(W_OF_ONE, rel=1e-12)

    def test_y_equal_one(self):
        # z = e, W = 1; also cross-checks lambert_w0
        assert lambert_w0_exp(1.0) == pytest.approx(1.0, abs=1e-13)
        assert lambert_w0_exp(1.0) == pytest.approx(lambert_w0(np.e), rel=1e-12)

    def test_huge_exponent_against_bisection(self):
        # frozen oracle: bisect_w_exp(1000.0, 990.0, 1000.0) = 993.0991694723891
        w = lambert_w0_exp(1000.0)
        assert w == pytest.approx(993.0991694723891, rel=1e-12)
        assert w + np.log(w) == pytest.approx(1000.0, abs=1e-10)

    def test_consistency_with_direct_form(self):
        z = np.geomspace(1e-6, 1e6, 20_000)
        w_direct = lambert_w0(z)
        w_exp = lambert_w0_exp(np.log(z))
        np.testing.assert_allclose(w_exp, w_direct, rtol=1e-10)

    def test_very_negative_exponent(self):
        # W(e^y) ~ e^y as y -> -inf
        y = -500.0
        assert lambert_w0_exp(y) == pytest.approx(np.exp(y), rel=1e-10)

    def test_relative_error_across_range(self):
        rng = np.random.default_rng(19)
        y = rng.uniform(1.0, 5000.0, size=5_000)
        w = lambert_w0_exp(y)
        resid = np.abs(w + np.log(w) - y)
        # residual in y-units transfers to relative error in w
        assert np.all(resid <= 1e-10 * np.maximum(1.0, y))

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            lambert_w0_exp(np.nan)
