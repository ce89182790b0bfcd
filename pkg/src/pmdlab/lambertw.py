"""Principal-branch Lambert W on the nonnegative half-line.

The mean-baseline solver only ever needs W(z) for z >= 0 because its
normalization multiplier is nonnegative, so the secondary real branch is
deliberately absent. Two entry points:

* ``lambert_w0(z)``    -- W(z) for finite z >= 0.
* ``lambert_w0_exp(y)`` -- W(e^y) given the exponent y, usable far past the
  overflow point of e^y (y ~ 709). Advantage-over-temperature ratios reach
  the hundreds in the small-temperature experiments, so the solver routes
  every W evaluation through this form.

Both accept scalars or arrays and evaluate vectorized. Accuracy contract:
|W(z) e^{W(z)} - z| <= 1e-12 * max(1, z), and relative error <= 1e-10 for
the exponent form.
"""

from __future__ import annotations

import numpy as np

_MAX_NEWTON = 80


def _halley_w(z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Halley refinement of w e^w = z; cubic convergence from a sane guess."""
    for _ in range(_MAX_NEWTON):
        e = np.exp(w)
        f = w * e - z
        # done when the defining identity holds to well under the contract
        if np.all(np.abs(f) <= 1e-14 * np.maximum(1.0, z)):
            break
        wp1 = w + 1.0
        denom = e * wp1 - (w + 2.0) * f / (2.0 * wp1)
        w = w - f / denom
        w = np.maximum(w, 0.0)
    return w


def lambert_w0(z) -> np.ndarray | float:
    """Principal-branch W(z) for finite z >= 0.

    Initial guess: truncated series near 0, log z - log log z for large z,
    log1p(z) in between; refined by Halley iterations until
    |w e^w - z| <= 1e-14 * max(1, z). Monotone nondecreasing in z.

    Raises ValueError on negative or non-finite input.
    """
    z_arr = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z_arr)):
        raise ValueError("lambert_w0 requires finite input")
    if np.any(z_arr < 0.0):
        raise ValueError("lambert_w0 requires z >= 0 (principal branch)")
    scalar = z_arr.ndim == 0
    zv = np.atleast_1d(z_arr).astype(np.float64)

    w = np.empty_like(zv)
    small = zv < 1e-3
    big = zv > np.e
    mid = ~small & ~big
    # series W(z) = z - z^2 + 1.5 z^3 - (8/3) z^4 + ...
    zs = zv[small]
    w[small] = zs * (1.0 - zs * (1.0 - zs * (1.5 - zs * (8.0 / 3.0))))
    zb = zv[big]
    lz = np.log(zb)
    w[big] = lz - np.log(lz)
    w[mid] = np.log1p(zv[mid])

    w = _halley_w(zv, w)
    if scalar:
        return float(w[0])
    return w


def lambert_w0_exp(y) -> np.ndarray | float:
    """W(e^y) for finite real y, solved without forming e^y.

    Works in u = log w: the root of u + e^u = y is found by Newton, which
    converges monotonically here because the function is convex and
    increasing. Guess u0 = log y above 1 (partition-dominated regime) and
    u0 = y - 1 below. Returns e^u.

    Raises ValueError on non-finite input.
    """
    y_arr = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y_arr)):
        raise ValueError("lambert_w0_exp requires finite input")
    scalar = y_arr.ndim == 0
    yv = np.atleast_1d(y_arr).astype(np.float64)

    u = np.where(yv > 1.0, np.log(np.maximum(yv, 1.0)), yv - 1.0)
    tol = 1e-15 * np.maximum(1.0, np.abs(yv))
    for _ in range(_MAX_NEWTON):
        eu = np.exp(u)
        phi = u + eu - yv
        if np.all(np.abs(phi) <= tol):
            break
        u = u - phi / (1.0 + eu)

    w = np.exp(u)
    if scalar:
        return float(w[0])
    return w
