"""Closed-form contraction rates and error-bound evaluators for binary instances.

Everything here is a formula: ideal per-update contraction factors, the
log-ratio envelope a policy class must admit, and the finite-sample bounds
used as qualitative overlays on simulation output. Where a bound is stated
up to an unspecified constant the evaluator fixes one (2 for the mismatch
bounds, 1 for the one-step recursion) and the module exports that choice so
report metadata can echo it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from pmdlab.solvers import _binary_log_ratios_mean, _binary_log_ratios_part

MISMATCH_CONSTANT = 2.0
ONE_STEP_CONSTANT = 1.0

_METHODS = ("mean", "part")


@dataclass(frozen=True)
class ContractionReport:
    """Ideal contraction factor eta for one update at a binary instance."""

    eta: float
    method: str
    p: float
    tau: float

    def __post_init__(self) -> None:
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"contraction factor must lie in (0, 1], got {self.eta!r}")
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class LogRatioBounds:
    """Envelope for the update's log-ratios: log-ratio <= B_plus, |log-ratio| <= B."""

    B: float
    B_plus: float
    method: str

    def __post_init__(self) -> None:
        if self.B < 0.0 or not math.isfinite(self.B) or not math.isfinite(self.B_plus):
            raise ValueError("bounds must be finite and B nonnegative")
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}")


def _validate_binary(p: float, tau: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValueError(f"binary mean must lie strictly inside (0, 1), got {p!r}")
    if tau <= 0.0:
        raise ValueError("tau must be positive")


def eta_part_exact(p: float, tau: float) -> float:
    """Exact contraction of the Boltzmann update: 1 - 1/(1-p+p e^{1/tau}).

    Evaluated as 1 - rho_minus through the log-domain ratio helper, which is
    the same quantity and survives tau down to 0.
    """
    _validate_binary(p, tau)
    _, log_rho_minus = _binary_log_ratios_part(p, tau)
    return -math.expm1(log_rho_minus)


def eta_mean_asymptotic(p: float, tau: float) -> float:
    """Leading-order small-tau contraction of the mean-baseline update."""
    _validate_binary(p, tau)
    return -math.expm1(-p / tau)


def contraction_report(p: float, tau: float, method: str) -> ContractionReport:
    if method == "part":
        eta = eta_part_exact(p, tau)
    elif method == "mean":
        eta = eta_mean_asymptotic(p, tau)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ContractionReport(eta=eta, method=method, p=p, tau=tau)


def log_ratio_bounds(p: float, tau: float, method: str) -> LogRatioBounds:
    """Log-ratio envelope of one update.

    B_plus is the log of the positive-action ratio (exact for part,
    leading-order for mean); B is the stated two-sided level, p/tau for mean
    and 1/tau - log(1/p) for part, floored at 0 since a two-sided bound
    cannot be negative.
    """
    _validate_binary(p, tau)
    if method == "mean":
        log_rho_plus, _ = _binary_log_ratios_mean(p, tau)
        return LogRatioBounds(B=p / tau, B_plus=log_rho_plus, method=method)
    if method == "part":
        log_rho_plus, _ = _binary_log_ratios_part(p, tau)
        return LogRatioBounds(
            B=max(0.0, 1.0 / tau + math.log(p)), B_plus=log_rho_plus, method=method
        )
    raise ValueError(f"unknown method {method!r}")


def erm_bound(
    B: float, n: int, class_size: int, delta: float, eps_opt: float, mismatch: float
) -> float:
    """Excess-risk bound for the regression fit: 4*mismatch + 4*eps_opt
    + (5 M^2 / 3n) log(2 class_size / delta) with the crude level M = 2B.

    ``mismatch`` is the squared target gap, not its square root.
    """
    if n < 1 or class_size < 1:
        raise ValueError("n and class_size must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if B < 0.0 or eps_opt < 0.0 or mismatch < 0.0:
        raise ValueError("B, eps_opt and mismatch must be nonnegative")
    m = 2.0 * B
    return 4.0 * mismatch + 4.0 * eps_opt + (5.0 * m * m / (3.0 * n)) * math.log(
        2.0 * class_size / delta
    )


def epsilon_n(p: float, n: int, delta: float) -> float:
    """High-probability deviation of the empirical mean of n binary rewards."""
    if n < 2:
        raise ValueError("need n >= 2")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p!r}")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    level = math.log(4.0 * n / delta)
    return math.sqrt(2.0 * p * (1.0 - p) * level / (n - 1)) + 2.0 * level / (3.0 * (n - 1))


def mismatch_bound(p: float, n: int, delta: float, tau: float, method: str) -> float:
    """Bound on the squared gap between sampled and ideal regression targets.

    mean: 2 (eps_n^2 + p(1-p)^2) / tau^2. part: min{eps_n / (1/(e^{1/tau}-1)
    + (p - eps_n)_+), 1/tau} squared, no extra constant. mean_refined:
    2 (p eps_n + eps_n^2) / tau^2, valid once eps_n < p.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    eps = epsilon_n(p, n, delta)
    if method == "mean":
        return MISMATCH_CONSTANT * (eps * eps + p * (1.0 - p) ** 2) / (tau * tau)
    if method == "mean_refined":
        return MISMATCH_CONSTANT * (p * eps + eps * eps) / (tau * tau)
    if method == "part":
        # 1/(e^{1/tau} - 1) underflows to 0 for tiny tau, which is exactly
        # the a -> inf limit of a*eps/(1 + a(p-eps)_+)
        inv_a = 1.0 / math.expm1(1.0 / tau) if tau > 1.0 / 700.0 else 0.0
        headroom = max(0.0, p - eps)
        denom = inv_a + headroom
        raw = eps / denom if denom > 0.0 else math.inf
        return min(raw, 1.0 / tau) ** 2
    raise ValueError(f"unknown method {method!r}")


def one_step_bound(
    eta: float,
    current_gap: float,
    B: float,
    B_plus: float,
    n: int,
    class_size: int,
    delta: float,
    eps_opt: float,
    mismatch: float,
) -> float:
    """One-update recursion: contracted gap plus the statistical error term.

    (1-eta) gap + e^{B_plus/2} (B sqrt(log(class_size/delta)/n)
    + sqrt(eps_opt) + sqrt(mismatch)), leading constant fixed at 1.
    """
    if n < 1 or class_size < 1:
        raise ValueError("n and class_size must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    stat = B * math.sqrt(math.log(class_size / delta) / n)
    err = math.exp(0.5 * B_plus) * (stat + math.sqrt(eps_opt) + math.sqrt(mismatch))
    return (1.0 - eta) * current_gap + ONE_STEP_CONSTANT * err
