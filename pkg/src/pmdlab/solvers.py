"""Exact one-state policy updates and their closed-form binary specializations.

Two update rules act on a sampling policy q with rewards r and temperature
tau > 0:

* ``pmd_part_update`` -- Boltzmann reweighting q(y) e^{r(y)/tau} / Z, the
  unique maximizer of expected reward minus tau * KL(pi || q).
* ``pmd_mean_update`` -- the mean-baseline variant. With the centered
  advantage Delta(y) = r(y) - E_q[r] and d = Delta/tau, the update is
  q(y) * exp(d_y - W(x e^{d_y})) where W is the principal Lambert W branch
  and x = lam / tau^2 >= 0 is a normalization multiplier chosen so the
  result stays on the simplex.

The multiplier is found by safeguarded 1-D root finding. Writing the
simplex residual through the identity e^{-W(z)} = W(z)/z turns it into

    S(x) = E_q[W(x e^d)] / x - 1,

which is monotone decreasing with S(0+) = E_q[e^d] - 1 >= 0 (Jensen), so a
sign-change bracket plus a Newton/bisection hybrid converges reliably and
|S| is literally the normalization error of the returned policy. Every W
evaluation goes through the exponent form, so d in the hundreds (tiny tau)
never overflows.

``mixed_subproblem_oracle`` independently maximizes the mixed penalty
objective  E_pi[r] - tau*KL(pi||q) - (lam/2tau)*chi2(pi||q)  by
exponentiated gradient ascent; it certifies that the mean-baseline update
secretly solves that mixed problem with the same multiplier. It shares no
code with the Lambert-W path.

Degenerate binary edges p in {0, 1} make both updates the identity, so the
binary ratio helpers return (1, 1) there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pmdlab._stable import logsumexp
from pmdlab.dist import DiscreteDistribution, RewardVector, expected_reward
from pmdlab.lambertw import lambert_w0_exp

_EG_MAX_ITER = 1_000_000
_EG_GRAD_TOL = 1e-10


@dataclass(frozen=True)
class PmdConfig:
    """Solver knobs: temperature, normalization tolerance, iteration cap."""

    tau: float
    lambda_tol: float = 1e-12
    max_iter: int = 200

    def __post_init__(self) -> None:
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau!r}")
        if not (self.lambda_tol > 0.0):
            raise ValueError("lambda_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class PmdUpdateResult:
    """Updated policy plus solver diagnostics.

    ``lam`` is the normalization multiplier (0 for the Boltzmann update),
    ``kkt_residual`` the largest per-action stationarity defect measured at
    the solver's fixed point, ``log_ratios`` the per-action value
    log(next/current) kept in log domain so underflowed entries stay
    meaningful. ``log_a``/``log_b`` record log E_q[e^{d}] and
    log E_q[e^{2d}] when the mean-baseline solver computed them.
    """

    policy: DiscreteDistribution
    lam: float
    kkt_residual: float
    iterations: int
    log_ratios: np.ndarray
    log_a: float | None = None
    log_b: float | None = None

    def __post_init__(self) -> None:
        if self.lam < 0.0:
            raise ValueError("normalization multiplier must be >= 0")
        lr = np.asarray(self.log_ratios, dtype=np.float64)
        lr.setflags(write=False)
        object.__setattr__(self, "log_ratios", lr)


def _check_inputs(pi_t: DiscreteDistribution, r: RewardVector) -> None:
    if pi_t.size != r.size:
        raise ValueError(f"dimension mismatch: {pi_t.size} vs {r.size}")
    if not pi_t.full_support():
        raise ValueError("update requires a full-support sampling policy")


def pmd_part_update(
    pi_t: DiscreteDistribution, r: RewardVector, cfg: PmdConfig
) -> PmdUpdateResult:
    """Boltzmann reweighting, evaluated entirely in log domain."""
    _check_inputs(pi_t, r)
    logq = pi_t.log_probs()
    scaled = r.rewards / cfg.tau
    log_z = logsumexp(logq + scaled)
    log_ratios = scaled - log_z
    probs = np.exp(logq + log_ratios)
    policy = DiscreteDistribution(probs)
    return PmdUpdateResult(
        policy=policy,
        lam=0.0,
        kkt_residual=abs(float(probs.sum()) - 1.0),
        iterations=0,
        log_ratios=log_ratios,
    )


def _mean_residual(x: float, q: np.ndarray, d: np.ndarray):
    """S(x), S'(x) and the W vector at x; S is the simplex defect."""
    w = lambert_w0_exp(np.log(x) + d)
    s = float(q @ w) / x - 1.0
    sp = -float(q @ (w * w / (1.0 + w))) / (x * x)
    return s, sp, w


def pmd_mean_update(
    pi_t: DiscreteDistribution, r: RewardVector, cfg: PmdConfig
) -> PmdUpdateResult:
    """Mean-baseline update via Lambert W with multiplier root-finding.

    Raises ArithmeticError when the sign-change bracket cannot be
    established after widening, or when the residual is still above
    ``cfg.lambda_tol`` after ``cfg.max_iter`` evaluations.
    """
    _check_inputs(pi_t, r)
    tau = cfg.tau
    q = pi_t.probs
    logq = pi_t.log_probs()
    d = (r.rewards - expected_reward(pi_t, r)) / tau

    log_a = float(logsumexp(logq + d))
    log_b = float(logsumexp(logq + 2.0 * d))
    log_a = max(log_a, 0.0)

    if log_a <= max(cfg.lambda_tol, 1e-15):
        # rewards constant under q: the update is the identity
        shift = logsumexp(logq + d)
        log_ratios = d - shift
        return PmdUpdateResult(
            policy=DiscreteDistribution(np.exp(logq + log_ratios)),
            lam=0.0,
            kkt_residual=abs(float(shift)),
            iterations=0,
            log_ratios=log_ratios,
            log_a=log_a,
            log_b=log_b,
        )

    # bracket for x = lam / tau^2: [A(A-1)/B, log A]
    log_am1 = (
        math.log(math.expm1(log_a)) if log_a < 30.0 else log_a + math.log1p(-math.exp(-log_a))
    )
    x_lo = math.exp(log_a + log_am1 - log_b)
    x_hi = log_a
    x_lo = min(x_lo, x_hi)

    evals = 0

    def residual(x: float):
        nonlocal evals
        evals += 1
        return _mean_residual(x, q, d)

    s_lo, _, _ = residual(x_lo)
    s_hi, _, _ = residual(x_hi)
    widenings = 0
    while s_lo < 0.0 and widenings < 64:
        x_lo *= 0.5
        s_lo, _, _ = residual(x_lo)
        widenings += 1
    while s_hi > 0.0 and widenings < 128:
        x_hi *= 2.0
        s_hi, _, _ = residual(x_hi)
        widenings += 1
    if s_lo < 0.0 or s_hi > 0.0:
        raise ArithmeticError(
            "multiplier bracket failure: "
            f"S({x_lo:.6e})={s_lo:.3e}, S({x_hi:.6e})={s_hi:.3e}"
        )

    x = 0.5 * (x_lo + x_hi)
    s, sp, w = residual(x)
    while abs(s) > cfg.lambda_tol:
        if evals >= cfg.max_iter:
            raise ArithmeticError(
                f"multiplier root-finding stalled: residual {s:.3e} "
                f"after {evals} evaluations"
            )
        if s > 0.0:
            x_lo = x
        else:
            x_hi = x
        x_newton = x - s / sp
        x = x_newton if x_lo < x_newton < x_hi else 0.5 * (x_lo + x_hi)
        s, sp, w = residual(x)

    # stationarity defect at the fixed point: with t = log x + d - w the
    # exact solution has e^t = w, so the gap measures our W accuracy
    u = d - w
    kkt = float(np.max(np.abs(np.exp(np.log(x) + u) - w)))

    shift = logsumexp(logq + u)  # |shift| <= lambda_tol by convergence
    log_ratios = u - shift
    policy = DiscreteDistribution(np.exp(logq + log_ratios))
    return PmdUpdateResult(
        policy=policy,
        lam=tau * tau * x,
        kkt_residual=kkt,
        iterations=evals,
        log_ratios=log_ratios,
        log_a=log_a,
        log_b=log_b,
    )


def lambda_bounds(
    pi_t: DiscreteDistribution, r: RewardVector, tau: float
) -> tuple[float, float]:
    """Provable bracket for the mean-baseline normalization multiplier.

    Returns (tau^2 A(A-1)/B, tau^2 log A) with A = E_q[e^d], B = E_q[e^2d],
    both evaluated in log domain so tiny tau cannot overflow.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    _check_inputs(pi_t, r)
    logq = pi_t.log_probs()
    d = (r.rewards - expected_reward(pi_t, r)) / tau
    log_a = max(float(logsumexp(logq + d)), 0.0)
    if log_a == 0.0:
        return 0.0, 0.0
    log_b = float(logsumexp(logq + 2.0 * d))
    log_am1 = (
        math.log(math.expm1(log_a)) if log_a < 30.0 else log_a + math.log1p(-math.exp(-log_a))
    )
    hi = tau * tau * log_a
    lo = min(tau * tau * math.exp(log_a + log_am1 - log_b), hi)
    return lo, hi


def lambda_asymptotic(p: float, tau: float, regime: str) -> float:
    """Limit values of the multiplier for binary rewards.

    regime "large_tau": lam -> p(1-p)/2. regime "small_tau": lam ~ tau p(1-p).
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"binary mean must lie strictly inside (0, 1), got {p!r}")
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if regime == "large_tau":
        return 0.5 * p * (1.0 - p)
    if regime == "small_tau":
        return tau * p * (1.0 - p)
    raise ValueError(f"unknown regime {regime!r}")


def mixed_subproblem_oracle(
    pi_t: DiscreteDistribution,
    r: RewardVector,
    tau: float,
    lam: float,
    *,
    grad_tol: float = _EG_GRAD_TOL,
    max_iter: int = _EG_MAX_ITER,
) -> DiscreteDistribution:
    """Maximize E[r] - tau*KL - (lam/2tau)*chi2 by exponentiated gradient.

    Independent certificate for the mean-baseline update: run with the
    solver's multiplier, the argmax must coincide with its policy. The step
    is the local inverse curvature 1/(tau + (lam/tau) max-ratio), capped so
    one multiplicative update never exceeds e^2; iteration stops once the
    projected gradient's sup-norm is at most ``grad_tol``.

    Raises ArithmeticError (reporting the final gradient norm) if the
    iteration cap is hit first.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if lam < 0.0:
        raise ValueError("penalty weight must be >= 0")
    _check_inputs(pi_t, r)
    logq = pi_t.log_probs()
    rw = r.rewards
    logp = logq.copy()
    m = math.inf
    for _ in range(max_iter):
        p = np.exp(logp)
        ratio = np.exp(logp - logq)
        grad = rw - tau * (logp - logq + 1.0) - (lam / tau) * (ratio - 1.0)
        centered = grad - float(p @ grad)
        m = float(np.max(np.abs(centered)))
        if m <= grad_tol:
            return DiscreteDistribution(p / p.sum())
        eta = 1.0 / (tau + (lam / tau) * float(ratio.max()))
        eta = min(eta, 2.0 / m)
        logp = logp + eta * grad
        logp = logp - logsumexp(logp)
    raise ArithmeticError(
        f"exponentiated gradient did not converge: projected-gradient norm {m:.3e}"
    )


def _binary_log_ratios_part(p: float, tau: float) -> tuple[float, float]:
    """(log rho_plus, log rho_minus) for the Boltzmann update, underflow-free."""
    log_rho_plus = -float(np.logaddexp(math.log(p), math.log1p(-p) - 1.0 / tau))
    return log_rho_plus, log_rho_plus - 1.0 / tau


def _binary_log_ratios_mean(p: float, tau: float) -> tuple[float, float]:
    """Leading-order (log rho_plus, log rho_minus) for the mean baseline."""
    log_rho_minus = -p / tau
    log_rho_plus = math.log1p(-(1.0 - p) * math.exp(log_rho_minus)) - math.log(p)
    return log_rho_plus, log_rho_minus


def _validate_binary_p(p: float) -> None:
    if not 0.0 <= p <= 1.0 or not math.isfinite(p):
        raise ValueError(f"binary mean reward must lie in [0, 1], got {p!r}")


def binary_ratios_part(p: float, tau: float) -> tuple[float, float]:
    """Exact update ratios (rho_plus, rho_minus) for a binary instance.

    rho_plus = 1 / (p + (1-p) e^{-1/tau}); the pair satisfies
    p rho_plus + (1-p) rho_minus = 1.
    """
    _validate_binary_p(p)
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if p in (0.0, 1.0):
        return 1.0, 1.0
    lp, lm = _binary_log_ratios_part(p, tau)
    return math.exp(lp), math.exp(lm)


def binary_ratios_mean_asymptotic(p: float, tau: float) -> tuple[float, float]:
    """Small-tau leading-order ratios for the mean-baseline update.

    rho_minus = e^{-p/tau}, rho_plus = 1/p - ((1-p)/p) e^{-p/tau}; the pair
    is normalized exactly because the positive ratio keeps its correction
    term.
    """
    _validate_binary_p(p)
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    if p in (0.0, 1.0):
        return 1.0, 1.0
    lp, lm = _binary_log_ratios_mean(p, tau)
    return math.exp(lp), math.exp(lm)
