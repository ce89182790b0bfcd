"""Finite discrete distributions, divergences, and expected-reward utilities.

Conventions
-----------
* A policy is a probability vector over a finite action set. Entries are
  nonnegative and sum to 1 within 1e-12; inputs within 1e-9 of the simplex
  are renormalized, anything worse is rejected so construction never masks
  an upstream bug.
* Rewards live in [0, 1] per action. The binary case {0, 1} is what every
  closed-form asymptotic in the solver layer assumes; membership is tested
  exactly, not within tolerance.
* 0 * log 0 counts as 0 in the KL sum, so point masses are valid first
  arguments. Divergences that divide by the second argument reject zero
  entries there instead of returning inf.

All values are immutable after construction and safe to share across
worker processes without synchronization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIMPLEX_ATOL = 1e-12
RENORM_ATOL = 1e-9


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability vector over a finite action set."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ValueError("probs must be a nonempty 1-D vector")
        if not np.all(np.isfinite(probs)):
            raise ValueError("probs must be finite")
        if np.any(probs < 0.0):
            raise ValueError(f"negative probability entry: min={probs.min():.3e}")
        total = float(probs.sum())
        gap = abs(total - 1.0)
        if gap > RENORM_ATOL:
            raise ValueError(f"probabilities sum to {total!r}, off simplex by {gap:.3e}")
        if gap > SIMPLEX_ATOL:
            probs = probs / total
        object.__setattr__(self, "probs", _frozen_array(probs))

    @property
    def size(self) -> int:
        return int(self.probs.size)

    def full_support(self) -> bool:
        return bool(np.all(self.probs > 0.0))

    def log_probs(self) -> np.ndarray:
        """Elementwise log; zero entries map to -inf without warning noise."""
        with np.errstate(divide="ignore"):
            return np.log(self.probs)


@dataclass(frozen=True)
class RewardVector:
    """Per-action rewards, each in [0, 1]."""

    rewards: np.ndarray

    def __post_init__(self) -> None:
        rewards = np.asarray(self.rewards, dtype=np.float64)
        if rewards.ndim != 1 or rewards.size == 0:
            raise ValueError("rewards must be a nonempty 1-D vector")
        if not np.all(np.isfinite(rewards)):
            raise ValueError("rewards must be finite")
        if np.any((rewards < 0.0) | (rewards > 1.0)):
            raise ValueError("rewards must lie in [0, 1]")
        object.__setattr__(self, "rewards", _frozen_array(rewards))

    @property
    def size(self) -> int:
        return int(self.rewards.size)

    def is_binary(self) -> bool:
        """Exact membership in {0, 1}; the asymptotic formulas require it."""
        return bool(np.all((self.rewards == 0.0) | (self.rewards == 1.0)))


@dataclass(frozen=True)
class BanditInstance:
    """Finite set of states, each with its own reward vector, plus weights."""

    states: tuple[tuple[str, RewardVector], ...]
    state_weights: DiscreteDistribution

    def __post_init__(self) -> None:
        states = tuple(self.states)
        if not states:
            raise ValueError("instance needs at least one state")
        for name, rv in states:
            if not isinstance(rv, RewardVector):
                raise TypeError(f"state {name!r} carries a non-RewardVector payload")
        if self.state_weights.size != len(states):
            raise ValueError(
                f"{len(states)} states but {self.state_weights.size} state weights"
            )
        object.__setattr__(self, "states", states)

    @property
    def n_states(self) -> int:
        return len(self.states)


def _check_dims(a_size: int, b_size: int) -> None:
    if a_size != b_size:
        raise ValueError(f"dimension mismatch: {a_size} vs {b_size}")


def expected_reward(policy: DiscreteDistribution, rewards: RewardVector) -> float:
    """Mean reward under the policy, in [0, 1] for [0, 1] rewards."""
    _check_dims(policy.size, rewards.size)
    return float(policy.probs @ rewards.rewards)


def kl_divergence(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """Sum of p * log(p/q); terms with p == 0 contribute 0.

    Raises ValueError where q has a zero entry under positive p mass.
    """
    _check_dims(p.size, q.size)
    mask = p.probs > 0.0
    if np.any(q.probs[mask] == 0.0):
        raise ValueError("q has a zero entry where p is positive")
    pm = p.probs[mask]
    return float(np.sum(pm * (np.log(pm) - np.log(q.probs[mask]))))


def chi2_divergence(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """Sum of q * (p/q - 1)^2; requires q to have full support."""
    _check_dims(p.size, q.size)
    if not q.full_support():
        raise ValueError("chi-square divergence needs full support in q")
    ratio = p.probs / q.probs
    return float(np.sum(q.probs * (ratio - 1.0) ** 2))


def tv_distance(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """Total variation distance, half the L1 gap; bounds any mean-reward gap."""
    _check_dims(p.size, q.size)
    return float(0.5 * np.sum(np.abs(p.probs - q.probs)))
