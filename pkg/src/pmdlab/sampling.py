"""Rollout sampling, leave-one-out regression targets, and the Monte Carlo
sweeps that measure how far sampled targets sit from their ideal values.

Sampling uses a counter-based generator (Philox) keyed by
(master seed, trial index), so any trial can be regenerated in isolation and
a sweep is byte-identical no matter how its trials are scheduled across
workers. The key layout is part of the artifact's compatibility contract and
only changes with a major version bump.

Degenerate batches (all sampled rewards equal) are kept, not resampled:
small-n cells produce them often and that is precisely where the target
blow-up being measured lives. Their frequency is reported alongside the
error statistics.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from pmdlab._stable import loo_logsumexp
from pmdlab.contraction import MISMATCH_CONSTANT, log_ratio_bounds, mismatch_bound
from pmdlab.dist import DiscreteDistribution, RewardVector, _frozen_array
from pmdlab.solvers import PmdConfig, pmd_mean_update, pmd_part_update

_METHODS = ("mean", "part")
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RolloutBatch:
    """n categorical draws from a sampler plus their realized rewards."""

    actions: np.ndarray
    rewards: np.ndarray
    sampler: DiscreteDistribution
    seed: int
    trial_index: int

    def __post_init__(self) -> None:
        actions = np.asarray(self.actions, dtype=np.int64)
        rewards = np.asarray(self.rewards, dtype=np.float64)
        if actions.ndim != 1 or actions.size < 2:
            raise ValueError("need at least 2 rollouts")
        if rewards.shape != actions.shape:
            raise ValueError("rewards and actions must align")
        object.__setattr__(self, "actions", _frozen_array(actions, dtype=np.int64))
        object.__setattr__(self, "rewards", _frozen_array(rewards))

    @property
    def size(self) -> int:
        return int(self.actions.size)


def _trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, trial_index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_rollouts(
    pi_t: DiscreteDistribution, r: RewardVector, n: int, seed: int, trial_index: int
) -> RolloutBatch:
    """Draw n i.i.d. actions from pi_t by inverse CDF on one Philox stream."""
    if n < 2:
        raise ValueError("need at least 2 rollouts")
    if pi_t.size != r.size:
        raise ValueError(f"dimension mismatch: {pi_t.size} vs {r.size}")
    rng = _trial_rng(seed, trial_index)
    cdf = np.cumsum(pi_t.probs)
    cdf[-1] = 1.0
    actions = np.searchsorted(cdf, rng.random(n), side="right")
    actions = np.minimum(actions, pi_t.size - 1)
    return RolloutBatch(
        actions=actions,
        rewards=r.rewards[actions],
        sampler=pi_t,
        seed=seed,
        trial_index=trial_index,
    )


def loo_targets(batch: RolloutBatch, tau: float, method: str) -> np.ndarray:
    """Per-sample regression targets with the baseline estimated on the
    other n-1 samples.

    mean: (r_i - mean of others) / tau. part: r_i/tau - log of the
    leave-one-out average of e^{r_j/tau}, the log kept stable by pairwise
    logaddexp accumulation.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    rw = batch.rewards
    n = batch.size
    if method == "mean":
        others_mean = (rw.sum() - rw) / (n - 1)
        return (rw - others_mean) / tau
    if method == "part":
        scaled = rw / tau
        return scaled - (loo_logsumexp(scaled) - math.log(n - 1))
    raise ValueError(f"unknown method {method!r}")


def ideal_target(
    pi_t: DiscreteDistribution, r: RewardVector, tau: float, method: str
) -> np.ndarray:
    """Per-action log-ratio of the exact update: what the regression would
    see with infinite samples. Satisfies E_{pi_t}[e^target] = 1."""
    cfg = PmdConfig(tau=tau)
    if method == "mean":
        return pmd_mean_update(pi_t, r, cfg).log_ratios
    if method == "part":
        return pmd_part_update(pi_t, r, cfg).log_ratios
    raise ValueError(f"unknown method {method!r}")


def target_mismatch(
    batch: RolloutBatch, r: RewardVector, tau: float, method: str
) -> tuple[float, tuple[float, float]]:
    """Mean squared gap between sampled and ideal targets, plus the split
    into samples whose realized reward was 1 versus 0.

    A sign class absent from the batch reports 0 for its average; sweep
    aggregation pools raw sums across trials instead of averaging these.
    """
    sampled = loo_targets(batch, tau, method)
    ideal = ideal_target(batch.sampler, r, tau, method)[batch.actions]
    gap_sq = (sampled - ideal) ** 2
    pos = batch.rewards == 1.0
    neg = batch.rewards == 0.0
    pos_err = float(gap_sq[pos].mean()) if pos.any() else 0.0
    neg_err = float(gap_sq[neg].mean()) if neg.any() else 0.0
    return float(gap_sq.mean()), (pos_err, neg_err)


@dataclass(frozen=True)
class CellStats:
    """Aggregates for one (method, p, n) sweep cell."""

    method: str
    p: float
    n: int
    tau: float
    trials: int
    mean_dbar2: float
    std_dbar2: float
    pos_err: float
    neg_err: float
    scaled_err: float
    bound: float
    violations: int
    degenerate_trials: int


_CSV_HEADER = (
    "method,p,n,tau,trials,mean_dbar2,std_dbar2,pos_err,neg_err,"
    "scaled_err,bound,violations"
)


@dataclass(frozen=True)
class EstimationReport:
    """Full sweep output: per-cell statistics plus reproduction metadata."""

    rows: tuple[CellStats, ...]
    p_grid: tuple[float, ...]
    n_grid: tuple[int, ...]
    tau: float
    trials: int
    delta: float
    seed: int

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_HEADER.split(","))
            for row in self.rows:
                writer.writerow(
                    [
                        row.method,
                        repr(float(row.p)),
                        row.n,
                        repr(float(row.tau)),
                        row.trials,
                        repr(float(row.mean_dbar2)),
                        repr(float(row.std_dbar2)),
                        repr(float(row.pos_err)),
                        repr(float(row.neg_err)),
                        repr(float(row.scaled_err)),
                        repr(float(row.bound)),
                        row.violations,
                    ]
                )

    def to_json(self, path: str) -> None:
        payload = {
            "seed": self.seed,
            "tau": self.tau,
            "delta": self.delta,
            "trials": self.trials,
            "p_grid": list(self.p_grid),
            "n_grid": list(self.n_grid),
            "rng": "philox keyed by (seed, trial_index)",
            "mismatch_constant": MISMATCH_CONSTANT,
            "cells": [vars(row) for row in self.rows],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _cell_stats(args: tuple) -> list[CellStats]:
    cell_index, p, n, tau, trials, delta, seed = args
    q = DiscreteDistribution(np.array([p, 1.0 - p]))
    r = RewardVector(np.array([1.0, 0.0]))
    dbar2 = {m: np.empty(trials) for m in _METHODS}
    sign_sums = {m: [0.0, 0.0] for m in _METHODS}
    sign_counts = [0, 0]
    degenerate = 0
    for t in range(trials):
        batch = sample_rollouts(q, r, n, seed, cell_index * trials + t)
        n_pos = int(batch.rewards.sum())
        sign_counts[0] += n_pos
        sign_counts[1] += n - n_pos
        if n_pos in (0, n):
            degenerate += 1
        for m in _METHODS:
            total, (pos_avg, neg_avg) = target_mismatch(batch, r, tau, m)
            dbar2[m][t] = total
            sign_sums[m][0] += pos_avg * n_pos
            sign_sums[m][1] += neg_avg * (n - n_pos)
    out = []
    for m in _METHODS:
        bound = mismatch_bound(p, n, delta, tau, m)
        mean_dbar2 = float(dbar2[m].mean())
        out.append(
            CellStats(
                method=m,
                p=p,
                n=n,
                tau=tau,
                trials=trials,
                mean_dbar2=mean_dbar2,
                std_dbar2=float(dbar2[m].std()),
                pos_err=sign_sums[m][0] / sign_counts[0] if sign_counts[0] else 0.0,
                neg_err=sign_sums[m][1] / sign_counts[1] if sign_counts[1] else 0.0,
                scaled_err=math.exp(log_ratio_bounds(p, tau, m).B_plus)
                * math.sqrt(mean_dbar2),
                bound=bound,
                violations=int((dbar2[m] > bound).sum()),
                degenerate_trials=degenerate,
            )
        )
    return out


def estimation_error_sweep(
    p_grid: list[float],
    n_grid: list[int],
    tau: float,
    trials: int,
    delta: float,
    seed: int,
    *,
    jobs: int = 1,
) -> EstimationReport:
    """Run `trials` paired batches per (p, n) cell and aggregate both
    methods' target mismatch. The trial stream index is global, so results
    do not depend on `jobs`."""
    if trials < 1:
        raise ValueError("need at least one trial")
    if not all(0.0 < p < 1.0 for p in p_grid):
        raise ValueError("sweep p values must lie strictly inside (0, 1)")
    if not all(n >= 2 for n in n_grid):
        raise ValueError("sweep n values must be >= 2")
    cells = [(p, n) for p in p_grid for n in n_grid]
    tasks = [
        (idx, p, n, tau, trials, delta, seed) for idx, (p, n) in enumerate(cells)
    ]
    if jobs > 1 and len(tasks) > 1:
        with get_context("fork").Pool(min(jobs, len(tasks))) as pool:
            per_cell = pool.map(_cell_stats, tasks, chunksize=1)
    else:
        per_cell = [_cell_stats(t) for t in tasks]
    rows = tuple(row for cell_rows in per_cell for row in cell_rows)
    return EstimationReport(
        rows=rows,
        p_grid=tuple(float(p) for p in p_grid),
        n_grid=tuple(int(n) for n in n_grid),
        tau=tau,
        trials=trials,
        delta=delta,
        seed=seed,
    )
