"""Finite-sample training loop over tabular softmax policies.

One training step mirrors the population scheme at desk scale: snapshot the
policy, draw a group of rollouts per state from the snapshot, build
leave-one-out regression targets (or take a single policy-gradient step for
the rloo_pg comparator), fit by full-batch gradient descent on the squared
loss, and record exact-objective diagnostics. Rollouts always come from the
snapshot, never from a partially fitted policy.

The fitted policy is projected after every descent step so its per-state
log-ratio against the snapshot stays inside the envelope from
``log_ratio_bounds``, widened by ``TrainConfig.clip_headroom`` so the ideal
update itself is never cut off. Projection solves, per state, for the shift
c making sum_y q(y) e^{clip(s(y) - c)} = 1; when nothing clips this is the
softmax normalization already built into the parametrization, so the solve
only runs on states whose raw update escaped the envelope.

Rewards live in {0, 1}; every closed form from the solver and bound modules
then applies without translation (the +-1 convention is an affine map of
rewards and temperature).
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from pmdlab._stable import log_softmax, loo_logsumexp
from pmdlab.contraction import log_ratio_bounds
from pmdlab.dist import (
    BanditInstance,
    DiscreteDistribution,
    RewardVector,
)
from pmdlab.sampling import RolloutBatch, loo_targets, sample_rollouts
from pmdlab.solvers import PmdConfig, pmd_mean_update

CLIP_HEADROOM = 1.1

_METHODS = ("pmd_mean", "pmd_part", "rloo_pg")
_TARGET_VARIANT = {"pmd_mean": "mean", "pmd_part": "part"}

_CSV_HEADER = "step,J,emp_reward,min_logratio,max_logratio,lambda_mean,entropy,eps_opt"

_P_CLAMP = 1e-9


@dataclass(frozen=True)
class TabularPolicy:
    """Per-state action logits, normalized on construction to log-probs.

    ``clip_bounds`` records the per-state (lo, hi) log-ratio envelope the
    policy was fitted under (None for policies not produced by a fit) and
    ``fit_loss`` the final mean empirical regression loss, the measured
    stand-in for the optimization-error term of the bounds.
    """

    logits: np.ndarray
    clip_bounds: np.ndarray | None = None
    fit_loss: float | None = None

    def __post_init__(self) -> None:
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 2 or logits.size == 0:
            raise ValueError("logits must be a nonempty states x actions matrix")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        logits = log_softmax(logits, axis=1)
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)
        if self.clip_bounds is not None:
            bounds = np.asarray(self.clip_bounds, dtype=np.float64)
            bounds.setflags(write=False)
            object.__setattr__(self, "clip_bounds", bounds)

    @property
    def n_states(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    def log_probs(self) -> np.ndarray:
        return self.logits

    def probs(self) -> np.ndarray:
        return np.exp(self.logits)

    def state_dist(self, state: int) -> DiscreteDistribution:
        return DiscreteDistribution(np.exp(self.logits[state]))

    def entropy(self) -> np.ndarray:
        p = self.probs()
        terms = np.where(p > 0.0, p * self.logits, 0.0)
        return -terms.sum(axis=1)


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for one training run.

    ``group_size`` is the number of rollouts per state per step.
    ``mini_steps`` repeats the inner fit against the same rollout batch
    (staleness experiments; 1 matches the analysis). A ``clip_headroom`` of
    math.inf disables the log-ratio envelope entirely.

    The default descent schedule is deliberately short: it leaves a
    measurable optimization residual (reported through ``eps_opt``), which
    is the regime the finite-sample analysis is about. Tests that need the
    regression subproblem solved exactly raise ``inner_steps``.
    """

    method: str
    tau: float
    group_size: int
    global_steps: int
    seed: int
    inner_steps: int = 15
    inner_step_size: float = 0.5
    mini_steps: int = 1
    clip_headroom: float = CLIP_HEADROOM

    def __post_init__(self) -> None:
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ValueError("tau must be positive and finite")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.global_steps < 1 or self.inner_steps < 1 or self.mini_steps < 1:
            raise ValueError("step counts must be >= 1")
        if self.inner_step_size <= 0.0:
            raise ValueError("inner_step_size must be positive")
        if not self.clip_headroom >= 1.0:
            raise ValueError("clip_headroom must be >= 1")


@dataclass(frozen=True)
class TrainStepRecord:
    step: int
    J: float
    emp_reward: float
    min_logratio: float
    max_logratio: float
    lambda_mean: float
    entropy: float
    eps_opt: float


@dataclass(frozen=True)
class TrainTrajectory:
    """Per-step records (row 0 is the initial policy) plus run metadata.

    ``state_expected_rewards`` keeps exact per-state accuracies at every
    step; only the aggregate records go to CSV. ``wall_clock`` stays out of
    both serializations so outputs are byte-stable across runs.

    ``min_logratio`` and ``max_logratio`` are nan on steps whose sampled
    batches carried no learning signal (all rewards constant within every
    group), since the update is the identity there and the step ratio has
    no defined scale. Row 0 likewise has nan for every sampled quantity.
    """

    records: tuple[TrainStepRecord, ...]
    config: TrainConfig
    instance_digest: str
    state_expected_rewards: np.ndarray
    final_policy: TabularPolicy
    wall_clock: float

    def to_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(_CSV_HEADER + "\n")
            for rec in self.records:
                values = (
                    rec.J,
                    rec.emp_reward,
                    rec.min_logratio,
                    rec.max_logratio,
                    rec.lambda_mean,
                    rec.entropy,
                    rec.eps_opt,
                )
                fh.write(",".join([str(rec.step)] + [repr(float(v)) for v in values]))
                fh.write("\n")

    def to_json(self, path: str) -> None:
        payload = {
            "config": asdict(self.config),
            "instance": self.instance_digest,
            "steps": len(self.records) - 1,
            "final_J": self.records[-1].J,
            "rng": "philox keyed by (seed, step * n_states + state)",
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def advantage_estimates(group_rewards: np.ndarray, kind: str, tau: float) -> np.ndarray:
    """Per-rollout advantages: standardized (grpo), leave-one-out mean
    baseline (loo), or the temperature-scaled leave-one-out log-partition
    baseline (part)."""
    rw = np.asarray(group_rewards, dtype=np.float64)
    if rw.ndim != 1 or rw.size < 2:
        raise ValueError("need a group of at least 2 rewards")
    if kind == "grpo":
        centered = rw - rw.mean()
        return centered / max(float(rw.std()), 1e-6)
    if kind == "loo":
        return rw - (rw.sum() - rw) / (rw.size - 1)
    if kind == "part":
        if tau <= 0.0:
            raise ValueError("tau must be positive")
        return rw - tau * (loo_logsumexp(rw / tau) - math.log(rw.size - 1))
    raise ValueError(f"unknown advantage kind {kind!r}")


def _clip_envelope(
    accuracies: np.ndarray, tau: float, variant: str, headroom: float
) -> np.ndarray | None:
    """Per-state (lo, hi) log-ratio envelope, widened by the headroom."""
    if not math.isfinite(headroom):
        return None
    out = np.empty((accuracies.size, 2))
    for s, p in enumerate(accuracies):
        bounds = log_ratio_bounds(float(np.clip(p, _P_CLAMP, 1.0 - _P_CLAMP)), tau, variant)
        out[s, 0] = -headroom * bounds.B
        out[s, 1] = headroom * bounds.B_plus
    return out


def _project_ratios(
    ratios: np.ndarray, logq: np.ndarray, envelope: np.ndarray
) -> np.ndarray:
    """Clip per-state log-ratios to the envelope while keeping each row a
    distribution: bisect the shift c in sum_y q e^{clip(s - c, lo, hi)} = 1,
    monotone in c and bracketed by construction (hi >= 0 >= lo). Rows already
    inside the envelope are untouched; the softmax parametrization keeps
    them normalized."""
    lo, hi = envelope[:, 0:1], envelope[:, 1:2]
    needs = ((ratios < lo) | (ratios > hi)).any(axis=1)
    if not needs.any():
        return ratios
    rows = np.flatnonzero(needs)
    s, ql = ratios[rows], logq[rows]
    lo, hi = lo[rows], hi[rows]
    c_lo = s.min(axis=1, keepdims=True) - hi
    c_hi = s.max(axis=1, keepdims=True) - lo
    for _ in range(100):
        c = 0.5 * (c_lo + c_hi)
        mass = np.exp(ql + np.clip(s - c, lo, hi)).sum(axis=1, keepdims=True)
        over = mass > 1.0
        c_lo = np.where(over, c, c_lo)
        c_hi = np.where(over, c_hi, c)
    out = ratios.copy()
    out[rows] = np.clip(s - 0.5 * (c_lo + c_hi), lo, hi)
    return out


def erm_fit(
    snapshot: TabularPolicy,
    batches: list[RolloutBatch],
    cfg: TrainConfig,
    *,
    rewards: list[RewardVector] | None = None,
    targets: list[np.ndarray] | None = None,
) -> TabularPolicy:
    """Fit log-ratios to the per-sample regression targets by projected
    full-batch gradient descent, starting from the snapshot.

    The clip envelope needs each state's current accuracy; it is exact when
    ``rewards`` is supplied (as the training loop does) and otherwise falls
    back to the batch's empirical mean reward. ``targets`` overrides the
    leave-one-out construction, aligned with each batch's samples (used for
    population-limit checks). Raises ArithmeticError naming the first state
    whose loss goes non-finite.
    """
    if cfg.method not in _TARGET_VARIANT:
        raise ValueError(f"erm_fit does not apply to method {cfg.method!r}")
    if len(batches) != snapshot.n_states:
        raise ValueError(f"{snapshot.n_states} states but {len(batches)} batches")
    variant = _TARGET_VARIANT[cfg.method]
    if targets is None:
        targets = [loo_targets(b, cfg.tau, variant) for b in batches]
    t = np.stack(targets)
    actions = np.stack([b.actions for b in batches])
    if actions.max() >= snapshot.n_actions:
        raise ValueError("batch contains an action outside the policy's support")
    if rewards is None:
        accuracies = np.array([b.rewards.mean() for b in batches])
    else:
        accuracies = np.array(
            [snapshot.probs()[s] @ rv.rewards for s, rv in enumerate(rewards)]
        )
    envelope = _clip_envelope(accuracies, cfg.tau, variant, cfg.clip_headroom)

    k = actions.shape[1]
    state_rows = np.arange(snapshot.n_states)[:, None]
    logq = snapshot.log_probs()
    z = logq.copy()
    loss = np.zeros(snapshot.n_states)
    for _ in range(cfg.inner_steps * cfg.mini_steps):
        logp = log_softmax(z, axis=1)
        err = np.take_along_axis(logp - logq, actions, axis=1) - t
        loss = 0.5 * np.mean(err * err, axis=1)
        if not np.all(np.isfinite(loss)):
            bad = int(np.flatnonzero(~np.isfinite(loss))[0])
            raise ArithmeticError(f"non-finite fit loss at state {bad}")
        grad = np.zeros_like(z)
        np.add.at(grad, (np.broadcast_to(state_rows, actions.shape), actions), err)
        grad = grad / k - err.mean(axis=1, keepdims=True) * np.exp(logp)
        z = z - cfg.inner_step_size * grad
        if envelope is not None:
            projected = _project_ratios(log_softmax(z, axis=1) - logq, logq, envelope)
            z = logq + projected
    return TabularPolicy(z, clip_bounds=envelope, fit_loss=float(loss.mean()))


def _policy_gradient_step(
    snapshot: TabularPolicy, batches: list[RolloutBatch], cfg: TrainConfig
) -> TabularPolicy:
    """One ascent step on the leave-one-out advantage policy gradient."""
    z = snapshot.log_probs().copy()
    probs = snapshot.probs()
    for s, batch in enumerate(batches):
        adv = advantage_estimates(batch.rewards, "loo", cfg.tau)
        grad = -adv.mean() * probs[s]
        np.add.at(grad, batch.actions, adv / batch.size)
        z[s] += cfg.inner_step_size * grad
    return TabularPolicy(z)


def _instance_digest(instance: BanditInstance) -> str:
    h = hashlib.sha256()
    for name, rv in instance.states:
        h.update(name.encode())
        h.update(b"\0")
        h.update(np.ascontiguousarray(rv.rewards).tobytes())
    h.update(np.ascontiguousarray(instance.state_weights.probs).tobytes())
    return h.hexdigest()


def train_loop(
    instance: BanditInstance, cfg: TrainConfig, *, init: TabularPolicy | None = None
) -> TrainTrajectory:
    """Run cfg.global_steps snapshot/sample/fit rounds and record metrics.

    Row t of the trajectory describes the policy after t steps; J and
    entropy are exact under the instance, emp_reward and the log-ratio
    extrema describe the update that produced the row (nan on row 0).
    lambda_mean averages the exact normalizing multiplier over states where
    the update is defined (pmd_mean only). Deterministic given cfg.seed: the
    rollout stream for (step t, state s) is keyed by t * n_states + s.
    """
    sizes = {rv.size for _, rv in instance.states}
    if len(sizes) != 1:
        raise ValueError("all states must share one action count")
    n_actions = sizes.pop()
    n_states = instance.n_states
    if init is None:
        init = TabularPolicy(np.zeros((n_states, n_actions)))
    if init.logits.shape != (n_states, n_actions):
        raise ValueError(
            f"initial policy shape {init.logits.shape} does not match instance"
        )
    reward_vectors = [rv for _, rv in instance.states]
    weights = instance.state_weights.probs
    reward_matrix = np.stack([rv.rewards for rv in reward_vectors])

    started = time.perf_counter()
    policy = init
    per_state = np.empty((cfg.global_steps + 1, n_states))
    per_state[0] = np.sum(policy.probs() * reward_matrix, axis=1)
    nan = float("nan")
    records = [
        TrainStepRecord(
            step=0,
            J=float(weights @ per_state[0]),
            emp_reward=nan,
            min_logratio=nan,
            max_logratio=nan,
            lambda_mean=nan,
            entropy=float(weights @ policy.entropy()),
            eps_opt=nan,
        )
    ]
    solver_cfg = PmdConfig(tau=cfg.tau)
    for step in range(cfg.global_steps):
        batches = [
            sample_rollouts(
                policy.state_dist(s),
                reward_vectors[s],
                cfg.group_size,
                cfg.seed,
                step * n_states + s,
            )
            for s in range(n_states)
        ]
        lambda_mean = nan
        if cfg.method == "rloo_pg":
            fitted = _policy_gradient_step(policy, batches, cfg)
            eps_opt = nan
        else:
            fitted = erm_fit(policy, batches, cfg, rewards=reward_vectors)
            eps_opt = fitted.fit_loss
        if cfg.method == "pmd_mean":
            lams = [
                pmd_mean_update(policy.state_dist(s), reward_vectors[s], solver_cfg).lam
                for s in range(n_states)
                if policy.state_dist(s).full_support()
            ]
            if lams:
                lambda_mean = float(np.mean(lams))
        ratio = fitted.log_probs() - policy.log_probs()
        if float(np.abs(ratio).max()) < 1e-12:
            # Identity update: every batch was reward-constant, so the
            # targets vanish and the step ratio is undefined-by-convention.
            min_lr, max_lr = nan, nan
        else:
            min_lr, max_lr = float(ratio.min()), float(ratio.max())
        per_state[step + 1] = np.sum(fitted.probs() * reward_matrix, axis=1)
        records.append(
            TrainStepRecord(
                step=step + 1,
                J=float(weights @ per_state[step + 1]),
                emp_reward=float(weights @ [b.rewards.mean() for b in batches]),
                min_logratio=min_lr,
                max_logratio=max_lr,
                lambda_mean=lambda_mean,
                entropy=float(weights @ fitted.entropy()),
                eps_opt=eps_opt,
            )
        )
        policy = fitted

    per_state.setflags(write=False)
    return TrainTrajectory(
        records=tuple(records),
        config=cfg,
        instance_digest=_instance_digest(instance),
        state_expected_rewards=per_state,
        final_policy=policy,
        wall_clock=time.perf_counter() - started,
    )


def binary_bandit(
    p0_values, weights=None
) -> tuple[BanditInstance, TabularPolicy]:
    """Two-action instance: action 0 pays 1, action 1 pays 0, and the
    initial policy picks action 0 with the given per-state probability."""
    p0 = np.asarray(p0_values, dtype=np.float64)
    if p0.ndim != 1 or p0.size == 0:
        raise ValueError("need a nonempty vector of initial accuracies")
    if np.any(p0 <= 0.0) or np.any(p0 >= 1.0):
        raise ValueError("initial accuracies must lie strictly inside (0, 1)")
    states = tuple(
        (f"s{i:02d}", RewardVector(np.array([1.0, 0.0]))) for i in range(p0.size)
    )
    if weights is None:
        weights = np.full(p0.size, 1.0 / p0.size)
    instance = BanditInstance(states, DiscreteDistribution(weights))
    init = TabularPolicy(np.column_stack([np.log(p0), np.log1p(-p0)]))
    return instance, init


def standard_training_instance(
    n_states: int = 20,
) -> tuple[BanditInstance, TabularPolicy]:
    """The 20-state benchmark: initial accuracies spread over [0.05, 0.3]."""
    return binary_bandit(np.linspace(0.05, 0.3, n_states))
