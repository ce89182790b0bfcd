"""Log-domain reductions shared by the solver, sampling, and trainer layers."""

from __future__ import annotations

import numpy as np


def logsumexp(x: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    """log(sum(exp(x))) with max-subtraction; tolerates -inf entries."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return s.item()
    return np.squeeze(s, axis=axis)


def log_mean_exp(x: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis] if axis is not None else x.size
    return logsumexp(x, axis=axis) - np.log(n)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-wise log-probabilities of a logit array."""
    logits = np.asarray(logits, dtype=np.float64)
    m = np.max(logits, axis=axis, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def loo_logsumexp(x: np.ndarray) -> np.ndarray:
    """Leave-one-out logsumexp: out[i] = log(sum_{j != i} exp(x[j])).

    Built from prefix/suffix logaddexp accumulations so the result stays
    accurate even when x[i] is the only dominant entry (subtracting
    exp(x[i]) from the full sum would cancel catastrophically there).
    Requires len(x) >= 2.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValueError("leave-one-out reduction needs at least 2 entries")
    prefix = np.logaddexp.accumulate(x)
    suffix = np.logaddexp.accumulate(x[::-1])[::-1]
    out = np.empty_like(x)
    out[0] = suffix[1]
    out[-1] = prefix[-2]
    if x.size > 2:
        out[1:-1] = np.logaddexp(prefix[:-2], suffix[2:])
    return out
