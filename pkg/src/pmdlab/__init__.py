"""pmdlab: a numerical laboratory for KL-regularized policy mirror descent.

Two tabular update rules are implemented and cross-verified: the exact
Boltzmann reweighting that regresses onto the partition-normalized target
(``part``), and its mean-baseline approximation whose closed form runs
through the Lambert W function (``mean``). The package provides exact
one-state solvers, contraction-rate and bound evaluators, leave-one-out
target estimation sweeps, a finite-sample training loop, and a CLI that
emits CSV/JSON artifacts for the plotting layer.
"""

__version__ = "0.1.0"

from pmdlab.dist import BanditInstance, DiscreteDistribution, RewardVector

__all__ = [
    "BanditInstance",
    "DiscreteDistribution",
    "RewardVector",
    "__version__",
]
