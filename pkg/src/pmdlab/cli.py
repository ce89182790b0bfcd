"""Command-line front end emitting deterministic CSV/JSON artifacts.

Subcommands
    exact      closed-form update diagnostics over a (p, tau) grid
    figures    figure-data files: partition gap, update log-ratios, the
               estimation-error grid, and its positive/negative sign split
    estimate   configurable estimation-error sweep
    train      one training run (trajectory CSV)

Configuration resolves in order: per-command defaults, an optional JSON
config file (--config), repeatable --set KEY=VALUE overrides (values parsed
as JSON, falling back to bare strings), then the --seed flag. Outputs land
in --out, else $PMDLAB_OUT, else the working directory. Every emitted file
gets a sibling <name>.manifest.json echoing the resolved config, seed,
package version, and the documented constant choices, so each artifact is
reproducible from its manifest alone. --jobs only adds workers; it never
changes output bytes and is therefore absent from manifests.

Exit codes: 0 on success, 2 for configuration errors (the message names the
offending key), 3 when a computation goes numerically bad.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from pmdlab import __version__
from pmdlab.contraction import (
    MISMATCH_CONSTANT,
    ONE_STEP_CONSTANT,
    eta_mean_asymptotic,
    eta_part_exact,
    log_ratio_bounds,
)
from pmdlab.dist import DiscreteDistribution, RewardVector
from pmdlab.sampling import estimation_error_sweep
from pmdlab.solvers import PmdConfig, lambda_bounds, pmd_mean_update, pmd_part_update
from pmdlab.trainer import CLIP_HEADROOM, TrainConfig, binary_bandit, train_loop

_EXACT_HEADER = (
    "p,tau,method,rho_plus,rho_minus,lambda,lambda_lo,lambda_hi,eta,B,B_plus,"
    "kkt_residual"
)
_FIG1_HEADER = "p,tau,tau_logZ,mean_reward"
_FIG2_HEADER = "p,tau,method,log_rho_plus,log_rho_minus"

_CONSTANTS = {
    "clip_headroom": CLIP_HEADROOM,
    "mismatch_bound_constant": MISMATCH_CONSTANT,
    "one_step_bound_constant": ONE_STEP_CONSTANT,
}

_RNG_NOTE = {
    "exact": "none (closed forms only)",
    "figures": "philox keyed by (seed, trial index) inside the estimation sweeps",
    "estimate": "philox keyed by (seed, trial index)",
    "train": "philox keyed by (seed, step * n_states + state)",
}

_DEFAULTS = {
    "exact": {
        "p_grid": [0.05, 0.1, 0.2, 0.3, 0.5],
        "tau_grid": [0.01, 0.05, 0.1, 1.0],
        "methods": ["mean", "part"],
        "seed": 0,
    },
    "figures": {
        "p_grid": [round(0.01 + 0.02 * i, 2) for i in range(50)],
        "fig1_tau_grid": [0.05, 0.1, 0.3, 1.0, 10.0],
        "fig2_tau": 0.1,
        "est_p_grid": [0.02, 0.05, 0.1, 0.2, 0.4],
        "est_n_grid": [4, 16, 64, 256, 1024],
        "sign_p_grid": [0.05, 0.1, 0.15, 0.2],
        "sign_n_grid": [64, 256],
        "tau": 0.05,
        "trials": 100,
        "delta": 0.05,
        "seed": 0,
    },
    "estimate": {
        "p_grid": [0.02, 0.05, 0.1, 0.2, 0.4],
        "n_grid": [4, 16, 64, 256, 1024],
        "tau": 0.05,
        "trials": 100,
        "delta": 0.05,
        "seed": 0,
    },
    "train": {
        "method": "pmd_mean",
        "tau": 0.05,
        "group_size": 8,
        "steps": 60,
        "inner_steps": 15,
        "inner_step_size": 0.5,
        "mini_steps": 1,
        "clip_headroom": CLIP_HEADROOM,
        "n_states": 20,
        "p_lo": 0.05,
        "p_hi": 0.3,
        "seed": 0,
    },
}


class ConfigError(Exception):
    """Rejected configuration; the message starts with the offending key."""

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


def _as_float(key: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    return float(value)


def _as_int(key: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    return value


def _float_list(cfg: dict, key: str) -> list[float]:
    if not isinstance(cfg[key], list):
        raise ConfigError(key, f"expected a list, got {cfg[key]!r}")
    return [_as_float(key, v) for v in cfg[key]]


def _probability_list(cfg: dict, key: str) -> list[float]:
    values = _float_list(cfg, key)
    for v in values:
        if not 0.0 < v < 1.0:
            raise ConfigError(key, f"entries must lie strictly inside (0, 1), got {v!r}")
    return values


def _positive_list(cfg: dict, key: str) -> list[float]:
    values = _float_list(cfg, key)
    for v in values:
        if not (v > 0.0 and math.isfinite(v)):
            raise ConfigError(key, f"entries must be positive and finite, got {v!r}")
    return values


def _count_list(cfg: dict, key: str, minimum: int) -> list[int]:
    if not isinstance(cfg[key], list):
        raise ConfigError(key, f"expected a list, got {cfg[key]!r}")
    values = [_as_int(key, v) for v in cfg[key]]
    for v in values:
        if v < minimum:
            raise ConfigError(key, f"entries must be >= {minimum}, got {v}")
    return values


def _probability(cfg: dict, key: str) -> float:
    value = _as_float(key, cfg[key])
    if not 0.0 < value < 1.0:
        raise ConfigError(key, f"must lie strictly inside (0, 1), got {value!r}")
    return value


def _positive(cfg: dict, key: str) -> float:
    value = _as_float(key, cfg[key])
    if not (value > 0.0 and math.isfinite(value)):
        raise ConfigError(key, f"must be positive and finite, got {value!r}")
    return value


def _count(cfg: dict, key: str, minimum: int) -> int:
    value = _as_int(key, cfg[key])
    if value < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {value}")
    return value


def _fmt(value) -> str:
    return repr(float(value))


def _write_rows(path: str, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _write_manifest(path: str, command: str, cfg: dict, result: dict | None = None) -> str:
    payload = {
        "command": command,
        "config": cfg,
        "seed": cfg["seed"],
        "version": __version__,
        "constants": _CONSTANTS,
        "rng": _RNG_NOTE[command],
    }
    if result:
        payload["result"] = result
    manifest = path + ".manifest.json"
    with open(manifest, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _binary_instance(p: float) -> tuple[DiscreteDistribution, RewardVector]:
    return DiscreteDistribution(np.array([p, 1.0 - p])), RewardVector(
        np.array([1.0, 0.0])
    )


def cmd_exact(cfg: dict, outdir: str, jobs: int) -> list[str]:
    p_grid = _probability_list(cfg, "p_grid")
    tau_grid = _positive_list(cfg, "tau_grid")
    methods = cfg["methods"]
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods", f"expected a nonempty list, got {methods!r}")
    for method in methods:
        if method not in ("mean", "part"):
            raise ConfigError("methods", f"unknown method {method!r}")
    rows = []
    for p in p_grid:
        for tau in tau_grid:
            q, r = _binary_instance(p)
            solver_cfg = PmdConfig(tau=tau)
            for method in methods:
                if method == "mean":
                    res = pmd_mean_update(q, r, solver_cfg)
                    lam_lo, lam_hi = lambda_bounds(q, r, tau)
                    eta = eta_mean_asymptotic(p, tau)
                else:
                    res = pmd_part_update(q, r, solver_cfg)
                    lam_lo = lam_hi = 0.0
                    eta = eta_part_exact(p, tau)
                bounds = log_ratio_bounds(p, tau, method)
                rows.append(
                    [_fmt(p), _fmt(tau), method]
                    + [
                        _fmt(v)
                        for v in (
                            math.exp(float(res.log_ratios.max())),
                            math.exp(float(res.log_ratios.min())),
                            res.lam,
                            lam_lo,
                            lam_hi,
                            eta,
                            bounds.B,
                            bounds.B_plus,
                            res.kkt_residual,
                        )
                    ]
                )
    path = os.path.join(outdir, "exact.csv")
    _write_rows(path, _EXACT_HEADER, rows)
    return [path, _write_manifest(path, "exact", cfg)]


def cmd_figures(cfg: dict, outdir: str, jobs: int) -> list[str]:
    p_grid = _probability_list(cfg, "p_grid")
    fig1_taus = _positive_list(cfg, "fig1_tau_grid")
    fig2_tau = _positive(cfg, "fig2_tau")
    est_p = _probability_list(cfg, "est_p_grid")
    est_n = _count_list(cfg, "est_n_grid", 2)
    sign_p = _probability_list(cfg, "sign_p_grid")
    sign_n = _count_list(cfg, "sign_n_grid", 2)
    tau = _positive(cfg, "tau")
    trials = _count(cfg, "trials", 1)
    delta = _probability(cfg, "delta")
    seed = cfg["seed"]
    written = []

    # scaled log-partition vs its mean-reward approximation; the log of
    # 1 + (e^{1/tau} - 1) p is taken as logaddexp(log(1-p), 1/tau + log p)
    # so small temperatures cannot overflow
    rows = []
    for t in fig1_taus:
        for p in p_grid:
            tau_log_z = t * float(np.logaddexp(math.log1p(-p), 1.0 / t + math.log(p)))
            rows.append([_fmt(p), _fmt(t), _fmt(tau_log_z), _fmt(p)])
    path = os.path.join(outdir, "fig1_partition_vs_mean.csv")
    _write_rows(path, _FIG1_HEADER, rows)
    written += [path, _write_manifest(path, "figures", cfg)]

    rows = []
    solver_cfg = PmdConfig(tau=fig2_tau)
    for p in p_grid:
        q, r = _binary_instance(p)
        for method, update in (("mean", pmd_mean_update), ("part", pmd_part_update)):
            res = update(q, r, solver_cfg)
            rows.append(
                [
                    _fmt(p),
                    _fmt(fig2_tau),
                    method,
                    _fmt(res.log_ratios.max()),
                    _fmt(res.log_ratios.min()),
                ]
            )
    path = os.path.join(outdir, "fig2_log_ratios.csv")
    _write_rows(path, _FIG2_HEADER, rows)
    written += [path, _write_manifest(path, "figures", cfg)]

    for name, grid_p, grid_n in (
        ("fig5_estimation.csv", est_p, est_n),
        ("fig6_signs.csv", sign_p, sign_n),
    ):
        report = estimation_error_sweep(
            grid_p, grid_n, tau, trials, delta, seed=seed, jobs=jobs
        )
        path = os.path.join(outdir, name)
        report.to_csv(path)
        written += [path, _write_manifest(path, "figures", cfg)]
    return written


def cmd_estimate(cfg: dict, outdir: str, jobs: int) -> list[str]:
    report = estimation_error_sweep(
        _probability_list(cfg, "p_grid"),
        _count_list(cfg, "n_grid", 2),
        _positive(cfg, "tau"),
        _count(cfg, "trials", 1),
        _probability(cfg, "delta"),
        seed=cfg["seed"],
        jobs=jobs,
    )
    path = os.path.join(outdir, "estimate.csv")
    report.to_csv(path)
    return [path, _write_manifest(path, "estimate", cfg)]


def cmd_train(cfg: dict, outdir: str, jobs: int) -> list[str]:
    headroom = _as_float("clip_headroom", cfg["clip_headroom"])
    if not headroom >= 1.0:
        raise ConfigError("clip_headroom", f"must be >= 1, got {headroom!r}")
    p_lo = _probability(cfg, "p_lo")
    p_hi = _probability(cfg, "p_hi")
    if p_hi < p_lo:
        raise ConfigError("p_hi", f"must be >= p_lo, got {p_hi!r} < {p_lo!r}")
    if cfg["method"] not in ("pmd_mean", "pmd_part", "rloo_pg"):
        raise ConfigError("method", f"unknown method {cfg['method']!r}")
    try:
        train_cfg = TrainConfig(
            method=cfg["method"],
            tau=_positive(cfg, "tau"),
            group_size=_count(cfg, "group_size", 2),
            global_steps=_count(cfg, "steps", 1),
            seed=cfg["seed"],
            inner_steps=_count(cfg, "inner_steps", 1),
            inner_step_size=_positive(cfg, "inner_step_size"),
            mini_steps=_count(cfg, "mini_steps", 1),
            clip_headroom=headroom,
        )
    except ValueError as exc:
        raise ConfigError("train", str(exc))
    instance, init = binary_bandit(
        np.linspace(p_lo, p_hi, _count(cfg, "n_states", 1))
    )
    trajectory = train_loop(instance, train_cfg, init=init)
    path = os.path.join(outdir, "train.csv")
    trajectory.to_csv(path)
    result = {
        "instance_digest": trajectory.instance_digest,
        "final_J": trajectory.records[-1].J,
    }
    return [path, _write_manifest(path, "train", cfg, result=result)]


_COMMANDS = {
    "exact": cmd_exact,
    "figures": cmd_figures,
    "estimate": cmd_estimate,
    "train": cmd_train,
}


def _parse_override(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(text, "overrides take the form KEY=VALUE")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def _resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS[command])
    if args.config is not None:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError("config", str(exc))
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError("config", "config file must hold a JSON object")
        items = list(loaded.items())
    else:
        items = []
    for text in args.set or []:
        items.append(_parse_override(text))
    for key, value in items:
        if key not in cfg:
            raise ConfigError(key, f"unknown key for command {command!r}")
        cfg[key] = value
    if args.seed is not None:
        cfg["seed"] = args.seed
    if _as_int("seed", cfg["seed"]) < 0:
        raise ConfigError("seed", f"must be >= 0, got {cfg['seed']}")
    return cfg


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pmdlab",
        description="Deterministic CSV/JSON artifacts from the update solvers, "
        "bound evaluators, estimation sweeps, and training loop.",
    )
    parser.add_argument(
        "--version", action="version", version=f"pmdlab {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("exact", "closed-form update diagnostics over a (p, tau) grid"),
        ("figures", "emit all figure-data CSVs"),
        ("estimate", "leave-one-out estimation-error sweep"),
        ("train", "run the training loop and emit its trajectory"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", help="JSON file with command parameters")
        cmd.add_argument("--seed", type=int, help="master seed override")
        cmd.add_argument(
            "--out", help="output directory (default: $PMDLAB_OUT, else .)"
        )
        cmd.add_argument(
            "--jobs",
            type=int,
            default=1,
            help="parallel workers; never changes output bytes",
        )
        cmd.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override one config key (value parsed as JSON)",
        )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("jobs", f"must be >= 1, got {args.jobs}")
        cfg = _resolve_config(args.command, args)
        outdir = args.out or os.environ.get("PMDLAB_OUT") or "."
        try:
            os.makedirs(outdir, exist_ok=True)
        except OSError as exc:
            raise ConfigError("out", f"cannot create output directory: {exc}")
        written = _COMMANDS[args.command](cfg, outdir, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: out: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, ValueError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
