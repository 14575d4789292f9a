"""Command-line experiment runner.

    rare-eval <subcommand> --config experiment.yaml [--seed N] [--out DIR] ...

Subcommands: ``trace`` (generate historical data), ``train-avf`` (fit a
failure predictor), ``search`` (run an adversary repeatedly), ``estimate``
(one risk estimate), ``curve`` (reliability curves), ``select`` (pick the
best agent from a checkpoint family).  All outputs are a pure function of
(config, seed): reruns are byte-identical, for any ``--workers`` value.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .avf import AvfTrainConfig, evaluate_avf, load_model, save_model, train_avf
from .config import env_from_config, load_config
from .envs import AgentParams
from .estimators import (
    avf_is_estimate,
    combined_estimate,
    long_vmc_ground_truth,
    reliability_curves,
    vmc_estimate,
)
from .oracle import exact_risk
from .outputs import atomic_write_text, config_hash, write_csv, write_jsonl
from .rngs import seed_sequence, stream
from .search import avf_search, pr_search, vmc_search
from .selection import selection_experiment
from .traces import filter_trace, load_trace_jsonl, save_trace_jsonl, simulate_training_run, subset_trace

SUBCOMMANDS = ("trace", "train-avf", "search", "estimate", "curve", "select")


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    tool_version: str
    config_hash: str
    master_seed: int
    stage_seeds: dict
    wall_clock_s: float
    outputs: list

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "stage_seeds": self.stage_seeds,
            "wall_clock_s": self.wall_clock_s,
            "outputs": self.outputs,
        }


def _out_path(config: dict, name: str) -> str:
    return f"{config['out_dir'].rstrip('/')}/{name}"


def _stage_key(config: dict, *keys) -> list:
    return list(seed_sequence(config["master_seed"], *keys).entropy)


def _theta(config: dict) -> AgentParams:
    u, sigma = config["run"]["theta"]
    return AgentParams(u=float(u), sigma=float(sigma))


def _trace_path(config: dict) -> str:
    return config["run"]["trace_path"] or _out_path(config, "trace.jsonl")


def _model_path(config: dict) -> str:
    return config["run"]["model_path"] or _out_path(config, "model.json")


def _cmd_trace(config: dict, workers: int) -> tuple[dict, list]:
    spec = env_from_config(config)
    trace_cfg = config["trace"]
    gen = stream(config["master_seed"], "trace")
    trace = simulate_training_run(
        spec, trace_cfg["T_train"], trace_cfg["noise_levels"], gen
    )
    path = _out_path(config, "trace.jsonl")
    save_trace_jsonl(trace, path)
    return {"trace": _stage_key(config, "trace")}, [path]


def _cmd_train_avf(config: dict, workers: int) -> tuple[dict, list]:
    spec = env_from_config(config)
    avf_cfg = config["avf"]
    trace = load_trace_jsonl(_trace_path(config), spec, config["trace"]["noise_levels"])
    trace = filter_trace(trace, config["trace"]["keep_last_fraction"])

    holdout_fraction = avf_cfg["holdout_fraction"]
    holdout = None
    if holdout_fraction > 0.0 and len(trace) >= 10:
        n_hold = max(1, int(round(holdout_fraction * len(trace))))
        perm = stream(config["master_seed"], "holdout").permutation(len(trace))
        hold_idx = np.sort(perm[:n_hold])
        train_idx = np.sort(perm[n_hold:])
        holdout = subset_trace(trace, hold_idx)
        trace = subset_trace(trace, train_idx)

    train_cfg = AvfTrainConfig(
        kind=avf_cfg["kind"],
        iterations=avf_cfg["iterations"],
        step_size=avf_cfg["step_size"],
        batch_size=avf_cfg["batch_size"],
        hidden=avf_cfg["hidden"],
        u_bins=avf_cfg["u_bins"],
        pool_sigma=avf_cfg["pool_sigma"],
        k_neighbors=avf_cfg["K"],
        embedding_width=avf_cfg["embedding_width"],
        initial_pseudocount=avf_cfg["initial_pseudocount"],
        f_min=avf_cfg["f_min"],
        seed=config["master_seed"],
    )
    model = train_avf(trace, train_cfg)
    model_path = _out_path(config, "model.json")
    save_model(model, model_path)
    outputs = [model_path]
    if holdout is not None:
        report = evaluate_avf(model, holdout)
        eval_path = _out_path(config, "avf_eval.json")
        atomic_write_text(eval_path, json.dumps({
            "cross_entropy": float(report.cross_entropy),
            "n": report.n,
            "calibration": [
                {"count": r.count,
                 "mean_predicted": float(r.mean_predicted),
                 "failure_rate": float(r.failure_rate)}
                for r in report.calibration
            ],
        }, default=float))
        outputs.append(eval_path)
    return {"train-avf": _stage_key(config, "train-avf")}, outputs


def _cmd_search(config: dict, workers: int) -> tuple[dict, list]:
    spec = env_from_config(config)
    run = config["run"]
    theta = _theta(config)
    adversary = run["adversary"]
    model = load_model(_model_path(config)) if adversary == "avf" else None
    trace = None
    if adversary == "pr":
        trace = load_trace_jsonl(_trace_path(config), spec, config["trace"]["noise_levels"])
    rows = []
    for rep in range(run["searches"]):
        gen = stream(config["master_seed"], "search", rep)
        if adversary == "vmc":
            res = vmc_search(spec, theta, run["budget"], gen)
        elif adversary == "avf":
            res = avf_search(spec, theta, model, run["n"], run["budget"], gen)
        elif adversary == "pr":
            res = pr_search(spec, theta, trace, run["budget"], gen)
        else:
            raise ValueError(f"unknown adversary {adversary!r}")
        rows.append({
            "adversary": adversary,
            "seed": rep,
            "found": bool(res.found),
            "episodes_used": res.episodes_used,
            "fallback_used": bool(res.fallback_used),
        })
    path = _out_path(config, "search.jsonl")
    write_jsonl(path, rows)
    misses = sum(1 for r in rows if not r["found"])
    if misses:
        print(
            f"warning: {misses}/{len(rows)} searches exhausted the budget without a "
            "failure (absence of failures is a valid finding)",
            file=sys.stderr,
        )
    return {"search": _stage_key(config, "search")}, [path]


def _estimate_once(config: dict, spec, theta, estimator: str, t: int, gen):
    run = config["run"]
    z_mode = run["m"]
    if estimator == "vmc":
        return vmc_estimate(spec, theta, t, gen)
    model = load_model(_model_path(config))
    if estimator == "avf":
        return avf_is_estimate(
            spec, theta, model, run["alpha"], t, gen,
            z_mode=z_mode, sampler=run["sampler"],
        )
    if estimator == "combined":
        return combined_estimate(
            spec, theta, model, run["alpha"], t, gen,
            k_min=run["k_min"], z_mode=z_mode, sampler=run["sampler"],
        )
    raise ValueError(f"unknown estimator {estimator!r}")


def _cmd_estimate(config: dict, workers: int) -> tuple[dict, list]:
    spec = env_from_config(config)
    run = config["run"]
    gen = stream(config["master_seed"], "estimate")
    report = _estimate_once(config, spec, _theta(config), run["estimator"], run["T"], gen)
    path = _out_path(config, "estimate.jsonl")
    write_jsonl(path, [report.to_json_dict() | {"seed": config["master_seed"]}])
    return {"estimate": _stage_key(config, "estimate")}, [path]


def _cmd_curve(config: dict, workers: int) -> tuple[dict, list]:
    spec = env_from_config(config)
    run = config["run"]
    theta = _theta(config)
    if run["ground_truth"] == "oracle":
        p_true = exact_risk(spec, theta)
    elif run["ground_truth"] == "long_vmc":
        p_true = long_vmc_ground_truth(
            spec, theta, run["ground_truth_episodes"],
            stream(config["master_seed"], "ground-truth"),
        )
    else:
        raise ValueError(f"unknown ground truth mode {run['ground_truth']!r}")
    model = None
    if run["estimator"] in ("avf", "combined"):
        model = load_model(_model_path(config))
    curves = reliability_curves(
        run["estimator"], spec, theta, p_true, run["rho"], run["budgets"],
        run["trials"], config["master_seed"],
        model=model, alpha=run["alpha"], z_mode=run["m"], sampler=run["sampler"],
        k_min=run["k_min"], workers=workers,
    )
    rows = []
    for curve in curves:
        for budget, miss, se in zip(curve.budgets, curve.miss_fraction, curve.stderr):
            rows.append((budget, miss, se, curve.rho, curve.estimator, curve.trials))
    path = _out_path(config, "curve.csv")
    write_csv(path, ["budget", "miss_fraction", "stderr", "rho", "estimator", "trials"], rows)
    return {"curve": _stage_key(config, "curve")}, [path]


def _cmd_select(config: dict, workers: int) -> tuple[dict, list]:
    spec = env_from_config(config)
    run = config["run"]
    if not run["agents_u"]:
        raise ValueError("run.agents_u must list the candidate agents for `select`")
    sigmas = run["agents_sigma"] or [0.0] * len(run["agents_u"])
    if len(sigmas) != len(run["agents_u"]):
        raise ValueError("run.agents_sigma must match run.agents_u in length")
    agents = [AgentParams(u=float(u), sigma=float(s)) for u, s in zip(run["agents_u"], sigmas)]
    configs = []
    for name in run["select_estimators"]:
        cfg = {"name": name}
        if name in ("avf", "combined"):
            cfg["model"] = load_model(_model_path(config))
            cfg["alpha"] = run["alpha"]
            cfg["z_mode"] = run["m"]
            cfg["sampler"] = run["sampler"]
            cfg["k_min"] = run["k_min"]
        configs.append(cfg)
    results = selection_experiment(
        spec, agents, configs, run["budgets"], run["trials"],
        config["master_seed"], workers=workers,
    )
    rows = []
    for name in run["select_estimators"]:
        for point in results[name]:
            rows.append((point.budget, name, point.mean, point.min, point.max))
    path = _out_path(config, "selection.csv")
    write_csv(
        path,
        ["budget", "estimator", "robustness_mean", "robustness_min", "robustness_max"],
        rows,
    )
    return {"select": _stage_key(config, "select")}, [path]


_HANDLERS = {
    "trace": _cmd_trace,
    "train-avf": _cmd_train_avf,
    "search": _cmd_search,
    "estimate": _cmd_estimate,
    "curve": _cmd_curve,
    "select": _cmd_select,
}


def run_subcommand(name: str, config: dict, workers: int = 1) -> RunManifest:
    """Execute one pipeline stage and write its outputs plus a manifest."""
    if name not in _HANDLERS:
        raise ValueError(f"unknown subcommand {name!r}")
    start = time.perf_counter()
    stage_seeds, outputs = _HANDLERS[name](config, workers)
    manifest = RunManifest(
        subcommand=name,
        tool_version=__version__,
        config_hash=config_hash(config),
        master_seed=config["master_seed"],
        stage_seeds=stage_seeds,
        wall_clock_s=time.perf_counter() - start,
        outputs=outputs,
    )
    atomic_write_text(
        _out_path(config, f"manifest-{name}.json"),
        json.dumps(manifest.to_dict(), indent=2),
    )
    return manifest


def _apply_overrides(config: dict, args: argparse.Namespace) -> dict:
    if args.seed is not None:
        config["master_seed"] = args.seed
    if args.out is not None:
        config["out_dir"] = args.out
    run = config["run"]
    if args.alpha is not None:
        run["alpha"] = args.alpha
    if args.n is not None:
        run["n"] = args.n
    if args.rho is not None:
        run["rho"] = [float(v) for v in args.rho.split(",")]
    if args.budget is not None:
        run["budget"] = args.budget
    if args.budgets is not None:
        run["budgets"] = [int(v) for v in args.budgets.split(",")]
    if args.trials is not None:
        run["trials"] = args.trials
    if args.adversary is not None:
        run["adversary"] = args.adversary
    if args.estimator is not None:
        run["estimator"] = args.estimator
    if args.model is not None:
        run["model_path"] = args.model
    if args.trace_file is not None:
        run["trace_path"] = args.trace_file
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rare-eval",
        description="Failure search and rare-event risk estimation for stochastic policies.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--rho", default=None, help="comma-separated ratios")
        p.add_argument("--budget", type=int, default=None)
        p.add_argument("--budgets", default=None, help="comma-separated budgets")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--adversary", choices=["vmc", "avf", "pr"], default=None)
        p.add_argument("--estimator", choices=["vmc", "avf", "combined"], default=None)
        p.add_argument("--model", default=None, help="model file override")
        p.add_argument("--trace-file", default=None, help="trace file override")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _apply_overrides(load_config(args.config), args)
        manifest = run_subcommand(args.subcommand, config, workers=args.workers)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in manifest.outputs:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
