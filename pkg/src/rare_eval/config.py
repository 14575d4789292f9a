"""Experiment configuration: YAML file with documented defaults, strictly validated.

Unknown keys are rejected so typos fail loudly.  Command-line flags override
individual fields after the file is merged with the defaults below.
"""
from __future__ import annotations

import copy

import yaml

from .envs import AnalyticBernoulli, CliffWalk, EnvSpec

DEFAULTS: dict = {
    "master_seed": 0,
    "out_dir": "runs/out",
    "env": {
        "kind": "analytic_bernoulli",  # or "cliff_walk"
        "M": 16,
        # analytic_bernoulli parameters
        "s": 1.0,
        "gamma": 0.5,
        "beta": 8.0,
        "c_noise": 0.5,
        # cliff_walk parameters (M=12 is the usual size for this kind)
        "H": 64,
        "q_min": 0.05,
        "q_max": 0.45,
    },
    "trace": {
        "T_train": 100000,
        "noise_levels": [0.0, 0.1, 0.2, 0.3, 0.4],
        "keep_last_fraction": 0.5,
    },
    "avf": {
        "kind": "tabular",  # tabular | parametric | dnd
        "iterations": 4000,
        "step_size": 0.003,
        "batch_size": 256,
        "hidden": 32,
        "u_bins": 10,
        "pool_sigma": False,
        "K": 32,
        "embedding_width": 16,
        "initial_pseudocount": 1.0,
        "f_min": 1e-6,
        "holdout_fraction": 0.2,
    },
    "run": {
        "theta": [1.0, 0.0],  # [u, sigma] of the agent under evaluation
        "n": 1000,  # candidate-set size for the guided adversary
        "alpha": 0.5,  # proposal exponent for the guided estimator
        "T": 1000,  # episode budget for `estimate`
        "m": "exact",  # normalizer draws; "exact" enumerates the support
        "rho": [3.0],  # accuracy ratios for `curve`
        "budgets": [1000, 3000, 10000, 30000, 100000],
        "trials": 200,
        "k_min": 5,  # failures needed before the combined estimator trusts VMC
        "budget": 100000,  # episode cap for `search`
        "searches": 20,  # repetitions for `search`
        "adversary": "avf",  # vmc | avf | pr
        "estimator": "vmc",  # vmc | avf | combined
        "sampler": "auto",  # auto | loop | direct proposal sampling
        "ground_truth": "oracle",  # oracle | long_vmc (for `curve`)
        "ground_truth_episodes": 5000000,
        "trace_path": "",  # defaults to <out_dir>/trace.jsonl
        "model_path": "",  # defaults to <out_dir>/model.json
        "agents_u": [],  # checkpoint grid for `select`
        "agents_sigma": [],  # optional per-agent noise (defaults to 0)
        "select_estimators": ["vmc", "avf"],
    },
}

_SCALAR_TYPES = {bool: bool, int: (int,), float: (int, float), str: str}


def _check_types(merged, defaults, path=""):
    for key, default_value in defaults.items():
        value = merged[key]
        where = f"{path}.{key}" if path else key
        if isinstance(default_value, dict):
            if not isinstance(value, dict):
                raise ValueError(f"config field {where} must be a mapping")
            _check_types(value, default_value, where)
        elif isinstance(default_value, list):
            if not isinstance(value, list):
                raise ValueError(f"config field {where} must be a list")
        elif isinstance(default_value, bool):
            if not isinstance(value, bool):
                raise ValueError(f"config field {where} must be a boolean")
        elif isinstance(default_value, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"config field {where} must be an integer")
        elif isinstance(default_value, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"config field {where} must be a number")
            merged[key] = float(value)


def merge_config(overrides: dict | None) -> dict:
    """Defaults overlaid with the user's file; unknown keys are an error."""
    merged = copy.deepcopy(DEFAULTS)
    if overrides is None:
        overrides = {}

    def apply(dst, src, path=""):
        for key, value in src.items():
            where = f"{path}.{key}" if path else key
            if key not in dst:
                raise ValueError(f"unknown config key: {where}")
            if isinstance(dst[key], dict):
                if not isinstance(value, dict):
                    raise ValueError(f"config field {where} must be a mapping")
                apply(dst[key], value, where)
            else:
                dst[key] = value

    apply(merged, overrides)
    # `m` is either the string "exact" or an integer draw count
    m = merged["run"]["m"]
    if not (m == "exact" or (isinstance(m, int) and not isinstance(m, bool))):
        raise ValueError('run.m must be "exact" or an integer')
    _check_types(merged, DEFAULTS)
    return merged


def load_config(path: str | None) -> dict:
    if path is None:
        return merge_config({})
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("config file must contain a mapping at the top level")
    return merge_config(data)


def env_from_config(config: dict) -> EnvSpec:
    env = config["env"]
    if env["kind"] == "analytic_bernoulli":
        return AnalyticBernoulli(
            m=env["M"], s=env["s"], gamma=env["gamma"],
            beta=env["beta"], c_noise=env["c_noise"],
        )
    if env["kind"] == "cliff_walk":
        return CliffWalk(
            m=env["M"], horizon=env["H"], q_min=env["q_min"],
            q_max=env["q_max"], beta=env["beta"],
        )
    raise ValueError(f"unknown environment kind {env['kind']!r}")
