"""Historical training data: a schedule of episodes from weak to strong agents.

A training run is simulated (not learned): iteration ``t`` of ``T`` uses an
agent with progress ``u = t/T`` and an exploration-noise level cycled from a
fixed list, runs one episode from a random initial condition, and records the
outcome.  The resulting trace is the raw material for training failure
predictors and for the replay-based adversary.

Traces persist as JSON Lines, one record per line:
``{"t": int, "x": int, "u": float, "sigma": float, "failed": 0|1}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .envs import SIGMA_MAX, EnvSpec, sample_initial_conditions

DEFAULT_NOISE_LEVELS = (0.0, 0.1, 0.2, 0.3, 0.4)
DEFAULT_KEEP_LAST_FRACTION = 0.5


@dataclass(frozen=True)
class EpisodeRecord:
    t: int
    x: int
    u: float
    sigma: float
    failed: int


@dataclass
class TrainingTrace:
    """Ordered episode records; ``u`` is non-decreasing along the trace."""

    spec: EnvSpec
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    sigma: np.ndarray
    failed: np.ndarray
    noise_levels: tuple = DEFAULT_NOISE_LEVELS
    t_train: int = 0

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def __getitem__(self, i: int) -> EpisodeRecord:
        return EpisodeRecord(
            t=int(self.t[i]),
            x=int(self.x[i]),
            u=float(self.u[i]),
            sigma=float(self.sigma[i]),
            failed=int(self.failed[i]),
        )

    @property
    def failure_count(self) -> int:
        return int(self.failed.sum())


def noise_schedule(t_train: int, noise_levels) -> np.ndarray:
    """Noise level for iterations 1..t_train: ``levels[t mod len(levels)]``."""
    levels = np.asarray(noise_levels, dtype=np.float64)
    t = np.arange(1, t_train + 1, dtype=np.int64)
    return levels[t % len(levels)]


def simulate_training_run(
    spec: EnvSpec,
    t_train: int,
    noise_levels,
    rng: np.random.Generator,
) -> TrainingTrace:
    """Generate the historical data a training run would emit, in schedule order."""
    if t_train < 1:
        raise ValueError("t_train must be >= 1")
    levels = tuple(float(s) for s in noise_levels)
    if not levels:
        raise ValueError("noise_levels must be non-empty")
    for s in levels:
        if not 0.0 <= s <= SIGMA_MAX:
            raise ValueError(f"noise level {s} outside [0, {SIGMA_MAX}]")

    t = np.arange(1, t_train + 1, dtype=np.int64)
    u = t / float(t_train)
    sigma = noise_schedule(t_train, levels)
    xs = sample_initial_conditions(spec, t_train, rng)
    failed = _run_schedule(spec, xs, u, sigma, rng)

    return TrainingTrace(
        spec=spec, t=t, x=xs, u=u, sigma=sigma, failed=failed,
        noise_levels=levels, t_train=t_train,
    )


def _run_schedule(spec, xs, u, sigma, rng) -> np.ndarray:
    from . import _kernels

    n = xs.shape[0]
    failed = np.empty(n, dtype=np.uint8)
    if spec.kind == "analytic_bernoulli":
        # episode outcome is a single uniform compared to the per-record rate
        gamma_pow = spec.s * spec.gamma ** (xs.astype(np.float64))
        rate = np.minimum(gamma_pow * (np.exp(-spec.beta * u) + spec.c_noise * sigma), 1.0)
        failed[:] = rng.random(n) < rate
        return failed
    chunk = 1 << 14
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        uniforms = rng.random((hi - lo, spec.horizon))
        down = spec.q_min + (spec.q_max - spec.q_min) * np.exp(-spec.beta * u[lo:hi])
        failed[lo:hi], _ = _kernels.walk_episodes(xs[lo:hi], down, spec.horizon, spec.m, uniforms)
    return failed


def filter_trace(trace: TrainingTrace, keep_last_fraction: float) -> TrainingTrace:
    """Keep exactly the last ``ceil(keep_last_fraction * n)`` records."""
    if len(trace) == 0:
        raise ValueError("cannot filter an empty trace")
    if not 0.0 < keep_last_fraction <= 1.0:
        raise ValueError("keep_last_fraction must be in (0, 1]")
    keep = math.ceil(keep_last_fraction * len(trace))
    return TrainingTrace(
        spec=trace.spec,
        t=trace.t[-keep:].copy(),
        x=trace.x[-keep:].copy(),
        u=trace.u[-keep:].copy(),
        sigma=trace.sigma[-keep:].copy(),
        failed=trace.failed[-keep:].copy(),
        noise_levels=trace.noise_levels,
        t_train=trace.t_train,
    )


def subset_trace(trace: TrainingTrace, indices) -> TrainingTrace:
    """New trace holding the given rows (in the given order)."""
    idx = np.asarray(indices, dtype=np.int64)
    return TrainingTrace(
        spec=trace.spec,
        t=trace.t[idx].copy(),
        x=trace.x[idx].copy(),
        u=trace.u[idx].copy(),
        sigma=trace.sigma[idx].copy(),
        failed=trace.failed[idx].copy(),
        noise_levels=trace.noise_levels,
        t_train=trace.t_train,
    )


def save_trace_jsonl(trace: TrainingTrace, path) -> None:
    from .outputs import write_jsonl

    records = (
        {"t": int(trace.t[i]), "x": int(trace.x[i]), "u": float(trace.u[i]),
         "sigma": float(trace.sigma[i]), "failed": int(trace.failed[i])}
        for i in range(len(trace))
    )
    write_jsonl(path, records)


def load_trace_jsonl(path, spec: EnvSpec, noise_levels=None) -> TrainingTrace:
    ts, xs, us, sigmas, fails = [], [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            ts.append(rec["t"])
            xs.append(rec["x"])
            us.append(rec["u"])
            sigmas.append(rec["sigma"])
            fails.append(rec["failed"])
    if noise_levels is None:
        noise_levels = tuple(sorted(set(sigmas))) or DEFAULT_NOISE_LEVELS
    return TrainingTrace(
        spec=spec,
        t=np.asarray(ts, dtype=np.int64),
        x=np.asarray(xs, dtype=np.int64),
        u=np.asarray(us, dtype=np.float64),
        sigma=np.asarray(sigmas, dtype=np.float64),
        failed=np.asarray(fails, dtype=np.uint8),
        noise_levels=tuple(noise_levels),
        t_train=int(max(ts)) if ts else 0,
    )
