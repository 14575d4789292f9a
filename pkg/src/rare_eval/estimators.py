"""Failure-probability estimators and their reliability-curve methodology.

``vmc_estimate``
    Plain Monte Carlo: average failure indicator over draws from the
    environment's start distribution.

``avf_is_estimate``
    Importance sampling guided by a failure predictor ``f``: initial
    conditions are rejection-sampled with acceptance probability
    ``f(x)**alpha`` (so the proposal density is proportional to
    ``f**alpha * p_x``), one episode is run per accepted condition, and the
    weighted average ``Z * mean(C / f**alpha)`` is returned with the
    normalizer ``Z = E[f**alpha]`` computed by exact enumeration over the
    discrete support (or estimated from ``m`` fresh draws).  The estimate is
    unbiased for any predictor bounded away from zero and any ``alpha > 0``;
    ``alpha = 1/2`` minimizes variance when the predictor is exact.
    Rejections cost no episodes, so ``episodes == T`` always.

``combined_estimate``
    Runs both on half budgets and returns the plain Monte Carlo answer when
    it saw at least ``k_min`` failures, else the importance-sampling answer.
    This caps the worst case at a factor-2 slowdown over plain Monte Carlo.

``reliability_curve(s)``
    For each episode budget, repeat an estimator many times and report the
    fraction of runs whose estimate falls outside ``(p/rho, p*rho)``.

Proposal sampling has two interchangeable modes: a literal rejection loop,
and a direct mode that draws accepted conditions from the (exactly computed)
acceptance distribution with the rejection count drawn from the matching
negative binomial.  The two produce identically distributed results; ``auto``
switches to direct when the expected number of proposals is impractical.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .avf import AvfModel
from .envs import (
    AgentParams,
    EnvSpec,
    initial_distribution,
    run_episode_batch,
    run_episode_indices,
    sample_initial_conditions,
)
from .rngs import as_generator, parallel_map, stream

_REJECTION_CHUNK = 1 << 16
# beyond this many expected proposals, `auto` switches to direct sampling
_LOOP_PROPOSAL_LIMIT = 20_000_000


@dataclass(frozen=True)
class EstimateReport:
    p_hat: float
    episodes: int
    estimator: str
    seed: int | None = None
    rejected_proposals: int | None = None
    z_alpha: float | None = None
    branch: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "p_hat": self.p_hat,
            "episodes": self.episodes,
            "rejected_proposals": self.rejected_proposals,
            "z_alpha": self.z_alpha,
            "seed": self.seed,
            "branch": self.branch,
        }


def _vmc_failures(spec, theta, t, gen) -> int:
    failures = 0
    chunk = 1 << 17
    for lo in range(0, t, chunk):
        k = min(chunk, t - lo)
        xs = sample_initial_conditions(spec, k, gen)
        failed, _ = run_episode_batch(spec, xs, theta, gen)
        failures += int(failed.sum())
    return failures


def vmc_estimate(spec: EnvSpec, theta: AgentParams, t: int, rng) -> EstimateReport:
    """Average failure indicator over ``t`` episodes from the start distribution."""
    if t < 1:
        raise ValueError("episode budget t must be >= 1")
    gen, seed = as_generator(rng)
    failures = _vmc_failures(spec, theta, t, gen)
    return EstimateReport(p_hat=failures / t, episodes=t, estimator="vmc", seed=seed)


def _accept_table(model: AvfModel, spec: EnvSpec, theta: AgentParams, alpha: float) -> tuple[np.ndarray, float]:
    f_table = model.state_table(spec, theta)
    if f_table.min() <= 0.0:
        raise ValueError("predictor must be bounded away from zero (clamp with f_min > 0)")
    accept = f_table**alpha
    p_x = initial_distribution(spec)
    z_exact = math.fsum((p_x * accept).tolist())
    return accept, z_exact


def _sample_accepted_loop(spec, accept, need, gen) -> tuple[np.ndarray, int]:
    accepted = np.empty(need, dtype=np.int64)
    taken = 0
    rejected = 0
    while taken < need:
        cand = gen.integers(0, spec.m, size=_REJECTION_CHUNK, dtype=np.int64)
        uniforms = gen.random(_REJECTION_CHUNK)
        got, n_got, scanned = _kernels.rejection_scan(cand, uniforms, accept, need - taken)
        accepted[taken : taken + n_got] = got
        rejected += scanned - n_got
        taken += n_got
    return accepted, rejected


def _sample_accepted_direct(spec, accept, z_exact, need, gen) -> tuple[np.ndarray, int]:
    p_x = initial_distribution(spec)
    weights = p_x * accept
    cdf = np.cumsum(weights / weights.sum())
    cdf[-1] = 1.0
    accepted = np.searchsorted(cdf, gen.random(need), side="right").astype(np.int64)
    # total proposals until the need-th acceptance, minus the acceptances
    rejected = int(gen.negative_binomial(need, min(1.0, z_exact)))
    return accepted, rejected


def _estimate_core(spec, theta, accepted_idx, accept, z, gen) -> tuple[float, int]:
    failed, _ = run_episode_indices(spec, accepted_idx, theta, gen)
    s = float(np.sum(failed / accept[accepted_idx]))
    t = accepted_idx.shape[0]
    return z * s / t, int(failed.sum())


def avf_is_estimate(
    spec: EnvSpec,
    theta: AgentParams,
    model: AvfModel,
    alpha: float,
    t: int,
    rng,
    *,
    z_mode: int | str = "exact",
    sampler: str = "auto",
) -> EstimateReport:
    """Predictor-guided importance-sampling estimate from ``t`` episodes."""
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    if t < 1:
        raise ValueError("episode budget t must be >= 1")
    if sampler not in ("auto", "loop", "direct"):
        raise ValueError(f"unknown sampler {sampler!r}")
    gen, seed = as_generator(rng)
    accept, z_exact = _accept_table(model, spec, theta, alpha)

    mode = sampler
    if mode == "auto":
        mode = "direct" if t / z_exact > _LOOP_PROPOSAL_LIMIT else "loop"
    if mode == "loop":
        accepted_idx, rejected = _sample_accepted_loop(spec, accept, t, gen)
    else:
        accepted_idx, rejected = _sample_accepted_direct(spec, accept, z_exact, t, gen)

    if z_mode == "exact":
        z = z_exact
    else:
        m = int(z_mode)
        if m < 1:
            raise ValueError("normalizer sample count m must be >= 1")
        if m < t:
            warnings.warn(
                f"normalizer sample count m={m} is below the episode budget t={t}; "
                "the normalizer should be estimated from many more draws than episodes",
                stacklevel=2,
            )
        draws = sample_initial_conditions(spec, m, gen)
        offset = 0 if spec.kind == "analytic_bernoulli" else 1
        z = float(accept[draws - offset].mean())

    p_hat, _ = _estimate_core(spec, theta, accepted_idx, accept, z, gen)
    return EstimateReport(
        p_hat=p_hat,
        episodes=t,
        estimator="avf",
        seed=seed,
        rejected_proposals=rejected,
        z_alpha=z,
    )


def combined_estimate(
    spec: EnvSpec,
    theta: AgentParams,
    model: AvfModel,
    alpha: float,
    t: int,
    rng,
    *,
    k_min: int = 5,
    z_mode: int | str = "exact",
    sampler: str = "auto",
) -> EstimateReport:
    """Run both estimators on half budgets; trust plain Monte Carlo only when
    it observed at least ``k_min`` failures."""
    if t < 1:
        raise ValueError("episode budget t must be >= 1")
    gen, seed = as_generator(rng)
    vmc_gen, avf_gen = gen.spawn(2)
    t_vmc = t // 2
    t_avf = t - t_vmc
    failures = _vmc_failures(spec, theta, t_vmc, vmc_gen) if t_vmc >= 1 else 0
    avf_report = avf_is_estimate(
        spec, theta, model, alpha, t_avf, avf_gen, z_mode=z_mode, sampler=sampler
    )
    if t_vmc >= 1 and failures >= k_min:
        p_hat, branch = failures / t_vmc, "vmc"
    else:
        p_hat, branch = avf_report.p_hat, "avf"
    return EstimateReport(
        p_hat=p_hat,
        episodes=t,
        estimator="combined",
        seed=seed,
        rejected_proposals=avf_report.rejected_proposals,
        z_alpha=avf_report.z_alpha,
        branch=branch,
    )


# ---------------------------------------------------------------------------
# Reliability curves


@dataclass(frozen=True)
class ReliabilityCurve:
    estimator: str
    rho: float
    budgets: tuple
    miss_fraction: tuple
    stderr: tuple
    trials: int


def _one_estimate(estimator, spec, theta, budget, gen, model, alpha, z_mode, sampler, k_min):
    if estimator == "vmc":
        return vmc_estimate(spec, theta, budget, gen).p_hat
    if estimator == "avf":
        return avf_is_estimate(
            spec, theta, model, alpha, budget, gen, z_mode=z_mode, sampler=sampler
        ).p_hat
    if estimator == "combined":
        return combined_estimate(
            spec, theta, model, alpha, budget, gen, k_min=k_min, z_mode=z_mode, sampler=sampler
        ).p_hat
    raise ValueError(f"unknown estimator {estimator!r}")


def _curve_task(args):
    (estimator, spec, theta, budget_idx, budget, trial, seed, model, alpha, z_mode,
     sampler, k_min) = args
    gen = stream(seed, "curve", estimator, budget_idx, trial)
    return _one_estimate(estimator, spec, theta, budget, gen, model, alpha, z_mode, sampler, k_min)


def reliability_curves(
    estimator: str,
    spec: EnvSpec,
    theta: AgentParams,
    p_true: float,
    rhos,
    budgets,
    trials: int,
    seed: int,
    *,
    model: AvfModel | None = None,
    alpha: float = 0.5,
    z_mode: int | str = "exact",
    sampler: str = "auto",
    k_min: int = 5,
    workers: int = 1,
) -> list[ReliabilityCurve]:
    """Miss-fraction curves for each ``rho``, sharing one set of estimator runs.

    A run is a miss for ratio ``rho`` when its estimate falls outside the open
    interval ``(p_true/rho, p_true*rho)``.
    """
    rhos = [float(r) for r in (rhos if np.iterable(rhos) else [rhos])]
    for r in rhos:
        if r <= 1.0:
            raise ValueError("rho must exceed 1")
    budgets = [int(b) for b in budgets]
    if trials < 30:
        warnings.warn(
            f"trials={trials} is too few for meaningful error bars (need >= 30)",
            stacklevel=2,
        )
    tasks = [
        (estimator, spec, theta, bi, b, trial, seed, model, alpha, z_mode, sampler, k_min)
        for bi, b in enumerate(budgets)
        for trial in range(trials)
    ]
    flat = parallel_map(_curve_task, tasks, workers=workers)
    estimates = np.asarray(flat, dtype=np.float64).reshape(len(budgets), trials)

    curves = []
    for rho in rhos:
        lo, hi = p_true / rho, p_true * rho
        miss = ((estimates <= lo) | (estimates >= hi)).mean(axis=1)
        se = np.sqrt(miss * (1.0 - miss) / trials)
        curves.append(
            ReliabilityCurve(
                estimator=estimator,
                rho=rho,
                budgets=tuple(budgets),
                miss_fraction=tuple(float(v) for v in miss),
                stderr=tuple(float(v) for v in se),
                trials=trials,
            )
        )
    return curves


def reliability_curve(estimator, spec, theta, p_true, rho, budgets, trials, seed, **kw):
    """Single-``rho`` convenience wrapper around :func:`reliability_curves`."""
    return reliability_curves(estimator, spec, theta, p_true, [rho], budgets, trials, seed, **kw)[0]


def long_vmc_ground_truth(spec: EnvSpec, theta: AgentParams, episodes: int, rng) -> float:
    """Ground-truth substitute measured by a long plain Monte Carlo run."""
    return vmc_estimate(spec, theta, episodes, rng).p_hat


# ---------------------------------------------------------------------------
# Sample-size calculators


def hoeffding_sample_size(loss_bound: float, epsilon: float, delta: float) -> int:
    """Episodes needed so the empirical mean of a ``[0, a]`` loss is within
    ``epsilon`` of its expectation with probability ``1 - delta``."""
    if loss_bound <= 0.0:
        raise ValueError("loss bound must be positive")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must be in (0, 1]")
    return math.ceil(loss_bound**2 * math.log(1.0 / delta) / (2.0 * epsilon**2))


def miss_probability(p: float, n: int) -> float:
    """Probability that ``n`` independent episodes observe zero failures."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be a probability")
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0 or p == 0.0:
        return 1.0
    if p == 1.0:
        return 0.0
    return math.exp(n * math.log1p(-p))
