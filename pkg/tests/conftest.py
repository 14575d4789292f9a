"""Shared fixtures: environments and (expensively) trained predictors."""
import pytest

from rare_eval import (
    AgentParams,
    AnalyticBernoulli,
    AvfTrainConfig,
    CliffWalk,
    filter_trace,
    simulate_training_run,
    train_avf,
)
from rare_eval.rngs import stream

FIVE_NOISE_LEVELS = [0.0, 0.1, 0.2, 0.3, 0.4]


@pytest.fixture(scope="session")
def ab16():
    return AnalyticBernoulli(m=16)


@pytest.fixture(scope="session")
def ab256():
    return AnalyticBernoulli(m=256)


@pytest.fixture(scope="session")
def cliff():
    return CliffWalk()


@pytest.fixture(scope="session")
def theta_final():
    return AgentParams(u=1.0, sigma=0.0)


@pytest.fixture(scope="session")
def trace16(ab16):
    return simulate_training_run(ab16, 100_000, FIVE_NOISE_LEVELS, stream(42, "trace16"))


@pytest.fixture(scope="session")
def trace256(ab256):
    return simulate_training_run(ab256, 500_000, FIVE_NOISE_LEVELS, stream(42, "trace256"))


@pytest.fixture(scope="session")
def parametric16(trace16):
    return train_avf(
        filter_trace(trace16, 0.5),
        AvfTrainConfig(kind="parametric", iterations=4000, seed=3),
    )


@pytest.fixture(scope="session")
def parametric256(trace256):
    return train_avf(
        filter_trace(trace256, 0.5),
        AvfTrainConfig(kind="parametric", iterations=6000, seed=3),
    )


@pytest.fixture(scope="session")
def tabular256_pooled(ab256):
    trace = simulate_training_run(ab256, 200_000, FIVE_NOISE_LEVELS, stream(42, "tr256-search"))
    return train_avf(trace, AvfTrainConfig(kind="tabular", u_bins=1, pool_sigma=True))
