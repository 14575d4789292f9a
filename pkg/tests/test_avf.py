import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from rare_eval import (
    AgentParams,
    AnalyticBernoulli,
    AvfTrainConfig,
    DndAvf,
    TableAvf,
    dnd_score,
    evaluate_avf,
    exact_failure_model,
    load_model,
    predict,
    save_model,
    train_avf,
)
from rare_eval import _kernels as K
from rare_eval.avf import model_from_dict
from rare_eval.envs import failure_prob_table, initial_distribution
from rare_eval.oracle import proposal_from_weights
from rare_eval.rngs import stream
from rare_eval.traces import subset_trace
from tests.test_traces import make_trace


class TestTabular:
    def test_all_failures_smoothing(self, ab16):
        # n episodes in one cell, all failed -> (n+1)/(n+2)
        trace = make_trace(ab16, [1, 2, 3], [5, 5, 5], [0.95, 0.96, 0.97], [0.0] * 3, [1, 1, 1])
        model = train_avf(trace, AvfTrainConfig(kind="tabular"))
        assert model.predict(5, AgentParams(0.95, 0.0)) == pytest.approx(4.0 / 5.0)

    def test_two_of_two_failures(self, ab16):
        trace = make_trace(ab16, [1, 2], [3, 3], [0.55, 0.56], [0.0] * 2, [1, 1])
        model = train_avf(trace, AvfTrainConfig(kind="tabular"))
        assert model.predict(3, AgentParams(0.55, 0.0)) == pytest.approx(0.75)

    def test_two_failures_in_two_episodes_with_other_cells(self, ab16):
        trace = make_trace(
            ab16,
            [1, 2, 3, 4],
            [3, 3, 7, 7],
            [0.55, 0.56, 0.15, 0.16],
            [0.0] * 4,
            [1, 1, 0, 0],
        )
        model = train_avf(trace, AvfTrainConfig(kind="tabular"))
        assert model.predict(3, AgentParams(0.55, 0.0)) == pytest.approx(0.75)
        assert model.predict(7, AgentParams(0.15, 0.0)) == pytest.approx(1.0 / 4.0)

    def test_empty_cell_is_uninformative(self, ab16):
        trace = make_trace(ab16, [1], [0], [0.05], [0.0], [1])
        model = train_avf(trace, AvfTrainConfig(kind="tabular"))
        assert model.predict(9, AgentParams(0.95, 0.0)) == pytest.approx(0.5)

    def test_clamp_contract(self, trace16, ab16):
        model = train_avf(trace16, AvfTrainConfig(kind="tabular"))
        for u in (0.0, 0.33, 1.0):
            table = model.state_table(ab16, AgentParams(u, 0.1))
            assert np.all(table >= 1e-6) and np.all(table <= 1.0)

    def test_holdout_cross_entropy_near_bucket_oracle(self):
        # a decile-bucketed table should be within 10% of the cross-entropy of
        # the ideal bucket-constant predictor (the entropy of the mean true
        # failure rate within each cell)
        from rare_eval import simulate_training_run

        spec = AnalyticBernoulli(m=16)
        trace = simulate_training_run(spec, 100_000, [0.0], stream(7, "trace"))
        perm = stream(7, "split").permutation(len(trace))
        hold = subset_trace(trace, np.sort(perm[:20000]))
        train = subset_trace(trace, np.sort(perm[20000:]))
        model = train_avf(train, AvfTrainConfig(kind="tabular", u_bins=10))
        ce = evaluate_avf(model, hold).cross_entropy

        truth = np.minimum(1.0, 0.5 ** hold.x.astype(float) * np.exp(-8.0 * hold.u))
        u_idx = np.minimum((hold.u * 10).astype(int), 9)
        keys = hold.x * 100 + u_idx
        total = 0.0
        for key in np.unique(keys):
            mask = keys == key
            fb = truth[mask].mean()
            if 0.0 < fb < 1.0:
                total += mask.sum() * -(fb * math.log(fb) + (1 - fb) * math.log1p(-fb))
        oracle_ce = total / len(hold)
        assert ce <= 1.10 * oracle_ce

    def test_pooled_bucketing_collapses_theta(self, ab16):
        trace = make_trace(
            ab16, [1, 2, 3], [4, 4, 4], [0.1, 0.5, 0.9], [0.0, 0.2, 0.4], [1, 0, 1]
        )
        model = train_avf(trace, AvfTrainConfig(kind="tabular", u_bins=1, pool_sigma=True))
        # one pooled cell: (2+1)/(3+2)
        for u, s in ((0.0, 0.0), (1.0, 0.4)):
            assert model.predict(4, AgentParams(u, s)) == pytest.approx(3.0 / 5.0)


class TestParametric:
    def test_rank_correlation_with_truth(self, parametric16, ab16, theta_final):
        pred = parametric16.state_table(ab16, theta_final)
        truth = failure_prob_table(ab16, theta_final)
        rho = spearmanr(pred, truth).statistic
        assert rho >= 0.9

    def test_output_clamped(self, parametric16, ab16):
        table = parametric16.state_table(ab16, AgentParams(0.0, 0.4))
        assert np.all(table >= 1e-6) and np.all(table <= 1.0)

    def test_prediction_is_pure(self, parametric16):
        theta = AgentParams(0.7, 0.1)
        assert parametric16.predict(4, theta) == parametric16.predict(4, theta)

    def test_requires_failures(self, ab16):
        trace = make_trace(ab16, [1, 2], [0, 1], [0.5, 0.6], [0.0] * 2, [0, 0])
        with pytest.raises(ValueError, match="weaker"):
            train_avf(trace, AvfTrainConfig(kind="parametric"))


class TestDnd:
    def test_config_defaults(self):
        config = AvfTrainConfig(kind="dnd")
        assert config.k_neighbors == 32
        assert config.embedding_width == 16

    def test_score_uncertain_with_zero_weights(self):
        assert dnd_score([(0.0, 1), (0.0, 0)], 2.0) == pytest.approx(0.5)

    def test_score_single_positive_neighbor(self):
        assert dnd_score([(1.0, 1)], 1.0) == pytest.approx(2.0 / 3.0)

    def test_score_symmetric_case(self):
        assert dnd_score([(2.0, 1), (2.0, 0)], 0.5) == pytest.approx(0.5)

    @given(
        b=st.floats(1e-6, 1e3),
        weights=st.lists(
            st.tuples(st.floats(0.0, 1e3), st.integers(0, 1)), min_size=0, max_size=12
        ),
    )
    @settings(max_examples=100, deadline=None)
    def test_score_bounds_and_zero_weight_invariance(self, b, weights):
        score = dnd_score(weights, b)
        assert 0.0 < score < 1.0
        padded = list(weights) + [(0.0, 1), (0.0, 0)]
        assert dnd_score(padded, b) == pytest.approx(score)

    def test_score_validation(self):
        with pytest.raises(ValueError):
            dnd_score([(1.0, 1)], 0.0)
        with pytest.raises(ValueError):
            dnd_score([(-1.0, 1)], 1.0)

    def test_far_query_falls_back_to_half(self, ab16):
        # handcrafted embedding that places state 15 far from all memory points
        params = {
            "w1": np.array([[40.0, 0.0], [0.0, 0.0], [0.0, 0.0]]),
            "b1": np.array([-20.0, 0.0]),
            "w2": np.array([[30.0], [0.0]]),
            "b2": np.array([0.0]),
        }
        feats = np.zeros((6, 3))  # memory at x=0, u=0, sigma=0
        labels = np.array([1.0, 0.0, 1.0, 1.0, 0.0, 1.0])
        model = DndAvf(16, 0, params, math.log(1.0), feats, labels, k=4, f_min=1e-6)
        near = model.predict(0, AgentParams(0.0, 0.0))
        far = model.predict(15, AgentParams(0.0, 0.0))
        assert abs(far - 0.5) < 1e-6
        assert near > 0.55  # weighted toward the 3-of-4 failing neighbors

    def test_trained_dnd_beats_constant_baseline(self, ab16):
        import rare_eval

        trace = rare_eval.simulate_training_run(ab16, 4000, [0.0, 0.2], stream(31, "dnd"))
        perm = stream(31, "dnd-split").permutation(len(trace))
        hold = subset_trace(trace, np.sort(perm[:800]))
        train = subset_trace(trace, np.sort(perm[800:]))
        model = train_avf(
            train, AvfTrainConfig(kind="dnd", iterations=300, batch_size=32, seed=5)
        )
        ce = evaluate_avf(model, hold).cross_entropy
        rate = np.clip(hold.failed.mean(), 1e-9, 1 - 1e-9)
        baseline = -(rate * math.log(rate) + (1 - rate) * math.log1p(-rate))
        assert ce < baseline
        assert model.pseudocount > 0.0


class TestEvaluate:
    def test_constant_model_reaches_entropy(self, ab16):
        rate = 0.25
        gen = stream(8, "const-eval")
        n = 200_000
        fails = (gen.random(n) < rate).astype(np.uint8)
        trace = make_trace(ab16, range(1, n + 1), [0] * n, [0.5] * n, [0.0] * n, fails)
        model = TableAvf(np.full(16, rate))
        ce = evaluate_avf(model, trace).cross_entropy
        entropy = -(rate * math.log(rate) + (1 - rate) * math.log1p(-rate))
        assert ce == pytest.approx(entropy, rel=0.02)

    def test_zero_failure_holdout_floor_model(self, ab16):
        n = 1000
        trace = make_trace(ab16, range(1, n + 1), [0] * n, [0.5] * n, [0.0] * n, [0] * n)
        model = TableAvf(np.full(16, 1e-6), f_min=1e-6)
        ce = evaluate_avf(model, trace).cross_entropy
        assert ce == pytest.approx(-math.log1p(-1e-6), rel=1e-9)

    def test_exact_model_calibrates(self, ab16):
        theta = AgentParams(0.2, 0.0)
        truth = failure_prob_table(ab16, theta)
        gen = stream(9, "calib")
        n = 200_000
        xs = gen.integers(0, 16, size=n)
        fails = (gen.random(n) < truth[xs]).astype(np.uint8)
        trace = make_trace(ab16, range(1, n + 1), xs, [theta.u] * n, [0.0] * n, fails)
        report = evaluate_avf(exact_failure_model(ab16, theta), trace)
        for row in report.calibration:
            se = math.sqrt(max(row.mean_predicted * (1 - row.mean_predicted), 1e-12) / row.count)
            assert abs(row.failure_rate - row.mean_predicted) <= 5 * se + 1e-9

    def test_empty_holdout_rejected(self, ab16, parametric16):
        empty = make_trace(ab16, [], [], [], [], [])
        with pytest.raises(ValueError):
            evaluate_avf(parametric16, empty)


class TestInvariances:
    def test_monotone_transform_preserves_argmax(self, ab16):
        scores = failure_prob_table(ab16, AgentParams(0.3, 0.1))
        gen = stream(10, "argmax")
        cand = gen.integers(0, 16, size=(400, 8))
        tie = gen.random(400)
        base = K.select_candidates(cand, scores, tie)
        for transform in (lambda v: 3.0 * v + 1.0, np.exp, lambda v: v**3):
            assert np.array_equal(base, K.select_candidates(cand, transform(scores), tie))

    @given(k=st.floats(0.01, 1.0), alpha=st.floats(0.05, 2.0))
    @settings(max_examples=50, deadline=None)
    def test_positive_rescaling_is_invisible_to_the_estimator(self, k, alpha):
        # scaling the predictor by k in (0, 1/max f] changes neither the induced
        # proposal nor the weighted summand
        spec = AnalyticBernoulli(m=16)
        f = failure_prob_table(spec, AgentParams(0.5, 0.2))
        k = min(k, 1.0 / f.max())
        p_x = initial_distribution(spec)
        q1 = proposal_from_weights(p_x * f**alpha).density
        q2 = proposal_from_weights(p_x * (k * f) ** alpha).density
        assert np.allclose(q1, q2, rtol=1e-12)
        z1 = float((p_x * f**alpha).sum())
        z2 = float((p_x * (k * f) ** alpha).sum())
        assert np.allclose(z1 / f**alpha, z2 / (k * f) ** alpha, rtol=1e-12)


class TestSerialization:
    def test_round_trip_bit_exact(self, ab16, trace16, parametric16, tmp_path):
        theta = AgentParams(0.35, 0.2)
        models = {
            "tabular": train_avf(trace16, AvfTrainConfig(kind="tabular")),
            "parametric": parametric16,
            "table": TableAvf(failure_prob_table(ab16, theta)),
        }
        small = subset_trace(trace16, np.arange(0, len(trace16), 50))
        models["dnd"] = train_avf(
            small, AvfTrainConfig(kind="dnd", iterations=60, batch_size=32, seed=1)
        )
        for name, model in models.items():
            path = tmp_path / f"{name}.json"
            save_model(model, path)
            loaded = load_model(path)
            assert np.array_equal(
                loaded.state_table(ab16, theta), model.state_table(ab16, theta)
            ), name

    def test_version_and_kind_checked(self):
        with pytest.raises(ValueError):
            model_from_dict({"format_version": 99, "kind": "table"})
        with pytest.raises(ValueError):
            model_from_dict({"format_version": 1, "kind": "mystery"})


class TestTrainValidation:
    def test_empty_trace(self, ab16):
        empty = make_trace(ab16, [], [], [], [], [])
        with pytest.raises(ValueError):
            train_avf(empty, AvfTrainConfig(kind="tabular"))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AvfTrainConfig(kind="nope")
        with pytest.raises(ValueError):
            AvfTrainConfig(k_neighbors=0)
        with pytest.raises(ValueError):
            AvfTrainConfig(f_min=0.0)

    def test_predict_helper(self, ab16, theta_final):
        model = exact_failure_model(ab16, theta_final)
        assert predict(model, 3, theta_final) == pytest.approx(math.exp(-8.0) * 0.125, rel=1e-12)
