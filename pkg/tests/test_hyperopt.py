"""Search spaces, successive halving, surrogate-guided proposals."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.random import default_rng

from glycopipe.hyperopt import (
    SchedulerConfig,
    SearchSpace,
    SurrogateState,
    Trial,
    asha_decide,
    choice,
    encode_config,
    expected_improvement,
    int_uniform,
    log_uniform,
    rung_epochs,
    sample,
    smbo_propose,
    summary_table,
    trials_to_lines,
    tune,
    uniform,
)


def quad_space():
    return SearchSpace((uniform("x", 0.0, 1.0),))


# --- sampling ---


def test_sample_respects_bounds_and_kinds():
    space = SearchSpace(
        (
            log_uniform("lr", 1e-5, 1e-1),
            uniform("dropout", 0.1, 0.7),
            int_uniform("layers", 1, 4),
            choice("batch", (32, 64, 128)),
        )
    )
    rng = default_rng(0)
    seen_ints, seen_choices = set(), set()
    for _ in range(10_000):
        c = sample(space, rng)
        assert 1e-5 <= c["lr"] <= 1e-1
        assert 0.1 <= c["dropout"] <= 0.7
        assert c["layers"] in (1, 2, 3, 4)
        assert c["batch"] in (32, 64, 128)
        seen_ints.add(c["layers"])
        seen_choices.add(c["batch"])
    assert seen_ints == {1, 2, 3, 4}
    assert seen_choices == {32, 64, 128}


def test_log_uniform_median_sits_at_geometric_mean():
    space = SearchSpace((log_uniform("lr", 1e-4, 1e-2),))
    rng = default_rng(0)
    draws = np.array([sample(space, rng)["lr"] for _ in range(10_000)])
    med = np.median(draws)
    geo = math.sqrt(1e-4 * 1e-2)
    assert max(med / geo, geo / med) < 1.3


def test_param_validation():
    with pytest.raises(ValueError):
        log_uniform("lr", 0.0, 1.0)
    with pytest.raises(ValueError):
        uniform("x", 1.0, 1.0)
    with pytest.raises(ValueError):
        int_uniform("n", 3, 3)
    with pytest.raises(ValueError):
        choice("c", ())
    with pytest.raises(ValueError):
        SearchSpace((uniform("x", 0, 1), uniform("x", 0, 2)))


def test_encode_config_unit_box():
    space = SearchSpace(
        (log_uniform("lr", 1e-4, 1e-2), uniform("d", 0.0, 0.5), choice("b", (1, 2)))
    )
    rng = default_rng(1)
    for _ in range(200):
        v = encode_config(space, sample(space, rng))
        assert v.shape == (4,)  # two reals + a 2-way one-hot
        assert np.all(v >= 0.0) and np.all(v <= 1.0)
    mid = encode_config(space, {"lr": 1e-3, "d": 0.25, "b": 1})
    assert mid[0] == pytest.approx(0.5) and mid[1] == pytest.approx(0.5)
    assert mid[2:].tolist() == [1.0, 0.0]


# --- successive halving ---


def test_rung_epochs_geometric():
    assert rung_epochs(SchedulerConfig()) == [1, 3, 9, 27]
    cfg = SchedulerConfig(max_t=8, grace_period=1, reduction_factor=2)
    assert rung_epochs(cfg) == [1, 2, 4, 8]


def test_scheduler_config_validation():
    with pytest.raises(ValueError):
        SchedulerConfig(mode="sideways")
    with pytest.raises(ValueError):
        SchedulerConfig(grace_period=0)
    with pytest.raises(ValueError):
        SchedulerConfig(max_t=2, grace_period=5)
    with pytest.raises(ValueError):
        SchedulerConfig(reduction_factor=1)


def trial_with(metrics, epochs=None):
    return Trial(
        trial_id=0, config={}, metrics=list(metrics),
        epochs=len(metrics) if epochs is None else epochs,
    )


def test_asha_hand_trace_rung_by_rung():
    cfg = SchedulerConfig(mode="max", max_t=8, grace_period=1, reduction_factor=2)
    # (own metric history, rung, metrics recorded at that rung, decision)
    story = [
        ([0.60], 0, [], "continue"),
        ([0.50], 0, [0.60], "stop"),
        ([0.70], 0, [0.60, 0.50], "continue"),
        ([0.40], 0, [0.60, 0.50, 0.70], "stop"),
        ([0.65], 0, [0.60, 0.50, 0.70, 0.40], "continue"),
        ([0.60], 0, [0.60, 0.50, 0.70, 0.40, 0.65], "continue"),  # tie kept
        ([0.60, 0.62], 1, [], "continue"),
        ([0.70, 0.72], 1, [0.62], "continue"),
        ([0.65, 0.64], 1, [0.62, 0.72], "continue"),
        ([0.60, 0.55], 1, [0.62, 0.72, 0.64], "stop"),
        ([0.60, 0.62, 0.61, 0.61], 2, [], "continue"),
        ([0.70, 0.72, 0.73, 0.74], 2, [0.61], "continue"),
        ([0.65, 0.64, 0.63, 0.60], 2, [0.61, 0.74], "stop"),
    ]
    for metrics, rung, recorded, expected in story:
        got = asha_decide(trial_with(metrics), rung, recorded, cfg)
        assert got == expected, (metrics, rung, recorded)


def test_asha_min_mode_flips_ordering():
    cfg = SchedulerConfig(mode="min", max_t=4, grace_period=1, reduction_factor=2)
    assert asha_decide(trial_with([0.9]), 0, [0.5, 0.4], cfg) == "stop"
    assert asha_decide(trial_with([0.3]), 0, [0.5, 0.4], cfg) == "continue"


def test_asha_grace_period_always_continues():
    cfg = SchedulerConfig(max_t=9, grace_period=3, reduction_factor=3)
    t = trial_with([0.01], epochs=1)
    assert asha_decide(t, 0, [0.9, 0.9, 0.9], cfg) == "continue"


@given(
    own=st.floats(0, 1, allow_nan=False),
    bump=st.floats(0, 0.5, allow_nan=False),
    others=st.lists(st.floats(0, 1, allow_nan=False), min_size=0, max_size=12),
)
@settings(max_examples=120, deadline=None)
def test_asha_decision_monotone_in_own_metric(own, bump, others):
    cfg = SchedulerConfig(mode="max", max_t=4, grace_period=1, reduction_factor=2)
    lo = asha_decide(trial_with([own]), 0, others, cfg)
    hi = asha_decide(trial_with([own + bump]), 0, others, cfg)
    if lo == "continue":
        assert hi == "continue"


def test_trial_bookkeeping():
    t = Trial(trial_id=3, config={"lr": 0.1})
    assert t.final_metric is None
    t.metrics = [0.4, 0.6]
    t.epochs = 2
    assert t.final_metric == 0.6
    assert t.metric_at_epoch(1) == 0.4
    t.set_status("completed")
    with pytest.raises(ValueError):
        t.set_status("running")


# --- acquisition ---


def test_expected_improvement_zero_std_is_hinge():
    ei = expected_improvement(np.array([0.2, 0.5, 0.9]), np.zeros(3), best=0.5)
    assert np.allclose(ei, [0.0, 0.0, 0.4])


def test_expected_improvement_grows_with_std():
    at_mean = expected_improvement(np.array([0.5, 0.5]), np.array([0.1, 0.3]), 0.5)
    assert 0 < at_mean[0] < at_mean[1]
    # closed form at improve=0: std * phi(0)
    assert at_mean[0] == pytest.approx(0.1 / np.sqrt(2 * np.pi))


class CertainSurrogate:
    """Stub reporting zero predictive uncertainty."""

    def fit(self, X, y):
        pass

    def predict(self, X):
        return X[:, 0].copy(), np.zeros(X.shape[0])


def test_zero_uncertainty_proposal_is_greedy_mean_argmax():
    space = quad_space()
    state = SurrogateState(space, mode="max", surrogate=CertainSurrogate())
    rng = default_rng(0)
    for v in (0.1, 0.2, 0.3, 0.4, 0.5):
        state.record({"x": v}, v)
    probe = default_rng(0)
    for _ in range(5):
        sample(space, probe)  # replay the recording-free draws
    candidates = [sample(space, probe) for _ in range(state.n_candidates)]
    want = max(candidates, key=lambda c: c["x"])
    got = smbo_propose(state, space, rng)
    assert got == want


def test_smbo_cold_start_samples_randomly():
    space = quad_space()
    state = SurrogateState(space, mode="max")
    rng = default_rng(7)
    want = sample(space, default_rng(7))
    got = smbo_propose(state, space, rng)
    assert got == want


def test_smbo_optimizes_quadratic_quickly():
    space = quad_space()
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        state = SurrogateState(space, mode="min")
        best = np.inf
        for _ in range(40):
            config = smbo_propose(state, space, rng)
            value = (config["x"] - 0.3) ** 2
            state.record(config, value)
            best = min(best, abs(config["x"] - 0.3))
        hits += best <= 0.02
    assert hits >= 9


# --- tune loop ---


def deterministic_objective(config):
    # score peaks at x = 0.7, improves for 3 epochs then plateaus
    base = 1.0 - abs(config["x"] - 0.7)
    for e in range(1, 10):
        yield base * min(1.0, 0.7 + 0.1 * e)


def test_tune_budget_one():
    best, trials = tune(
        deterministic_objective, quad_space(),
        SchedulerConfig(max_t=4, grace_period=1, reduction_factor=2),
        budget_trials=1, seed=0,
    )
    assert len(trials) == 1
    assert best is trials[0]
    assert trials[0].status in ("completed", "stopped")


def test_tune_runs_exactly_budget_trials():
    _, trials = tune(
        deterministic_objective, quad_space(),
        SchedulerConfig(max_t=4, grace_period=1, reduction_factor=2),
        budget_trials=12, seed=1,
    )
    assert len(trials) == 12
    assert all(t.status != "running" for t in trials)


def test_tune_epoch_consumption_bounded():
    calls = {"epochs": 0}

    def counting(config):
        def gen():
            for m in deterministic_objective(config):
                calls["epochs"] += 1
                yield m

        return gen()

    cfg = SchedulerConfig(max_t=4, grace_period=1, reduction_factor=2)
    tune(counting, quad_space(), cfg, budget_trials=10, seed=2)
    assert calls["epochs"] <= 10 * cfg.max_t


def test_tune_failed_trials_counted_and_skipped():
    def flaky(config):
        if config["x"] < 0.5:
            raise RuntimeError("boom")
        return deterministic_objective(config)

    best, trials = tune(
        flaky, quad_space(),
        SchedulerConfig(max_t=2, grace_period=1, reduction_factor=2),
        budget_trials=10, seed=3,
    )
    failed = [t for t in trials if t.status == "failed"]
    assert len(trials) == 10  # failures still consume budget
    assert failed and all(t.metrics == [] for t in failed)
    assert best.status != "failed"
    assert best.config["x"] >= 0.5


def test_tune_deterministic_for_seed_and_parallelism():
    cfg = SchedulerConfig(max_t=4, grace_period=1, reduction_factor=2)
    kw = dict(budget_trials=8, seed=5, parallelism=3)
    _, t1 = tune(deterministic_objective, quad_space(), cfg, **kw)
    _, t2 = tune(deterministic_objective, quad_space(), cfg, **kw)
    assert trials_to_lines(t1) == trials_to_lines(t2)


def test_tune_smbo_proposer_beats_nothing():
    cfg = SchedulerConfig(max_t=3, grace_period=1, reduction_factor=2)
    best, trials = tune(
        deterministic_objective, quad_space(), cfg,
        budget_trials=20, seed=0, proposer="smbo",
    )
    assert abs(best.config["x"] - 0.7) < 0.2


def test_tune_rejects_bad_arguments():
    cfg = SchedulerConfig()
    with pytest.raises(ValueError):
        tune(deterministic_objective, quad_space(), cfg, budget_trials=0)
    with pytest.raises(ValueError):
        tune(deterministic_objective, quad_space(), cfg, parallelism=0)
    with pytest.raises(ValueError):
        tune(deterministic_objective, quad_space(), cfg, proposer="grid")


# --- reporting ---


def test_trials_to_lines_json_round_trip():
    _, trials = tune(
        deterministic_objective, quad_space(),
        SchedulerConfig(max_t=2, grace_period=1, reduction_factor=2),
        budget_trials=3, seed=4,
    )
    lines = trials_to_lines(trials)
    assert len(lines) == 3
    for line, t in zip(lines, trials):
        rec = json.loads(line)
        assert rec["trial_id"] == t.trial_id
        assert rec["status"] == t.status
        assert rec["metrics"] == t.metrics
        assert list(rec) == sorted(rec)


def test_summary_table_layout():
    table = summary_table(
        {"learning_rate": 0.001, "batch_size": 64},
        {"learning_rate": 0.0042, "batch_size": 128},
    )
    lines = table.splitlines()
    assert len(lines) == 4
    assert lines[0].split() == ["Hyperparameter", "Initial", "Value", "Optimized", "Value"]
    assert set(lines[1]) <= {"-", " "}
    assert "learning_rate" in lines[2] and "0.001" in lines[2] and "0.0042" in lines[2]
    assert "batch_size" in lines[3] and "64" in lines[3] and "128" in lines[3]
