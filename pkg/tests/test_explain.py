"""Shapley attribution, adversarial robustness, attention heatmaps."""

import numpy as np
import pytest
from numpy.random import default_rng

from glycopipe.explain import (
    explain_row,
    export_heatmap,
    fgsm_robustness,
    mean_abs_attribution,
    save_heatmap_csv,
    save_heatmap_svg,
    shapley_exact,
    shapley_sample,
)


def linear_predict(w):
    w = np.asarray(w, dtype=float)

    def predict(Z):
        return np.asarray(Z, dtype=float) @ w

    return predict


# --- exact values ---


def test_linear_model_closed_form():
    # for f(z) = w.z, phi_j = w_j (x_j - mean(background_j))
    rng = default_rng(0)
    w = np.array([1.0, -2.0, 0.5, 3.0])
    background = rng.normal(size=(20, 4))
    x = rng.normal(size=4)
    att = shapley_exact(linear_predict(w), x, background)
    want = w * (x - background.mean(axis=0))
    assert np.allclose(att.values, want, atol=1e-12)
    assert att.base_value == pytest.approx(background.mean(axis=0) @ w)


def test_efficiency_axiom():
    rng = default_rng(1)

    def f(Z):
        return Z[:, 0] * Z[:, 1] + np.sin(Z[:, 2]) + 0.5 * Z[:, 0]

    background = rng.normal(size=(12, 3))
    x = rng.normal(size=3)
    att = shapley_exact(f, x, background)
    fx = float(f(x[None, :])[0])
    assert att.base_value + att.total() == pytest.approx(fx, abs=1e-10)


def test_dummy_feature_gets_zero():
    rng = default_rng(2)

    def f(Z):
        return Z[:, 0] ** 2  # feature 1 unused

    background = rng.normal(size=(10, 2))
    x = np.array([1.3, -0.4])
    att = shapley_exact(f, x, background)
    assert att.values[1] == pytest.approx(0.0, abs=1e-12)


def test_symmetry_axiom():
    # interchangeable features with equal values get equal credit
    def f(Z):
        return Z[:, 0] + Z[:, 1] + Z[:, 0] * Z[:, 1]

    background = np.zeros((5, 2))
    x = np.array([0.8, 0.8])
    att = shapley_exact(f, x, background)
    assert att.values[0] == pytest.approx(att.values[1], abs=1e-12)


def test_exact_rejects_wide_inputs():
    with pytest.raises(ValueError, match="shapley_sample"):
        shapley_exact(linear_predict(np.ones(13)), np.zeros(13), np.zeros((2, 13)))


def test_background_shape_validated():
    with pytest.raises(ValueError):
        shapley_exact(linear_predict([1.0]), np.zeros(1), np.zeros((0, 1)))
    with pytest.raises(ValueError):
        shapley_exact(linear_predict([1.0, 1.0]), np.zeros(2), np.zeros((3, 5)))


# --- sampled values ---


def test_sampling_converges_to_exact():
    rng = default_rng(5)
    w8 = np.array([1.0, -2.0, 0.5, 0.0, 1.5, -0.7, 0.3, 0.9])

    def f(Z):
        return (
            Z @ w8
            + 0.6 * Z[:, 0] * Z[:, 1]
            + 0.4 * np.sin(Z[:, 2] * Z[:, 3])
            + 0.3 * Z[:, 4] * Z[:, 5] ** 2
        )

    background = rng.normal(size=(16, 8))
    x = rng.normal(size=8)
    exact = shapley_exact(f, x, background)
    sampled = shapley_sample(f, x, background, n_permutations=20_000, rng=default_rng(9))
    mae = np.mean(np.abs(sampled.values - exact.values))
    assert mae < 0.01
    assert sampled.base_value == pytest.approx(exact.base_value, abs=1e-9)


def test_standard_error_shrinks_with_sample_size():
    rng = default_rng(3)
    w5 = np.array([1.0, -2.0, 0.5, 0.0, 1.5])

    def f(Z):
        return Z @ w5 + Z[:, 0] * Z[:, 1] + 0.5 * np.sin(Z[:, 2] * Z[:, 3])

    background = rng.normal(size=(16, 5))
    x = np.ones(5)
    small = shapley_sample(f, x, background, n_permutations=100, rng=default_rng(11))
    large = shapley_sample(f, x, background, n_permutations=10_000, rng=default_rng(11))
    ratio = small.std_errors.mean() / large.std_errors.mean()
    # sqrt(10000/100) = 10 up to estimation noise
    assert 7.0 < ratio < 14.0


def test_sampling_deterministic_per_seed():
    w = np.array([1.0, 0.5, -0.5])

    def f(Z):
        return Z @ w + Z[:, 0] * Z[:, 2]

    background = default_rng(0).normal(size=(8, 3))
    x = np.ones(3)
    a = shapley_sample(f, x, background, 200, rng=17)
    b = shapley_sample(f, x, background, 200, rng=17)
    c = shapley_sample(f, x, background, 200, rng=18)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_zero_model_gets_zero_attribution():
    def f(Z):
        return np.zeros(Z.shape[0])

    att = shapley_sample(f, np.ones(4), np.zeros((6, 4)), 50, rng=0)
    assert np.allclose(att.values, 0.0)
    assert att.base_value == 0.0


# --- classifier-level explanation ---


@pytest.fixture(scope="module")
def narrow_fusion():
    # few enough static features for coalition enumeration
    from conftest import build_standardized_cohort
    from glycopipe.model import FusionClassifier

    X, y, names = build_standardized_cohort(300, 7, n_noise_features=3)
    clf = FusionClassifier(
        series_len=7, learning_rate=0.01, batch_size=64, epochs=2,
        lstm_layers=1, hidden_size=6, dropout_rate=0.0, mlp_hidden=(6,), seed=0,
    ).fit(X, y)
    return clf, X, names


def test_explain_row_efficiency_on_classifier(narrow_fusion):
    clf, X, names = narrow_fusion
    n_static = len(names)
    att = explain_row(clf, X[0], X[:16], mode="exact", feature_names=names)
    p = clf.predict_proba(X[0][None, :])[0, 1]
    # statics are the players; the pinned series enters through predict
    from glycopipe.explain import static_predict_fn

    predict = static_predict_fn(clf, X[0][n_static:])
    base = predict(X[:16, :n_static]).mean()
    assert att.base_value == pytest.approx(base, abs=1e-12)
    assert att.base_value + att.total() == pytest.approx(p, abs=1e-10)
    assert att.feature_names == names


def test_mean_abs_ranking_finds_dominant_feature(dominant_fusion):
    clf, X, names = dominant_fusion
    wins = 0
    for s in range(10):
        ranking = mean_abs_attribution(
            clf, X[:4], X[:12], names, mode="sample", n_permutations=40, seed=s
        )
        wins += ranking.names()[0] == "fasting_glucose"
    assert wins >= 9


def test_mean_abs_single_row_matches_explain_row(narrow_fusion):
    clf, X, names = narrow_fusion
    ranking = mean_abs_attribution(clf, X[:1], X[:8], names, mode="exact")
    att = explain_row(clf, X[0], X[:8], mode="exact")
    want = {names[j]: abs(att.values[j]) for j in range(len(names))}
    got = dict(ranking.entries)
    for name in want:
        assert got[name] == pytest.approx(want[name], abs=1e-12)


# --- adversarial robustness ---


def test_fgsm_zero_eps_changes_nothing(tiny_fusion):
    clf, X, y, _ = tiny_fusion
    r = fgsm_robustness(clf, X[:100], y[:100], 0.0)
    assert r.unchanged_fraction == 1.0
    assert r.n_samples == 100


def test_fgsm_fragility_grows_with_eps(tiny_fusion):
    clf, X, y, _ = tiny_fusion
    fracs = [
        fgsm_robustness(clf, X[:400], y[:400], e).unchanged_fraction
        for e in (0.0, 0.02, 0.05, 0.1, 0.2)
    ]
    assert fracs[0] == 1.0
    assert all(a >= b for a, b in zip(fracs, fracs[1:]))
    assert fracs[-1] < 1.0  # large nudges flip someone


def test_fgsm_rejects_negative_eps(tiny_fusion):
    clf, X, y, _ = tiny_fusion
    with pytest.raises(ValueError):
        fgsm_robustness(clf, X[:4], y[:4], -0.1)


def test_input_gradients_match_finite_differences(tiny_fusion):
    clf, X, y, _ = tiny_fusion
    from glycopipe.network import bce_loss, forward
    from glycopipe.model import _split_columns

    rows, labels = X[:3].copy(), y[:3].astype(float)
    grads = clf.input_gradients(rows, labels)
    assert grads.shape == rows.shape

    def loss_at(probe):
        statics, series = _split_columns(probe, clf.series_len)
        _, trace = forward(clf.params_, clf.dims_, series, statics)
        return bce_loss(trace["logits"], labels)

    eps = 1e-5
    fd = np.empty_like(rows)
    for i in range(rows.shape[0]):
        for j in range(rows.shape[1]):
            orig = rows[i, j]
            rows[i, j] = orig + eps
            up = loss_at(rows)
            rows[i, j] = orig - eps
            dn = loss_at(rows)
            rows[i, j] = orig
            fd[i, j] = (up - dn) / (2 * eps)
    rel = np.linalg.norm(fd - grads) / max(np.linalg.norm(fd), np.linalg.norm(grads))
    assert rel < 1e-4


# --- heatmaps ---


def test_heatmap_rows_sum_to_one(tiny_fusion):
    clf, X, _, _ = tiny_fusion
    export = export_heatmap(clf, X[:6])
    assert export.values.shape == (6, 7)
    assert np.allclose(export.values.sum(axis=1), 1.0, atol=1e-12)
    assert export.col_labels == [f"day-{t}" for t in range(1, 8)]
    assert export.row_labels == [f"row-{i}" for i in range(6)]


def test_heatmap_constant_series_uniform_when_states_identical():
    # symmetry: identical pooled states get identical weights; the zero
    # model maps any constant series to h_t = 0 for every step
    from glycopipe.model import classifier_from_params
    from glycopipe.network import ModelDims, zero_params

    dims = ModelDims(x_in=1, lstm_layers=1, hidden=4, static_dim=2, mlp_hidden=(4,))
    clf = classifier_from_params(zero_params(dims), dims, series_len=7)
    row = np.concatenate([np.array([1.0, -2.0]), np.full(7, 0.42)])
    export = export_heatmap(clf, row)
    assert np.allclose(export.values[0], 1.0 / 7, atol=1e-12)


def test_heatmap_csv_and_svg_export(tiny_fusion, tmp_path):
    clf, X, _, _ = tiny_fusion
    export = export_heatmap(clf, X[:3], row_labels=["a", "b", "c"])
    csv_path = tmp_path / "attn.csv"
    save_heatmap_csv(csv_path, export)
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "," + ",".join(export.col_labels)
    assert len(lines) == 4
    assert lines[1].startswith("a,")
    cells = lines[1].split(",")[1:]
    assert np.allclose([float(c) for c in cells], export.values[0])

    svg_path = tmp_path / "attn.svg"
    save_heatmap_svg(svg_path, export)
    blob = svg_path.read_text()
    assert blob.lstrip().startswith("<?xml") and "<svg" in blob
