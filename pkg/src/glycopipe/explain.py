"""Model explanation: Shapley attributions with an exact enumerator and
a permutation-sampling estimator, attention heatmap export, and
gradient-sign adversarial robustness.

The value function is interventional: v(S) is the mean prediction over
background rows whose features in S are replaced by the instance's
values. Exact mode enumerates all 2^d coalitions (d <= 12); sampling
mode averages marginal contributions over random permutations, each
driven by its own seed derived from (root seed, permutation index) so
results do not depend on execution schedule.

For the fusion classifier, the players are the static features; the
glucose series is held fixed at the instance's own values, and
per-timestep saliency is reported separately through the attention
weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import FusionClassifier, _split_columns
from .preprocessing import ImportanceRanking

MAX_EXACT_FEATURES = 12


@dataclass
class Attribution:
    base_value: float
    values: np.ndarray
    std_errors: np.ndarray | None
    n_samples: int
    feature_names: list[str] | None = None

    def total(self) -> float:
        return float(self.values.sum())


def _check_inputs(x, background):
    x = np.asarray(x, dtype=float).ravel()
    background = np.asarray(background, dtype=float)
    if background.ndim != 2 or background.shape[1] != x.shape[0]:
        raise ValueError("background must be 2-D with the same feature count as x")
    if background.shape[0] < 1:
        raise ValueError("need at least one background row")
    return x, background


def shapley_exact(predict, x, background, feature_names=None) -> Attribution:
    """Exact Shapley values by coalition enumeration.

    predict maps an m x d array to m real outputs. Raises for d > 12;
    use shapley_sample beyond that.
    """
    x, background = _check_inputs(x, background)
    d = x.shape[0]
    if d > MAX_EXACT_FEATURES:
        raise ValueError(
            f"{d} features need 2^{d} coalitions; use shapley_sample instead"
        )
    values = np.empty(1 << d)
    for mask in range(1 << d):
        rows = background.copy()
        for j in range(d):
            if mask >> j & 1:
                rows[:, j] = x[j]
        values[mask] = float(np.mean(predict(rows)))
    fact = [math.factorial(k) for k in range(d + 1)]
    weights = [fact[s] * fact[d - s - 1] / fact[d] for s in range(d)]
    phi = np.zeros(d)
    for mask in range(1 << d):
        s = bin(mask).count("1")
        for j in range(d):
            if not mask >> j & 1:
                phi[j] += weights[s] * (values[mask | (1 << j)] - values[mask])
    return Attribution(
        base_value=float(values[0]),
        values=phi,
        std_errors=None,
        n_samples=1 << d,
        feature_names=list(feature_names) if feature_names is not None else None,
    )


def shapley_sample(
    predict, x, background, n_permutations: int, rng, feature_names=None
) -> Attribution:
    """Permutation-sampling estimate of the exact Shapley values.

    rng may be a seed or a Generator; each permutation gets its own
    stream derived from (root, index).
    """
    x, background = _check_inputs(x, background)
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    if isinstance(rng, (int, np.integer)):
        root = int(rng)
    else:
        root = int(np.random.default_rng(rng).integers(2**63))
    d = x.shape[0]
    n_bg = background.shape[0]
    sums = np.zeros(d)
    sq_sums = np.zeros(d)
    base_total = 0.0
    for idx in range(n_permutations):
        perm_rng = np.random.default_rng(np.random.SeedSequence([root, idx]))
        perm = perm_rng.permutation(d)
        # stack of composites: row block k has the first k features (in
        # permutation order) taken from x
        blocks = np.repeat(background[None, :, :], d + 1, axis=0)
        for k in range(1, d + 1):
            blocks[k:, :, perm[k - 1]] = x[perm[k - 1]]
        flat = predict(blocks.reshape((d + 1) * n_bg, d))
        vals = np.asarray(flat, dtype=float).reshape(d + 1, n_bg).mean(axis=1)
        contrib = np.zeros(d)
        contrib[perm] = vals[1:] - vals[:-1]
        sums += contrib
        sq_sums += contrib**2
        base_total += vals[0]
    phi = sums / n_permutations
    if n_permutations > 1:
        var = (sq_sums - n_permutations * phi**2) / (n_permutations - 1)
        std_err = np.sqrt(np.maximum(var, 0.0) / n_permutations)
    else:
        std_err = np.full(d, np.nan)
    return Attribution(
        base_value=base_total / n_permutations,
        values=phi,
        std_errors=std_err,
        n_samples=n_permutations,
        feature_names=list(feature_names) if feature_names is not None else None,
    )


def static_predict_fn(clf: FusionClassifier, series_row: np.ndarray):
    """Positive-class probability as a function of the static features,
    with the glucose series pinned to one instance's values."""
    series_row = np.asarray(series_row, dtype=float).ravel()

    def predict(statics: np.ndarray) -> np.ndarray:
        statics = np.asarray(statics, dtype=float)
        series = np.tile(series_row, (statics.shape[0], 1))
        return clf.predict_proba(np.hstack([statics, series]))[:, 1]

    return predict


def explain_row(
    clf: FusionClassifier,
    x_row: np.ndarray,
    background: np.ndarray,
    mode: str = "exact",
    n_permutations: int = 2000,
    seed: int = 0,
    feature_names=None,
) -> Attribution:
    """Shapley attribution of one combined [statics | series] row.

    Players are the static features; background rows supply off-coalition
    static values and must have the same combined layout.
    """
    x_row = np.asarray(x_row, dtype=float).ravel()
    statics, series = _split_columns(x_row[None, :], clf.series_len)
    bg_statics, _ = _split_columns(np.asarray(background, dtype=float), clf.series_len)
    predict = static_predict_fn(clf, series[0])
    if mode == "exact":
        return shapley_exact(predict, statics[0], bg_statics, feature_names)
    if mode == "sample":
        return shapley_sample(
            predict, statics[0], bg_statics, n_permutations, seed, feature_names
        )
    raise ValueError(f"unknown mode {mode!r}")


def mean_abs_attribution(
    clf: FusionClassifier,
    X: np.ndarray,
    background: np.ndarray,
    feature_names=None,
    mode: str = "exact",
    n_permutations: int = 500,
    seed: int = 0,
) -> ImportanceRanking:
    """Global ranking: mean |phi| per static feature over the rows of X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("X must be 2-D with at least one row")
    n_static = X.shape[1] - clf.series_len
    if feature_names is None:
        feature_names = [f"x{j}" for j in range(n_static)]
    totals = np.zeros(n_static)
    for i in range(X.shape[0]):
        attribution = explain_row(
            clf,
            X[i],
            background,
            mode=mode,
            n_permutations=n_permutations,
            seed=seed + i,
            feature_names=feature_names,
        )
        totals += np.abs(attribution.values)
    means = totals / X.shape[0]
    order = np.argsort(-means, kind="stable")
    entries = [(feature_names[j], float(means[j])) for j in order]
    return ImportanceRanking(entries=entries)


@dataclass
class RobustnessReport:
    eps_adv: float
    n_samples: int
    unchanged_fraction: float


def fgsm_robustness(clf: FusionClassifier, X, y, eps_adv: float) -> RobustnessReport:
    """Fraction of rows whose predicted class survives an FGSM nudge.

    x' = x + eps * sign(d loss / d x), computed from the exact input
    gradients of the BCE loss at the true labels.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if eps_adv < 0:
        raise ValueError("eps_adv must be >= 0")
    before = clf.predict(X)
    grads = clf.input_gradients(X, y)
    X_adv = X + eps_adv * np.sign(grads)
    after = clf.predict(X_adv)
    return RobustnessReport(
        eps_adv=float(eps_adv),
        n_samples=int(X.shape[0]),
        unchanged_fraction=float(np.mean(before == after)),
    )


@dataclass
class HeatmapExport:
    values: np.ndarray  # rows x T
    row_labels: list[str]
    col_labels: list[str]

    def to_csv_lines(self) -> list[str]:
        lines = ["," + ",".join(self.col_labels)]
        for label, row in zip(self.row_labels, self.values):
            lines.append(label + "," + ",".join(repr(float(v)) for v in row))
        return lines


def export_heatmap(clf: FusionClassifier, X, row_labels=None) -> HeatmapExport:
    """Attention weights per row over the series steps (each row sums to 1)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    weights = clf.attention_weights(X)
    T = weights.shape[1]
    if row_labels is None:
        row_labels = [f"row-{i}" for i in range(weights.shape[0])]
    return HeatmapExport(
        values=weights,
        row_labels=list(row_labels),
        col_labels=[f"day-{t + 1}" for t in range(T)],
    )


def save_heatmap_csv(path, export: HeatmapExport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in export.to_csv_lines():
            fh.write(line + "\n")


def save_heatmap_svg(path, export: HeatmapExport) -> None:
    """Vector plot of the heatmap; needs the optional matplotlib extra."""
    try:
        import matplotlib

        matplotlib.use("svg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise RuntimeError("svg export needs matplotlib installed") from exc
    fig, ax = plt.subplots(
        figsize=(max(4.0, 0.6 * len(export.col_labels)), max(2.0, 0.4 * len(export.row_labels)))
    )
    im = ax.imshow(export.values, aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(export.col_labels)), export.col_labels, rotation=45)
    ax.set_yticks(range(len(export.row_labels)), export.row_labels)
    fig.colorbar(im, ax=ax, label="attention weight")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
