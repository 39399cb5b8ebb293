"""Differential-privacy machinery: gradient sanitization, a private
logistic regression trainer, and additive budget accounting.

The sanitizer clips each per-example gradient to L2 norm C, averages,
and adds isotropic Gaussian noise with standard deviation sigma*C/B, so
no single example moves the released vector by more than C/B before
noise.

The private regression uses output perturbation: fit an L2-regularized
logistic regression to convergence on rows scaled to unit norm, then add
a noise vector with density proportional to exp(-eps*n*lam*|b|/2),
matching L2 sensitivity 2/(n*lam). Noise is sampled as a uniform sphere
direction times a Gamma(d, 2/(eps*n*lam)) radius.

The ledger applies basic sequential composition: totals are plain sums
of the recorded (epsilon, delta) spends, capped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DpParams:
    epsilon: float = 0.1
    delta: float = 0.0
    clip_norm: float = 1.0
    noise_multiplier: float = 0.1
    lot_size: int | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must be in [0, 1)")
        if not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be >= 0")
        if self.lot_size is not None and self.lot_size < 1:
            raise ValueError("lot_size must be >= 1 when set")


def clip_gradients(per_example_grads: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale each row to L2 norm at most clip_norm."""
    grads = np.asarray(per_example_grads, dtype=float)
    if grads.ndim != 2:
        raise ValueError("per-example gradients must be a B x P array")
    if not np.isfinite(grads).all():
        raise ValueError("gradients contain non-finite values")
    norms = np.linalg.norm(grads, axis=1)
    factors = np.ones_like(norms)
    over = norms > clip_norm
    factors[over] = clip_norm / norms[over]
    return grads * factors[:, None]


def dpsgd_sanitize(
    per_example_grads: np.ndarray,
    params: DpParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Clip, average, and noise a batch of per-example gradients."""
    clipped = clip_gradients(per_example_grads, params.clip_norm)
    batch = clipped.shape[0]
    if batch < 1:
        raise ValueError("need at least one gradient")
    if params.lot_size is not None and params.lot_size != batch:
        raise ValueError(
            f"lot_size {params.lot_size} does not match batch of {batch}"
        )
    mean = clipped.mean(axis=0)
    if params.noise_multiplier == 0.0:
        return mean
    std = params.noise_multiplier * params.clip_norm / batch
    return mean + rng.normal(0.0, std, size=mean.shape)


def _fit_logistic(X: np.ndarray, y_pm: np.ndarray, lam: float) -> np.ndarray:
    """Newton solve of mean logistic loss + (lam/2)|w|^2; no intercept."""
    n, d = X.shape
    w = np.zeros(d)
    for _ in range(100):
        z = X @ w
        p = np.empty_like(z)
        pos = z >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        p[~pos] = ez / (1.0 + ez)
        y01 = (y_pm + 1.0) / 2.0
        grad = X.T @ (p - y01) / n + lam * w
        s = p * (1.0 - p)
        hess = (X.T * s) @ X / n + lam * np.eye(d)
        step = np.linalg.solve(hess, grad)
        w = w - step
        if np.linalg.norm(step) < 1e-12:
            break
    return w


def sample_dp_noise(
    d: int, scale: float, rng: np.random.Generator
) -> np.ndarray:
    """Vector with density ~ exp(-|b|/scale): Gamma(d, scale) radius times
    a uniform direction on the sphere."""
    radius = rng.gamma(shape=d, scale=scale) if scale > 0 else 0.0
    direction = rng.normal(size=d)
    norm = np.linalg.norm(direction)
    while norm == 0.0:
        direction = rng.normal(size=d)
        norm = np.linalg.norm(direction)
    return radius * direction / norm


def dp_logistic_regression(
    X: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    data_norm: float,
    lam: float = 0.01,
    seed: int = 0,
) -> np.ndarray:
    """Epsilon-DP logistic regression weights via output perturbation.

    Rows must already be clipped to L2 norm <= data_norm. epsilon may be
    math.inf, which degenerates to the non-private fit. The returned
    weights apply to the unscaled inputs.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be n x d with one label per row")
    if not np.isfinite(X).all():
        raise ValueError("X contains non-finite values")
    if data_norm <= 0:
        raise ValueError("data_norm must be positive")
    if lam <= 0:
        raise ValueError("lam must be positive")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    norms = np.linalg.norm(X, axis=1)
    if norms.size and norms.max() > data_norm * (1 + 1e-12):
        bad = int(np.argmax(norms))
        raise ValueError(
            f"row {bad} has norm {norms[bad]:.6g} above data_norm {data_norm}"
        )
    classes = np.unique(y)
    if not set(classes.tolist()) <= {0, 1} or classes.size < 2:
        raise ValueError("labels must contain both classes 0 and 1")
    n, d = X.shape
    X_unit = X / data_norm
    y_pm = 2.0 * y.astype(float) - 1.0
    w = _fit_logistic(X_unit, y_pm, lam)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD91F]))
    scale = 2.0 / (epsilon * n * lam) if np.isfinite(epsilon) else 0.0
    noise = sample_dp_noise(d, scale, rng)
    return (w + noise) / data_norm


def logistic_predict(w: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Hard 0/1 predictions of a linear logit model."""
    scores = np.asarray(X, dtype=float) @ np.asarray(w, dtype=float)
    return (scores >= 0.0).astype(int)


class BudgetExceeded(ValueError):
    pass


@dataclass
class PrivacyLedger:
    """Append-only (epsilon, delta) spend log with a hard cap."""

    epsilon_cap: float
    delta_cap: float = 0.0
    spends: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.epsilon_cap < 0 or self.delta_cap < 0:
            raise ValueError("caps must be nonnegative")


def ledger_total(ledger: PrivacyLedger) -> tuple[float, float]:
    """Basic composition: sums of the recorded spends."""
    eps = sum(e for e, _ in ledger.spends)
    delta = sum(d for _, d in ledger.spends)
    return eps, delta


def ledger_spend(ledger: PrivacyLedger, epsilon: float, delta: float = 0.0) -> PrivacyLedger:
    """Record one spend; rejects (ledger unchanged) if a cap would be hit."""
    if epsilon < 0 or delta < 0:
        raise ValueError("spends must be nonnegative")
    eps_total, delta_total = ledger_total(ledger)
    if eps_total + epsilon > ledger.epsilon_cap or delta_total + delta > ledger.delta_cap:
        raise BudgetExceeded(
            f"spend ({epsilon}, {delta}) would exceed cap "
            f"({ledger.epsilon_cap}, {ledger.delta_cap})"
        )
    ledger.spends.append((float(epsilon), float(delta)))
    return ledger
