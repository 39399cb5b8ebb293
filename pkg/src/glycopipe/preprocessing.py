"""Fit/transform preprocessing: mean imputation, standardization, PCA,
and random-forest feature importance ranking.

All estimators follow the scikit-learn protocol (fit returns self, fitted
state lives in trailing-underscore attributes, get_params/set_params come
from BaseEstimator) and accept either a FeatureMatrix or an ndarray with
NaN marking missing cells, returning the kind they were given.

Numerical conventions: the scaler uses the population standard deviation
(divisor n) so "variance one" is exact; PCA eigen-decomposes the full
population covariance with cyclic Jacobi rotations and fixes each
component's sign so its largest-magnitude entry is positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .matrix import FeatureMatrix, check_matrix, same_kind


class MeanImputer(BaseEstimator, TransformerMixin):
    """Fill missing cells with the per-column mean over present values."""

    def fit(self, X, y=None):
        fm = check_matrix(X)
        counts = fm.mask.sum(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            raise ValueError(f"column {fm.columns[empty[0]]!r} has no present values")
        sums = np.where(fm.mask, fm.values, 0.0).sum(axis=0)
        self.statistics_ = sums / counts
        self.columns_ = list(fm.columns)
        return self

    def transform(self, X):
        fm = check_matrix(X)
        filled = np.where(fm.mask, fm.values, self.statistics_[None, :])
        out = FeatureMatrix(filled, np.ones_like(fm.mask), list(fm.columns))
        return same_kind(out, X)


class Standardizer(BaseEstimator, TransformerMixin):
    """Center and scale columns to mean 0, population variance 1.

    Constant columns (zero standard deviation) map to all zeros. Input
    must be complete; impute first.
    """

    def fit(self, X, y=None):
        fm = check_matrix(X, allow_missing=False, min_rows=1)
        self.mean_ = fm.values.mean(axis=0)
        self.scale_ = fm.values.std(axis=0)  # ddof=0, population
        self.columns_ = list(fm.columns)
        return self

    def transform(self, X):
        fm = check_matrix(X, allow_missing=False)
        safe = np.where(self.scale_ > 0.0, self.scale_, 1.0)
        z = (fm.values - self.mean_) / safe
        z = np.where(self.scale_ > 0.0, z, 0.0)
        out = FeatureMatrix(z, np.ones_like(fm.mask), list(fm.columns))
        return same_kind(out, X)


def jacobi_eigh(A: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100):
    """Eigen-decompose a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvectors in columns,
    unsorted. Iterates full sweeps until the off-diagonal Frobenius norm
    falls below tol times the matrix scale.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    V = np.eye(n)
    scale = max(np.linalg.norm(A), 1e-300)
    for _ in range(max_sweeps):
        # off-diagonal norm taken directly: the subtraction form
        # sum(A^2) - sum(diag^2) cancels catastrophically near
        # convergence and can stop the sweep around sqrt(eps)
        off2 = float(np.sum((A - np.diag(np.diag(A))) ** 2))
        if off2 <= (tol * scale) ** 2:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                elif abs(theta) > 1e8:  # formula overflows; use its limit
                    t = 0.5 / theta
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p, row_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return np.diag(A).copy(), V


class PrincipalComponents(BaseEstimator, TransformerMixin):
    """Project onto the top-k eigenvectors of the population covariance.

    Parameters
    ----------
    k : number of components to keep (default 3).
    """

    def __init__(self, k: int = 3):
        self.k = k

    def fit(self, X, y=None):
        fm = check_matrix(X, allow_missing=False, min_rows=2)
        n, d = fm.shape
        if not 1 <= self.k <= d:
            raise ValueError(f"k must be in [1, {d}], got {self.k}")
        self.mean_ = fm.values.mean(axis=0)
        centered = fm.values - self.mean_
        cov = centered.T @ centered / n
        eigvals, eigvecs = jacobi_eigh(cov)
        order = np.argsort(-eigvals, kind="stable")[: self.k]
        components = eigvecs[:, order].T
        # resolve sign ambiguity: largest-magnitude entry positive
        for row in components:
            if row[np.argmax(np.abs(row))] < 0:
                row *= -1.0
        self.components_ = components
        self.explained_variance_ = np.maximum(eigvals[order], 0.0)
        self.columns_ = list(fm.columns)
        return self

    def transform(self, X):
        fm = check_matrix(X, allow_missing=False)
        scores = (fm.values - self.mean_) @ self.components_.T
        out = FeatureMatrix(
            scores,
            np.ones(scores.shape, dtype=bool),
            [f"pc_{i + 1}" for i in range(self.components_.shape[0])],
        )
        return same_kind(out, X)


@dataclass
class ImportanceRanking:
    """Features ordered by importance; scores are nonnegative and sum to 1."""

    entries: list[tuple[str, float]]

    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    def top(self, k: int) -> list[str]:
        return self.names()[:k]


def select_top_k(ranking: ImportanceRanking, k: int) -> list[str]:
    """Top-k feature names by score; ties already broken by column order."""
    if k > len(ranking.entries):
        raise ValueError(f"k={k} exceeds {len(ranking.entries)} ranked features")
    return ranking.top(k)


def _gini(n_pos, n_total):
    p = n_pos / n_total
    return 2.0 * p * (1.0 - p)


def _grow_tree(X, y, rng, max_depth, min_leaf, n_split_feats, importances):
    n, d = X.shape
    boot = rng.integers(0, n, size=n)
    stack = [(boot, 0)]
    while stack:
        idx, depth = stack.pop()
        n_node = idx.size
        labels = y[idx]
        pos = int(labels.sum())
        if depth >= max_depth or n_node < 2 * min_leaf or pos == 0 or pos == n_node:
            continue
        feats = rng.choice(d, size=n_split_feats, replace=False)
        parent = _gini(pos, n_node)
        best_gain, best_feat, best_thresh = 0.0, -1, 0.0
        for f in feats:
            xv = X[idx, f]
            order = np.argsort(xv, kind="stable")
            xs = xv[order]
            pos_prefix = np.cumsum(labels[order])
            n_left = np.arange(1, n_node)
            pos_left = pos_prefix[:-1]
            valid = (
                (xs[1:] != xs[:-1])
                & (n_left >= min_leaf)
                & ((n_node - n_left) >= min_leaf)
            )
            if not valid.any():
                continue
            n_right = n_node - n_left
            pos_right = pos - pos_left
            with np.errstate(invalid="ignore"):
                child = (
                    n_left * (2.0 * (pos_left / n_left) * (1.0 - pos_left / n_left))
                    + n_right * (2.0 * (pos_right / n_right) * (1.0 - pos_right / n_right))
                ) / n_node
            gain = np.where(valid, parent - child, -np.inf)
            i = int(np.argmax(gain))
            if gain[i] > best_gain:
                best_gain = float(gain[i])
                best_feat = int(f)
                best_thresh = 0.5 * (xs[i] + xs[i + 1])
        if best_feat < 0:
            continue
        importances[best_feat] += n_node * best_gain
        left = idx[X[idx, best_feat] <= best_thresh]
        right = idx[X[idx, best_feat] > best_thresh]
        stack.append((left, depth + 1))
        stack.append((right, depth + 1))


class RandomForestImportance(BaseEstimator):
    """Gini-importance ranking from an ensemble of bootstrapped trees.

    Each tree is grown on a bootstrap sample with sqrt(d) candidate
    features per split, depth-limited, splitting on the largest Gini
    impurity decrease. Importance is the total node-size-weighted
    impurity decrease per feature, normalized to sum to one over the
    forest. Deterministic for a given seed.
    """

    def __init__(
        self,
        n_trees: int = 100,
        max_depth: int = 6,
        min_samples_leaf: int = 5,
        seed: int = 0,
    ):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.seed = seed

    def fit(self, X, y):
        fm = check_matrix(X, allow_missing=False, min_rows=1)
        y = np.asarray(y)
        classes = np.unique(y)
        if not np.isin(classes, (0, 1)).all() or classes.size != 2:
            raise ValueError("labels must be binary with both classes present")
        n, d = fm.shape
        n_split_feats = max(1, int(np.sqrt(d)))
        importances = np.zeros(d)
        children = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        for child in children:
            rng = np.random.default_rng(child)
            _grow_tree(
                fm.values,
                y.astype(np.int64),
                rng,
                self.max_depth,
                self.min_samples_leaf,
                n_split_feats,
                importances,
            )
        total = importances.sum()
        if total <= 0.0:
            raise ValueError("no informative split found in any tree")
        self.feature_importances_ = importances / total
        order = sorted(range(d), key=lambda j: (-self.feature_importances_[j], j))
        self.ranking_ = ImportanceRanking(
            [(fm.columns[j], float(self.feature_importances_[j])) for j in order]
        )
        self.columns_ = list(fm.columns)
        return self
