"""Numeric feature matrices with explicit missing-value masks.

A FeatureMatrix pairs an n x d float array with a boolean presence mask
(True = value present) and column names. Missing cells hold NaN in the
value array; statistics must ignore them. Transformers in this package
accept either a FeatureMatrix or a plain ndarray in which NaN encodes a
missing value, and return the same kind they were given.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cohort import CohortSchema, PatientRecord


@dataclass
class FeatureMatrix:
    values: np.ndarray
    mask: np.ndarray
    columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2:
            raise ValueError("values must be 2-D")
        if self.mask.shape != self.values.shape:
            raise ValueError("mask shape must match values shape")
        if not self.columns:
            self.columns = [f"col_{j}" for j in range(self.values.shape[1])]
        if len(self.columns) != self.values.shape[1]:
            raise ValueError("column count must match values width")
        present = self.values[self.mask]
        if present.size and not np.all(np.isfinite(present)):
            raise ValueError("unmasked values must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def complete(self) -> bool:
        return bool(self.mask.all())

    def copy(self) -> "FeatureMatrix":
        return FeatureMatrix(self.values.copy(), self.mask.copy(), list(self.columns))

    @classmethod
    def from_array(cls, X, columns=None) -> "FeatureMatrix":
        X = np.asarray(X, dtype=float)
        mask = ~np.isnan(X)
        values = np.where(mask, X, np.nan)
        return cls(values, mask, list(columns) if columns else [])


def as_feature_matrix(X, columns=None) -> FeatureMatrix:
    """Coerce an ndarray (NaN = missing) or FeatureMatrix to FeatureMatrix."""
    if isinstance(X, FeatureMatrix):
        return X
    return FeatureMatrix.from_array(X, columns)


def check_matrix(X, *, allow_missing: bool = True, min_rows: int = 0) -> FeatureMatrix:
    """Validation helper shared by the fit/transform estimators."""
    fm = as_feature_matrix(X)
    if fm.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {fm.shape[0]}")
    if not allow_missing and not fm.complete:
        n_missing = int((~fm.mask).sum())
        raise ValueError(f"matrix has {n_missing} missing cells; impute first")
    return fm


def same_kind(result: FeatureMatrix, like):
    """Return `result` as the caller's input kind (array in, array out)."""
    if isinstance(like, FeatureMatrix):
        return result
    return np.where(result.mask, result.values, np.nan)


def records_to_matrices(
    records: list[PatientRecord], schema: CohortSchema
) -> tuple[FeatureMatrix, FeatureMatrix, np.ndarray | None]:
    """Split records into a statics matrix, a series matrix, and labels.

    Labels come back as an int array when every record carries one, else
    None. Series columns are named day_1..day_T.
    """
    n = len(records)
    d = len(schema.static_columns)
    T = schema.series_len
    statics = np.full((n, d), np.nan)
    series = np.full((n, T), np.nan)
    for i, rec in enumerate(records):
        for j, c in enumerate(schema.static_columns):
            v = rec.statics.get(c)
            if v is not None:
                statics[i, j] = v
        for t, v in enumerate(rec.glucose_series[:T]):
            if v is not None:
                series[i, t] = v
    labels = None
    if n and all(r.label is not None for r in records):
        labels = np.array([r.label for r in records], dtype=np.int64)
    return (
        FeatureMatrix.from_array(statics, schema.static_columns),
        FeatureMatrix.from_array(series, [f"day_{t + 1}" for t in range(T)]),
        labels,
    )
