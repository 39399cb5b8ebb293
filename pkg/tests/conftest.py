import numpy as np
import pytest

from glycopipe import cohort, matrix, model, preprocessing


def build_standardized_cohort(n, seed, **spec_kw):
    """Complete (no missing cells) cohort as (X, y, static column names).

    X stacks standardized statics followed by standardized series
    columns, which is the layout FusionClassifier.fit expects.
    """
    spec = cohort.CohortSpec(n=n, seed=seed, missing_rate=0.0, **spec_kw)
    schema = cohort.default_schema(spec)
    records = cohort.to_records(cohort.generate_cohort(spec), schema)
    statics, series, y = matrix.records_to_matrices(records, schema)
    Xs = preprocessing.Standardizer().fit(statics.values).transform(statics.values)
    Xq = preprocessing.Standardizer().fit(series.values).transform(series.values)
    return np.hstack([Xs, Xq]), y, list(statics.columns)


@pytest.fixture(scope="session")
def tiny_fusion():
    """A small trained classifier shared by the slower behavioural tests."""
    X, y, names = build_standardized_cohort(1200, 3)
    clf = model.FusionClassifier(
        series_len=7,
        learning_rate=0.005,
        batch_size=64,
        epochs=4,
        lstm_layers=1,
        hidden_size=8,
        dropout_rate=0.0,
        mlp_hidden=(8,),
        seed=0,
    ).fit(X, y)
    return clf, X, y, names


@pytest.fixture(scope="session")
def dominant_fusion():
    """Classifier trained where one static feature carries nearly all the
    signal, so attribution rankings have an unambiguous right answer."""
    heavy = {
        "fasting_glucose": 2.5,
        "hba1c": 0.2,
        "bmi": 0.2,
        "age": 0.2,
        "systolic_bp": 0.2,
    }
    X, y, names = build_standardized_cohort(
        1500, 3, effect_weights=heavy, series_signal=0.0
    )
    clf = model.FusionClassifier(
        series_len=7,
        learning_rate=0.01,
        batch_size=64,
        epochs=8,
        lstm_layers=1,
        hidden_size=8,
        dropout_rate=0.0,
        mlp_hidden=(8,),
        seed=0,
    ).fit(X, y)
    return clf, X, names
