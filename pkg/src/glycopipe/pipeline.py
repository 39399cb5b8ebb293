"""Five-stage batch pipeline on a virtual clock, with retries and hang
detection.

Stages run in order: data_acquisition, preprocessing,
feature_engineering, model_training, model_evaluation. Each stage task
does real work on files in a working directory and returns a virtual
duration from a deterministic cost model (linear in cohort size), so
repeated runs with one seed produce byte-identical artifacts.

A stage whose virtual duration exceeds its timeout counts as hung; the
runner notices at the first liveness probe at or after the timeout, so
detection lags the deadline by less than one probe interval. Failed
attempts are retried up to the stage's retry limit; once a stage
exhausts its retries, every downstream stage is reported as skipped and
the run still returns a report per stage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import cohort, model, tabular
from .matrix import FeatureMatrix, records_to_matrices
from .metrics import EvalMetrics
from .preprocessing import (
    MeanImputer,
    PrincipalComponents,
    RandomForestImportance,
    Standardizer,
    select_top_k,
)

STAGE_NAMES = (
    "data_acquisition",
    "preprocessing",
    "feature_engineering",
    "model_training",
    "model_evaluation",
)

# virtual hours per stage for a 10k-row cohort; scales linearly with rows
_STAGE_COST_HOURS = {
    "data_acquisition": 2.3,
    "preprocessing": 4.1,
    "feature_engineering": 3.2,
    "model_training": 7.8,
    "model_evaluation": 1.3,
}

_REFERENCE_ROWS = 10_000.0


def stage_duration(name: str, n_rows: int) -> float:
    """Virtual seconds a stage takes on a cohort of n_rows."""
    return _STAGE_COST_HOURS[name] * 3600.0 * (n_rows / _REFERENCE_ROWS)


# A task consumes the shared context and returns (context updates,
# virtual duration in seconds).
StageTask = Callable[[dict], tuple[dict, float]]


@dataclass
class Stage:
    name: str
    task: StageTask
    retry_limit: int = 1
    timeout: float | None = None
    probe_interval: float = 45.0

    def __post_init__(self):
        if self.name not in STAGE_NAMES:
            raise ValueError(f"unknown stage name {self.name!r}")
        if self.retry_limit < 0:
            raise ValueError("retry_limit must be >= 0")
        if self.timeout is not None and self.timeout <= 0:
            raise ValueError("timeout must be positive when set")
        if self.probe_interval <= 0:
            raise ValueError("probe_interval must be positive")


@dataclass
class PipelineDag:
    """The five stages in execution order."""

    stages: list[Stage]

    def __post_init__(self):
        names = tuple(s.name for s in self.stages)
        if names != STAGE_NAMES:
            raise ValueError(f"stages must be exactly {STAGE_NAMES} in order")


@dataclass
class StageReport:
    name: str
    status: str  # success | failed | skipped
    attempts: int
    virtual_seconds: float
    fault_detection_latency: float | None = None

    @property
    def virtual_hours(self) -> float:
        return self.virtual_seconds / 3600.0


def run_pipeline(dag: PipelineDag, context: dict) -> list[StageReport]:
    """Execute the stages sequentially, mutating `context` in place.

    Hung attempts (virtual duration > timeout) contribute their
    detection time to the stage clock and discard their context
    updates. The returned list has exactly one report per stage.
    """
    reports: list[StageReport] = []
    upstream_failed = False
    for stage in dag.stages:
        if upstream_failed:
            reports.append(StageReport(stage.name, "skipped", 0, 0.0))
            continue
        attempts = 0
        elapsed = 0.0
        latency: float | None = None
        status = "failed"
        while attempts <= stage.retry_limit:
            attempts += 1
            try:
                updates, duration = stage.task(context)
            except Exception:
                continue
            if stage.timeout is not None and duration > stage.timeout:
                ticks = math.ceil(stage.timeout / stage.probe_interval)
                detect_time = ticks * stage.probe_interval
                latency = detect_time - stage.timeout
                elapsed += detect_time
                continue
            elapsed += duration
            context.update(updates)
            status = "success"
            break
        if status != "success":
            upstream_failed = True
        reports.append(StageReport(stage.name, status, attempts, elapsed, latency))
    return reports


def split_indices(
    seed: int, n: int, test_fraction: float = 0.2
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic row split; returns sorted (train, test) index arrays."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x59113]))
    order = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    test = np.sort(order[:n_test])
    train = np.sort(order[n_test:])
    return train, test


def _float_cells(arr: np.ndarray) -> list[list]:
    return [[float(v) for v in row] for row in arr]


def _write_feature_csv(
    path: Path,
    ids: list[str],
    blocks: list[tuple[list[str], np.ndarray]],
    labels: np.ndarray,
) -> None:
    header = ["patient_id"]
    mats = []
    for cols, arr in blocks:
        header.extend(cols)
        mats.append(np.asarray(arr, dtype=float))
    header.append("label")
    wide = np.hstack(mats)
    rows = []
    for i in range(wide.shape[0]):
        rows.append([ids[i]] + [float(v) for v in wide[i]] + [int(labels[i])])
    tabular.write_table(tabular.RawTable(header, rows), path)


def _read_feature_csv(path: Path, series_prefix: str = "glucose_day_"):
    """Returns (ids, static block FM, series array, labels)."""
    table = tabular.read_table(path)
    series_cols = [c for c in table.header if c.startswith(series_prefix)]
    static_cols = [
        c
        for c in table.header
        if c not in ("patient_id", "label") and not c.startswith(series_prefix)
    ]
    ids = [str(v) for v in table.column("patient_id")]
    labels = np.array([int(v) for v in table.column("label")], dtype=np.int64)
    statics = np.column_stack(
        [
            [np.nan if v is None else float(v) for v in table.column(c)]
            for c in static_cols
        ]
    )
    series = np.column_stack(
        [[float(v) for v in table.column(c)] for c in series_cols]
    )
    return ids, FeatureMatrix.from_array(statics, static_cols), series, labels


def _cohort_spec(config: dict) -> cohort.CohortSpec:
    section = dict(config.get("cohort", {}))
    return cohort.CohortSpec(
        n=int(section.get("n", 1000)),
        seed=int(section.get("seed", 0)),
        prevalence=float(section.get("prevalence", 0.3)),
        missing_rate=float(section.get("missing_rate", 0.05)),
        series_len=int(section.get("series_len", 7)),
    )


def _train_config(config: dict) -> model.TrainConfig:
    section = dict(config.get("train", {}))
    if "mlp_hidden" in section:
        section["mlp_hidden"] = tuple(section["mlp_hidden"])
    return model.TrainConfig(**section)


def _split_cfg(config: dict) -> tuple[int, float]:
    section = config.get("split", {})
    return int(section.get("seed", 0)), float(section.get("test_fraction", 0.2))


def _task_acquire(config: dict, workdir: Path) -> StageTask:
    def task(ctx: dict) -> tuple[dict, float]:
        spec = _cohort_spec(config)
        table = cohort.generate_cohort(spec)
        path = workdir / "cohort.csv"
        tabular.write_table(table, path)
        updates = {
            "cohort_path": str(path),
            "n_rows": spec.n,
            "series_len": spec.series_len,
        }
        return updates, stage_duration("data_acquisition", spec.n)

    return task


def _task_preprocess(config: dict, workdir: Path) -> StageTask:
    def task(ctx: dict) -> tuple[dict, float]:
        spec = _cohort_spec(config)
        schema = cohort.default_schema(spec)
        table = tabular.read_table(ctx["cohort_path"])
        records = cohort.to_records(table, schema)
        statics, series, labels = records_to_matrices(records, schema)
        if labels is None:
            raise ValueError("cohort file has no labels")
        n = len(records)
        split_seed, test_fraction = _split_cfg(config)
        train_idx, _ = split_indices(split_seed, n, test_fraction)

        def impute_and_scale(fm: FeatureMatrix) -> np.ndarray:
            train_view = FeatureMatrix(
                fm.values[train_idx], fm.mask[train_idx], fm.columns
            )
            filled = MeanImputer().fit(train_view).transform(fm)
            scaler = Standardizer().fit(filled.values[train_idx])
            return scaler.transform(filled.values)

        scaled = impute_and_scale(statics)
        series_scaled = impute_and_scale(series)

        path = workdir / "preprocessed.csv"
        ids = [r.patient_id for r in records]
        _write_feature_csv(
            path,
            ids,
            [
                (statics.columns, scaled),
                (schema.series_columns, series_scaled),
            ],
            labels,
        )
        return {"preprocessed_path": str(path)}, stage_duration("preprocessing", n)

    return task


def _task_features(config: dict, workdir: Path) -> StageTask:
    def task(ctx: dict) -> tuple[dict, float]:
        section = config.get("preprocess", {})
        select_k = int(section.get("select_k", 5))
        pca_k = int(section.get("pca_k", 3))
        split_seed, test_fraction = _split_cfg(config)

        ids, statics, series, labels = _read_feature_csv(
            Path(ctx["preprocessed_path"])
        )
        n = len(ids)
        train_idx, _ = split_indices(split_seed, n, test_fraction)

        forest = RandomForestImportance().fit(
            FeatureMatrix.from_array(statics.values[train_idx], statics.columns),
            labels[train_idx],
        )
        ranking = forest.ranking_
        kept = select_top_k(ranking, select_k)
        keep_idx = [statics.columns.index(c) for c in kept]
        selected = statics.values[:, keep_idx]

        pca = PrincipalComponents(k=pca_k).fit(selected[train_idx])
        components = pca.transform(selected)

        path = workdir / "engineered.csv"
        series_cols = [f"glucose_day_{t + 1}" for t in range(series.shape[1])]
        _write_feature_csv(
            path,
            ids,
            [
                ([f"pc_{j + 1}" for j in range(pca_k)], components),
                (series_cols, series),
            ],
            labels,
        )
        updates = {
            "engineered_path": str(path),
            "selected_features": kept,
            "pca_k": pca_k,
        }
        return updates, stage_duration("feature_engineering", n)

    return task


def _task_train(config: dict, workdir: Path) -> StageTask:
    def task(ctx: dict) -> tuple[dict, float]:
        ids, statics, series, labels = _read_feature_csv(
            Path(ctx["engineered_path"])
        )
        n = len(ids)
        split_seed, test_fraction = _split_cfg(config)
        train_idx, _ = split_indices(split_seed, n, test_fraction)

        X = np.hstack([statics.values, series])
        cfg = _train_config(config)
        clf = model.FusionClassifier(
            series_len=series.shape[1], **cfg.__dict__
        ).fit(X[train_idx], labels[train_idx])

        path = workdir / "model.ckpt"
        model.save_model(path, clf)
        return {"model_path": str(path)}, stage_duration("model_training", n)

    return task


def _task_evaluate(config: dict, workdir: Path) -> StageTask:
    def task(ctx: dict) -> tuple[dict, float]:
        ids, statics, series, labels = _read_feature_csv(
            Path(ctx["engineered_path"])
        )
        n = len(ids)
        split_seed, test_fraction = _split_cfg(config)
        _, test_idx = split_indices(split_seed, n, test_fraction)

        clf = model.load_model(ctx["model_path"])
        X = np.hstack([statics.values, series])
        result: EvalMetrics = model.evaluate(clf, X[test_idx], labels[test_idx])

        payload = dict(result.as_dict())
        payload["n_test"] = int(len(test_idx))
        path = workdir / "metrics.json"
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        return {
            "metrics_path": str(path),
            "test_auc": result.auc,
        }, stage_duration("model_evaluation", n)

    return task


def build_default_dag(config: dict, workdir) -> PipelineDag:
    """Wire the real stage tasks over a working directory.

    config["stages"] may set retry_limit, timeout and probe_interval,
    either globally or per stage name.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    builders = {
        "data_acquisition": _task_acquire,
        "preprocessing": _task_preprocess,
        "feature_engineering": _task_features,
        "model_training": _task_train,
        "model_evaluation": _task_evaluate,
    }
    stage_cfg = config.get("stages", {})
    stages = []
    for name in STAGE_NAMES:
        overrides = {**stage_cfg, **stage_cfg.get(name, {})}
        overrides = {
            k: v
            for k, v in overrides.items()
            if k in ("retry_limit", "timeout", "probe_interval")
        }
        stages.append(Stage(name, builders[name](config, workdir), **overrides))
    return PipelineDag(stages)


def pipeline_summary(reports: list[StageReport]) -> str:
    """Fixed-width status table, one row per stage plus a total."""
    headers = ("Stage", "Status", "Attempts", "Virtual Hours")
    rows = [
        (r.name, r.status, str(r.attempts), f"{r.virtual_hours:.2f}")
        for r in reports
    ]
    total = sum(r.virtual_seconds for r in reports) / 3600.0
    rows.append(("total", "", "", f"{total:.2f}"))
    widths = [
        max(len(headers[j]), max(len(row[j]) for row in rows))
        for j in range(len(headers))
    ]
    lines = [
        "  ".join(h.ljust(widths[j]) for j, h in enumerate(headers)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)))
    return "\n".join(lines)
