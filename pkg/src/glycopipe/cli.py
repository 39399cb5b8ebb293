"""glycopipe command-line interface.

Subcommands cover the whole workflow: cohort generation, preprocessing,
training, evaluation, hyperparameter tuning, federated training,
Paillier key generation, per-prediction explanation, the serving
simulator, and the end-to-end batch pipeline. Machine-readable results
go to files; human-readable tables go to stdout. Every failure prints
one line to stderr and exits nonzero.

Dataset files are delimiter-separated tables with a header. Columns
named ``glucose_day_<t>`` or ``day_<t>`` form the time series (ordered
by t), ``label`` is the binary target, ``patient_id`` is carried but
never used as a feature, and every other numeric column is a static
feature.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import distributed, explain, hyperopt, model, network, paillier, tabular
from . import cohort as cohort_mod
from . import pipeline as pipeline_mod
from . import serving
from .matrix import FeatureMatrix
from .preprocessing import (
    MeanImputer,
    PrincipalComponents,
    RandomForestImportance,
    Standardizer,
    select_top_k,
)

_SERIES_PREFIXES = ("glucose_day_", "day_")


def _series_index(name: str) -> int | None:
    for prefix in _SERIES_PREFIXES:
        tail = name[len(prefix) :]
        if name.startswith(prefix) and tail.isdigit():
            return int(tail)
    return None


def load_dataset(path):
    """Read a feature table; returns (X, y, series_len, static_names).

    X stacks [static columns | series columns]; missing cells become
    NaN. y is None when the file has no label column.
    """
    table = tabular.read_table(path)
    series_cols = sorted(
        (c for c in table.header if _series_index(c) is not None),
        key=_series_index,
    )
    static_cols = [
        c
        for c in table.header
        if c not in ("patient_id", "label") and _series_index(c) is None
    ]
    for c in static_cols + series_cols:
        j = table.header.index(c)
        if table.col_types[j] == tabular.TEXT:
            raise ValueError(f"feature column {c!r} is not numeric")

    def numeric(c):
        return [np.nan if v is None else float(v) for v in table.column(c)]

    cols = [numeric(c) for c in static_cols + series_cols]
    if cols:
        X = np.column_stack(cols)
    else:
        X = np.empty((table.n_rows, 0))
    y = None
    if "label" in table.header:
        raw = table.column("label")
        if any(v is None for v in raw):
            raise ValueError("label column has missing cells")
        y = np.array([int(v) for v in raw], dtype=np.int64)
    return X, y, len(series_cols), static_cols


def _require_labels(y) -> np.ndarray:
    if y is None:
        raise ValueError("dataset has no label column")
    return y


def _require_complete(X: np.ndarray) -> np.ndarray:
    if np.isnan(X).any():
        raise ValueError(
            "dataset has missing cells; run `glycopipe preprocess` first"
        )
    return X


def _patient_ids(path, n: int) -> list[str]:
    table = tabular.read_table(path)
    if "patient_id" in table.header:
        return [str(v) for v in table.column("patient_id")]
    return [f"r{i:06d}" for i in range(n)]


def _load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        loaded = json.load(fh)
    if not isinstance(loaded, dict):
        raise ValueError(f"{path}: expected a JSON object")
    return loaded


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _kv_table(pairs) -> str:
    width = max(len(k) for k, _ in pairs)
    return "\n".join(f"{k.ljust(width)}  {v}" for k, v in pairs)


def cmd_generate(args) -> int:
    spec = cohort_mod.CohortSpec(
        n=args.n,
        seed=args.seed,
        prevalence=args.prevalence,
        missing_rate=args.missing_rate,
    )
    table = cohort_mod.generate_cohort(spec)
    tabular.write_table(table, args.out)
    labels = table.column("label")
    rate = sum(labels) / len(labels) if labels else 0.0
    print(f"wrote {args.out}: {spec.n} rows, positive rate {rate:.3f}")
    return 0


def cmd_preprocess(args) -> int:
    X, y, series_len, static_cols = load_dataset(args.in_path)
    y = _require_labels(y)
    if series_len == 0:
        raise ValueError("dataset has no series columns")
    n, d_static = X.shape[0], X.shape[1] - series_len
    statics = FeatureMatrix.from_array(X[:, :d_static], static_cols)
    series = FeatureMatrix.from_array(X[:, d_static:])

    def impute_and_scale(fm: FeatureMatrix) -> np.ndarray:
        filled = MeanImputer().fit(fm).transform(fm)
        return Standardizer().fit(filled.values).transform(filled.values)

    statics_scaled = impute_and_scale(statics)
    series_scaled = impute_and_scale(series)

    select_k = min(args.select_k, d_static)
    forest = RandomForestImportance().fit(
        FeatureMatrix.from_array(statics_scaled, static_cols), y
    )
    kept = select_top_k(forest.ranking_, select_k)
    keep_idx = [static_cols.index(c) for c in kept]

    pca = PrincipalComponents(k=args.pca_k).fit(statics_scaled[:, keep_idx])
    components = pca.transform(statics_scaled[:, keep_idx])

    ids = _patient_ids(args.in_path, n)
    pipeline_mod._write_feature_csv(
        Path(args.out),
        ids,
        [
            ([f"pc_{j + 1}" for j in range(args.pca_k)], components),
            (
                [f"glucose_day_{t + 1}" for t in range(series_len)],
                series_scaled,
            ),
        ],
        y,
    )
    explained = ", ".join(f"{v:.3f}" for v in pca.explained_variance_)
    print(f"kept features: {', '.join(kept)}")
    print(f"component variances: {explained}")
    print(f"wrote {args.out}: {n} rows")
    return 0


def _train_config_from_file(path) -> model.TrainConfig:
    section = _load_json(path) if path else {}
    if "mlp_hidden" in section:
        section["mlp_hidden"] = tuple(section["mlp_hidden"])
    return model.TrainConfig(**section)


def cmd_train(args) -> int:
    X, y, series_len, _ = load_dataset(args.data)
    y = _require_labels(y)
    _require_complete(X)
    if series_len == 0:
        raise ValueError("dataset has no series columns")
    cfg = _train_config_from_file(args.config)
    clf = model.FusionClassifier(series_len=series_len, **cfg.__dict__).fit(X, y)
    model.save_model(args.out, clf)
    last_auc = clf.history_[-1][1] if clf.history_ else float("nan")
    print(
        f"trained on {X.shape[0]} rows: {clf.param_count()} parameters, "
        f"{len(clf.history_)} epochs, final validation AUC {last_auc:.4f}"
    )
    print(f"wrote {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    clf = model.load_model(args.model)
    X, y, _, _ = load_dataset(args.data)
    y = _require_labels(y)
    _require_complete(X)
    result = model.evaluate(clf, X, y, threshold=args.threshold)
    pairs = [
        (k, f"{v:.4f}" if isinstance(v, float) else str(v))
        for k, v in result.as_dict().items()
    ]
    print(_kv_table(pairs))
    if args.out:
        _write_json(args.out, result.as_dict())
        print(f"wrote {args.out}")
    return 0


def cmd_tune(args) -> int:
    X, y, series_len, _ = load_dataset(args.data)
    y = _require_labels(y)
    _require_complete(X)
    if series_len == 0:
        raise ValueError("dataset has no series columns")
    statics, series = model._split_columns(X, series_len)
    space = hyperopt.default_space()
    scheduler = hyperopt.SchedulerConfig(
        max_t=args.max_t,
        grace_period=args.grace,
        reduction_factor=args.eta,
    )

    def objective(config):
        cfg = model.TrainConfig(
            learning_rate=float(config["learning_rate"]),
            batch_size=int(config["batch_size"]),
            lstm_layers=int(config["lstm_layers"]),
            dropout_rate=float(config["dropout_rate"]),
            hidden_size=args.hidden_size,
            epochs=scheduler.max_t,
            seed=args.seed,
        )
        session = model.TrainingSession(statics, series, y, cfg)
        for _ in range(scheduler.max_t):
            _, val_auc = session.run_epoch()
            yield val_auc

    best, trials = hyperopt.tune(
        objective,
        space,
        scheduler,
        budget_trials=args.budget,
        parallelism=args.parallelism,
        seed=args.seed,
        proposer=args.proposer,
    )
    if args.out:
        Path(args.out).write_text(
            "\n".join(hyperopt.trials_to_lines(trials)) + "\n"
        )
        print(f"wrote {args.out}")
    defaults = model.TrainConfig()
    initial = {p.name: getattr(defaults, p.name) for p in space.params}
    print(hyperopt.summary_table(initial, best.config))
    print(
        f"best trial {best.trial_id}: validation AUC "
        f"{best.final_metric:.4f} after {best.epochs} epochs "
        f"({len(trials)} trials)"
    )
    return 0


def cmd_fedtrain(args) -> int:
    X, y, series_len, _ = load_dataset(args.data)
    y = _require_labels(y)
    _require_complete(X)
    if series_len == 0:
        raise ValueError("dataset has no series columns")
    statics, series = model._split_columns(X, series_len)
    n = y.size
    if args.clients < 1:
        raise ValueError("need at least one client")
    if args.clients > n:
        raise ValueError(f"more clients ({args.clients}) than rows ({n})")
    clients = [
        (statics[idx], series[idx], y[idx])
        for idx in (
            np.arange(n)[np.arange(n) % args.clients == w]
            for w in range(args.clients)
        )
    ]

    kwargs = {}
    if args.mode == "encrypted":
        if not args.key:
            raise ValueError("encrypted mode needs --key")
        sk = paillier.load_private_key(args.key)
        kwargs = {
            "codec": paillier.FixedPointCodec(sk.public.n),
            "public_key": sk.public,
            "private_key": sk,
        }
    cfg = distributed.FederatedRoundConfig(
        local_epochs=args.local_epochs,
        learning_rate=args.lr,
        mode=args.mode,
        seed=args.seed,
        **kwargs,
    )
    dims = network.ModelDims(
        x_in=1,
        lstm_layers=args.layers,
        hidden=args.hidden_size,
        static_dim=statics.shape[1],
        mlp_hidden=(args.hidden_size,),
    )
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0xC11]))
    params = network.init_params(dims, rng)
    for r in range(args.rounds):
        params = distributed.federated_round(clients, params, dims, cfg)
        _, trace = network.forward(params, dims, series, statics)
        loss = network.bce_loss(trace["logits"], y.astype(float))
        print(f"round {r + 1}/{args.rounds}: training loss {loss:.4f}")
    if args.out:
        clf = model.classifier_from_params(params, dims, series_len)
        model.save_model(args.out, clf)
        print(f"wrote {args.out}")
    return 0


def cmd_keygen(args) -> int:
    pk, sk = paillier.paillier_keygen(bits=args.bits, seed=args.seed)
    paillier.save_private_key(args.out, sk)
    pub_path = str(args.out) + ".pub"
    paillier.save_public_key(pub_path, pk)
    print(f"modulus: {pk.n.bit_length()} bits")
    print(f"wrote {args.out} (private) and {pub_path} (public)")
    return 0


def cmd_explain(args) -> int:
    clf = model.load_model(args.model)
    X, _, series_len, static_cols = load_dataset(args.data)
    _require_complete(X)
    if X.shape[0] == 0:
        raise ValueError("dataset is empty")
    if not 0 <= args.row < X.shape[0]:
        raise ValueError(f"--row {args.row} out of range for {X.shape[0]} rows")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    background = X[: args.background]
    attribution = explain.explain_row(
        clf,
        X[args.row],
        background,
        mode=args.mode,
        n_permutations=args.n_permutations,
        seed=args.seed,
        feature_names=static_cols,
    )
    std_errors = attribution.std_errors
    if std_errors is None:
        std_errors = np.zeros_like(attribution.values)
    lines = ["feature,value,std_err"]
    lines.append(f"base,{float(attribution.base_value)!r},0.0")
    for name, value, se in zip(
        attribution.feature_names, attribution.values, std_errors
    ):
        lines.append(f"{name},{float(value)!r},{float(se)!r}")
    attr_path = out_dir / "attributions.csv"
    attr_path.write_text("\n".join(lines) + "\n")

    heat_rows = X[: args.heatmap_rows]
    export = explain.export_heatmap(clf, heat_rows)
    heat_path = out_dir / "heatmap.csv"
    explain.save_heatmap_csv(heat_path, export)
    written = [str(attr_path), str(heat_path)]
    if args.svg:
        svg_path = out_dir / "heatmap.svg"
        explain.save_heatmap_svg(svg_path, export)
        written.append(str(svg_path))
    print(
        f"explained row {args.row} ({args.mode}): "
        f"prediction {attribution.base_value + attribution.total():.4f}, "
        f"baseline {attribution.base_value:.4f}"
    )
    print("wrote " + ", ".join(written))
    return 0


def cmd_serve_sim(args) -> int:
    config = _load_json(args.config)
    workload = serving.WorkloadSpec(**config.get("workload", {}))
    cache_cfg = serving.CacheConfig(**config.get("cache", {"capacity": 128}))
    policy = serving.ScalingPolicy(**config.get("scaling", {}))
    metrics = serving.simulate_service(
        None, workload, cache_cfg, policy, seed=int(config.get("seed", 0))
    )
    pairs = [
        ("arrivals", str(metrics.arrivals)),
        ("hit rate", f"{metrics.hit_rate:.4f}"),
        ("mean wait", f"{metrics.mean_wait:.4f}"),
        ("p50 latency", f"{metrics.p50_latency:.4f}"),
        ("p99 latency", f"{metrics.p99_latency:.4f}"),
        ("throughput", f"{metrics.throughput:.2f}"),
        ("cpu utilization", f"{metrics.cpu_utilization:.4f}"),
        ("final replicas", str(metrics.replica_trace[-1][1])),
    ]
    print(_kv_table(pairs))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "metrics.json", metrics.as_dict())
        events = out_dir / "events.jsonl"
        events.write_text(
            "".join(
                json.dumps(entry, sort_keys=True) + "\n"
                for entry in metrics.tick_log
            )
        )
        print(f"wrote {out_dir / 'metrics.json'} and {events}")
    return 0


def cmd_pipeline(args) -> int:
    config = _load_json(args.config)
    workdir = args.workdir or config.get("workdir", "glycopipe_run")
    dag = pipeline_mod.build_default_dag(config, workdir)
    context: dict = {}
    reports = pipeline_mod.run_pipeline(dag, context)
    print(pipeline_mod.pipeline_summary(reports))
    if "test_auc" in context:
        print(f"test AUC: {context['test_auc']:.4f}")
    ok = all(r.status == "success" for r in reports)
    if not ok:
        failed = [r.name for r in reports if r.status == "failed"]
        print(f"failed stages: {', '.join(failed)}", file=sys.stderr)
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glycopipe",
        description="Diabetes-risk modeling workbench on synthetic cohorts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic cohort table")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prevalence", type=float, default=0.3)
    p.add_argument("--missing-rate", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser(
        "preprocess", help="impute, standardize, select features, project"
    )
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--pca-k", type=int, default=3)
    p.add_argument("--select-k", type=int, default=5)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the fusion classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tune", help="hyperparameter search with early stopping")
    p.add_argument("--data", required=True)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--eta", type=int, default=3)
    p.add_argument("--grace", type=int, default=1)
    p.add_argument("--max-t", type=int, default=27)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--proposer", choices=("random", "smbo"), default="random")
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--hidden-size", type=int, default=16)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("fedtrain", help="federated training rounds")
    p.add_argument("--data", required=True)
    p.add_argument("--clients", type=int, required=True)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--mode", choices=("plain", "encrypted"), default="plain")
    p.add_argument("--key", default=None, help="private key file")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--local-epochs", type=int, default=1)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--hidden-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fedtrain)

    p = sub.add_parser("keygen", help="generate a Paillier keypair")
    p.add_argument("--bits", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("explain", help="attributions and attention heatmap")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("exact", "sample"), default="exact")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--background", type=int, default=50)
    p.add_argument("--n-permutations", type=int, default=500)
    p.add_argument("--heatmap-rows", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("serve-sim", help="discrete-event serving simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_serve_sim)

    p = sub.add_parser("pipeline", help="run the five-stage batch pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--workdir", default=None)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
