"""Training loop and estimator wrapper around the fusion network.

The classifier consumes a single 2-D matrix whose first columns are the
static features and whose trailing `series_len` columns are the glucose
series in time order. Training is plain minibatch SGD or Adam on the
exact gradients from `network.backward`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import network
from .checkpoint import QuantTensor, load_checkpoint, save_checkpoint
from .metrics import EvalMetrics, metrics_from_scores
from .network import ModelDims

# Tuned operating point used as the default configuration.
TUNED_LEARNING_RATE = 0.00137
TUNED_BATCH_SIZE = 128
TUNED_LSTM_LAYERS = 3
TUNED_DROPOUT = 0.32


@dataclass
class TrainConfig:
    learning_rate: float = TUNED_LEARNING_RATE
    batch_size: int = TUNED_BATCH_SIZE
    epochs: int = 30
    lstm_layers: int = TUNED_LSTM_LAYERS
    hidden_size: int = 32
    dropout_rate: float = TUNED_DROPOUT
    mlp_hidden: tuple[int, ...] = (16,)
    optimizer: str = "adam"
    seed: int = 0
    patience: int | None = None
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lstm_layers < 1 or self.hidden_size < 1:
            raise ValueError("lstm_layers and hidden_size must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1 when set")
        self.mlp_hidden = tuple(int(m) for m in self.mlp_hidden)


def _check_xy(X_static, X_seq, y):
    X_static = np.asarray(X_static, dtype=float)
    X_seq = np.asarray(X_seq, dtype=float)
    y = np.asarray(y)
    if X_static.ndim != 2 or X_seq.ndim != 2:
        raise ValueError("static and series inputs must be 2-D")
    n = X_static.shape[0]
    if X_seq.shape[0] != n or y.shape != (n,):
        raise ValueError("row counts of statics, series and labels disagree")
    if n == 0:
        raise ValueError("empty training data")
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("labels must be 0 or 1")
    y = y.astype(float)
    if np.unique(y).size < 2:
        raise ValueError("training labels contain a single class")
    return X_static, X_seq, y


def stratified_split(y, val_fraction, seed):
    """Deterministic class-proportional split; returns (train_idx, val_idx)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5711]))
    y = np.asarray(y)
    train_parts, val_parts = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = rng.permutation(idx)
        n_val = max(1, int(round(val_fraction * idx.size))) if idx.size else 0
        val_parts.append(idx[:n_val])
        train_parts.append(idx[n_val:])
    train_idx = np.sort(np.concatenate(train_parts))
    val_idx = np.sort(np.concatenate(val_parts))
    if train_idx.size == 0:
        raise ValueError("validation split leaves no training rows")
    return train_idx, val_idx


class _Optimizer:
    def __init__(self, config: TrainConfig, params):
        self.lr = config.learning_rate
        self.kind = config.optimizer
        if self.kind == "adam":
            self.m = {k: np.zeros_like(v) for k, v in params.items()}
            self.v = {k: np.zeros_like(v) for k, v in params.items()}
            self.t = 0
            self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8

    def step(self, params, grads):
        if self.kind == "sgd":
            for k in params:
                params[k] -= self.lr * grads[k]
            return
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k in params:
            self.m[k] = b1 * self.m[k] + (1 - b1) * grads[k]
            self.v[k] = b2 * self.v[k] + (1 - b2) * grads[k] ** 2
            m_hat = self.m[k] / (1 - b1**self.t)
            v_hat = self.v[k] / (1 - b2**self.t)
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class TrainingSession:
    """Incremental trainer: one `run_epoch()` call per epoch.

    Exists so schedulers can interleave epochs of competing
    configurations without retraining from scratch.
    """

    def __init__(self, X_static, X_seq, y, config: TrainConfig, val=None):
        X_static, X_seq, y = _check_xy(X_static, X_seq, y)
        self.config = config
        self.dims = ModelDims(
            x_in=1,
            lstm_layers=config.lstm_layers,
            hidden=config.hidden_size,
            static_dim=X_static.shape[1],
            mlp_hidden=config.mlp_hidden,
        )
        ss = np.random.SeedSequence([config.seed, 0x6D0D])
        init_ss, self._shuffle_ss, self._drop_ss = ss.spawn(3)
        self.params = network.init_params(self.dims, np.random.default_rng(init_ss))
        if val is None:
            tr, va = stratified_split(y, config.val_fraction, config.seed)
            self.X_static, self.X_seq, self.y = X_static[tr], X_seq[tr], y[tr]
            self.val = (X_static[va], X_seq[va], y[va])
        else:
            self.X_static, self.X_seq, self.y = X_static, X_seq, y
            vs, vq, vy = val
            self.val = (
                np.asarray(vs, dtype=float),
                np.asarray(vq, dtype=float),
                np.asarray(vy, dtype=float),
            )
        if np.unique(self.y).size < 2:
            raise ValueError("training labels contain a single class")
        self._optimizer = _Optimizer(config, self.params)
        self._epoch = 0
        self.history: list[tuple[float, float]] = []

    def run_epoch(self) -> tuple[float, float]:
        """One pass over the training rows; returns (train_loss, val_auc)."""
        cfg = self.config
        shuffle_rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 0x6D0D, 1, self._epoch])
        )
        drop_rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 0x6D0D, 2, self._epoch])
        )
        order = shuffle_rng.permutation(self.y.size)
        total_loss = 0.0
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            _, trace = network.forward(
                self.params,
                self.dims,
                self.X_seq[idx],
                self.X_static[idx],
                train=True,
                dropout_rate=cfg.dropout_rate,
                rng=drop_rng,
            )
            grads, loss, _, _ = network.backward(self.params, trace, self.y[idx])
            self._optimizer.step(self.params, grads)
            total_loss += loss * idx.size
        train_loss = total_loss / order.size
        val_auc = self._val_auc()
        self._epoch += 1
        self.history.append((train_loss, val_auc))
        return train_loss, val_auc

    def _val_auc(self) -> float:
        vs, vq, vy = self.val
        if vy.size == 0 or np.unique(vy).size < 2:
            return 0.5
        scores = predict_scores(self.params, self.dims, vs, vq)
        from .metrics import rank_auc

        return rank_auc(scores, vy)


def train(X_static, X_seq, y, config: TrainConfig, val=None):
    """Full training run; returns (params, dims, history).

    history has one (train_loss, val_auc) pair per epoch actually run;
    with `patience` set, training stops once validation AUC has not
    improved for that many consecutive epochs and the best-epoch
    parameters are returned.
    """
    session = TrainingSession(X_static, X_seq, y, config, val=val)
    best_auc = -np.inf
    best_params = {k: v.copy() for k, v in session.params.items()}
    stale = 0
    for _ in range(config.epochs):
        _, val_auc = session.run_epoch()
        if val_auc > best_auc + 1e-12:
            best_auc = val_auc
            best_params = {k: v.copy() for k, v in session.params.items()}
            stale = 0
        else:
            stale += 1
        if config.patience is not None and stale >= config.patience:
            break
    params = best_params if config.patience is not None else session.params
    return params, session.dims, list(session.history)


def predict_scores(params, dims: ModelDims, X_static, X_seq) -> np.ndarray:
    """Positive-class probabilities, strictly inside (0, 1)."""
    probs, _ = network.forward(params, dims, X_seq, X_static, train=False)
    return np.clip(probs, 1e-15, 1.0 - 1e-15)


def _split_columns(X, series_len):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if series_len < 1:
        raise ValueError("series_len must be >= 1")
    if X.shape[1] <= series_len:
        raise ValueError(
            f"X has {X.shape[1]} columns, needs static columns plus {series_len} series columns"
        )
    if not np.isfinite(X).all():
        raise ValueError("X contains non-finite values; impute first")
    return X[:, : X.shape[1] - series_len], X[:, X.shape[1] - series_len :]


class FusionClassifier(BaseEstimator, ClassifierMixin):
    """Binary risk classifier over [static columns | series columns].

    The trailing `series_len` columns of X feed the recurrent branch;
    everything before them feeds the static branch. Follows the usual
    fit/predict estimator conventions.
    """

    def __init__(
        self,
        series_len: int = 7,
        learning_rate: float = TUNED_LEARNING_RATE,
        batch_size: int = TUNED_BATCH_SIZE,
        epochs: int = 30,
        lstm_layers: int = TUNED_LSTM_LAYERS,
        hidden_size: int = 32,
        dropout_rate: float = TUNED_DROPOUT,
        mlp_hidden: tuple[int, ...] = (16,),
        optimizer: str = "adam",
        seed: int = 0,
        patience: int | None = None,
        val_fraction: float = 0.2,
    ):
        self.series_len = series_len
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.lstm_layers = lstm_layers
        self.hidden_size = hidden_size
        self.dropout_rate = dropout_rate
        self.mlp_hidden = mlp_hidden
        self.optimizer = optimizer
        self.seed = seed
        self.patience = patience
        self.val_fraction = val_fraction

    def _config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            lstm_layers=self.lstm_layers,
            hidden_size=self.hidden_size,
            dropout_rate=self.dropout_rate,
            mlp_hidden=tuple(self.mlp_hidden),
            optimizer=self.optimizer,
            seed=self.seed,
            patience=self.patience,
            val_fraction=self.val_fraction,
        )

    def fit(self, X, y):
        statics, series = _split_columns(X, self.series_len)
        self.params_, self.dims_, self.history_ = train(
            statics, series, y, self._config()
        )
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = np.asarray(X).shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise ValueError("classifier is not fitted; call fit first")

    def predict_proba(self, X):
        self._check_fitted()
        statics, series = _split_columns(X, self.series_len)
        p1 = predict_scores(self.params_, self.dims_, statics, series)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    def decision_function(self, X):
        self._check_fitted()
        statics, series = _split_columns(X, self.series_len)
        probs, trace = network.forward(self.params_, self.dims_, series, statics)
        return trace["logits"]

    def attention_weights(self, X) -> np.ndarray:
        """Per-row attention weights over the series steps (n x T)."""
        self._check_fitted()
        statics, series = _split_columns(X, self.series_len)
        _, trace = network.forward(self.params_, self.dims_, series, statics)
        return trace["attn_weights"]

    def input_gradients(self, X, y):
        """Gradient of the mean BCE w.r.t. X, same shape as X."""
        self._check_fitted()
        statics, series = _split_columns(X, self.series_len)
        _, trace = network.forward(self.params_, self.dims_, series, statics)
        _, _, d_seq, d_static = network.backward(
            self.params_, trace, np.asarray(y, dtype=float)
        )
        return np.hstack([d_static, d_seq[:, :, 0]])

    def param_count(self) -> int:
        self._check_fitted()
        return network.param_count(self.params_)


def evaluate(clf: FusionClassifier, X, y, threshold: float = 0.5) -> EvalMetrics:
    """Held-out metrics at the given decision threshold."""
    scores = clf.predict_proba(X)[:, 1]
    return metrics_from_scores(scores, np.asarray(y), threshold=threshold)


@dataclass
class QuantizedModel:
    """Int8 snapshot of a trained network plus everything to restore it."""

    tensors: dict[str, QuantTensor]
    dims: ModelDims
    series_len: int

    def dequantize(self) -> dict[str, np.ndarray]:
        return {k: t.dequantize() for k, t in self.tensors.items()}

    def param_count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def payload_bytes(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def size_fraction_of_f32(self) -> float:
        """Weight payload size relative to a float32 copy of the weights."""
        return self.payload_bytes() / (4.0 * self.param_count())


def quantize_tensor(arr: np.ndarray) -> QuantTensor:
    """Per-tensor affine int8 quantization.

    scale = (max - min) / 255 with the -128 code pinned to the minimum,
    so the round-trip error is at most scale / 2. An all-constant tensor
    round-trips exactly.
    """
    arr = np.asarray(arr, dtype=float)
    mn = float(arr.min()) if arr.size else 0.0
    mx = float(arr.max()) if arr.size else 0.0
    if mx == mn:
        zero_point = -mn  # (0 - zp) * 1.0 == mn
        data = np.zeros(arr.shape, dtype=np.int8)
        return QuantTensor(data=data, scale=1.0, zero_point=zero_point)
    scale = (mx - mn) / 255.0
    zero_point = -128.0 - mn / scale
    q = np.clip(np.rint(arr / scale + zero_point), -128, 127).astype(np.int8)
    return QuantTensor(data=q, scale=scale, zero_point=zero_point)


def quantize_int8(clf: FusionClassifier) -> QuantizedModel:
    clf._check_fitted()
    tensors = {name: quantize_tensor(v) for name, v in clf.params_.items()}
    return QuantizedModel(tensors=tensors, dims=clf.dims_, series_len=clf.series_len)


def classifier_from_params(params, dims: ModelDims, series_len: int) -> FusionClassifier:
    clf = FusionClassifier(
        series_len=series_len,
        lstm_layers=dims.lstm_layers,
        hidden_size=dims.hidden,
        mlp_hidden=dims.mlp_hidden,
    )
    clf.params_ = {k: np.asarray(v, dtype=float) for k, v in params.items()}
    clf.dims_ = dims
    clf.history_ = []
    clf.classes_ = np.array([0, 1])
    clf.n_features_in_ = dims.static_dim + series_len
    return clf


def _dims_config(dims: ModelDims, series_len: int) -> dict:
    return {
        "kind": "fusion_classifier",
        "x_in": dims.x_in,
        "lstm_layers": dims.lstm_layers,
        "hidden": dims.hidden,
        "static_dim": dims.static_dim,
        "mlp_hidden": list(dims.mlp_hidden),
        "series_len": series_len,
    }


def _dims_from_config(config: dict) -> tuple[ModelDims, int]:
    dims = ModelDims(
        x_in=int(config["x_in"]),
        lstm_layers=int(config["lstm_layers"]),
        hidden=int(config["hidden"]),
        static_dim=int(config["static_dim"]),
        mlp_hidden=tuple(int(m) for m in config["mlp_hidden"]),
    )
    return dims, int(config["series_len"])


def save_model(path, clf: FusionClassifier) -> None:
    clf._check_fitted()
    config = _dims_config(clf.dims_, clf.series_len)
    config["quantized"] = False
    save_checkpoint(path, clf.params_, config)


def save_quantized(path, model: QuantizedModel) -> None:
    config = _dims_config(model.dims, model.series_len)
    config["quantized"] = True
    save_checkpoint(path, model.tensors, config)


def load_model(path) -> FusionClassifier:
    """Load either a float64 or an int8 checkpoint into a usable classifier."""
    tensors, config = load_checkpoint(path)
    if config.get("kind") != "fusion_classifier":
        raise ValueError("checkpoint does not hold a fusion classifier")
    dims, series_len = _dims_from_config(config)
    if config.get("quantized"):
        params = {
            k: (t.dequantize() if isinstance(t, QuantTensor) else t)
            for k, t in tensors.items()
        }
    else:
        params = tensors
    return classifier_from_params(params, dims, series_len)


def load_quantized(path) -> QuantizedModel:
    tensors, config = load_checkpoint(path)
    if not config.get("quantized"):
        raise ValueError("checkpoint holds float weights, not an int8 snapshot")
    dims, series_len = _dims_from_config(config)
    qt = {}
    for k, t in tensors.items():
        if not isinstance(t, QuantTensor):
            raise ValueError(f"tensor {k!r} in int8 checkpoint is not quantized")
        qt[k] = t
    return QuantizedModel(tensors=qt, dims=dims, series_len=series_len)
