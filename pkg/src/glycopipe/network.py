"""From-scratch fusion network: stacked LSTM over the glucose series,
additive attention pooling, a tanh MLP over static features, and a dense
fusion head producing one logit.

Parameters live in a flat dict of named float64 arrays; the backward pass
is the exact reverse of the forward trace (verified against central
finite differences in the test suite), including gradients with respect
to the inputs for adversarial perturbation.

LSTM cell, per step t:
    i = sigmoid(W_i x_t + U_i h_{t-1} + b_i)      f, o analogous
    g = tanh(W_c x_t + U_c h_{t-1} + b_c)
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)

Attention over the top layer's hidden states:
    score_t = v . tanh(h_t) + b,  weights = softmax(scores),
    context = sum_t weights_t h_t

Dropout (inverted scaling) applies between stacked LSTM layers and to MLP
hidden activations, in training mode only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GATES = ("i", "f", "o", "c")


@dataclass(frozen=True)
class ModelDims:
    x_in: int
    lstm_layers: int
    hidden: int
    static_dim: int
    mlp_hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.lstm_layers < 1 or self.hidden < 1 or self.x_in < 1:
            raise ValueError("lstm_layers, hidden and x_in must be >= 1")
        if self.static_dim < 0:
            raise ValueError("static_dim must be >= 0")

    @property
    def mlp_out_dim(self) -> int:
        return self.mlp_hidden[-1] if self.mlp_hidden else self.static_dim

    @property
    def fused_dim(self) -> int:
        return self.hidden + self.mlp_out_dim


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(dims: ModelDims, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Weights uniform in +/- 1/sqrt(fan_in); biases zero."""
    params: dict[str, np.ndarray] = {}
    x = dims.x_in
    h = dims.hidden
    for layer in range(dims.lstm_layers):
        for gate in GATES:
            params[f"lstm{layer}.W_{gate}"] = _uniform(rng, x, (h, x))
            params[f"lstm{layer}.U_{gate}"] = _uniform(rng, h, (h, h))
            params[f"lstm{layer}.b_{gate}"] = np.zeros(h)
        x = h
    params["attn.v"] = _uniform(rng, h, (h,))
    params["attn.b"] = np.zeros(1)
    in_dim = dims.static_dim
    for m, out_dim in enumerate(dims.mlp_hidden):
        params[f"mlp{m}.W"] = _uniform(rng, max(in_dim, 1), (out_dim, in_dim))
        params[f"mlp{m}.b"] = np.zeros(out_dim)
        in_dim = out_dim
    params["fusion.W"] = _uniform(rng, dims.fused_dim, (1, dims.fused_dim))
    params["fusion.b"] = np.zeros(1)
    return params


def zero_params(dims: ModelDims) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(0)
    return {k: np.zeros_like(v) for k, v in init_params(dims, rng).items()}


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def flatten_params(params: dict[str, np.ndarray]):
    """Concatenate tensors in sorted name order; returns (vector, spec)."""
    names = sorted(params)
    spec = [(name, params[name].shape) for name in names]
    vec = np.concatenate([params[name].ravel() for name in names]) if names else np.array([])
    return vec, spec


def unflatten_params(vec: np.ndarray, spec) -> dict[str, np.ndarray]:
    out = {}
    off = 0
    for name, shape in spec:
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        out[name] = vec[off : off + size].reshape(shape).copy()
        off += size
    return out


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax_rows(scores):
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _lstm_layer_forward(params, prefix, inputs, h0=None, c0=None):
    """Run one LSTM layer over a batch; caches every gate activation."""
    B, T, _ = inputs.shape
    h_dim = params[f"{prefix}.b_i"].shape[0]
    h = np.zeros((B, h_dim)) if h0 is None else np.array(h0, dtype=float)
    c = np.zeros((B, h_dim)) if c0 is None else np.array(c0, dtype=float)
    if h.shape != (B, h_dim) or c.shape != (B, h_dim):
        raise ValueError("initial state shape mismatch")
    W = {g: params[f"{prefix}.W_{g}"] for g in GATES}
    U = {g: params[f"{prefix}.U_{g}"] for g in GATES}
    b = {g: params[f"{prefix}.b_{g}"] for g in GATES}
    if W["i"].shape[1] != inputs.shape[2]:
        raise ValueError(
            f"input size {inputs.shape[2]} does not match weights {W['i'].shape}"
        )
    cache = {
        k: np.empty((B, T, h_dim)) for k in ("i", "f", "o", "g", "c", "tanh_c", "h")
    }
    cache["h0"], cache["c0"] = h.copy(), c.copy()
    for t in range(T):
        x_t = inputs[:, t]
        gi = _sigmoid(x_t @ W["i"].T + h @ U["i"].T + b["i"])
        gf = _sigmoid(x_t @ W["f"].T + h @ U["f"].T + b["f"])
        go = _sigmoid(x_t @ W["o"].T + h @ U["o"].T + b["o"])
        gg = np.tanh(x_t @ W["c"].T + h @ U["c"].T + b["c"])
        c = gf * c + gi * gg
        tc = np.tanh(c)
        h = go * tc
        for k, v in (("i", gi), ("f", gf), ("o", go), ("g", gg), ("c", c),
                     ("tanh_c", tc), ("h", h)):
            cache[k][:, t] = v
    cache["inputs"] = inputs
    return cache


def _lstm_layer_backward(params, prefix, cache, d_hidden, grads):
    """Exact BPTT for one layer; returns gradient w.r.t. its inputs."""
    inputs = cache["inputs"]
    B, T, x_dim = inputs.shape
    h_dim = cache["h"].shape[2]
    W = {g: params[f"{prefix}.W_{g}"] for g in GATES}
    U = {g: params[f"{prefix}.U_{g}"] for g in GATES}
    dW = {g: np.zeros_like(W[g]) for g in GATES}
    dU = {g: np.zeros_like(U[g]) for g in GATES}
    db = {g: np.zeros(h_dim) for g in GATES}
    d_inputs = np.zeros((B, T, x_dim))
    dh_next = np.zeros((B, h_dim))
    dc_next = np.zeros((B, h_dim))
    for t in reversed(range(T)):
        gi, gf, go, gg = (cache[k][:, t] for k in ("i", "f", "o", "g"))
        tc = cache["tanh_c"][:, t]
        c_prev = cache["c"][:, t - 1] if t > 0 else cache["c0"]
        h_prev = cache["h"][:, t - 1] if t > 0 else cache["h0"]
        dh = d_hidden[:, t] + dh_next
        da_o = dh * tc * go * (1.0 - go)
        dc = dh * go * (1.0 - tc**2) + dc_next
        da_f = dc * c_prev * gf * (1.0 - gf)
        da_i = dc * gg * gi * (1.0 - gi)
        da_g = dc * gi * (1.0 - gg**2)
        x_t = inputs[:, t]
        for gate, da in (("i", da_i), ("f", da_f), ("o", da_o), ("c", da_g)):
            dW[gate] += da.T @ x_t
            dU[gate] += da.T @ h_prev
            db[gate] += da.sum(axis=0)
        d_inputs[:, t] = (
            da_i @ W["i"] + da_f @ W["f"] + da_o @ W["o"] + da_g @ W["c"]
        )
        dh_next = da_i @ U["i"] + da_f @ U["f"] + da_o @ U["o"] + da_g @ U["c"]
        dc_next = dc * gf
    for gate in GATES:
        grads[f"{prefix}.W_{gate}"] = dW[gate]
        grads[f"{prefix}.U_{gate}"] = dU[gate]
        grads[f"{prefix}.b_{gate}"] = db[gate]
    return d_inputs


def lstm_forward(layer_params: dict, seq: np.ndarray, h0=None, c0=None):
    """Single-sequence layer application: seq is T x x_in.

    Layer parameters are given without a name prefix (keys W_i, U_i, b_i,
    ...). Returns (hidden states T x h, cache for backprop).
    """
    params = {f"layer.{k}": v for k, v in layer_params.items()}
    seq = np.asarray(seq, dtype=float)
    if seq.ndim != 2:
        raise ValueError("seq must be T x x_in")
    h0b = None if h0 is None else np.asarray(h0, dtype=float)[None, :]
    c0b = None if c0 is None else np.asarray(c0, dtype=float)[None, :]
    cache = _lstm_layer_forward(params, "layer", seq[None, :, :], h0b, c0b)
    return cache["h"][0], cache


def attention_pool(H: np.ndarray, v: np.ndarray, bias: float):
    """Additive attention over one sequence of hidden states (T x h)."""
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] < 1:
        raise ValueError("H must be T x h with T >= 1")
    scores = np.tanh(H) @ np.asarray(v, dtype=float) + float(bias)
    weights = _softmax_rows(scores[None, :])[0]
    context = weights @ H
    return context, weights


def _dropout_mask(rng, shape, rate):
    keep = rng.random(shape) >= rate
    return keep.astype(float) / (1.0 - rate)


def forward(
    params: dict,
    dims: ModelDims,
    X_seq: np.ndarray,
    X_static: np.ndarray,
    train: bool = False,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
):
    """Batched forward pass; returns (probabilities, trace).

    X_seq is B x T x x_in (a B x T array is treated as x_in = 1) and
    X_static is B x static_dim. The trace caches everything backward()
    needs, including dropout masks, attention weights and the logits.
    """
    X_seq = np.asarray(X_seq, dtype=float)
    if X_seq.ndim == 2:
        X_seq = X_seq[:, :, None]
    X_static = np.asarray(X_static, dtype=float)
    B, T, x_in = X_seq.shape
    if x_in != dims.x_in:
        raise ValueError(f"series input size {x_in}, model expects {dims.x_in}")
    if X_static.shape != (B, dims.static_dim):
        raise ValueError(
            f"static input shape {X_static.shape}, expected {(B, dims.static_dim)}"
        )
    if not (np.isfinite(X_seq).all() and np.isfinite(X_static).all()):
        raise ValueError("inputs must be finite")
    use_dropout = train and dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("training forward with dropout needs an rng")

    trace: dict = {"dims": dims, "train": train, "dropout_rate": dropout_rate}
    layer_caches = []
    drop_masks = []
    inputs = X_seq
    for layer in range(dims.lstm_layers):
        cache = _lstm_layer_forward(params, f"lstm{layer}", inputs)
        layer_caches.append(cache)
        if layer < dims.lstm_layers - 1:
            if use_dropout:
                mask = _dropout_mask(rng, cache["h"].shape, dropout_rate)
            else:
                mask = None
            drop_masks.append(mask)
            inputs = cache["h"] if mask is None else cache["h"] * mask
        else:
            inputs = cache["h"]
    H = layer_caches[-1]["h"]  # B x T x h

    tanh_H = np.tanh(H)
    scores = np.einsum("bth,h->bt", tanh_H, params["attn.v"]) + params["attn.b"][0]
    attn_w = _softmax_rows(scores)
    context = np.einsum("bt,bth->bh", attn_w, H)

    mlp_inputs = [X_static]
    mlp_pre = []
    mlp_masks = []
    act = X_static
    for m in range(len(dims.mlp_hidden)):
        a = np.tanh(act @ params[f"mlp{m}.W"].T + params[f"mlp{m}.b"])
        mlp_pre.append(a)
        if use_dropout:
            mask = _dropout_mask(rng, a.shape, dropout_rate)
            act = a * mask
        else:
            mask = None
            act = a
        mlp_masks.append(mask)
        mlp_inputs.append(act)

    fused = np.concatenate([context, act], axis=1)
    logits = fused @ params["fusion.W"][0] + params["fusion.b"][0]
    probs = _sigmoid(logits)

    trace.update(
        layer_caches=layer_caches,
        drop_masks=drop_masks,
        tanh_H=tanh_H,
        attn_weights=attn_w,
        context=context,
        mlp_inputs=mlp_inputs,
        mlp_pre=mlp_pre,
        mlp_masks=mlp_masks,
        fused=fused,
        logits=logits,
    )
    return probs, trace


def bce_loss(logits: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy from logits, finite for any finite logit."""
    z = np.asarray(logits, dtype=float)
    y = np.asarray(y, dtype=float)
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return float(np.mean(softplus - y * z))


def backward(params: dict, trace: dict, y: np.ndarray):
    """Gradients of mean BCE w.r.t. every parameter and both inputs.

    Returns (grads, loss, d_seq, d_static); grads mirrors the parameter
    dict in names and shapes.
    """
    dims: ModelDims = trace["dims"]
    y = np.asarray(y, dtype=float)
    logits = trace["logits"]
    B = logits.shape[0]
    loss = bce_loss(logits, y)
    d_logit = (_sigmoid(logits) - y) / B

    grads: dict[str, np.ndarray] = {}
    fused = trace["fused"]
    grads["fusion.W"] = (d_logit @ fused)[None, :]
    grads["fusion.b"] = np.array([d_logit.sum()])
    d_fused = d_logit[:, None] * params["fusion.W"][0][None, :]
    h = dims.hidden
    d_context = d_fused[:, :h]
    d_mlp = d_fused[:, h:]

    # MLP backward (through dropout, tanh, dense)
    for m in reversed(range(len(dims.mlp_hidden))):
        mask = trace["mlp_masks"][m]
        d_act = d_mlp if mask is None else d_mlp * mask
        a = trace["mlp_pre"][m]
        d_z = d_act * (1.0 - a**2)
        layer_in = trace["mlp_inputs"][m]
        grads[f"mlp{m}.W"] = d_z.T @ layer_in
        grads[f"mlp{m}.b"] = d_z.sum(axis=0)
        d_mlp = d_z @ params[f"mlp{m}.W"]
    d_static = d_mlp

    # attention backward
    H = trace["layer_caches"][-1]["h"]
    attn_w = trace["attn_weights"]
    tanh_H = trace["tanh_H"]
    v = params["attn.v"]
    d_w = np.einsum("bh,bth->bt", d_context, H)
    d_H = attn_w[:, :, None] * d_context[:, None, :]
    d_scores = attn_w * (d_w - np.sum(d_w * attn_w, axis=1, keepdims=True))
    grads["attn.v"] = np.einsum("bt,bth->h", d_scores, tanh_H)
    grads["attn.b"] = np.array([d_scores.sum()])
    d_H = d_H + d_scores[:, :, None] * v[None, None, :] * (1.0 - tanh_H**2)

    # stacked LSTM backward, top layer first
    for layer in reversed(range(dims.lstm_layers)):
        d_inputs = _lstm_layer_backward(
            params, f"lstm{layer}", trace["layer_caches"][layer], d_H, grads
        )
        if layer > 0:
            mask = trace["drop_masks"][layer - 1]
            d_H = d_inputs if mask is None else d_inputs * mask
    d_seq = d_inputs
    return grads, loss, d_seq, d_static
