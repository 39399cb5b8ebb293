"""Simulated data-parallel and federated training.

Everything here runs in-process on a virtual clock; workers are plain
loop iterations, and "communication" is the ring all-reduce schedule
with per-transfer accounting. Reported speedups come from a declared
cost model (compute cost per row, communication cost per element), not
wall time.

Ring all-reduce follows the canonical two-phase schedule over p chunks:
reduce-scatter step s has worker i send chunk (i - s) mod p to worker
(i + 1) mod p, which accumulates it; all-gather step s has worker i send
its completed chunk (i + 1 - s) mod p forward, which overwrites. After
p - 1 steps of each phase every worker holds the full element-wise sum,
having moved exactly 2 (p - 1) N_padded elements in total.

Federated rounds average per-client weight deltas uniformly; in
encrypted mode each coordinate is fixed-point encoded, Paillier
encrypted, homomorphically summed, and decrypted exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import paillier
from .network import ModelDims, backward, flatten_params, forward, unflatten_params
from .paillier import FixedPointCodec, PrivateKey, PublicKey, encode_fixed, decode_fixed

REDUCE_SCATTER = "reduce-scatter"
ALL_GATHER = "all-gather"


@dataclass(frozen=True)
class TransferRecord:
    step: int
    src: int
    dst: int
    chunk: int
    count: int
    phase: str


@dataclass
class TransferLog:
    records: list[TransferRecord] = field(default_factory=list)

    def add(self, step, src, dst, chunk, count, phase):
        self.records.append(TransferRecord(step, src, dst, chunk, count, phase))

    def total_elements(self) -> int:
        return sum(r.count for r in self.records)

    def to_lines(self) -> list[str]:
        return [
            f"{r.step},{r.src},{r.dst},{r.chunk},{r.count},{r.phase}"
            for r in self.records
        ]


def save_transfer_log(path, log: TransferLog) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,src,dst,chunk,count,phase\n")
        for line in log.to_lines():
            fh.write(line + "\n")


def ring_allreduce(vectors) -> tuple[list[np.ndarray], TransferLog]:
    """Sum p equal-length vectors around a ring.

    Returns one copy of the element-wise sum per worker plus the full
    transfer log. Vectors are zero-padded to a multiple of p internally;
    the log counts padded elements.
    """
    p = len(vectors)
    if p == 0:
        raise ValueError("need at least one worker")
    arrays = [np.asarray(v, dtype=float) for v in vectors]
    n = arrays[0].shape[0] if arrays[0].ndim == 1 else -1
    for a in arrays:
        if a.ndim != 1 or a.shape[0] != n:
            raise ValueError("all vectors must be 1-D with equal length")
    log = TransferLog()
    if p == 1:
        return [arrays[0].copy()], log

    chunk_size = -(-n // p)  # ceil; 0 stays 0
    n_pad = chunk_size * p
    buffers = [np.concatenate([a, np.zeros(n_pad - n)]) for a in arrays]

    def chunk_slice(c):
        return slice(c * chunk_size, (c + 1) * chunk_size)

    for step in range(p - 1):
        sends = []
        for src in range(p):
            c = (src - step) % p
            sends.append((src, c, buffers[src][chunk_slice(c)].copy()))
        for src, c, data in sends:
            dst = (src + 1) % p
            buffers[dst][chunk_slice(c)] += data
            log.add(step, src, dst, c, chunk_size, REDUCE_SCATTER)

    for step in range(p - 1):
        sends = []
        for src in range(p):
            c = (src + 1 - step) % p
            sends.append((src, c, buffers[src][chunk_slice(c)].copy()))
        for src, c, data in sends:
            dst = (src + 1) % p
            buffers[dst][chunk_slice(c)] = data
            log.add(step, src, dst, c, chunk_size, ALL_GATHER)

    return [b[:n] for b in buffers], log


@dataclass
class WorkerPool:
    """Shards of a fixed dataset, round-robin by original row index."""

    X_static: np.ndarray
    X_seq: np.ndarray
    y: np.ndarray
    n_workers: int
    shards: list[np.ndarray] = field(default_factory=list)
    virtual_time: float = 0.0

    @property
    def n_rows(self) -> int:
        return int(self.y.shape[0])

    @property
    def idle(self) -> bool:
        return self.n_workers == 0


def _round_robin_shards(n_rows: int, p: int) -> list[np.ndarray]:
    idx = np.arange(n_rows)
    return [idx[idx % p == w] for w in range(p)]


def create_pool(X_static, X_seq, y, n_workers: int) -> WorkerPool:
    if n_workers < 0:
        raise ValueError("worker count must be >= 0")
    X_static = np.asarray(X_static, dtype=float)
    X_seq = np.asarray(X_seq, dtype=float)
    y = np.asarray(y, dtype=float)
    pool = WorkerPool(X_static, X_seq, y, n_workers)
    pool.shards = _round_robin_shards(pool.n_rows, n_workers) if n_workers else []
    return pool


def resize_pool(pool: WorkerPool, new_p: int) -> WorkerPool:
    """Re-shard deterministically; sharding depends only on (n_rows, p)."""
    if new_p < 0:
        raise ValueError("worker count must be >= 0")
    resized = WorkerPool(
        pool.X_static, pool.X_seq, pool.y, new_p, virtual_time=pool.virtual_time
    )
    resized.shards = _round_robin_shards(pool.n_rows, new_p) if new_p else []
    return resized


@dataclass(frozen=True)
class ParallelConfig:
    learning_rate: float = 0.1
    compute_cost_per_row: float = 1.0
    comm_cost_per_element: float = 0.001

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.compute_cost_per_row <= 0 or self.comm_cost_per_element < 0:
            raise ValueError("cost model values out of range")


@dataclass(frozen=True)
class SpeedupReport:
    workers: int
    serial_time: float
    parallel_time: float
    speedup: float
    compute_time: float
    comm_time: float
    elements_transferred: int
    idle: bool = False


def _shard_gradient_sum(params, dims, pool, shard):
    """Sum (not mean) of per-row BCE gradients over one shard."""
    vec, spec = flatten_params(params)
    if shard.size == 0:
        return np.zeros_like(vec), spec
    _, trace = forward(
        params, dims, pool.X_seq[shard], pool.X_static[shard], train=False
    )
    grads, _, _, _ = backward(params, trace, pool.y[shard])
    gvec, spec = flatten_params(grads)
    return gvec * shard.size, spec


def data_parallel_epoch(
    pool: WorkerPool,
    params: dict,
    dims: ModelDims,
    config: ParallelConfig,
):
    """One full-batch gradient step computed across the pool's shards.

    Per-shard gradient sums are combined with ring all-reduce and the
    mean applied as one SGD step, so the result matches a single-worker
    full-batch step for any worker count. A 0-worker pool accepts no
    work: the parameters come back unchanged with an idle report.
    """
    if pool.idle:
        report = SpeedupReport(0, 0.0, 0.0, 1.0, 0.0, 0.0, 0, idle=True)
        return {k: v.copy() for k, v in params.items()}, report
    if pool.n_rows == 0:
        raise ValueError("pool has no data")
    shard_results = [
        _shard_gradient_sum(params, dims, pool, shard) for shard in pool.shards
    ]
    spec = shard_results[0][1]
    summed, log = ring_allreduce([vec for vec, _ in shard_results])
    mean_grad = summed[0] / pool.n_rows
    new_vec = flatten_params(params)[0] - config.learning_rate * mean_grad
    new_params = unflatten_params(new_vec, spec)

    compute = max(shard.size for shard in pool.shards) * config.compute_cost_per_row
    comm = log.total_elements() * config.comm_cost_per_element
    parallel_time = compute + comm
    serial_time = pool.n_rows * config.compute_cost_per_row
    pool.virtual_time += parallel_time
    report = SpeedupReport(
        workers=pool.n_workers,
        serial_time=serial_time,
        parallel_time=parallel_time,
        speedup=serial_time / parallel_time,
        compute_time=compute,
        comm_time=comm,
        elements_transferred=log.total_elements(),
    )
    return new_params, report


@dataclass(frozen=True)
class ElasticPolicy:
    """Worker-count schedule evaluated at epoch boundaries, clamped."""

    min_workers: int = 0
    max_workers: int = 100
    schedule: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.min_workers < 0 or self.max_workers < self.min_workers:
            raise ValueError("need 0 <= min_workers <= max_workers")

    def decide(self, epoch: int, current: int) -> int:
        target = self.schedule.get(epoch, current)
        return min(max(target, self.min_workers), self.max_workers)


def run_elastic(pool, params, dims, config: ParallelConfig, policy: ElasticPolicy, epochs: int):
    """Run epochs under a resize policy; returns (params, reports, pool)."""
    reports = []
    for epoch in range(epochs):
        target = policy.decide(epoch, pool.n_workers)
        if target != pool.n_workers:
            pool = resize_pool(pool, target)
        params, report = data_parallel_epoch(pool, params, dims, config)
        reports.append(report)
    return params, reports, pool


@dataclass(frozen=True)
class FederatedRoundConfig:
    local_epochs: int = 1
    learning_rate: float = 0.1
    mode: str = "plain"
    codec: FixedPointCodec | None = None
    public_key: PublicKey | None = None
    private_key: PrivateKey | None = None
    seed: int = 0

    def __post_init__(self):
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.mode not in ("plain", "encrypted"):
            raise ValueError(f"unknown aggregation mode {self.mode!r}")
        if self.mode == "encrypted":
            if self.codec is None or self.public_key is None or self.private_key is None:
                raise ValueError("encrypted mode needs codec, public_key, private_key")


def _local_delta(client, params, dims, cfg):
    X_static, X_seq, y = client
    X_static = np.asarray(X_static, dtype=float)
    X_seq = np.asarray(X_seq, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.shape[0] == 0:
        raise ValueError("client has no data")
    local = {k: v.copy() for k, v in params.items()}
    for _ in range(cfg.local_epochs):
        _, trace = forward(local, dims, X_seq, X_static, train=False)
        grads, _, _, _ = backward(local, trace, y)
        for k in local:
            local[k] -= cfg.learning_rate * grads[k]
    base_vec, spec = flatten_params(params)
    local_vec, _ = flatten_params(local)
    return local_vec - base_vec, spec


def _aggregate_encrypted(deltas, cfg: FederatedRoundConfig) -> np.ndarray:
    codec, pk, sk = cfg.codec, cfg.public_key, cfg.private_key
    m = len(deltas)
    if m > codec.max_terms:
        raise ValueError(
            f"{m} clients exceed codec capacity {codec.max_terms} summands"
        )
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xFED]))
    dim = deltas[0].shape[0]
    out = np.empty(dim)
    for j in range(dim):
        total_ct = None
        for i, delta in enumerate(deltas):
            try:
                z = encode_fixed(codec, delta[j])
            except ValueError as exc:
                raise ValueError(f"coordinate {j} of client {i}: {exc}") from exc
            ct = paillier.paillier_encrypt(pk, z, rng)
            total_ct = ct if total_ct is None else paillier.paillier_add(pk, total_ct, ct)
        total = paillier.paillier_decrypt(sk, total_ct)  # one decrypt per coordinate
        out[j] = decode_fixed(codec, total, expected_terms=m) / m
    return out


def federated_round(clients, params, dims: ModelDims, cfg: FederatedRoundConfig):
    """One round: local full-batch training per client, uniform averaging.

    Encrypted mode aggregates coordinate-wise under Paillier and never
    decrypts an individual client's delta.
    """
    if len(clients) == 0:
        raise ValueError("need at least one client")
    deltas = []
    spec = None
    for client in clients:
        delta, spec = _local_delta(client, params, dims, cfg)
        deltas.append(delta)
    if cfg.mode == "plain":
        avg = np.mean(deltas, axis=0)
    else:
        avg = _aggregate_encrypted(deltas, cfg)
    base_vec, spec = flatten_params(params)
    return unflatten_params(base_vec + avg, spec)
