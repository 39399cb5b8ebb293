"""Serving-side machinery on a virtual clock: an LRU cache with TTL
expiry, a threshold autoscaler, and a discrete-event simulator tying
them together with a queueing model.

Cache semantics: a get refreshes recency; an entry older than its TTL is
treated as absent (strictly older — age exactly equal to the TTL still
hits) and purged lazily on access or during the eviction scan. At
capacity, the least-recently-used live entry is evicted.

Autoscaler semantics: scale up by one step when cpu > cpu_high OR queue
length > queue_high (strict); scale down when cpu < cpu_low; both
directions share one cooldown. Decisions take effect apply_latency
virtual seconds later, and the replica count always stays within
[base_replicas, max_scale * base_replicas].

The simulator processes Poisson arrivals with Zipf-popular keys over an
event heap keyed by (time, sequence); a cache hit answers immediately,
a miss occupies a replica for the service time, queueing FIFO when all
replicas are busy. Conservation (arrivals = hits + completed + queued +
in flight) holds exactly for every seed.
"""

from __future__ import annotations

import heapq
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CacheConfig:
    capacity: int
    ttl_seconds: float = 300.0

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be >= 0")
        if not self.ttl_seconds > 0:
            raise ValueError("ttl_seconds must be positive (math.inf allowed)")


class LruTtlCache:
    """Ordered-dict LRU with lazy TTL expiry and hit/miss counters."""

    def __init__(self, config: CacheConfig):
        self.config = config
        self._entries: OrderedDict = OrderedDict()  # key -> (value, insert_time)
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def _expired(self, insert_time: float, now: float) -> bool:
        return now - insert_time > self.config.ttl_seconds

    def get(self, key, now: float):
        """Returns (hit, value); value is None on a miss."""
        entry = self._entries.get(key)
        if entry is not None:
            value, inserted = entry
            if self._expired(inserted, now):
                del self._entries[key]
            else:
                self._entries.move_to_end(key)
                self.hits += 1
                return True, value
        self.misses += 1
        return False, None

    def put(self, key, value, now: float) -> None:
        if self.config.capacity == 0:
            return
        if key in self._entries:
            del self._entries[key]
        elif len(self._entries) >= self.config.capacity:
            for k in [
                k
                for k, (_, ins) in self._entries.items()
                if self._expired(ins, now)
            ]:
                del self._entries[k]
            if len(self._entries) >= self.config.capacity:
                self._entries.popitem(last=False)
        self._entries[key] = (value, now)

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


def cache_get(cache: LruTtlCache, key, now: float):
    return cache.get(key, now)


def cache_put(cache: LruTtlCache, key, value, now: float) -> None:
    cache.put(key, value, now)


@dataclass(frozen=True)
class ScalingPolicy:
    base_replicas: int = 2
    cpu_high: float = 0.75
    queue_high: int = 100
    cpu_low: float = 0.4
    max_scale: int = 5
    step: int = 1
    cooldown: float = 60.0
    apply_latency: float = 30.0
    eval_interval: float = 15.0

    def __post_init__(self):
        if self.base_replicas < 0:
            raise ValueError("base_replicas must be >= 0")
        if self.max_scale < 1 or self.step < 1:
            raise ValueError("max_scale and step must be >= 1")
        if self.cooldown < 0 or self.apply_latency < 0 or self.eval_interval <= 0:
            raise ValueError("timing fields out of range")

    @property
    def max_replicas(self) -> int:
        return self.max_scale * self.base_replicas


def static_policy(replicas: int) -> ScalingPolicy:
    """A policy that never triggers; fixed replica count."""
    return ScalingPolicy(
        base_replicas=replicas,
        cpu_high=2.0,
        queue_high=10**12,
        cpu_low=-1.0,
    )


@dataclass
class ScalingState:
    policy: ScalingPolicy
    replicas: int = -1
    last_action_time: float = -math.inf
    pending: list[tuple[float, int]] = field(default_factory=list)
    actions: list[tuple[float, int]] = field(default_factory=list)

    def __post_init__(self):
        if self.replicas < 0:
            self.replicas = self.policy.base_replicas

    def apply_pending(self, now: float) -> None:
        due = [p for p in self.pending if p[0] <= now]
        if due:
            self.pending = [p for p in self.pending if p[0] > now]
            self.replicas = due[-1][1]

    def target(self) -> int:
        return self.pending[-1][1] if self.pending else self.replicas


def autoscale_step(state: ScalingState, observed: dict, now: float) -> int:
    """One policy evaluation; returns the replica count now in force.

    observed carries cpu_util and queue_len. A triggered change is
    scheduled apply_latency seconds ahead; the cooldown window applies
    to scale-ups and scale-downs alike.
    """
    policy = state.policy
    state.apply_pending(now)
    cpu = float(observed.get("cpu_util", 0.0))
    queue_len = int(observed.get("queue_len", 0))
    if now - state.last_action_time < policy.cooldown:
        return state.replicas
    current_target = state.target()
    if cpu > policy.cpu_high or queue_len > policy.queue_high:
        target = min(current_target + policy.step, policy.max_replicas)
    elif cpu < policy.cpu_low:
        target = max(current_target - policy.step, policy.base_replicas)
    else:
        return state.replicas
    if target == current_target:
        return state.replicas
    state.pending.append((now + policy.apply_latency, target))
    state.actions.append((now, target))
    state.last_action_time = now
    return state.replicas


@dataclass(frozen=True)
class WorkloadSpec:
    arrival_rate: float = 50.0  # requests per virtual second
    duration: float = 120.0
    n_keys: int = 1000
    zipf_s: float = 1.0
    service_time: float = 0.05
    service_dist: str = "exponential"  # or "fixed"

    def __post_init__(self):
        if self.arrival_rate <= 0 or self.duration <= 0:
            raise ValueError("arrival_rate and duration must be positive")
        if self.n_keys < 1:
            raise ValueError("n_keys must be >= 1")
        if self.zipf_s < 0:
            raise ValueError("zipf_s must be >= 0")
        if self.service_time <= 0:
            raise ValueError("service_time must be positive")
        if self.service_dist not in ("exponential", "fixed"):
            raise ValueError(f"unknown service_dist {self.service_dist!r}")


def zipf_probabilities(n_keys: int, s: float) -> np.ndarray:
    ranks = np.arange(1, n_keys + 1, dtype=float)
    weights = ranks**-s
    return weights / weights.sum()


@dataclass
class SimMetrics:
    arrivals: int
    hits: int
    misses: int
    completed: int
    queued_at_end: int
    in_flight_at_end: int
    dropped: int
    hit_rate: float
    mean_wait: float
    p50_latency: float
    p99_latency: float
    throughput: float
    cpu_utilization: float
    replica_trace: list[tuple[float, int]]
    tick_log: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        skip = ("replica_trace", "tick_log")
        out = {k: v for k, v in self.__dict__.items() if k not in skip}
        out["replica_trace"] = [[t, r] for t, r in self.replica_trace]
        return out


_ARRIVAL, _DEPARTURE, _TICK = 0, 1, 2


def simulate_service(
    model,
    workload: WorkloadSpec,
    cache_cfg: CacheConfig,
    policy: ScalingPolicy,
    seed: int = 0,
    drain_limit: float | None = None,
) -> SimMetrics:
    """Discrete-event run of the cache + queue + autoscaler stack.

    model, when callable, computes the value cached per key (the
    queueing behavior does not depend on it). Arrivals stop after
    workload.duration; service continues until the system drains or the
    virtual clock passes drain_limit (default 10x duration), anything
    still waiting then is reported as queued_at_end.
    """
    rng_arrivals = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    rng_keys = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    rng_service = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    if drain_limit is None:
        drain_limit = 10.0 * workload.duration
    drain_limit = max(drain_limit, workload.duration)  # never cut off arrivals

    cache = LruTtlCache(cache_cfg)
    state = ScalingState(policy)
    probs = zipf_probabilities(workload.n_keys, workload.zipf_s)

    heap: list[tuple[float, int, int, object]] = []
    seq = 0

    def push(time, kind, payload=None):
        nonlocal seq
        heapq.heappush(heap, (time, seq, kind, payload))
        seq += 1

    # pre-draw the whole arrival stream for reproducibility
    t = 0.0
    arrival_times = []
    while True:
        t += rng_arrivals.exponential(1.0 / workload.arrival_rate)
        if t > workload.duration:
            break
        arrival_times.append(t)
    keys = rng_keys.choice(workload.n_keys, size=len(arrival_times), p=probs)
    for at, key in zip(arrival_times, keys):
        push(at, _ARRIVAL, int(key))
    push(policy.eval_interval, _TICK)

    queue: list[tuple[float, int]] = []  # (arrival time, key)
    busy = 0
    hits = 0
    completed = 0
    waits: list[float] = []
    latencies: list[float] = []
    busy_integral = 0.0
    capacity_integral = 0.0
    last_time = 0.0
    replica_trace: list[tuple[float, int]] = [(0.0, state.replicas)]
    tick_log: list[dict] = []

    def service_time() -> float:
        if workload.service_dist == "fixed":
            return workload.service_time
        return rng_service.exponential(workload.service_time)

    def start_if_possible(now):
        nonlocal busy
        while queue and busy < state.replicas:
            arrived, key = queue.pop(0)
            busy += 1
            waits.append(now - arrived)
            push(now + service_time(), _DEPARTURE, (arrived, key))

    while heap:
        now, _, kind, payload = heapq.heappop(heap)
        if now > drain_limit:
            break
        busy_integral += busy * (now - last_time)
        capacity_integral += state.replicas * (now - last_time)
        last_time = now
        prev_replicas = state.replicas
        state.apply_pending(now)
        if state.replicas != prev_replicas:
            replica_trace.append((now, state.replicas))
            start_if_possible(now)

        if kind == _ARRIVAL:
            key = payload
            hit, _ = cache.get(key, now)
            if hit:
                hits += 1
                latencies.append(0.0)
            else:
                queue.append((now, key))
                start_if_possible(now)
        elif kind == _DEPARTURE:
            arrived, key = payload
            busy -= 1
            completed += 1
            latencies.append(now - arrived)
            value = model(key) if callable(model) else key
            cache.put(key, value, now)
            start_if_possible(now)
        else:  # autoscaler tick
            window_cap = state.replicas if state.replicas else 1
            observed = {
                "cpu_util": busy / window_cap,
                "queue_len": len(queue),
            }
            tick_log.append(
                {
                    "time": now,
                    "cpu_util": observed["cpu_util"],
                    "queue_len": observed["queue_len"],
                    "replicas": state.replicas,
                }
            )
            before = state.replicas
            autoscale_step(state, observed, now)
            if state.replicas != before:
                replica_trace.append((now, state.replicas))
                start_if_possible(now)
            if heap or queue or state.pending:  # stop ticking once idle
                push(now + policy.eval_interval, _TICK)

    arrivals = len(arrival_times)
    served = hits + completed
    latencies_arr = np.array(latencies) if latencies else np.zeros(1)
    metrics = SimMetrics(
        arrivals=arrivals,
        hits=hits,
        misses=cache.misses,
        completed=completed,
        queued_at_end=len(queue),
        in_flight_at_end=busy,
        dropped=0,
        hit_rate=cache.hit_rate,
        mean_wait=float(np.mean(waits)) if waits else 0.0,
        p50_latency=float(np.percentile(latencies_arr, 50)),
        p99_latency=float(np.percentile(latencies_arr, 99)),
        throughput=served / max(last_time, 1e-12),
        cpu_utilization=busy_integral / capacity_integral
        if capacity_integral > 0
        else 0.0,
        replica_trace=replica_trace,
        tick_log=tick_log,
    )
    return metrics
