"""LRU+TTL cache, threshold autoscaler, queueing simulator."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.random import SeedSequence, default_rng

from glycopipe.serving import (
    CacheConfig,
    LruTtlCache,
    ScalingPolicy,
    ScalingState,
    SimMetrics,
    WorkloadSpec,
    autoscale_step,
    cache_get,
    cache_put,
    simulate_service,
    static_policy,
    zipf_probabilities,
)


# --- cache ---


def test_lru_eviction_order():
    cache = LruTtlCache(CacheConfig(capacity=2))
    cache.put("a", 1, now=0.0)
    cache.put("b", 2, now=1.0)
    assert cache.get("a", now=2.0) == (True, 1)  # refreshes a
    cache.put("c", 3, now=3.0)  # b is now least recent
    assert cache.get("b", now=4.0) == (False, None)
    assert cache.get("a", now=4.0) == (True, 1)
    assert cache.get("c", now=4.0) == (True, 3)


def test_ttl_expiry_is_strict():
    cache = LruTtlCache(CacheConfig(capacity=4, ttl_seconds=300.0))
    cache.put("k", 9, now=0.0)
    hit, v = cache.get("k", now=300.0)  # exactly at the boundary still fresh
    assert hit and v == 9
    hit, v = cache.get("k", now=300.0 + 1e-9)
    assert not hit and v is None


def test_capacity_bound_never_exceeded():
    cache = LruTtlCache(CacheConfig(capacity=3))
    for i in range(50):
        cache.put(i, i, now=float(i))
        assert len(cache) <= 3


def test_zero_capacity_stores_nothing():
    cache = LruTtlCache(CacheConfig(capacity=0))
    cache.put("a", 1, now=0.0)
    assert len(cache) == 0
    assert cache.get("a", now=0.0) == (False, None)


def test_put_refreshes_existing_key_without_evicting():
    cache = LruTtlCache(CacheConfig(capacity=2))
    cache.put("a", 1, now=0.0)
    cache.put("b", 2, now=1.0)
    cache.put("a", 10, now=2.0)  # update, not insert
    assert cache.get("b", now=3.0) == (True, 2)
    assert cache.get("a", now=3.0) == (True, 10)


def test_expired_entries_evicted_before_live_ones():
    cache = LruTtlCache(CacheConfig(capacity=2, ttl_seconds=10.0))
    cache.put("old", 1, now=0.0)
    cache.put("live", 2, now=95.0)
    cache.put("new", 3, now=100.0)  # "old" is stale: evict it, keep "live"
    assert cache.get("live", now=100.0) == (True, 2)
    assert cache.get("new", now=100.0) == (True, 3)


def test_hit_rate_counters():
    cache = LruTtlCache(CacheConfig(capacity=2))
    assert cache.hit_rate == 0.0
    cache.put("a", 1, now=0.0)
    cache.get("a", now=0.1)
    cache.get("zz", now=0.2)
    assert cache.hits == 1 and cache.misses == 1
    assert cache.hit_rate == 0.5


def test_repeated_single_key_hit_rate():
    n = 200
    cache = LruTtlCache(CacheConfig(capacity=1, ttl_seconds=float("inf")))
    hits = 0
    for i in range(n):
        hit, _ = cache_get(cache, "only", now=float(i))
        if not hit:
            cache_put(cache, "only", 1, now=float(i))
        hits += hit
    assert hits == n - 1  # everything after the first compulsory miss


class ListScanCache:
    """Brute-force oracle: list of (key, value, insert_time), no ordering
    tricks, recency tracked by explicit timestamps."""

    def __init__(self, capacity, ttl):
        self.capacity = capacity
        self.ttl = ttl
        self.rows = []  # [key, value, insert_time, last_used]

    def get(self, key, now):
        for row in self.rows:
            if row[0] == key:
                if now - row[2] > self.ttl:
                    self.rows.remove(row)
                    return False, None
                row[3] = now
                return True, row[1]
        return False, None

    def put(self, key, value, now):
        if self.capacity == 0:
            return
        for row in self.rows:
            if row[0] == key:
                self.rows.remove(row)
                break
        else:
            if len(self.rows) >= self.capacity:
                stale = [r for r in self.rows if now - r[2] > self.ttl]
                for r in stale:
                    self.rows.remove(r)
                if len(self.rows) >= self.capacity:
                    self.rows.remove(min(self.rows, key=lambda r: r[3]))
        self.rows.append([key, value, now, now])


def replay(trace, capacity, ttl):
    fast = LruTtlCache(CacheConfig(capacity=capacity, ttl_seconds=ttl))
    slow = ListScanCache(capacity, ttl)
    outcomes = []
    for i, (op, key) in enumerate(trace):
        now = float(i)
        if op == "get":
            a = fast.get(key, now)
            b = slow.get(key, now)
            assert a == b, (i, op, key, a, b)
            outcomes.append(a[0])
        else:
            fast.put(key, key * 10, now)
            slow.put(key, key * 10, now)
    return outcomes


def test_cache_matches_brute_force_fixed_traces():
    trace = [
        ("put", 1), ("put", 2), ("get", 1), ("put", 3), ("get", 2),
        ("get", 1), ("get", 3), ("put", 1), ("put", 4), ("get", 3),
    ]
    replay(trace, capacity=2, ttl=4.0)
    replay(trace, capacity=3, ttl=100.0)
    replay(trace, capacity=1, ttl=2.0)


@given(
    ops=st.lists(
        st.tuples(st.sampled_from(["get", "put"]), st.integers(0, 5)),
        min_size=1,
        max_size=80,
    ),
    capacity=st.integers(0, 4),
    ttl=st.sampled_from([1.0, 3.0, 10.0, 1e9]),
)
@settings(max_examples=150, deadline=None)
def test_cache_matches_brute_force_random_traces(ops, capacity, ttl):
    replay(ops, capacity, ttl)


def test_zipf_probabilities_normalized_and_ranked():
    p = zipf_probabilities(1000, 1.0)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(np.diff(p) < 0)
    assert p[0] / p[1] == pytest.approx(2.0)
    flat = zipf_probabilities(10, 0.0)
    assert np.allclose(flat, 0.1)


def test_zipf_trace_hit_rate_in_band():
    probs = zipf_probabilities(1000, 1.0)
    rng = default_rng(SeedSequence([17, 0x2C]))
    keys = rng.choice(1000, size=100_000, p=probs)
    cache = LruTtlCache(CacheConfig(capacity=100, ttl_seconds=300.0))
    hits = 0
    for i, key in enumerate(keys):
        now = i * 0.01
        hit, _ = cache_get(cache, int(key), now)
        if hit:
            hits += 1
        else:
            cache_put(cache, int(key), 0, now)
    rate = hits / len(keys)
    assert 0.5 < rate < 0.95


# --- autoscaler ---


def test_scale_up_scheduled_after_latency():
    policy = ScalingPolicy()
    state = ScalingState(policy)
    assert state.replicas == 2
    now_in_force = autoscale_step(state, {"cpu_util": 0.8, "queue_len": 0}, now=0.0)
    assert now_in_force == 2  # not yet applied
    assert state.target() == 3
    autoscale_step(state, {"cpu_util": 0.5, "queue_len": 0}, now=31.0)
    assert state.replicas == 3  # pending change applied at 30s


def test_queue_threshold_alone_triggers():
    policy = ScalingPolicy()
    state = ScalingState(policy)
    autoscale_step(state, {"cpu_util": 0.1, "queue_len": 101}, now=0.0)
    assert state.target() == 3  # queue high wins despite low cpu


def test_cooldown_blocks_consecutive_actions():
    policy = ScalingPolicy(cooldown=60.0, apply_latency=0.0)
    state = ScalingState(policy)
    autoscale_step(state, {"cpu_util": 0.9, "queue_len": 0}, now=0.0)
    autoscale_step(state, {"cpu_util": 0.9, "queue_len": 0}, now=15.0)
    autoscale_step(state, {"cpu_util": 0.9, "queue_len": 0}, now=59.9)
    assert len(state.actions) == 1
    autoscale_step(state, {"cpu_util": 0.9, "queue_len": 0}, now=60.0)
    assert len(state.actions) == 2


def test_replicas_clamped_to_range():
    policy = ScalingPolicy(base_replicas=2, max_scale=5, cooldown=0.0,
                           apply_latency=0.0)
    state = ScalingState(policy)
    for i in range(50):
        autoscale_step(state, {"cpu_util": 0.99, "queue_len": 500}, now=float(i))
    assert state.replicas == policy.max_replicas == 10
    for i in range(50, 120):
        autoscale_step(state, {"cpu_util": 0.01, "queue_len": 0}, now=float(i))
    assert state.replicas == policy.base_replicas == 2


def test_mid_band_cpu_is_stable():
    policy = ScalingPolicy(cooldown=0.0, apply_latency=0.0)
    state = ScalingState(policy)
    for i in range(20):
        autoscale_step(state, {"cpu_util": 0.6, "queue_len": 5}, now=float(i))
    assert state.actions == []
    assert state.replicas == policy.base_replicas


def test_static_policy_never_acts():
    state = ScalingState(static_policy(4))
    assert state.replicas == 4
    for i in range(30):
        autoscale_step(state, {"cpu_util": 1.0, "queue_len": 10**9}, now=float(i))
    assert state.actions == [] and state.replicas == 4


def test_policy_validation():
    with pytest.raises(ValueError):
        ScalingPolicy(base_replicas=-1)
    with pytest.raises(ValueError):
        ScalingPolicy(step=0)
    with pytest.raises(ValueError):
        ScalingPolicy(eval_interval=0.0)


# --- simulator ---


def test_single_request_served_immediately():
    # arrival rate so low this seed admits exactly one request
    workload = WorkloadSpec(
        arrival_rate=0.001, duration=1000.0, n_keys=1, zipf_s=1.0,
        service_time=0.05, service_dist="fixed",
    )
    m = simulate_service(None, workload, CacheConfig(capacity=0),
                         static_policy(1), seed=1)
    assert m.arrivals == 1
    assert m.mean_wait == pytest.approx(0.0)
    assert m.p50_latency == pytest.approx(0.05)


def test_conservation_of_requests():
    workload = WorkloadSpec(arrival_rate=40.0, duration=30.0, n_keys=50,
                            zipf_s=1.0, service_time=0.05)
    m = simulate_service(None, workload, CacheConfig(capacity=20),
                         static_policy(3), seed=2)
    assert m.arrivals == m.hits + m.completed + m.queued_at_end + m.in_flight_at_end
    assert m.dropped == 0
    assert 0.0 <= m.hit_rate <= 1.0


def test_mm_c_wait_matches_erlang_c():
    # M/M/4 at rho = 0.7: lambda = 56, mu = 20
    c, mu, lam = 4, 20.0, 56.0
    workload = WorkloadSpec(
        arrival_rate=lam, duration=100_000.0 / lam, n_keys=10, zipf_s=1.0,
        service_time=1.0 / mu, service_dist="exponential",
    )
    m = simulate_service(None, workload, CacheConfig(capacity=0),
                         static_policy(c), seed=1)
    a = lam / mu
    tail = a**c / math.factorial(c) * (c / (c - a))
    p_wait = tail / (sum(a**k / math.factorial(k) for k in range(c)) + tail)
    wq = p_wait / (c * mu - lam)
    assert m.arrivals > 90_000
    assert abs(m.mean_wait - wq) / wq < 0.10


def test_autoscaler_relieves_overload():
    workload = WorkloadSpec(arrival_rate=80.0, duration=60.0, n_keys=100,
                            zipf_s=0.5, service_time=0.05)
    policy = ScalingPolicy(base_replicas=2, cooldown=15.0, apply_latency=5.0,
                           eval_interval=5.0)
    m = simulate_service(None, workload, CacheConfig(capacity=0), policy, seed=3)
    counts = [r for _, r in m.replica_trace]
    assert max(counts) > 2  # scaled up under load
    assert max(counts) <= policy.max_replicas
    assert m.queued_at_end == 0  # drained after arrivals stop


def test_simulation_deterministic_per_seed():
    workload = WorkloadSpec(arrival_rate=30.0, duration=20.0, n_keys=40)
    a = simulate_service(None, workload, CacheConfig(capacity=10),
                         static_policy(2), seed=7)
    b = simulate_service(None, workload, CacheConfig(capacity=10),
                         static_policy(2), seed=7)
    c = simulate_service(None, workload, CacheConfig(capacity=10),
                         static_policy(2), seed=8)
    assert a.as_dict() == b.as_dict()
    assert a.as_dict() != c.as_dict()


def test_metrics_dict_excludes_tick_log():
    workload = WorkloadSpec(arrival_rate=20.0, duration=5.0)
    m = simulate_service(None, workload, CacheConfig(capacity=5),
                         static_policy(2), seed=0)
    d = m.as_dict()
    assert "tick_log" not in d
    assert isinstance(d["replica_trace"], list)
    assert d["arrivals"] == m.arrivals


def test_workload_validation():
    with pytest.raises(ValueError):
        WorkloadSpec(arrival_rate=0.0)
    with pytest.raises(ValueError):
        WorkloadSpec(service_dist="uniform")
    with pytest.raises(ValueError):
        WorkloadSpec(n_keys=0)
