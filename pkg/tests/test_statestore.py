"""Key-value agreement cache: versions, invalidation, TTL sweep, threads."""

import random
import threading
import time
from datetime import datetime, timedelta, timezone

import pytest

from oconsent.clock import SimulatedClock
from oconsent.consent import LifecyclePhase
from oconsent.statestore import InvalidationEvent, StateEntry, StateKey, StateStore

UTC = timezone.utc
T0 = datetime(2021, 6, 1, tzinfo=UTC)


def key(i: int = 0) -> StateKey:
    return StateKey(subject_id=f"ds-{i}", controller_id=f"dc-{i}", purpose="marketing")


def entry(agreement: str = "agr-1", *, expires_in_days: int = 30) -> StateEntry:
    return StateEntry(
        agreement_hash_id=agreement,
        lifecycle=LifecyclePhase.PROCESS,
        expires_at=T0 + timedelta(days=expires_in_days),
    )


def fresh_store(**kwargs) -> tuple[StateStore, SimulatedClock]:
    clock = SimulatedClock(T0)
    return StateStore(clock=clock, **kwargs), clock


# ---------------------------------------------------------------------------
# put / get


def test_put_get_roundtrip_version_one():
    store, _ = fresh_store()
    version = store.put(key(), entry())
    assert version == 1
    got = store.get(key())
    assert got.agreement_hash_id == "agr-1"
    assert got.version == 1
    assert got.cached_at == T0


def test_second_put_wins_with_version_two():
    store, _ = fresh_store()
    store.put(key(), entry("agr-1"))
    assert store.put(key(), entry("agr-2")) == 2
    assert store.get(key()).agreement_hash_id == "agr-2"


def test_get_absent_key_is_none():
    store, _ = fresh_store()
    assert store.get(key(9)) is None


@pytest.mark.parametrize(
    "subject,controller,purpose",
    [("", "dc", "p"), ("ds", "", "p"), ("ds", "dc", ""), ("ds", "dc", None)],
)
def test_malformed_keys_rejected(subject, controller, purpose):
    with pytest.raises(KeyError):
        StateKey(subject_id=subject, controller_id=controller, purpose=purpose)


def test_void_lifecycles_are_not_cacheable():
    store, _ = fresh_store()
    for phase in (LifecyclePhase.REVOCATION, LifecyclePhase.DESTRUCTION):
        with pytest.raises(ValueError):
            store.put(
                key(),
                StateEntry(
                    agreement_hash_id="agr",
                    lifecycle=phase,
                    expires_at=T0 + timedelta(days=1),
                ),
            )
    assert store.get(key()) is None


# ---------------------------------------------------------------------------
# invalidation


def test_invalidate_then_miss_and_idempotence():
    store, _ = fresh_store()
    store.put(key(), entry())
    store.invalidate_on_event(InvalidationEvent.REVOCATION, key())
    assert store.get(key()) is None
    store.invalidate_on_event(InvalidationEvent.REVOCATION, key())  # no error
    assert store.stats()["invalidations"] == 2


def test_version_counter_survives_invalidation():
    store, _ = fresh_store()
    assert store.put(key(), entry("a")) == 1
    store.invalidate_on_event(InvalidationEvent.VERSION_CHANGE, key())
    assert store.put(key(), entry("b")) == 2


def test_expired_entry_misses_before_sweep():
    store, clock = fresh_store()
    store.put(key(), entry(expires_in_days=1))
    clock.advance(86_400)  # exactly at expiry: gone
    assert store.get(key()) is None


# ---------------------------------------------------------------------------
# sweep


def test_sweep_evicts_exactly_the_expired():
    store, _ = fresh_store()
    store.put(key(1), entry("a", expires_in_days=1))
    store.put(key(2), entry("b", expires_in_days=10))
    assert store.sweep(T0 + timedelta(days=1)) == 1
    assert store.get(key(2)) is not None
    assert store.sweep(T0 + timedelta(days=1)) == 0


def test_sweep_on_empty_store():
    store, _ = fresh_store()
    assert store.sweep(T0) == 0


def test_sweep_random_expiries_match_filter_oracle():
    rng = random.Random(404)
    store, _ = fresh_store()
    expiries = {}
    for i in range(300):
        days = rng.randrange(1, 100)
        store.put(key(i), entry(f"agr-{i}", expires_in_days=days))
        expiries[i] = T0 + timedelta(days=days)
    cutoff = T0 + timedelta(days=rng.randrange(1, 100))
    evicted = store.sweep(cutoff)
    survivors_oracle = {i for i, exp in expiries.items() if exp > cutoff}
    assert evicted == 300 - len(survivors_oracle)
    for i in range(300):
        assert (store.get(key(i)) is not None) == (i in survivors_oracle)


# ---------------------------------------------------------------------------
# replay oracle


def test_thousand_op_interleaving_matches_sequential_oracle():
    rng = random.Random(10**3)
    store, clock = fresh_store()
    oracle: dict = {}  # key index -> (agreement, expires_at)
    now = T0
    for step in range(1000):
        action = rng.random()
        i = rng.randrange(12)
        if action < 0.45:
            days = rng.randrange(1, 30)
            store.put(key(i), entry(f"agr-{step}", expires_in_days=days))
            oracle[i] = (f"agr-{step}", T0 + timedelta(days=days))
        elif action < 0.65:
            store.invalidate_on_event(InvalidationEvent.REVOCATION, key(i))
            oracle.pop(i, None)
        elif action < 0.75:
            cut = now + timedelta(seconds=rng.randrange(0, 86_400 * 5))
            store.sweep(cut)
            oracle = {k: v for k, v in oracle.items() if v[1] > cut}
        else:
            got = store.get(key(i))
            expected = oracle.get(i)
            if expected is None or expected[1] <= now:
                assert got is None
            else:
                assert got is not None and got.agreement_hash_id == expected[0]
        if rng.random() < 0.2:
            clock.advance(rng.randrange(1, 3600))
            now = clock.now()
    live_oracle = {i for i, (_, exp) in oracle.items() if exp > now}
    for i in range(12):
        assert (store.get(key(i)) is not None) == (i in live_oracle)


# ---------------------------------------------------------------------------
# concurrency


def test_no_reader_sees_entry_after_invalidate_returns():
    store, _ = fresh_store()
    store.put(key(), entry())
    store.invalidate_on_event(InvalidationEvent.REVOCATION, key())
    results: list = []
    barrier = threading.Barrier(8)

    def reader():
        barrier.wait()
        for _ in range(200):
            results.append(store.get(key()))

    threads = [threading.Thread(target=reader) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results and all(r is None for r in results)


def test_concurrent_stress_stays_consistent():
    store, _ = fresh_store()
    errors: list = []

    def worker(seed: int):
        rng = random.Random(seed)
        try:
            for step in range(500):
                i = rng.randrange(6)
                roll = rng.random()
                if roll < 0.5:
                    store.put(key(i), entry(f"agr-{seed}-{step}"))
                elif roll < 0.8:
                    got = store.get(key(i))
                    if got is not None and not got.agreement_hash_id.startswith("agr-"):
                        errors.append(got)
                else:
                    store.invalidate_on_event(InvalidationEvent.REVOCATION, key(i))
        except Exception as exc:  # propagated to the main thread
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(s,)) for s in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []
    stats = store.stats()
    assert stats["resident"] <= 6
    assert stats["puts"] + stats["invalidations"] + stats["hits"] + stats["misses"] == 8 * 500


# ---------------------------------------------------------------------------
# optional LRU capacity


def test_lru_disabled_by_default():
    store, _ = fresh_store()
    for i in range(1000):
        store.put(key(i), entry(f"agr-{i}"))
    assert store.stats()["resident"] == 1000


def test_lru_capacity_evicts_least_recently_used():
    store, _ = fresh_store(capacity=3)
    for i in range(3):
        store.put(key(i), entry(f"agr-{i}"))
    store.get(key(0))  # refresh 0; 1 becomes the coldest
    store.put(key(3), entry("agr-3"))
    assert store.get(key(1)) is None
    assert {i for i in range(4) if store.get(key(i)) is not None} == {0, 2, 3}
    assert store.stats()["lru_evictions"] == 1


# ---------------------------------------------------------------------------
# stats and latency report


def test_stats_shape():
    store, _ = fresh_store()
    store.put(key(), entry())
    store.get(key())
    store.get(key(5))
    stats = store.stats()
    assert stats["puts"] == 1
    assert stats["hits"] == 1
    assert stats["misses"] == 1
    assert stats["resident"] == 1
    assert stats["capacity"] is None


def test_read_latency_reported_at_scale():
    store, _ = fresh_store()
    for i in range(100_000):
        store.put(key(i), entry(f"agr-{i}"))
    probes = [key(i) for i in range(0, 100_000, 997)]
    started = time.perf_counter()
    for probe in probes * 20:
        store.get(probe)
    per_read = (time.perf_counter() - started) / (len(probes) * 20)
    print(f"\nmean cached read: {per_read * 1e6:.1f} us over 100k resident entries")
    assert per_read < 0.05  # pathology guard only; the figure above is the report
