"""In-process agreement-state cache with versioned writes and hard invalidation.

The store is never the source of truth: writers update the
authoritative record first and mirror here second. Invalidation removes
the entry under the lock before returning, so no later reader can
observe it (the circuit-breaker contract). A distributed grid can
replace this behind the same put/get/invalidate surface.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from typing import Optional

from .clock import Clock, RealClock
from .consent import LifecyclePhase

_VOID_PHASES = frozenset({LifecyclePhase.REVOCATION, LifecyclePhase.DESTRUCTION})


@dataclass(frozen=True)
class StateKey:
    subject_id: str
    controller_id: str
    purpose: str

    def __post_init__(self):
        for field_name in ("subject_id", "controller_id", "purpose"):
            value = getattr(self, field_name)
            if not isinstance(value, str) or not value:
                raise KeyError(f"{field_name} must be a non-empty string")


@dataclass(frozen=True)
class StateEntry:
    agreement_hash_id: str
    lifecycle: LifecyclePhase
    expires_at: datetime
    cached_at: Optional[datetime] = None
    version: int = 0


class InvalidationEvent(str, Enum):
    REVOCATION = "revocation"
    VERSION_CHANGE = "version change"
    LEASE_EXPIRY = "lease expiry"


class StateStore:
    def __init__(self, clock: Optional[Clock] = None, capacity: Optional[int] = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive when set")
        self._clock = clock or RealClock()
        self._capacity = capacity
        self._lock = threading.RLock()
        self._entries: OrderedDict[StateKey, StateEntry] = OrderedDict()
        self._versions: dict[StateKey, int] = {}
        self._puts = 0
        self._hits = 0
        self._misses = 0
        self._invalidations = 0
        self._expired_evictions = 0
        self._lru_evictions = 0

    def put(self, key: StateKey, entry: StateEntry) -> int:
        if entry.lifecycle in _VOID_PHASES:
            raise ValueError(f"{entry.lifecycle.value} state is never cacheable")
        with self._lock:
            version = self._versions.get(key, 0) + 1
            self._versions[key] = version
            self._entries[key] = replace(
                entry, version=version, cached_at=self._clock.now()
            )
            self._entries.move_to_end(key)
            self._puts += 1
            if self._capacity is not None:
                while len(self._entries) > self._capacity:
                    self._entries.popitem(last=False)
                    self._lru_evictions += 1
            return version

    def get(self, key: StateKey) -> Optional[StateEntry]:
        with self._lock:
            entry = self._entries.get(key)
            if entry is not None and entry.expires_at <= self._clock.now():
                del self._entries[key]
                self._expired_evictions += 1
                entry = None
            if entry is None:
                self._misses += 1
                return None
            self._entries.move_to_end(key)
            self._hits += 1
            return entry

    def invalidate_on_event(self, event: InvalidationEvent, key: StateKey) -> None:
        InvalidationEvent(event)
        with self._lock:
            self._entries.pop(key, None)
            self._invalidations += 1

    def sweep(self, now: datetime) -> int:
        with self._lock:
            doomed = [key for key, entry in self._entries.items() if entry.expires_at <= now]
            for key in doomed:
                del self._entries[key]
            self._expired_evictions += len(doomed)
            return len(doomed)

    def stats(self) -> dict:
        with self._lock:
            return {
                "resident": len(self._entries),
                "capacity": self._capacity,
                "puts": self._puts,
                "hits": self._hits,
                "misses": self._misses,
                "invalidations": self._invalidations,
                "expired_evictions": self._expired_evictions,
                "lru_evictions": self._lru_evictions,
            }
