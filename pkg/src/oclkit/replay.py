"""Capacity-bounded replay buffers and the adaptive buffer-size controller."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Any, List, Optional

import numpy as np

from .errors import ConfigError

POLICIES = ("fifo", "reservoir")


class ReplayBuffer:
    """Stores at most ``capacity`` items under a FIFO or reservoir policy.

    ``seen`` counts every offered item. FIFO is a ring buffer; its logical
    order (oldest first) is available from :meth:`items`. Randomness comes
    from a private ``random.Random`` seeded from ``seed`` (an int or a numpy
    Generator to draw the seed from).
    """

    def __init__(self, capacity: int, policy: str = "fifo", seed=0):
        if capacity < 1:
            raise ConfigError(f"replay capacity must be positive, got {capacity}")
        if policy not in POLICIES:
            raise ConfigError(f"unknown replay policy {policy!r}; expected one of {POLICIES}")
        self.capacity = int(capacity)
        self.policy = policy
        self.seen = 0
        if isinstance(seed, np.random.Generator):
            seed = int(seed.integers(2**63))
        self.rng = random.Random(seed)
        self._store: List[Any] = []
        self._head = 0  # index of the oldest FIFO item once the ring is full

    def __len__(self) -> int:
        return len(self._store)

    def items(self) -> list:
        if self.policy == "fifo":
            return self._store[self._head:] + self._store[:self._head]
        return list(self._store)

    def offer(self, item) -> None:
        self.seen += 1
        if len(self._store) < self.capacity:
            self._store.append(item)
            return
        if self.policy == "fifo":
            self._store[self._head] = item
            self._head = (self._head + 1) % self.capacity
        else:
            r = self.rng.randrange(self.seen) + 1
            if r <= self.capacity:
                self._store[r - 1] = item

    def extend(self, items) -> None:
        for item in items:
            self.offer(item)

    def sample(self, n: int, rng: Optional[random.Random] = None) -> list:
        """``n`` items drawn uniformly with replacement; empty buffer gives []."""
        if not self._store or n <= 0:
            return []
        rng = self.rng if rng is None else rng
        return rng.choices(self._store, k=n)

    def resize(self, capacity: int, bounds: Optional[tuple] = None) -> None:
        lo, hi = bounds if bounds is not None else (1, None)
        if capacity < max(lo, 1) or (hi is not None and capacity > hi):
            raise ConfigError(f"replay capacity {capacity} outside bounds [{lo}, {hi}]")
        ordered = self.items()
        if capacity < len(ordered):
            if self.policy == "fifo":
                ordered = ordered[len(ordered) - capacity:]
            else:
                keep = sorted(self.rng.sample(range(len(ordered)), capacity))
                ordered = [ordered[i] for i in keep]
        self._store = ordered
        self._head = 0
        self.capacity = int(capacity)

    def checkpoint(self) -> dict:
        """Policy, capacity, seen count, RNG state and stored ids (oldest first for FIFO)."""
        return {
            "policy": self.policy,
            "capacity": self.capacity,
            "seen": self.seen,
            "rng_state": self.rng.getstate(),
            "items": [int(i) for i in self.items()],
        }

    @classmethod
    def restore(cls, state: dict, resolve=None) -> "ReplayBuffer":
        buf = cls(state["capacity"], state["policy"])
        buf.seen = int(state["seen"])
        buf.rng.setstate(_as_state(state["rng_state"]))
        items = state["items"]
        buf._store = [resolve(i) for i in items] if resolve else list(items)
        return buf


def _as_state(state):
    # JSON round-trips turn the state tuples into lists
    version, internal, gauss = state
    return version, tuple(internal), gauss


@dataclass
class AdRepState:
    """Running training accuracies and capacity bounds for adaptive replay sizing.

    ``k`` counts observations in the current interval; both running means are
    interval-local and reset at every decision.
    """

    interval: int
    eps: float = 0.005
    r_min: int = 1
    r_max: int = 10**9
    acc_stream: float = 0.0
    acc_rep: float = 0.0
    k: int = 0

    def __post_init__(self):
        if self.interval < 1:
            raise ConfigError("ADRep interval must be >= 1")
        if not 0.0 <= self.eps <= 1.0:
            raise ConfigError("ADRep eps must lie in [0, 1]")
        if not 1 <= self.r_min <= self.r_max:
            raise ConfigError(f"need 1 <= r_min <= r_max, got {self.r_min}, {self.r_max}")

    @property
    def due(self) -> bool:
        return self.k >= self.interval

    def observe(self, stream_correct: float, replay_correct: float) -> None:
        self.k += 1
        k = self.k
        self.acc_stream = ((k - 1) * self.acc_stream + stream_correct) / k
        self.acc_rep = ((k - 1) * self.acc_rep + replay_correct) / k

    def decide(self, capacity: int) -> int:
        new = capacity
        if self.acc_stream > self.acc_rep + self.eps:
            new = max(self.r_min, capacity // 2)
        elif self.acc_stream < self.acc_rep - self.eps:
            new = min(self.r_max, 2 * capacity)
        self.k = 0
        self.acc_stream = 0.0
        self.acc_rep = 0.0
        return new


def adrep_observe(state: AdRepState, stream_correct: float, replay_correct: float) -> None:
    state.observe(stream_correct, replay_correct)


def adrep_decide(state: AdRepState, capacity: int) -> int:
    return state.decide(capacity)
