"""Learning-rate schedules: constant, one-cycle cosine, and population search."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Sequence

from .errors import ConfigError, ScheduleRangeError
from .learner import Learner, copy_weights

SCHEDULES = ("constant", "cosine", "polrs")
POLRS_FACTORS = (2.0, 1.0, 0.5)


@dataclass(frozen=True)
class ConstantSchedule:
    l0: float

    def lr_at(self, t: int) -> float:
        return self.l0


@dataclass(frozen=True)
class CosineSchedule:
    """One cycle from ``l0`` at t=0 down to exactly 0 at t=horizon."""

    l0: float
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("cosine horizon must be >= 1")

    def lr_at(self, t: int) -> float:
        if t < 0 or t > self.horizon:
            raise ScheduleRangeError(f"step {t} outside cosine range [0, {self.horizon}]")
        if t == self.horizon:
            return 0.0
        return 0.5 * self.l0 * (1.0 + math.cos(math.pi * t / self.horizon))


def lr_at(schedule, t: int) -> float:
    return schedule.lr_at(t)


class Polrs:
    """Three learners at learning rates ``{2c, c, c/2}`` around a moving center ``c``.

    ``step`` folds one metric observation per member into interval means and
    re-picks the best member (lowest index on ties); ``restructure`` copies the
    best member's weights to all members and recentres the rates on its rate.
    Member indices are 0-based.
    """

    def __init__(self, template: Learner, l0: float, interval: int):
        if l0 <= 0:
            raise ConfigError(f"PoLRS needs l0 > 0, got {l0}")
        if interval < 1:
            raise ConfigError("PoLRS interval must be >= 1")
        self.members: List[Learner] = [template.clone(seed=(template.seed, j)) for j in range(3)]
        self.lrs = [f * l0 for f in POLRS_FACTORS]
        self.interval = int(interval)
        self.best = 0
        self.centers = [float(l0)]
        self.restructures: List[dict] = []
        self._sums = [0.0, 0.0, 0.0]
        self._count = 0

    @property
    def center(self) -> float:
        return self.lrs[1]

    @property
    def metrics(self) -> list:
        if not self._count:
            return [0.0, 0.0, 0.0]
        return [s / self._count for s in self._sums]

    @property
    def best_member(self) -> Learner:
        return self.members[self.best]

    def due(self, t: int) -> bool:
        return t % self.interval == 0

    def step(self, metrics: Sequence[float]) -> int:
        if len(metrics) != 3:
            raise ConfigError("PoLRS expects one metric per member")
        self._count += 1
        for j, m in enumerate(metrics):
            self._sums[j] += float(m)
        current = self.metrics
        self.best = max(range(3), key=lambda j: (current[j], -j))
        return self.best

    def restructure(self) -> None:
        best = self.best
        src = self.members[best]
        for j, member in enumerate(self.members):
            if j != best:
                copy_weights(src, member)
        chosen = self.lrs[best]
        self.restructures.append({"best": best, "metrics": self.metrics, "lr": chosen})
        self.lrs = [f * chosen for f in POLRS_FACTORS]
        self.centers.append(chosen)
        self._sums = [0.0, 0.0, 0.0]
        self._count = 0

    def train_members(self, fn: Callable[[int, Learner, float], object], pool: ThreadPoolExecutor = None) -> list:
        """Apply ``fn(j, member, lr)`` to each member, optionally on a thread pool."""
        if pool is None:
            return [fn(j, m, lr) for j, (m, lr) in enumerate(zip(self.members, self.lrs))]
        futures = [pool.submit(fn, j, m, lr) for j, (m, lr) in enumerate(zip(self.members, self.lrs))]
        return [f.result() for f in futures]


def polrs_init(template: Learner, l0: float, interval: int) -> Polrs:
    return Polrs(template, l0, interval)


def polrs_step(state: Polrs, metrics: Sequence[float]) -> int:
    return state.step(metrics)


def polrs_restructure(state: Polrs) -> None:
    state.restructure()
