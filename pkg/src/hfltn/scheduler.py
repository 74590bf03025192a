"""Client capping (DCCM), client rotation (CRM) and diversity bookkeeping.

Rotation walks a fixed ring over the roster sorted by client id: round ``t``
takes the window ``roster[(t*C + j) mod N]`` for ``j < min(C, N)``.  Windows
of consecutive rounds are disjoint until the ring wraps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConfigInvalid, EmptyRoster

DEFAULT_PER_CLIENT_FLOPS = 499_200
DEFAULT_CAP = 150


def rotate(roster: Sequence[int], t: int, cap: int) -> list[int]:
    if not roster:
        raise EmptyRoster("roster is empty")
    if cap < 1:
        raise ConfigInvalid("cap", "must be >= 1")
    n = len(roster)
    if cap >= n:
        return list(roster)
    start = t * cap
    return [roster[(start + j) % n] for j in range(cap)]


def per_epoch_diversity(active: Iterable[int], n: int) -> float:
    return len(set(active)) / n


def cumulative_diversity(history: Iterable[int], n: int) -> float:
    return len(set(history)) / n


def flops_for_round(active_count: int, per_client_flops: int) -> int:
    if active_count < 0 or per_client_flops < 0:
        raise ValueError("counts must be non-negative")
    return active_count * per_client_flops


@dataclass
class RoundSchedule:
    n_total: int
    cap: int
    round: int
    active_set: list[int]
    history: set[int]


@dataclass
class DiversityReport:
    per_epoch_ratio: float
    cumulative_ratio: float
    loss_decrease_rate: float = 0.0
    generalization_gap: float = 0.0


@dataclass
class Scheduler:
    """Stateful wrapper that remembers which clients have ever been active.

    With ``rotation`` off the round-0 window is reused forever (the no-CRM
    control); with ``capping`` off every enrolled client is active.
    """

    roster: list[int]
    cap: int = DEFAULT_CAP
    capping: bool = True
    rotation: bool = True
    history: set[int] = field(default_factory=set)

    def __post_init__(self):
        self.roster = sorted(self.roster)
        if not self.roster:
            raise EmptyRoster("roster is empty")

    @property
    def effective_cap(self) -> int:
        return self.cap if self.capping else len(self.roster)

    def schedule(self, t: int) -> RoundSchedule:
        window_t = t if self.rotation else 0
        active = rotate(self.roster, window_t, self.effective_cap)
        self.history.update(active)
        return RoundSchedule(
            n_total=len(self.roster),
            cap=self.effective_cap,
            round=t,
            active_set=active,
            history=set(self.history),
        )

    def report(self, sched: RoundSchedule) -> DiversityReport:
        n = len(self.roster)
        return DiversityReport(
            per_epoch_ratio=per_epoch_diversity(sched.active_set, n),
            cumulative_ratio=cumulative_diversity(sched.history, n),
        )
