"""Synthetic EV mobility and charging data.

Stands in for the EV-enriched Chicago taxi data: 77 community areas laid on a
7 x 11 grid, nine EV models with ranges evenly spaced over 143-416 km, and a
battery kept between 20% and 100%.  Each EV has a home area; its destinations
and charge stations are drawn from home-centred distributions perturbed per
EV with a Dirichlet draw, which makes client data non-IID.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import TooFewRecords

N_AREAS = 77
GRID_ROWS, GRID_COLS = 7, 11
AREA_SPACING_KM = 2.5
MIN_RANGE_KM, MAX_RANGE_KM = 143.0, 416.0
N_MODELS = 9
LOW_BATTERY_PCT = 20.0
FULL_BATTERY_PCT = 100.0
EPOCH_START = 1_451_606_400  # 2016-01-01T00:00:00Z
YEAR_DAYS = 365
DAY = 86_400

TRIP_COLUMNS = (
    "ev_id",
    "pickup",
    "dropoff",
    "distance_km",
    "start_time",
    "battery_pct_after",
    "charge_event",
    "charge_time",
)


@dataclass(frozen=True)
class EvModelSpec:
    model_id: int
    range_km: float


EV_MODELS: tuple[EvModelSpec, ...] = tuple(
    EvModelSpec(i, float(r))
    for i, r in enumerate(np.linspace(MIN_RANGE_KM, MAX_RANGE_KM, N_MODELS))
)


@dataclass(frozen=True)
class TripRecord:
    ev_id: int
    pickup_community: int
    dropoff_community: int
    distance_km: float
    start_time: int
    battery_pct_after: float
    charge_event: bool
    charge_time: int | None = None


@dataclass
class EvProfile:
    ev_id: int
    model_id: int
    home_area: int
    community: int
    transitory: bool
    seed: int
    charge_pref: np.ndarray = field(repr=False)
    destination_pref: np.ndarray = field(repr=False)

    @property
    def range_km(self) -> float:
        return EV_MODELS[self.model_id].range_km


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list


def area_xy(area: int) -> tuple[float, float]:
    r, c = divmod(area, GRID_COLS)
    return r * AREA_SPACING_KM, c * AREA_SPACING_KM


_XY = np.array([area_xy(a) for a in range(N_AREAS)])
AREA_DIST_KM = np.sqrt(((_XY[:, None, :] - _XY[None, :, :]) ** 2).sum(-1))


def neighbors(area: int) -> set[int]:
    """Areas sharing a grid edge with ``area``."""
    r, c = divmod(area, GRID_COLS)
    out = set()
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        rr, cc = r + dr, c + dc
        if 0 <= rr < GRID_ROWS and 0 <= cc < GRID_COLS:
            out.add(rr * GRID_COLS + cc)
    return out


def community_of(area: int, n_communities: int) -> int:
    """Contiguous blocks of areas form the DERMS communities."""
    return area * n_communities // N_AREAS


def _home_kernel(home: int, length_km: float) -> np.ndarray:
    w = np.exp(-AREA_DIST_KM[home] / length_km)
    return w / w.sum()


def generate_fleet(
    n_evs: int,
    seed: int,
    transitory_fraction: float = 0.2,
    n_communities: int = 1,
    concentration: float = 5.0,
    charge_length_km: float = 1.0,
    destination_length_km: float = 1.0,
) -> list[EvProfile]:
    if n_evs < 1:
        raise ValueError("n_evs must be >= 1")
    rng = np.random.default_rng([seed, 0xF1EE7])
    models = rng.integers(0, N_MODELS, size=n_evs)
    homes = rng.integers(0, N_AREAS, size=n_evs)
    n_transitory = int(round(transitory_fraction * n_evs))
    transitory = np.zeros(n_evs, dtype=bool)
    transitory[rng.permutation(n_evs)[:n_transitory]] = True
    fleet = []
    for i in range(n_evs):
        home = int(homes[i])
        charge = rng.dirichlet(concentration * _home_kernel(home, charge_length_km) + 1e-3)
        dest = rng.dirichlet(concentration * _home_kernel(home, destination_length_km) + 1e-3)
        fleet.append(
            EvProfile(
                ev_id=i,
                model_id=int(models[i]),
                home_area=home,
                community=community_of(home, n_communities),
                transitory=bool(transitory[i]),
                seed=seed,
                charge_pref=charge,
                destination_pref=dest,
            )
        )
    return fleet


def drain_pct(distance_km: float, range_km: float) -> float:
    return distance_km / range_km * 100.0


def battery_step(battery_pct: float, distance_km: float, range_km: float) -> tuple[float, bool]:
    """Battery after one trip and whether it would fall below the 20% floor."""
    after = battery_pct - drain_pct(distance_km, range_km)
    return after, after < LOW_BATTERY_PCT


def simulate_battery(
    distances_km: Sequence[float], range_km: float, start_pct: float = FULL_BATTERY_PCT
) -> list[tuple[float, bool]]:
    """Replay a trip sequence: (battery_after, charge_event) per trip.

    A charge event refills to 100% before the next trip.
    """
    out = []
    battery = start_pct
    for d in distances_km:
        after, charge = battery_step(battery, d, range_km)
        out.append((max(after, 0.0), charge))
        battery = FULL_BATTERY_PCT if charge else after
    return out


def generate_trips(
    ev: EvProfile,
    days: int = YEAR_DAYS,
    start: int = EPOCH_START,
    trips_per_day: float = 4.0,
    speed_kmh: float = 25.0,
) -> list[TripRecord]:
    """Time-ordered trips for one EV inside ``[start, start + days*DAY)``."""
    if days < 1:
        raise ValueError("days must be >= 1")
    rng = np.random.default_rng([ev.seed, ev.ev_id, 0x7219])
    end = start + days * DAY
    battery = float(rng.uniform(LOW_BATTERY_PCT + 10, FULL_BATTERY_PCT))
    loc = ev.home_area
    t = start + int(rng.uniform(6, 9) * 3600)
    mean_gap = DAY / trips_per_day
    trips: list[TripRecord] = []
    while True:
        dest = int(rng.choice(N_AREAS, p=ev.destination_pref))
        dist = _trip_distance(loc, dest, rng)
        after, charge = battery_step(battery, dist, ev.range_km)
        if charge:
            dest = int(rng.choice(N_AREAS, p=ev.charge_pref))
            dist = _trip_distance(loc, dest, rng)
            after = battery - drain_pct(dist, ev.range_km)
        duration = int(dist / speed_kmh * 3600) + 300
        if t + duration >= end:
            break
        trips.append(
            TripRecord(
                ev_id=ev.ev_id,
                pickup_community=loc,
                dropoff_community=dest,
                distance_km=round(dist, 3),
                start_time=t,
                battery_pct_after=round(max(after, 0.0), 4),
                charge_event=charge,
                charge_time=t + duration if charge else None,
            )
        )
        battery = FULL_BATTERY_PCT if charge else after
        loc = dest
        t = t + duration + 60 + int(rng.exponential(mean_gap))
    return trips


def _trip_distance(a: int, b: int, rng: np.random.Generator) -> float:
    base = AREA_DIST_KM[a, b] * 1.3
    return float(base + rng.gamma(2.0, 1.0))


def split_counts(n: int) -> tuple[int, int, int]:
    """(train, val, test) sizes: 85/15 then 85/15 again, each at least one."""
    if n < 3:
        raise TooFewRecords(f"{n} records; need at least 3")
    trainval = math.floor(0.85 * n)
    trainval = min(max(trainval, 2), n - 1)
    train = max(math.floor(0.85 * trainval), 1)
    train = min(train, trainval - 1)
    return train, trainval - train, n - trainval


def split_dataset(trips: Sequence) -> DatasetSplit:
    """Chronological prefix split; input must already be time-ordered."""
    n_train, n_val, _ = split_counts(len(trips))
    trips = list(trips)
    return DatasetSplit(
        trips[:n_train], trips[n_train : n_train + n_val], trips[n_train + n_val :]
    )


def write_trips(rows: Iterable[TripRecord], fh: io.TextIOBase) -> int:
    """Export as comma-separated lines, fixed column order, LF terminated."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRIP_COLUMNS)
    n = 0
    for r in rows:
        w.writerow(
            [
                r.ev_id,
                r.pickup_community,
                r.dropoff_community,
                f"{r.distance_km:.3f}",
                r.start_time,
                f"{r.battery_pct_after:.4f}",
                int(r.charge_event),
                "" if r.charge_time is None else r.charge_time,
            ]
        )
        n += 1
    return n


def read_trips(fh: io.TextIOBase) -> list[TripRecord]:
    rows = []
    for rec in csv.DictReader(fh):
        rows.append(
            TripRecord(
                ev_id=int(rec["ev_id"]),
                pickup_community=int(rec["pickup"]),
                dropoff_community=int(rec["dropoff"]),
                distance_km=float(rec["distance_km"]),
                start_time=int(rec["start_time"]),
                battery_pct_after=float(rec["battery_pct_after"]),
                charge_event=rec["charge_event"] == "1",
                charge_time=int(rec["charge_time"]) if rec["charge_time"] else None,
            )
        )
    return rows
