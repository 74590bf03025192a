"""Dual-head linear trainer: next charge location (softmax) and time (regression).

Feature row (F = 82)::

    [battery/100, one-hot location (77), scaled timestamp,
     mean distance of last 10 trips / 50, trips in past 24 h / 10,
     mean gap between recent charges in hours / 168]

The weight vector layout is ``[W_loc (77 x F, row-major), b_loc (77), w_time (F), b_time]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .datagen import DAY, LOW_BATTERY_PCT, N_AREAS, TripRecord
from .errors import DivergedLoss, EmptyDataset, LayoutMismatch

N_LOCATIONS = N_AREAS
N_FEATURES = 1 + N_LOCATIONS + 1 + 3
HISTORY_WINDOW = 10
CHARGE_WINDOW = 5


@dataclass(frozen=True)
class TimeScaler:
    """Min-max scaling of Unix seconds onto [0, 1]."""

    t_min: int
    t_max: int

    def __post_init__(self):
        if self.t_max <= self.t_min:
            raise ValueError("t_max must exceed t_min")

    @property
    def span(self) -> float:
        return float(self.t_max - self.t_min)

    def scale(self, t):
        return (np.asarray(t, dtype=np.float64) - self.t_min) / self.span

    def unscale(self, v) -> np.ndarray:
        return np.rint(self.t_min + np.asarray(v, dtype=np.float64) * self.span).astype(np.int64)


@dataclass
class EvState:
    battery_pct: float
    location: int
    neighbors: frozenset
    timestamp: int
    history: Sequence[TripRecord]
    available_stations: frozenset

    def __post_init__(self):
        if not 0 <= self.location < N_LOCATIONS:
            raise ValueError(f"location {self.location} outside [0, {N_LOCATIONS})")
        if self.location in self.neighbors:
            raise ValueError("neighbors must exclude the current location")
        if not self.available_stations:
            raise ValueError("no available stations")


@dataclass(frozen=True)
class Prediction:
    next_location: int
    next_time: int


@dataclass
class DualTaskModel:
    location_weights: np.ndarray  # (L, F)
    location_bias: np.ndarray  # (L,)
    time_weights: np.ndarray  # (F,)
    time_bias: float
    flops_per_sample: int = 0

    @classmethod
    def zeros(cls, n_locations: int = N_LOCATIONS, n_features: int = N_FEATURES):
        return cls(
            np.zeros((n_locations, n_features)),
            np.zeros(n_locations),
            np.zeros(n_features),
            0.0,
            flops_per_sample(n_locations, n_features),
        )


def flops_per_sample(n_locations: int = N_LOCATIONS, n_features: int = N_FEATURES) -> int:
    # forward multiply-adds for both heads, backward roughly twice that
    forward = 2 * (n_locations + 1) * n_features
    return 3 * forward


def param_dim(n_locations: int = N_LOCATIONS, n_features: int = N_FEATURES) -> int:
    return n_locations * n_features + n_locations + n_features + 1


def flatten(model: DualTaskModel) -> np.ndarray:
    return np.concatenate(
        [
            model.location_weights.reshape(-1),
            model.location_bias,
            model.time_weights,
            [model.time_bias],
        ]
    ).astype(np.float64)


def unflatten(
    vec, n_locations: int = N_LOCATIONS, n_features: int = N_FEATURES
) -> DualTaskModel:
    vec = np.asarray(vec, dtype=np.float64).reshape(-1)
    if vec.size != param_dim(n_locations, n_features):
        raise LayoutMismatch(
            f"expected {param_dim(n_locations, n_features)} weights, got {vec.size}"
        )
    a = n_locations * n_features
    b = a + n_locations
    c = b + n_features
    return DualTaskModel(
        vec[:a].reshape(n_locations, n_features).copy(),
        vec[a:b].copy(),
        vec[b:c].copy(),
        float(vec[c]),
        flops_per_sample(n_locations, n_features),
    )


# ---------------------------------------------------------------------------
# features and samples
# ---------------------------------------------------------------------------


def feature_row(
    battery_pct: float,
    location: int,
    timestamp: int,
    history: Sequence[TripRecord],
    scaler: TimeScaler,
) -> np.ndarray:
    charges = [r.charge_time for r in history if r.charge_event][-CHARGE_WINDOW:]
    return _row(battery_pct, location, timestamp, history[-HISTORY_WINDOW:], charges, scaler)


def _row(battery_pct, location, timestamp, recent, charge_times, scaler) -> np.ndarray:
    x = np.zeros(N_FEATURES)
    x[0] = battery_pct / 100.0
    x[1 + location] = 1.0
    x[1 + N_LOCATIONS] = float(scaler.scale(timestamp))
    if recent:
        x[-3] = sum(r.distance_km for r in recent) / len(recent) / 50.0
        x[-2] = sum(1 for r in recent if timestamp - r.start_time <= DAY) / 10.0
    if len(charge_times) >= 2:
        gaps = np.diff(charge_times)
        x[-1] = float(gaps.mean()) / 3600.0 / 168.0
    return x


def state_features(state: EvState, scaler: TimeScaler) -> np.ndarray:
    return feature_row(
        state.battery_pct, state.location, state.timestamp, state.history, scaler
    )


@dataclass
class Samples:
    X: np.ndarray
    location: np.ndarray
    time: np.ndarray  # scaled to [0, 1]

    def __len__(self):
        return len(self.location)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, N_FEATURES)), np.zeros(0, dtype=np.int64), np.zeros(0))


def battery_before(trips: Sequence[TripRecord], j: int) -> float:
    prev = trips[j - 1]
    return 100.0 if prev.charge_event else prev.battery_pct_after


def build_samples(
    trips: Sequence[TripRecord],
    scaler: TimeScaler,
    indices: Sequence[int] | None = None,
) -> Samples:
    """One sample per trip start: the state before trip j, labelled with the
    next charge event at or after j.  Trip 0 (no known battery) and trips with
    no later charge are skipped."""
    n = len(trips)
    next_charge = [None] * n
    nxt = None
    for j in range(n - 1, -1, -1):
        if trips[j].charge_event:
            nxt = j
        next_charge[j] = nxt
    # charge times strictly before trip j, for every j
    charges_before = []
    seen: list[int] = []
    for tr in trips:
        charges_before.append(seen[-CHARGE_WINDOW:])
        if tr.charge_event:
            seen.append(tr.charge_time)
    rows, locs, times = [], [], []
    for j in indices if indices is not None else range(n):
        k = next_charge[j]
        if j == 0 or k is None:
            continue
        tr = trips[j]
        recent = trips[max(0, j - HISTORY_WINDOW) : j]
        rows.append(
            _row(battery_before(trips, j), tr.pickup_community, tr.start_time, recent, charges_before[j], scaler)
        )
        locs.append(trips[k].dropoff_community)
        times.append(scaler.scale(trips[k].charge_time))
    if not rows:
        return Samples.empty()
    return Samples(np.array(rows), np.array(locs, dtype=np.int64), np.array(times, dtype=np.float64))


def concat_samples(parts: Sequence[Samples]) -> Samples:
    parts = [p for p in parts if len(p)]
    if not parts:
        return Samples.empty()
    return Samples(
        np.concatenate([p.X for p in parts]),
        np.concatenate([p.location for p in parts]),
        np.concatenate([p.time for p in parts]),
    )


# ---------------------------------------------------------------------------
# loss, gradient, training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinearDualTask:
    """Loss/gradient/forward for the flattened dual-head linear model."""

    n_locations: int = N_LOCATIONS
    n_features: int = N_FEATURES
    time_weight: float = 1.0

    @property
    def dim(self) -> int:
        return param_dim(self.n_locations, self.n_features)

    def _split(self, w: np.ndarray):
        L, F = self.n_locations, self.n_features
        a = L * F
        return w[:a].reshape(L, F), w[a : a + L], w[a + L : a + L + F], w[a + L + F]

    def forward(self, w: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Wl, bl, wt, bt = self._split(np.asarray(w, dtype=np.float64))
        return X @ Wl.T + bl, X @ wt + bt

    def losses(self, w: np.ndarray, data: Samples) -> tuple[float, float]:
        """(cross-entropy, time MSE) averaged over samples."""
        logits, t_hat = self.forward(w, data.X)
        ce = _cross_entropy(logits, data.location)
        mse = float(np.mean((t_hat - data.time) ** 2))
        return ce, mse

    def loss(self, w: np.ndarray, data: Samples) -> float:
        ce, mse = self.losses(w, data)
        return ce + self.time_weight * mse

    def loss_and_grad(self, w: np.ndarray, data: Samples) -> tuple[float, np.ndarray]:
        X, n = data.X, len(data)
        logits, t_hat = self.forward(w, X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(shifted)
        z = p.sum(axis=1, keepdims=True)
        p /= z
        rows = np.arange(n)
        ce = float(np.mean(np.log(z[:, 0]) - shifted[rows, data.location]))
        resid = t_hat - data.time
        mse = float(np.mean(resid**2))
        d_logits = p
        d_logits[rows, data.location] -= 1.0
        d_logits /= n
        d_t = 2.0 * self.time_weight * resid / n
        grad = np.concatenate(
            [
                (d_logits.T @ X).reshape(-1),
                d_logits.sum(axis=0),
                X.T @ d_t,
                [d_t.sum()],
            ]
        )
        return ce + self.time_weight * mse, grad

    def accuracy(self, w: np.ndarray, data: Samples) -> float:
        if not len(data):
            return float("nan")
        logits, _ = self.forward(w, data.X)
        return float(np.mean(np.argmax(logits, axis=1) == data.location))


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    m = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - m).sum(axis=1)) + m[:, 0]
    return float(np.mean(lse - logits[np.arange(len(labels)), labels]))


def train_local(
    init_weights,
    data: Samples,
    epochs: int,
    learning_rate: float,
    rng: np.random.Generator | None = None,
    model: LinearDualTask | None = None,
    w_max: float = float(2**20),
) -> tuple[np.ndarray, list[float]]:
    """Full-batch gradient descent from ``init_weights``.

    Returns the clipped weights and the training loss seen at each epoch
    (before that epoch's step).  ``rng`` is accepted for trainers that
    shuffle; the full-batch linear trainer is deterministic without it.
    """
    model = model or LinearDualTask()
    if not len(data):
        raise EmptyDataset("client has no training samples")
    if learning_rate < 0:
        raise ValueError("learning_rate must be non-negative")
    w = np.array(init_weights, dtype=np.float64)
    if learning_rate == 0 or epochs == 0:
        return np.clip(w, -w_max, w_max), []
    history = []
    for _ in range(epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grad = model.loss_and_grad(w, data)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise DivergedLoss(f"loss became {loss}")
        history.append(loss)
        w -= learning_rate * grad
    if not np.all(np.isfinite(w)):
        raise DivergedLoss("weights became non-finite")
    return np.clip(w, -w_max, w_max), history


def predict_next(
    weights,
    state: EvState,
    scaler: TimeScaler,
    model: LinearDualTask | None = None,
) -> Prediction:
    if state.battery_pct <= LOW_BATTERY_PCT:
        return Prediction(state.location, int(state.timestamp))
    model = model or LinearDualTask()
    x = state_features(state, scaler)[None, :]
    logits, t_hat = model.forward(np.asarray(weights), x)
    return _decide(logits[0], float(t_hat[0]), state.available_stations, state.timestamp, scaler)


def _decide(logits, t_scaled, allowed, floor_time, scaler) -> Prediction:
    allowed_idx = np.array(sorted(allowed), dtype=np.int64)
    best = allowed_idx[int(np.argmax(logits[allowed_idx]))]  # argmax takes the first max
    t = int(scaler.unscale(t_scaled))
    return Prediction(int(best), max(t, int(floor_time)))


def predict_from_features(
    weights,
    x: np.ndarray,
    scaler: TimeScaler,
    model: LinearDualTask | None = None,
    allowed: Sequence[int] | None = None,
    floor_time: int | None = None,
) -> Prediction:
    """Forward pass on a raw feature row, used by the DERMS for summaries."""
    model = model or LinearDualTask()
    logits, t_hat = model.forward(np.asarray(weights), np.asarray(x)[None, :])
    allowed = range(model.n_locations) if allowed is None else allowed
    floor = scaler.t_min if floor_time is None else floor_time
    return _decide(logits[0], float(t_hat[0]), allowed, floor, scaler)
