"""Community aggregator (DERMS) and the energy provider's ingest (EPDC)."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimMismatch, DuplicateContributor, EmptyRound, NonFiniteInput, UntrainedModel
from .p2p import Contribution
from .ring import FixedPointCodec, RingVector, decode_vector, ring_sum
from .trainer import LinearDualTask, TimeScaler, predict_from_features

log = logging.getLogger(__name__)

DEFAULT_TAU = 100.0


@dataclass
class GlobalModel:
    theta: np.ndarray
    round: int = 0
    community_id: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if not np.all(np.isfinite(self.theta)):
            raise NonFiniteInput("global model has non-finite coordinates")


@dataclass(frozen=True)
class EpdcRecord:
    community_id: int
    predicted_location: int
    predicted_time: int
    round: int


@dataclass
class AggregatorLog:
    """Every ring vector the DERMS held, for honest-but-curious audits."""

    vectors: list[RingVector] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def record(self, rv: RingVector, note: str = "") -> None:
        self.vectors.append(rv)
        self.notes.append(note)

    def digests(self) -> set[bytes]:
        return {v.elems.tobytes() for v in self.vectors}


def _check(contributions: Sequence[Contribution], n_active: int) -> int:
    if not contributions:
        raise EmptyRound("no contributions received")
    if n_active != len(contributions):
        raise ValueError(f"n_active={n_active} but {len(contributions)} contributions")
    seen = set()
    for c in contributions:
        if c.contributor_id in seen:
            raise DuplicateContributor(f"client {c.contributor_id} contributed twice")
        seen.add(c.contributor_id)
    dims = {p.dim for c in contributions for p in c.payloads}
    if len(dims) != 1:
        raise DimMismatch(f"contribution dims {sorted(dims)}")
    return dims.pop()


def secure_aggregate(
    contributions: Sequence[Contribution],
    n_active: int,
    codec: FixedPointCodec,
    audit: AggregatorLog | None = None,
) -> np.ndarray:
    """Average the contributors' weights without decoding any one of them.

    All payloads of all contributors are summed in a single ring reduction;
    only that total is decoded.
    """
    _check(contributions, n_active)
    if n_active == 1:
        log.warning(
            "round has a single contributor (%d): its model is the aggregate",
            contributions[0].contributor_id,
        )
    total = ring_sum([p for c in contributions for p in c.payloads])
    if audit is not None:
        audit.record(total, "aggregate")
    return decode_vector(total, codec) / n_active


def plaintext_aggregate(
    contributions: Sequence[Contribution],
    n_active: int,
    codec: FixedPointCodec,
    audit: AggregatorLog | None = None,
) -> np.ndarray:
    """Secure-aggregation ablation: rebuild and decode each contributor, then average.

    Only meaningful when every contributor uploaded its complete share set
    directly; a peer-masked upload does not decode to anything useful.
    """
    _check(contributions, n_active)
    per_client = []
    for c in contributions:
        own = ring_sum(list(c.payloads))
        if audit is not None:
            audit.record(own, f"client {c.contributor_id}")
        per_client.append(decode_vector(own, codec))
    return np.mean(per_client, axis=0)


def normalize(theta, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Clip the L2 norm of ``theta`` to ``tau``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise NonFiniteInput("cannot normalise non-finite weights")
    norm = float(np.linalg.norm(theta))
    if norm <= tau:
        return theta.copy()
    return theta * (tau / norm)


def update_and_broadcast(
    model: GlobalModel, theta_norm, active: Iterable[int]
) -> tuple[GlobalModel, dict[int, np.ndarray]]:
    """Advance the round and hand each active client its own copy."""
    updated = GlobalModel(np.array(theta_norm, dtype=np.float64), model.round + 1, model.community_id)
    copies = {cid: updated.theta.copy() for cid in sorted(set(active))}
    return updated, copies


def emit_prediction(
    model: GlobalModel,
    community_features: np.ndarray,
    scaler: TimeScaler,
    trainer: LinearDualTask | None = None,
) -> EpdcRecord:
    if model.round < 1:
        raise UntrainedModel(f"community {model.community_id} has not finished a round")
    pred = predict_from_features(model.theta, community_features, scaler, trainer)
    return EpdcRecord(model.community_id, pred.next_location, pred.next_time, model.round)


def epdc_ingest(records: Iterable[EpdcRecord]) -> dict[int, tuple[Counter, Counter]]:
    """Per community: counts of predicted locations and of predicted hour-of-day."""
    demand: dict[int, tuple[Counter, Counter]] = {}
    for r in records:
        locs, hours = demand.setdefault(r.community_id, (Counter(), Counter()))
        locs[r.predicted_location] += 1
        hours[(r.predicted_time % 86_400) // 3600] += 1
    return demand
