"""Peer selection, share distribution and augmentation for resident EVs.

An owner keeps one share of its partition and hands one share to each peer.
Every EV's single upload to the DERMS is its retained share plus all shares it
received.  With ``alpha == 1`` the community total is unchanged, so the DERMS
recovers exactly the sum of the original weights.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimMismatch, ShareCountMismatch
from .ring import (
    FixedPointCodec,
    RingVector,
    SecretShare,
    decode_vector,
    encode_vector,
    ring_sum,
)

MIN_PEERS = 2
MAX_PEERS = 10
NEVER_PAIRED = -1


class Path(enum.Enum):
    P2P_AUGMENTED = "p2p_augmented"
    DIRECT_FALLBACK = "direct_fallback"
    TRANSITORY_DIRECT = "transitory_direct"
    PLAINTEXT = "plaintext"  # secret-sharing ablation only


@dataclass(frozen=True)
class PeerGroup:
    owner_id: int
    members: tuple[int, ...]
    formed_at_round: int

    def __post_init__(self):
        if not MIN_PEERS <= len(self.members) <= MAX_PEERS:
            raise ValueError(f"peer group of size {len(self.members)}")
        if self.owner_id in self.members:
            raise ValueError("owner cannot be its own peer")


@dataclass(frozen=True)
class Fallback:
    """Too few peers: the owner uploads its shares straight to the DERMS."""

    owner_id: int
    available: int


@dataclass(frozen=True)
class AugmentationConfig:
    alpha: float = 1.0
    codec: FixedPointCodec = field(default_factory=FixedPointCodec)

    @property
    def exact(self) -> bool:
        return self.alpha == 1.0


@dataclass(frozen=True)
class Contribution:
    """Everything one EV uploads to its DERMS in a round.

    Augmented uploads carry one payload.  Direct uploads carry the K shares
    as separate payloads, which the DERMS only ever sums together with every
    other contributor's.
    """

    contributor_id: int
    payloads: tuple[RingVector, ...]
    path: Path

    @property
    def dim(self) -> int:
        return self.payloads[0].dim


@dataclass
class PairingLedger:
    """Last round each (owner, peer) pair exchanged shares."""

    last: dict[tuple[int, int], int] = field(default_factory=dict)

    def last_paired(self, owner: int, peer: int) -> int:
        return self.last.get((owner, peer), NEVER_PAIRED)

    def record(self, group: PeerGroup) -> None:
        for m in group.members:
            self.last[(group.owner_id, m)] = group.formed_at_round


def eligible_peers(owner, roster: Iterable, active: set[int]) -> list[int]:
    """Resident EVs of the owner's community that are active this round."""
    return sorted(
        ev.client_id
        for ev in roster
        if ev.client_id != owner.client_id
        and not ev.transitory
        and ev.community == owner.community
        and ev.client_id in active
    )


def select_peers(
    owner,
    roster: Iterable,
    t: int,
    active: set[int],
    ledger: PairingLedger | None = None,
    max_peers: int = MAX_PEERS,
) -> PeerGroup | Fallback:
    """Pick up to ``max_peers`` peers, least recently paired first.

    Eligibility already enforces same community and availability; among the
    eligible, ties on pairing age break by ascending client id.
    """
    ledger = ledger or PairingLedger()
    candidates = eligible_peers(owner, roster, active)
    if len(candidates) < MIN_PEERS:
        return Fallback(owner.client_id, len(candidates))
    ranked = sorted(candidates, key=lambda p: (ledger.last_paired(owner.client_id, p), p))
    chosen = tuple(sorted(ranked[: min(max_peers, MAX_PEERS)]))
    return PeerGroup(owner.client_id, chosen, t)


def distribute_shares(
    shares: Sequence[SecretShare], group: PeerGroup
) -> dict[int, SecretShare]:
    """Map members (ascending id) to shares 0..K-2; the owner keeps share K-1."""
    k = len(shares)
    if k != len(group.members) + 1:
        raise ShareCountMismatch(f"K={k} shares for {len(group.members)} peers")
    by_index = sorted(shares, key=lambda s: s.share_index)
    if [s.share_index for s in by_index] != list(range(k)):
        raise ShareCountMismatch("share indices are not 0..K-1")
    assignment = {m: by_index[i] for i, m in enumerate(sorted(group.members))}
    assignment[group.owner_id] = by_index[k - 1]
    return assignment


def augment(
    retained: SecretShare,
    received: Sequence[SecretShare],
    cfg: AugmentationConfig | None = None,
) -> Contribution:
    cfg = cfg or AugmentationConfig()
    for s in received:
        if s.payload.dim != retained.payload.dim:
            raise DimMismatch(f"received dim {s.payload.dim} != {retained.payload.dim}")
    if not received:
        return Contribution(retained.sender_id, (retained.payload,), Path.P2P_AUGMENTED)
    if cfg.exact:
        incoming = [s.payload for s in received]
    else:
        # diagnostic only: breaks exact aggregate preservation
        scaled = [
            np.clip(cfg.alpha * decode_vector(s.payload, cfg.codec), -cfg.codec.w_max, cfg.codec.w_max)
            for s in received
        ]
        incoming = [encode_vector(v, cfg.codec) for v in scaled]
    payload = ring_sum([retained.payload, *incoming])
    return Contribution(retained.sender_id, (payload,), Path.P2P_AUGMENTED)


def direct_contribution(
    sender_id: int, shares: Sequence[SecretShare], transitory: bool
) -> Contribution:
    path = Path.TRANSITORY_DIRECT if transitory else Path.DIRECT_FALLBACK
    ordered = sorted(shares, key=lambda s: s.share_index)
    return Contribution(sender_id, tuple(s.payload for s in ordered), path)


def share_counts_by_owner(
    observed: Mapping[int, Sequence[SecretShare]],
) -> dict[tuple[int, int], tuple[int, int]]:
    """For each (observer, owner): (distinct share indices seen, K).

    Used to check that no peer ever holds a full partition of another EV.
    """
    out: dict[tuple[int, int], tuple[int, int]] = {}
    for observer, shares in observed.items():
        per_owner: dict[int, set[int]] = {}
        k_of: dict[int, int] = {}
        for s in shares:
            per_owner.setdefault(s.sender_id, set()).add(s.share_index)
            k_of[s.sender_id] = s.share_count
        for owner, idx in per_owner.items():
            out[(observer, owner)] = (len(idx), k_of[owner])
    return out
