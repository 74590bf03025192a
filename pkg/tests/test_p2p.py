from collections import namedtuple

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfltn.errors import DimMismatch, ShareCountMismatch
from hfltn.p2p import (
    AugmentationConfig,
    Fallback,
    PairingLedger,
    Path,
    PeerGroup,
    augment,
    direct_contribution,
    distribute_shares,
    select_peers,
    share_counts_by_owner,
)
from hfltn.ring import FixedPointCodec, RingVector, SecretShare, encode_vector, partition, ring_sum

Ev = namedtuple("Ev", "client_id transitory community")
MOD = 2**64


def roster_of(n, community=0, transitory=()):
    return [Ev(i, i in transitory, community) for i in range(n)]


def test_group_of_five():
    roster = roster_of(6)
    g = select_peers(roster[0], roster, 0, set(range(6)))
    assert isinstance(g, PeerGroup)
    assert g.members == (1, 2, 3, 4, 5)


def test_single_peer_falls_back():
    roster = roster_of(2)
    assert select_peers(roster[0], roster, 0, {0, 1}) == Fallback(0, 1)


def test_ineligible_peers_are_filtered():
    roster = roster_of(6, transitory={2}) + [Ev(10, False, 1), Ev(11, False, 0)]
    g = select_peers(roster[0], roster, 0, {0, 1, 2, 3, 10})
    # 2 is transitory, 10 is another community, 11 is inactive, 4/5 inactive
    assert g.members == (1, 3)
    assert select_peers(roster[0], roster, 0, {0, 1, 2, 10}) == Fallback(0, 1)


def test_twelve_peers_picks_least_recently_paired():
    roster = roster_of(13)
    ledger = PairingLedger()
    for p, rnd in zip(range(1, 13), [5, 0, 3, 7, 1, 2, 9, 4, 6, 8, 0, 5]):
        ledger.last[(0, p)] = rnd
    g = select_peers(roster[0], roster, 10, set(range(13)), ledger)
    # brute force: sort all 12 by (last, id) and keep 10
    brute = sorted(range(1, 13), key=lambda p: (ledger.last[(0, p)], p))[:10]
    assert g.members == tuple(sorted(brute))
    assert 7 not in g.members and 10 not in g.members


def test_pairings_rotate_over_rounds():
    roster = roster_of(26)
    ledger = PairingLedger()
    chosen = set()
    for t in range(3):  # ceil(25 / 10)
        g = select_peers(roster[0], roster, t, set(range(26)), ledger)
        ledger.record(g)
        chosen |= set(g.members)
    assert chosen == set(range(1, 26))


def test_peer_group_bounds():
    with pytest.raises(ValueError):
        PeerGroup(0, (1,), 0)
    with pytest.raises(ValueError):
        PeerGroup(0, tuple(range(1, 12)), 0)
    with pytest.raises(ValueError):
        PeerGroup(0, (0, 1), 0)


def _shares(k, dim=3, seed=0, sender=0):
    return partition(RingVector(np.arange(dim, dtype=np.uint64)), k, np.random.default_rng(seed), sender)


def test_distribute_three_shares():
    sh = _shares(3)
    a = distribute_shares(sh, PeerGroup(0, (4, 9), 0))
    assert a[4].share_index == 0 and a[9].share_index == 1 and a[0].share_index == 2


def test_distribute_eleven_is_bijection():
    sh = _shares(11)
    a = distribute_shares(sh, PeerGroup(0, tuple(range(1, 11)), 0))
    assert sorted(s.share_index for s in a.values()) == list(range(11))


def test_distribute_mismatch():
    with pytest.raises(ShareCountMismatch):
        distribute_shares(_shares(3), PeerGroup(0, (1, 2, 3), 0))


def test_augment_examples():
    r = SecretShare(0, 2, 3, RingVector([MOD - 1]))
    a = SecretShare(1, 0, 3, RingVector([5]))
    b = SecretShare(2, 0, 3, RingVector([7]))
    c = augment(r, [a, b])
    assert c.payloads[0].tolist() == [(MOD - 1 + 5 + 7) % MOD]
    assert c.path is Path.P2P_AUGMENTED
    assert augment(r, []).payloads == (r.payload,)
    with pytest.raises(DimMismatch):
        augment(r, [SecretShare(1, 0, 3, RingVector([1, 2]))])


def test_alpha_scales_received_weights():
    codec = FixedPointCodec()
    r = SecretShare(0, 1, 2, encode_vector([1.0], codec))
    a = SecretShare(1, 0, 2, encode_vector([2.0], codec))
    c = augment(r, [a], AugmentationConfig(alpha=0.5, codec=codec))
    assert c.payloads[0] == encode_vector([2.0], codec)


def full_exchange(weights, rng):
    """Every EV partitions to its whole community, distributes and augments."""
    ids = sorted(weights)
    roster = [Ev(i, False, 0) for i in ids]
    received = {i: [] for i in ids}
    retained = {}
    for ev in roster:
        g = select_peers(ev, roster, 0, set(ids))
        sh = partition(weights[ev.client_id], len(g.members) + 1, rng, ev.client_id)
        for dst, s in distribute_shares(sh, g).items():
            if dst == ev.client_id:
                retained[dst] = s
            else:
                received[dst].append(s)
    return [augment(retained[i], received[i]) for i in ids], received


def test_three_ev_aggregate_is_exact():
    codec = FixedPointCodec()
    rng = np.random.default_rng(3)
    w = {i: encode_vector(rng.normal(size=8), codec) for i in range(3)}
    contribs, _ = full_exchange(w, rng)
    assert ring_sum([c.payloads[0] for c in contribs]) == ring_sum(list(w.values()))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 11), st.integers(1, 16), st.integers(0, 10**6))
def test_aggregate_preservation_and_peer_secrecy(n, dim, seed):
    rng = np.random.default_rng(seed)
    w = {i: RingVector(rng.integers(0, 2**64, size=dim, dtype=np.uint64)) for i in range(n)}
    contribs, received = full_exchange(w, rng)
    assert len(contribs) == n
    assert ring_sum([c.payloads[0] for c in contribs]) == ring_sum(list(w.values()))
    for (observer, owner), (seen, k) in share_counts_by_owner(received).items():
        assert seen < k
        assert observer != owner


def test_direct_contribution_paths():
    sh = _shares(3)
    c = direct_contribution(0, list(reversed(sh)), transitory=True)
    assert c.path is Path.TRANSITORY_DIRECT
    assert c.payloads == tuple(s.payload for s in sh)
    assert direct_contribution(0, sh, transitory=False).path is Path.DIRECT_FALLBACK
