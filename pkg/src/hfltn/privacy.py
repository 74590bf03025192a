"""Post-run checks of what an honest-but-curious observer could have learned.

Three checks over an audited run:

* ``no_plain_at_derms``: nothing the DERMS logged equals a client's encoded
  weight vector.
* ``no_full_partition_at_peers``: no peer received all K shares of another
  EV's partition.
* ``uniform_single_messages``: the bytes of every individual payload an EV
  sent pass a chi-square uniformity test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .p2p import share_counts_by_owner

UNIFORMITY_P = 0.001
MIN_ELEMENTS = 100_000


@dataclass(frozen=True)
class PrivacyReport:
    no_plain_at_derms: bool
    no_full_partition_at_peers: bool
    uniform_single_messages: bool
    chi2_pvalue: float
    elements_tested: int
    min_contributors: int

    @property
    def holds(self) -> bool:
        return self.no_plain_at_derms and self.no_full_partition_at_peers and self.uniform_single_messages


def byte_uniformity(elems: np.ndarray) -> float:
    """Chi-square p-value of the byte histogram of uint64 ring elements."""
    raw = np.ascontiguousarray(elems, dtype=np.uint64).view(np.uint8)
    counts = np.bincount(raw, minlength=256)
    return float(stats.chisquare(counts).pvalue)


def check(world, max_elements: int = 4 * MIN_ELEMENTS) -> PrivacyReport:
    audit = world.privacy
    if audit is None:
        raise ValueError("world was built without privacy auditing")
    held = set()
    for log in world.audits.values():
        held |= log.digests()
    plain_ok = not (held & audit.encoded_weights)
    partitions_ok = all(seen < k for seen, k in share_counts_by_owner(audit.peer_observed).values())
    if audit.single_messages:
        elems = np.concatenate([m.elems for m in audit.single_messages])[:max_elements]
    else:
        elems = np.zeros(0, dtype=np.uint64)
    p = byte_uniformity(elems) if elems.size else 0.0
    uniform_ok = elems.size >= MIN_ELEMENTS and p > UNIFORMITY_P
    return PrivacyReport(
        no_plain_at_derms=plain_ok,
        no_full_partition_at_peers=partitions_ok,
        uniform_single_messages=uniform_ok,
        chi2_pvalue=p,
        elements_tested=int(elems.size),
        min_contributors=min(audit.contributors_per_round, default=0),
    )
