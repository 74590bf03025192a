"""In-order message queues standing in for the MeLSeC and TLS 1.3 channels.

No cryptography is performed: channels are assumed authenticated and
confidential.  What is enforced is the topology (EV<->EV and EV<->DERMS use
``MELSEC_SIM``, DERMS<->EPDC uses ``TLS13_SIM``) and that only serialized
bytes cross a node boundary.
"""

from __future__ import annotations

import enum
from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field

from .errors import ChannelViolation
from .wire import Message, decode_message

DERMS_BASE = 0x1000_0000
EPDC_ID = 0x2000_0000


class ChannelKind(enum.Enum):
    MELSEC_SIM = "melsec"
    TLS13_SIM = "tls13"


class NodeKind(enum.Enum):
    EV = "ev"
    DERMS = "derms"
    EPDC = "epdc"


def derms_id(community: int) -> int:
    return DERMS_BASE + community


def node_kind(node_id: int) -> NodeKind:
    if node_id >= EPDC_ID:
        return NodeKind.EPDC
    if node_id >= DERMS_BASE:
        return NodeKind.DERMS
    return NodeKind.EV


_ALLOWED = {
    frozenset({NodeKind.EV}): ChannelKind.MELSEC_SIM,
    frozenset({NodeKind.EV, NodeKind.DERMS}): ChannelKind.MELSEC_SIM,
    frozenset({NodeKind.DERMS, NodeKind.EPDC}): ChannelKind.TLS13_SIM,
}


def required_channel(sender: int, receiver: int) -> ChannelKind:
    pair = frozenset({node_kind(sender), node_kind(receiver)})
    try:
        return _ALLOWED[pair]
    except KeyError:
        raise ChannelViolation(
            f"no channel between {node_kind(sender).value} and {node_kind(receiver).value}"
        ) from None


@dataclass(frozen=True)
class Envelope:
    channel_kind: ChannelKind
    sender: int
    receiver: int
    payload: bytes
    sim_timestamp: float


@dataclass
class Network:
    """Deterministic single-threaded message fabric."""

    clock_ms: float = 0.0
    queues: dict[int, deque] = field(default_factory=lambda: defaultdict(deque))
    census: Counter = field(default_factory=Counter)
    bytes_sent: int = 0
    keep_log: bool = False
    log: list[Envelope] = field(default_factory=list)

    def send(self, sender: int, receiver: int, payload: bytes, channel: ChannelKind | None = None) -> None:
        if not isinstance(payload, (bytes, bytearray)):
            raise TypeError("only serialized bytes may cross a node boundary")
        needed = required_channel(sender, receiver)
        if channel is not None and channel != needed:
            raise ChannelViolation(f"{channel.name} used where {needed.name} is required")
        env = Envelope(needed, sender, receiver, bytes(payload), self.clock_ms)
        self.queues[receiver].append(env)
        # byte 5 of every HFLS message is msg_type
        self.census[(node_kind(sender).value, node_kind(receiver).value, payload[5])] += 1
        self.bytes_sent += len(payload)
        if self.keep_log:
            self.log.append(env)

    def receive_all(self, receiver: int) -> list[tuple[Envelope, Message]]:
        q = self.queues.pop(receiver, deque())
        return [(env, decode_message(env.payload)) for env in q]

    def pending(self) -> int:
        return sum(len(q) for q in self.queues.values())
