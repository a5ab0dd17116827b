"""In-process exchange of compact Gaussian messages between radar nodes.

Only moments cross node boundaries.  Every message goes through a fixed
little-endian binary codec so the in-process bus can be swapped for a real
transport without touching the tracker.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

_HEADER = struct.Struct("<BIII")


class MessageKind(IntEnum):
    STATE_MESSAGE = 0
    INIT_CANDIDATE = 1
    CONSENSUS = 2


@dataclass
class WireMessage:
    kind: MessageKind
    object_id: int
    time_index: int
    sender: int
    mean: np.ndarray                 # 4-vector
    cov: np.ndarray                  # 4x4; inf marks uninformed dimensions
    existence: float | None = None   # carried by candidate/consensus records

    def __post_init__(self):
        self.kind = MessageKind(self.kind)
        self.mean = np.asarray(self.mean, dtype=float).reshape(4)
        self.cov = np.asarray(self.cov, dtype=float).reshape(4, 4)
        finite = np.isfinite(np.diag(self.cov))
        block = self.cov[np.ix_(finite, finite)]
        if block.size and np.linalg.eigvalsh(0.5 * (block + block.T)).min() < -1e-9 * max(1.0, np.abs(block).max()):
            raise ValueError("wire payload covariance is not positive semidefinite")

    def encode(self) -> bytes:
        head = _HEADER.pack(int(self.kind), self.object_id, self.time_index, self.sender)
        values = [self.mean, self.cov.ravel()]
        if self.kind is not MessageKind.STATE_MESSAGE:
            values.append(np.array([np.nan if self.existence is None else self.existence]))
        return head + np.concatenate(values).astype("<f8").tobytes()

    @classmethod
    def decode(cls, blob: bytes) -> "WireMessage":
        kind, oid, n, sender = _HEADER.unpack_from(blob)
        vals = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
        expected = 20 if MessageKind(kind) is MessageKind.STATE_MESSAGE else 21
        if len(vals) != expected:
            raise ValueError(f"payload holds {len(vals)} values, expected {expected}")
        existence = None
        if expected == 21 and not np.isnan(vals[20]):
            existence = float(vals[20])
        return cls(kind, oid, n, sender, vals[:4].copy(), vals[4:20].reshape(4, 4).copy(), existence)

    def same_as(self, other: "WireMessage") -> bool:
        return self.encode() == other.encode()


@dataclass
class Receipt:
    sender: int
    receiver: int
    object_id: int
    n_bytes: int


@dataclass
class NodePool:
    nodes: list[int]
    ring_order: list[int] | None = None
    dropped: set[int] = field(default_factory=set)

    def __post_init__(self):
        if self.ring_order is None:
            self.ring_order = list(self.nodes)
        if sorted(self.ring_order) != sorted(self.nodes):
            raise ValueError("ring_order must be a permutation of the nodes")

    @property
    def active(self) -> list[int]:
        return [n for n in self.nodes if n not in self.dropped]


class Bus:
    """All-to-all ordered delivery; each node has an inbox of decoded messages."""

    def __init__(self, pool: NodePool):
        self.pool = pool
        self.inbox: dict[int, list[WireMessage]] = {n: [] for n in pool.nodes}
        self.bytes_sent = 0
        self.messages_sent = 0

    def set_dropped(self, dropped: Iterable[int]):
        self.pool.dropped = set(dropped)

    def broadcast(self, node: int, messages: Sequence[WireMessage]) -> list[Receipt]:
        if node in self.pool.dropped:
            log.info("node %d is dropped; %d message(s) not sent", node, len(messages))
            return []
        receipts = []
        for msg in messages:
            blob = msg.encode()
            for other in self.pool.nodes:
                if other == node:
                    continue
                if other in self.pool.dropped:
                    log.debug("node %d dropped, skipping delivery from %d", other, node)
                    continue
                self.inbox[other].append(WireMessage.decode(blob))
                receipts.append(Receipt(node, other, msg.object_id, len(blob)))
                self.bytes_sent += len(blob)
                self.messages_sent += 1
        return receipts

    def collect(self, node: int) -> list[WireMessage]:
        msgs, self.inbox[node] = self.inbox[node], []
        return msgs


def broadcast_state_messages(bus: Bus, node: int, messages: Sequence[WireMessage]) -> list[Receipt]:
    return bus.broadcast(node, messages)


def run_init_ring(bus: Bus, init_at_node: Callable[[int], list[WireMessage]]) -> list[WireMessage]:
    """Sequential initialisation: each active node in ring order runs its search
    on the pool left by its predecessors, then the last node's pool is
    broadcast as the consensus."""
    pool: list[WireMessage] = []
    last = None
    for node in bus.pool.ring_order:
        if node in bus.pool.dropped:
            log.info("ring skips dropped node %d", node)
            continue
        admitted = init_at_node(node)
        if admitted:
            bus.broadcast(node, admitted)
        pool.extend(admitted)
        last = node
    if last is None:
        return []
    consensus = [WireMessage(MessageKind.CONSENSUS, m.object_id, m.time_index, last,
                             m.mean, m.cov, m.existence) for m in pool]
    if consensus:
        bus.broadcast(last, consensus)
    return consensus
