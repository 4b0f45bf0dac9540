"""Constant-rate traffic sources and the static next-hop routing table."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from .frames import Frame, FrameKind
from .kernel import EventKind, Kernel, SimTime


@dataclass
class SourceConfig:
    node: int
    queue_index: int
    dest_addr: int
    packet_bytes: int = 512
    interarrival_ns: SimTime = 4_000_000  # 4 ms -> 250 packets/s
    start_at: SimTime = 0
    stop_at: Optional[SimTime] = None
    jitter_ns: SimTime = 0  # optional seeded +/- jitter, off by default

    def __post_init__(self):
        if self.interarrival_ns <= 0:
            raise ValueError("interarrival must be positive")
        if not (1 <= self.queue_index):
            raise ValueError("queue_index must be >= 1")


class RoutingError(KeyError):
    pass


class RouteTable:
    """(node, final destination) -> next hop, optionally split per queue."""

    def __init__(self):
        self._by_queue: dict[tuple[int, int, int], int] = {}
        self._plain: dict[tuple[int, int], int] = {}

    def add(self, node: int, dest: int, next_hop: int, queue_index: Optional[int] = None):
        if node == dest:
            raise RoutingError(f"route at node {node} for itself")
        if queue_index is None:
            self._plain[(node, dest)] = next_hop
        else:
            self._by_queue[(node, dest, queue_index)] = next_hop

    def next_hop(self, node: int, dest: int, queue_index: int = 1) -> Optional[int]:
        hop = self._by_queue.get((node, dest, queue_index))
        if hop is None:
            hop = self._plain.get((node, dest))
        return hop

    def entries(self):
        for (node, dest, qi), hop in sorted(self._by_queue.items()):
            yield node, dest, hop, qi
        for (node, dest), hop in sorted(self._plain.items()):
            yield node, dest, hop, None

    def validate_loop_free(self, node_count: int) -> None:
        """Every chain of next hops must reach its destination within the
        node count; a missing intermediate entry is an error too."""
        starts = {(n, d, q or 1) for n, d, _, q in self.entries()}
        for node, dest, queue in sorted(starts):
            cur = node
            for _ in range(node_count + 1):
                hop = self.next_hop(cur, dest, queue)
                if hop is None:
                    raise RoutingError(
                        f"route ({node} -> {dest}) dead-ends at node {cur}"
                    )
                if hop == dest:
                    break
                cur = hop
            else:
                raise RoutingError(f"route ({node} -> {dest}) loops")


class Source:
    """Deterministic CBR generator feeding one MAC queue."""

    def __init__(
        self,
        config: SourceConfig,
        kernel: Kernel,
        mac,
        tree_id_alloc,
        horizon: SimTime,
        rng: Optional[random.Random] = None,
    ):
        self.config = config
        self.kernel = kernel
        self.mac = mac
        self.tree_id_alloc = tree_id_alloc
        self.stop_at = config.stop_at if config.stop_at is not None else horizon
        self.rng = rng
        self.emitted = 0
        self._seq = 0
        if config.start_at < self.stop_at:
            kernel.schedule(
                config.start_at, EventKind.SOURCE_GENERATE, self._tick, node=config.node
            )

    def _tick(self, ev) -> None:
        now = self.kernel.now
        frame = self.generate(now)
        self.mac.on_higher_layer_packet(frame, self.config.queue_index)
        gap = self.config.interarrival_ns
        if self.jittered and self.rng is not None:
            gap += self.rng.randint(-self.config.jitter_ns, self.config.jitter_ns)
            gap = max(1, gap)
        nxt = now + gap
        if nxt < self.stop_at:
            self.kernel.schedule(
                nxt, EventKind.SOURCE_GENERATE, self._tick, node=self.config.node
            )

    @property
    def jittered(self) -> bool:
        return self.config.jitter_ns > 0

    def generate(self, now: SimTime) -> Frame:
        self.emitted += 1
        self._seq += 1
        return Frame(
            kind=FrameKind.DATA,
            tx_addr=self.config.node,
            rx_addr=-1,
            final_dest_addr=self.config.dest_addr,
            size_bytes=self.config.packet_bytes,
            seq_no=self._seq,
            tree_id=self.tree_id_alloc(),
            queue_index=self.config.queue_index,
            created_at=now,
        )
