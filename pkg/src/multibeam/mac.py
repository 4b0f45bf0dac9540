"""Multi-beam MAC: per-beam scheduling state, node-based constant backoff,
concurrent transmit/receive cycles, collision flagging, retransmission
handling, multi-hop forwarding and duplicate suppression.

One contention window serves all beams of a node.  Backoff is a constant
(cw+1 slots, no random draw) so that nodes released by the same scheduling
volley fire together; a backoff interrupted by channel activity starts over
rather than resuming, which keeps released groups aligned.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional

from .frames import Frame, FrameKind, MacParams, air_time, frame_air_time, nav_duration
from .kernel import Event, EventKind, Kernel, SimTime
from .phy import Radio, propagation_delay_ns


class MacState(IntEnum):
    IDLE = 0
    WAIT_GATE = 1      # wants to transmit, medium/NAV/yield gate not yet open
    DIFS = 2
    BACKOFF = 3
    TX = 4             # own transmission in the air
    WAIT_RESP = 5      # awaiting CTS or ACK batch
    RESP_PENDING = 6   # committed responder, SIFS running
    WATCH = 7          # responder awaiting data on granted beams


@dataclass
class HnavEntry:
    """Per-beam scheduling record."""

    neighbor_addr: Optional[int] = None
    nav_expiry: SimTime = 0
    is_valid_rts_received: bool = False
    is_invalid_cts_received: bool = False
    to_send: bool = False

    @property
    def flagged(self) -> bool:
        return self.is_valid_rts_received or self.is_invalid_cts_received


class DataQueue:
    """FIFO byte-bounded queue; staged frames keep their reservation until
    they are delivered or dropped, so occupancy never exceeds capacity."""

    def __init__(self, capacity_bytes: int):
        self.capacity_bytes = capacity_bytes
        self.frames: deque[Frame] = deque()
        self.stored_bytes = 0
        self.reserved_bytes = 0
        self.reserved_count = 0

    @property
    def occupancy_bytes(self) -> int:
        return self.stored_bytes + self.reserved_bytes

    @property
    def packet_count(self) -> int:
        return len(self.frames) + self.reserved_count

    def offer(self, frame: Frame) -> bool:
        if self.occupancy_bytes + frame.size_bytes > self.capacity_bytes:
            return False
        self.frames.append(frame)
        self.stored_bytes += frame.size_bytes
        return True

    def head(self) -> Optional[Frame]:
        return self.frames[0] if self.frames else None

    def pop_head_reserve(self) -> Frame:
        frame = self.frames.popleft()
        self.stored_bytes -= frame.size_bytes
        self.reserved_bytes += frame.size_bytes
        self.reserved_count += 1
        return frame

    def requeue_head(self, frame: Frame) -> None:
        self.release(frame)
        self.frames.appendleft(frame)
        self.stored_bytes += frame.size_bytes

    def release(self, frame: Frame) -> None:
        self.reserved_bytes -= frame.size_bytes
        self.reserved_count -= 1


@dataclass
class MacCounters:
    generated: int = 0
    enqueued_forward: int = 0
    mac_sent_data: int = 0
    dropped_overflow: int = 0
    dropped_retry: int = 0
    dropped_no_route: int = 0
    retransmissions: int = 0
    rts_sent: int = 0
    sch_sent: int = 0
    cts_sent: int = 0
    ack_sent: int = 0
    data_sent_attempts: int = 0
    control_received: int = 0
    data_frames_received: int = 0
    sink_delivered: int = 0
    duplicates_discarded: int = 0
    undesired_discarded: int = 0
    sink_latency_total_ns: int = 0
    sink_latency_max_ns: int = 0
    sent_data_to: dict = field(default_factory=dict)
    sink_from: dict = field(default_factory=dict)

    def bump_map(self, name: str, key: int) -> None:
        m = getattr(self, name)
        m[key] = m.get(key, 0) + 1


RouteLookup = Callable[[int, int, int], Optional[int]]  # (node, dest, queue) -> next hop


class MacNode:
    """MAC instance for one node, driving one radio."""

    def __init__(
        self,
        node_id: int,
        radio: Radio,
        params: MacParams,
        kernel: Kernel,
        queue_count: int = 4,
        buffer_bytes: int = 32 * 1024,
        bottleneck_capacity: int = 4,
        route_lookup: Optional[RouteLookup] = None,
        neighbor_beam: Optional[dict[int, int]] = None,
        duplicate_memory: int = 1,
        trace: Optional[Callable[[str], None]] = None,
    ):
        self.node_id = node_id
        self.radio = radio
        self.params = params
        self.kernel = kernel
        self.queue_count = queue_count
        self.buffer_bytes = buffer_bytes
        self.bottleneck_capacity = bottleneck_capacity
        self.route_lookup = route_lookup or (lambda n, d, q: None)
        self.neighbor_beam = neighbor_beam or {}
        self.trace = trace
        radio.mac = self

        beams = len(radio.beams)
        self.hnav = [HnavEntry() for _ in range(beams)]
        self.queues = [DataQueue(buffer_bytes) for _ in range(queue_count)]
        self.counters = MacCounters()

        self.state = MacState.IDLE
        self.max_backoff = params.cw_min
        self.receiver_busy = [False] * beams
        self.collision = False
        self.update_collision = False
        self._use_eifs = False
        self._last_success = True
        self._deferred = True  # first contention counts as post-deference
        self.earliest_contend: SimTime = 0

        # initiator-cycle state
        self.frag_staging: dict[int, Frame] = {}
        self.tx_copy: dict[int, Frame] = {}
        self.staged_queue: dict[int, int] = {}
        self.expected_beams: set[int] = set()
        self.total_desired_frame = 0
        self.no_of_frame = 0
        self.can_send_more_packets = True
        self.cycle_phase: Optional[str] = None  # 'rts' | 'data'
        self.cycle_self_nav: set[int] = set()
        self.cycle_success = False
        self.replay_beams: Optional[set[int]] = None
        self._timeout_ev: Optional[Event] = None

        # responder state
        self.watch_beams: set[int] = set()
        self._watch_ev: Optional[Event] = None
        self.last_jump_backoff = False

        self.recent_tree_ids: deque[int] = deque(maxlen=duplicate_memory)

        self._gate_beams: set[int] = set()
        self._token = 0
        self._pending_ev: Optional[Event] = None
        self._seq_no = 0

    # ------------------------------------------------------------------
    # helpers

    def _trace(self, msg: str) -> None:
        if self.trace:
            self.trace(msg)

    def now(self) -> SimTime:
        return self.kernel.now

    def _next_seq(self) -> int:
        self._seq_no += 1
        return self._seq_no

    def timeout_ns(self) -> SimTime:
        """Response wait: SIFS + control airtime + round-trip flight + a slot."""
        control = air_time(FrameKind.CTS, self.params.cts_bytes, self.params)
        round_trip = 2 * propagation_delay_ns(self.params.max_range_m)
        return self.params.sifs_ns + control + round_trip + self.params.slot_ns

    def medium_is_idle(self, beams) -> bool:
        now = self.now()
        return all(
            not self.receiver_busy[b]
            and not self.radio.port_busy(b)
            and self.hnav[b].nav_expiry <= now
            for b in beams
        )

    # ------------------------------------------------------------------
    # higher-layer input

    def on_higher_layer_packet(self, frame: Frame, queue_index: int) -> bool:
        """Queue a locally generated packet; overflow is a counted drop."""
        self.counters.generated += 1
        queue = self.queues[queue_index - 1]
        frame.queue_index = queue_index
        if not queue.offer(frame):
            self.counters.dropped_overflow += 1
            return False
        self.try_contend()
        return True

    # ------------------------------------------------------------------
    # contention

    def _data_beam_plan(self) -> dict[int, int]:
        """Map beam -> queue index (1-based) for current queue heads.

        The queue's head frame picks the beam toward its next hop; when two
        queues resolve to one beam the lower queue index wins this cycle.
        Frames with no route or no beam toward the hop are dropped here.
        """
        plan: dict[int, int] = {}
        for qi in range(1, self.queue_count + 1):
            queue = self.queues[qi - 1]
            while queue.frames:
                head = queue.head()
                hop = self.route_lookup(self.node_id, head.final_dest_addr, qi)
                beam = self.neighbor_beam.get(hop) if hop is not None else None
                if hop is None or beam is None:
                    queue.pop_head_reserve()
                    queue.release(head)
                    self.counters.dropped_no_route += 1
                    continue
                if beam not in plan:
                    plan[beam] = qi
                break
        return plan

    def try_contend(self) -> None:
        if self.state not in (MacState.IDLE, MacState.WAIT_GATE):
            return
        plan = self._data_beam_plan()
        if self.replay_beams is not None:
            plan = {b: q for b, q in plan.items() if b in self.replay_beams}
        if not plan:
            self.state = MacState.IDLE
            return
        now = self.now()
        gate = set(plan)
        self._gate_beams = gate
        if any(self.receiver_busy[b] or self.radio.port_busy(b) for b in gate):
            # an idle edge will re-trigger us
            self.state = MacState.WAIT_GATE
            self._deferred = True
            return
        wait_until = max(
            [self.earliest_contend] + [self.hnav[b].nav_expiry for b in gate]
        )
        if wait_until > now:
            if wait_until > self.earliest_contend:
                self._deferred = True  # held by virtual carrier, not by yield
            self.state = MacState.WAIT_GATE
            self._arm(wait_until, EventKind.CONTEND_RETRY, self._on_contend_retry)
            return
        spacing = self.params.eifs_ns if self._use_eifs else self.params.difs_ns
        self._use_eifs = False
        self.state = MacState.DIFS
        self._arm(now + spacing, EventKind.DEFER_EXPIRED, self._on_difs_done)

    def _arm(self, at: SimTime, kind: EventKind, cb) -> None:
        self._token += 1
        token = self._token
        if self._pending_ev is not None:
            self.kernel.cancel(self._pending_ev)
        self._pending_ev = self.kernel.schedule(
            at, kind, lambda ev: cb(token), node=self.node_id
        )

    def _invalidate_pending(self) -> None:
        self._token += 1
        if self._pending_ev is not None:
            self.kernel.cancel(self._pending_ev)
            self._pending_ev = None

    def _on_contend_retry(self, token: int) -> None:
        if token != self._token or self.state != MacState.WAIT_GATE:
            return
        self.try_contend()

    def _on_difs_done(self, token: int) -> None:
        if token != self._token or self.state != MacState.DIFS:
            return
        slots = self.compute_backoff_slots()
        self.state = MacState.BACKOFF
        self._trace(f"backoff node={self.node_id} slots={slots}")
        self._arm(
            self.now() + slots * self.params.slot_ns,
            EventKind.BACKOFF_EXPIRED,
            self._on_backoff_done,
        )

    def compute_backoff_slots(self) -> int:
        """Constant (non-random) backoff: cw+1 slots.

        The window shrinks to the minimum after any success and after any
        deference to a busy medium; it doubles only for back-to-back silent
        failures, capped at cw_max.
        """
        if self._last_success or self._deferred:
            self.max_backoff = self.params.cw_min
        else:
            self.max_backoff = min(2 * self.max_backoff + 1, self.params.cw_max)
        self._deferred = False
        return self.max_backoff + 1

    def node_based_cw_reset(self, any_beam_succeeded: bool) -> None:
        if any_beam_succeeded:
            self.max_backoff = self.params.cw_min
        self._last_success = any_beam_succeeded

    def _on_backoff_done(self, token: int) -> None:
        if token != self._token or self.state != MacState.BACKOFF:
            return
        self.initiate_cpt()

    # ------------------------------------------------------------------
    # transmit cycle

    def initiate_cpt(self) -> None:
        """Stage queue heads and fire the RTS volley, plus scheduling twins
        on beams with known potential transmitters."""
        now = self.now()
        plan = self._data_beam_plan()
        if self.replay_beams is not None:
            plan = {b: q for b, q in plan.items() if b in self.replay_beams}
        plan = {
            b: q
            for b, q in plan.items()
            if not self.radio.port_busy(b) and self.hnav[b].nav_expiry <= now
        }
        if not plan:
            self.state = MacState.IDLE
            self.try_contend()
            return
        self.replay_beams = None
        volley: dict[int, Frame] = {}
        self.cycle_self_nav.clear()
        self.cycle_success = False
        rts_dur = nav_duration(FrameKind.RTS, self.params)
        for beam, qi in sorted(plan.items()):
            queue = self.queues[qi - 1]
            frame = queue.pop_head_reserve()
            self.frag_staging[beam] = frame
            self.staged_queue[beam] = qi
            self.hnav[beam].to_send = True
            if frame.short_retry_count or frame.long_retry_count:
                self.counters.retransmissions += 1
            hop = self.route_lookup(self.node_id, frame.final_dest_addr, qi)
            volley[beam] = Frame(
                kind=FrameKind.RTS,
                tx_addr=self.node_id,
                rx_addr=hop,
                final_dest_addr=frame.final_dest_addr,
                duration_ns=rts_dur,
                size_bytes=self.params.rts_bytes,
                seq_no=self._next_seq(),
                tree_id=frame.tree_id,
            )
            self.counters.rts_sent += 1
        for beam, entry in enumerate(self.hnav):
            if beam in volley or not entry.flagged or entry.neighbor_addr is None:
                continue
            if self.radio.port_busy(beam) or entry.nav_expiry > now:
                continue  # busy scheduled beam skips this cycle
            volley[beam] = Frame(
                kind=FrameKind.SCH_RTS,
                tx_addr=self.node_id,
                rx_addr=entry.neighbor_addr,
                final_dest_addr=entry.neighbor_addr,
                duration_ns=rts_dur,
                size_bytes=self.params.rts_bytes,
                seq_no=self._next_seq(),
            )
            self.counters.sch_sent += 1
        self.expected_beams = set(plan)
        self.total_desired_frame = len(plan)
        self.no_of_frame = 0
        self.cycle_phase = "rts"
        self.state = MacState.TX
        self._invalidate_pending()
        self._trace(
            f"cpt node={self.node_id} rts_beams={sorted(plan)} "
            f"sch_beams={sorted(set(volley) - set(plan))}"
        )
        tx_end = self.radio.transmit(volley, self._after_initiator_tx)
        for beam, frame in volley.items():
            if frame.kind == FrameKind.SCH_RTS:
                self.hnav[beam].nav_expiry = max(
                    self.hnav[beam].nav_expiry, tx_end + frame.duration_ns
                )
                self.cycle_self_nav.add(beam)

    def _after_initiator_tx(self) -> None:
        for beam in self.expected_beams:
            self.hnav[beam].to_send = False
        self.state = MacState.WAIT_RESP
        self._timeout_ev = self.kernel.schedule(
            self.now() + self.timeout_ns(),
            EventKind.FRAME_TIMEOUT,
            self._on_frame_timeout_ev,
            node=self.node_id,
        )
        self._trace(
            f"timeout_set node={self.node_id} expected={sorted(self.expected_beams)}"
        )

    def cancel_timeout_if_expected(self, arrival_beam: int) -> bool:
        """The response timer is cancelled only by an arrival on a beam the
        node is expecting a response on."""
        if self._timeout_ev is None or arrival_beam not in self.expected_beams:
            return False
        cancelled = self.kernel.cancel(self._timeout_ev)
        if cancelled:
            self._timeout_ev = None
            self._trace(
                f"timeout_cancelled node={self.node_id} beam={arrival_beam} "
                f"expected={sorted(self.expected_beams)}"
            )
        return cancelled

    def _send_data_phase(self, beams: set[int]) -> None:
        data_dur = nav_duration(FrameKind.DATA, self.params)
        volley: dict[int, Frame] = {}
        for beam in sorted(beams):
            staged = self.frag_staging.pop(beam)
            self.tx_copy[beam] = staged
            data = staged.copy()
            data.kind = FrameKind.DATA
            data.tx_addr = self.node_id
            data.rx_addr = self.route_lookup(
                self.node_id, staged.final_dest_addr, self.staged_queue[beam]
            )
            data.duration_ns = data_dur
            volley[beam] = data
            self.counters.data_sent_attempts += 1
        self.expected_beams = set(beams)
        self.total_desired_frame = len(beams)
        self.cycle_phase = "data"
        self.state = MacState.TX
        self.radio.transmit(volley, self._after_initiator_tx)

    def _fail_beam(self, beam: int, stage: str) -> bool:
        """Requeue (or drop) the frame a beam failed to deliver.

        Returns True when the retry limit dropped the frame, which frees
        capacity for a new packet in the coming cycle.
        """
        frame = self.frag_staging.pop(beam, None) or self.tx_copy.pop(beam, None)
        qi = self.staged_queue.pop(beam, None)
        if frame is None or qi is None:
            return False
        queue = self.queues[qi - 1]
        if stage == "rts":
            frame.short_retry_count += 1
            count, limit = frame.short_retry_count, self.params.short_retry_limit
        else:
            frame.long_retry_count += 1
            count, limit = frame.long_retry_count, self.params.long_retry_limit
        if count >= limit:
            queue.release(frame)
            self.counters.dropped_retry += 1
            self._trace(
                f"retry_drop node={self.node_id} beam={beam} stage={stage} "
                f"tree={frame.tree_id}"
            )
            return True
        queue.requeue_head(frame)
        return False

    def requeue_unsuccessful_beam(self, beam: int) -> bool:
        stage = "data" if beam in self.tx_copy else "rts"
        return self._fail_beam(beam, stage)

    def _reset_cycle_self_nav(self) -> None:
        # Beams whose NAV this cycle's volley set (scheduling beams) reset to
        # now so a retransmission cycle is not self-delayed.
        now = self.now()
        for beam in self.cycle_self_nav:
            self.hnav[beam].nav_expiry = min(self.hnav[beam].nav_expiry, now)
        self.cycle_self_nav.clear()

    def _finish_cycle(self, any_success: bool, yielded: bool) -> None:
        self.node_based_cw_reset(any_success)
        self.expected_beams = set()
        self.cycle_phase = None
        self.state = MacState.IDLE
        if yielded:
            self.role_priority_switch()
        self.try_contend()

    def role_priority_switch(self) -> None:
        """Yield the channel after a completed transmit cycle so the served
        receiver (and scheduled neighbors) win the next contention."""
        self.earliest_contend = max(
            self.earliest_contend,
            self.now() + self.params.role_yield_us * 1_000,
        )

    def _on_frame_timeout_ev(self, ev: Event) -> None:
        if ev is not self._timeout_ev:
            return
        self._timeout_ev = None
        self.on_frame_timeout()

    def on_frame_timeout(self) -> None:
        """No expected beam delivered anything: the pure retransmission path."""
        self._trace(
            f"timeout_fired node={self.node_id} expected={sorted(self.expected_beams)}"
        )
        stage = self.cycle_phase or "rts"
        can_more = self.bottleneck_capacity > self.total_desired_frame
        failed = set(self.expected_beams)
        for beam in sorted(failed):
            if self._fail_beam(beam, stage):
                can_more = True
        self._reset_cycle_self_nav()
        self.can_send_more_packets = can_more
        self.replay_beams = None if can_more else failed
        self._finish_cycle(any_success=False, yielded=False)

    # ------------------------------------------------------------------
    # PHY carrier callbacks

    def on_carrier_busy(self, beam: int, prior_busy: bool) -> None:
        self.flag_collision_on_busy(beam, prior_busy)
        if self.state in (MacState.DIFS, MacState.BACKOFF) and beam in self._gate_beams:
            self._invalidate_pending()
            self._deferred = True
            self.state = MacState.WAIT_GATE

    def flag_collision_on_busy(self, beam: int, prior_busy: Optional[bool] = None) -> None:
        if prior_busy is None:
            prior_busy = self.receiver_busy[beam]
        if prior_busy and self.receiver_busy[beam]:
            # a port saw a second packet while still busy
            self.update_collision = True
        else:
            self.receiver_busy[beam] = True
        if not self.collision and self.update_collision:
            self.collision = True
            self.update_collision = False
            self._use_eifs = True  # defer for EIFS at the next contention

    def on_carrier_idle(self, beam: int) -> None:
        self.receiver_busy[beam] = False
        if self.state == MacState.WAIT_GATE:
            self.try_contend()

    # ------------------------------------------------------------------
    # reception

    def update_hnav_on_receive(self, beam: int, frame: Frame) -> None:
        """Scheduling-table bookkeeping for any frame a beam hears.

        A valid request addressed to us marks the beam's neighbor as a
        potential transmitter; an overheard grant for someone else does the
        same.  Scheduling frames always load the beam's NAV, other frames
        only when they are not addressed to us.
        """
        entry = self.hnav[beam]
        now = self.now()
        if frame.kind == FrameKind.RTS and frame.rx_addr == self.node_id:
            entry.is_valid_rts_received = True
            entry.neighbor_addr = frame.tx_addr
        elif frame.kind == FrameKind.CTS and frame.rx_addr != self.node_id:
            entry.is_invalid_cts_received = True
            if entry.neighbor_addr is None:
                entry.neighbor_addr = frame.rx_addr
        if frame.kind.is_sch or frame.rx_addr != self.node_id:
            entry.nav_expiry = max(entry.nav_expiry, now + frame.duration_ns)

    def _process_third_party(self, beam: int, frame: Frame) -> None:
        self.update_hnav_on_receive(beam, frame)
        if not frame.kind.is_sch and frame.rx_addr == self.node_id:
            self.counters.undesired_discarded += 1

    def on_batch(self, deliveries: list[tuple[int, Frame, float]]) -> None:
        """One batch of concurrently completed receptions, one per beam."""
        if self.state == MacState.RESP_PENDING:
            # The MAC is committed to a response right now; late arrivals in
            # the turnaround gap are discarded outright.
            self.counters.undesired_discarded += len(deliveries)
            return
        if self.state == MacState.TX:
            return
        if self.state == MacState.WAIT_RESP:
            self._batch_while_waiting(deliveries)
            return
        if self.state == MacState.WATCH:
            self._batch_while_watching(deliveries)
            return
        self._batch_while_available(deliveries)

    # -- initiator waiting for responses ---------------------------------

    def _batch_while_waiting(self, deliveries) -> None:
        expected = [d for d in deliveries if d[0] in self.expected_beams]
        others = [d for d in deliveries if d[0] not in self.expected_beams]
        for beam, frame, _ in others:
            self._process_third_party(beam, frame)
        if not expected:
            return
        self.cancel_timeout_if_expected(expected[0][0])
        want = FrameKind.CTS if self.cycle_phase == "rts" else FrameKind.ACK
        responses = []
        for beam, frame, _ in expected:
            if frame.kind == want and frame.rx_addr == self.node_id:
                responses.append((beam, frame))
                self.counters.control_received += 1
            else:
                self._process_third_party(beam, frame)
        self.no_of_frame = len(responses)
        resp_beams = {b for b, _ in responses}
        failed = self.expected_beams - resp_beams
        if responses:
            self.cycle_success = True
        dropped_any = False
        for beam in sorted(failed):
            if self._fail_beam(beam, self.cycle_phase):
                dropped_any = True
        if failed:
            self.can_send_more_packets = (
                self.bottleneck_capacity > self.total_desired_frame or dropped_any
            )
        if not responses:
            # cancelled by a non-response (a scheduling frame); whole cycle failed
            self._reset_cycle_self_nav()
            self.replay_beams = None if self.can_send_more_packets else failed
            self._finish_cycle(any_success=False, yielded=False)
            return
        if self.cycle_phase == "rts":
            self.expected_beams = resp_beams
            self._respond_after_sifs("data", resp_beams)
        else:
            for beam, frame in responses:
                staged = self.tx_copy.pop(beam, None)
                if staged is None:
                    continue
                qi = self.staged_queue.pop(beam)
                self.queues[qi - 1].release(staged)
                self.counters.mac_sent_data += 1
                self.counters.bump_map("sent_data_to", frame.tx_addr)
            self._finish_cycle(any_success=True, yielded=True)

    def _respond_after_sifs(self, what: str, beams: set[int], frames=None) -> None:
        prev_state = self.state
        self.state = MacState.RESP_PENDING
        self._invalidate_pending()
        payload = (what, beams, frames)
        self.kernel.schedule(
            self.now() + self.params.sifs_ns,
            EventKind.RESPONSE_DUE,
            lambda ev: self._on_response_due(*payload),
            node=self.node_id,
        )

    def _on_response_due(self, what: str, beams: set[int], frames) -> None:
        if what == "data":
            self._send_data_phase(beams)
        elif what == "cts":
            self._send_cts_volley(frames)
        elif what == "ack":
            self._send_ack_volley(frames)

    # -- responder paths --------------------------------------------------

    def _batch_while_available(self, deliveries) -> None:
        rts_mine = []
        data_mine = []
        for beam, frame, _ in deliveries:
            if frame.kind == FrameKind.RTS and frame.rx_addr == self.node_id:
                self.update_hnav_on_receive(beam, frame)
                rts_mine.append((beam, frame))
            elif frame.kind == FrameKind.DATA and frame.rx_addr == self.node_id:
                data_mine.append((beam, frame))
            else:
                self._process_third_party(beam, frame)
        if data_mine:
            # unsolicited but correctly received data still gets its ACK
            for beam, frame in data_mine:
                self.on_data_arrival(frame, beam)
            self._interrupt_contention()
            self._respond_after_sifs("ack", set(), data_mine)
        elif rts_mine:
            self._interrupt_contention()
            self._respond_after_sifs("cts", set(), rts_mine)

    def _interrupt_contention(self) -> None:
        self._invalidate_pending()
        self._deferred = True
        self.state = MacState.IDLE

    def select_response_frames(self, rts_batch: list[tuple[int, Frame]]) -> dict[int, Frame]:
        """Grants for beams that delivered a request, scheduling twins for the
        other beams with potential-transmitter history."""
        volley: dict[int, Frame] = {}
        jump = self._has_pending_data(rts_batch)
        self.last_jump_backoff = jump
        cts_dur = nav_duration(FrameKind.CTS, self.params)
        sch_dur = nav_duration(FrameKind.SCH_CTS, self.params, jump_backoff=jump)
        for beam, rts in rts_batch:
            volley[beam] = Frame(
                kind=FrameKind.CTS,
                tx_addr=self.node_id,
                rx_addr=rts.tx_addr,
                final_dest_addr=rts.tx_addr,
                duration_ns=cts_dur,
                size_bytes=self.params.cts_bytes,
                seq_no=self._next_seq(),
            )
            self.counters.cts_sent += 1
        for beam, entry in enumerate(self.hnav):
            if beam in volley or not entry.flagged or entry.neighbor_addr is None:
                continue
            if self.radio.port_busy(beam):
                continue
            volley[beam] = Frame(
                kind=FrameKind.SCH_CTS,
                tx_addr=self.node_id,
                rx_addr=entry.neighbor_addr,
                final_dest_addr=entry.neighbor_addr,
                duration_ns=sch_dur,
                size_bytes=self.params.cts_bytes,
                seq_no=self._next_seq(),
            )
            self.counters.sch_sent += 1
        return volley

    def _has_pending_data(self, rts_batch) -> bool:
        if any(q.packet_count for q in self.queues):
            return True
        # an incoming request for traffic we must forward counts as pending
        return any(rts.final_dest_addr != self.node_id for _, rts in rts_batch)

    def _send_cts_volley(self, rts_batch: list[tuple[int, Frame]]) -> None:
        volley = self.select_response_frames(rts_batch)
        jump = self.last_jump_backoff
        grant_beams = {beam for beam, _ in rts_batch}
        self.state = MacState.TX
        tx_end = self.radio.transmit(
            volley, lambda: self._after_cts_volley(grant_beams)
        )
        for beam, frame in volley.items():
            if frame.kind == FrameKind.SCH_CTS:
                # Own-beam synchronization NAV; the jump-backoff AIFS penalizes
                # neighbors only, not this node's next access.
                base = frame.duration_ns - (self.params.aifs_ns if jump else 0)
                self.hnav[beam].nav_expiry = max(
                    self.hnav[beam].nav_expiry, tx_end + base
                )

    def _after_cts_volley(self, grant_beams: set[int]) -> None:
        self.watch_beams = grant_beams
        self.state = MacState.WATCH
        deadline = (
            self.now()
            + self.params.sifs_ns
            + air_time(FrameKind.DATA, self.params.data_bytes, self.params)
            + 2 * propagation_delay_ns(self.params.max_range_m)
            + self.params.slot_ns
        )
        self._watch_ev = self.kernel.schedule(
            deadline, EventKind.WATCH_EXPIRED, self._on_watch_expired, node=self.node_id
        )

    def _on_watch_expired(self, ev: Event) -> None:
        if ev is not self._watch_ev or self.state != MacState.WATCH:
            return
        self._watch_ev = None
        self.watch_beams = set()
        self.state = MacState.IDLE
        self._deferred = True
        self.try_contend()

    def _batch_while_watching(self, deliveries) -> None:
        data_watched = []
        for beam, frame, _ in deliveries:
            if (
                beam in self.watch_beams
                and frame.kind == FrameKind.DATA
                and frame.rx_addr == self.node_id
            ):
                data_watched.append((beam, frame))
            else:
                self._process_third_party(beam, frame)
        if not data_watched:
            return
        for beam, frame in data_watched:
            self.on_data_arrival(frame, beam)
            self.watch_beams.discard(beam)
        if not self.watch_beams and self._watch_ev is not None:
            self.kernel.cancel(self._watch_ev)
            self._watch_ev = None
        self._respond_after_sifs("ack", set(), data_watched)

    def _send_ack_volley(self, data_batch: list[tuple[int, Frame]]) -> None:
        volley: dict[int, Frame] = {}
        for beam, data in data_batch:
            volley[beam] = Frame(
                kind=FrameKind.ACK,
                tx_addr=self.node_id,
                rx_addr=data.tx_addr,
                final_dest_addr=data.tx_addr,
                duration_ns=0,
                size_bytes=self.params.ack_bytes,
                seq_no=self._next_seq(),
            )
            self.counters.ack_sent += 1
        self.state = MacState.TX
        self.radio.transmit(volley, self._after_ack_volley)

    def _after_ack_volley(self) -> None:
        if self.watch_beams:
            self.state = MacState.WATCH
            return
        self.state = MacState.IDLE
        self._deferred = True
        self.try_contend()

    # -- data plane --------------------------------------------------------

    def on_data_arrival(self, frame: Frame, arrival_beam: int) -> str:
        """Deliver to the sink, forward into a queue, or drop a duplicate."""
        self.counters.data_frames_received += 1
        if frame.tree_id in self.recent_tree_ids:
            self.counters.duplicates_discarded += 1
            return "duplicate"
        self.recent_tree_ids.append(frame.tree_id)
        if frame.final_dest_addr == self.node_id:
            self.counters.sink_delivered += 1
            self.counters.bump_map("sink_from", frame.tx_addr)
            latency = self.now() - frame.created_at
            self.counters.sink_latency_total_ns += latency
            if latency > self.counters.sink_latency_max_ns:
                self.counters.sink_latency_max_ns = latency
            return "sink"
        queue_index = (arrival_beam % self.queue_count) + 1
        fwd = frame.copy()
        fwd.queue_index = queue_index
        fwd.antenna_index = arrival_beam
        fwd.short_retry_count = 0
        fwd.long_retry_count = 0
        if self.queues[queue_index - 1].offer(fwd):
            self.counters.enqueued_forward += 1
            return "forward"
        self.counters.dropped_overflow += 1
        return "overflow"

    # ------------------------------------------------------------------
    # accounting

    def residual_packets(self) -> int:
        return sum(q.packet_count for q in self.queues)

    def conservation_terms(self) -> dict[str, int]:
        c = self.counters
        return {
            "in": c.generated + c.enqueued_forward,
            "out": c.mac_sent_data
            + c.dropped_overflow
            + c.dropped_retry
            + c.dropped_no_route
            + self.residual_packets(),
        }
