"""Per-beam transmit/receive ports and the reception pipeline.

Each beam owns one port.  A reception's fate is decided per port: overlapping
receptions on one port keep only the strongest, while receptions on distinct
ports of the same node proceed independently, which is what lets a node take
several packets at once.  Receptions whose end timestamps coincide are handed
to the MAC as a single batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Optional, Sequence

from .frames import Frame, MacParams, frame_air_time
from .geometry import Beam, Position, SPEED_OF_LIGHT_M_S, direction_between, friis_received_power
from .kernel import Event, EventKind, Kernel, SimTime


class ReceptionStatus(IntEnum):
    VALID = 0
    NOISE = 1
    IGNORED = 2


class HalfDuplexViolation(RuntimeError):
    """Transmission started on a beam that holds a live valid reception."""


@dataclass
class Reception:
    """One in-flight arrival at a specific port."""

    frame: Frame
    tx_node: int
    tx_beam: int
    port: int
    power_dbm: float
    start: SimTime
    end: SimTime
    seq: int
    status: ReceptionStatus = ReceptionStatus.VALID
    demoted: bool = False  # lost a contention or was garbled; never revalidated
    delivered: bool = False


@dataclass
class PortState:
    """Receive-side state of one beam."""

    port_id: int
    active: list[Reception] = field(default_factory=list)
    busy_until: SimTime = 0  # includes our own transmissions on this beam

    def has_energy(self, now: SimTime) -> bool:
        return any(r.end > now for r in self.active)


def propagation_delay_ns(distance_m: float) -> SimTime:
    return round(distance_m / SPEED_OF_LIGHT_M_S * 1e9)


@dataclass
class _LinkTarget:
    rx_node: int
    rx_port: int
    power_dbm: float
    prop_ns: SimTime


class Radio:
    """One node's transceiver: its ports, transmissions and deliveries."""

    def __init__(
        self,
        node_id: int,
        beams: Sequence[Beam],
        params: MacParams,
        kernel: Kernel,
        batch_epsilon_ns: SimTime = 0,
        trace: Optional[Callable[[str], None]] = None,
    ):
        self.node_id = node_id
        self.beams = list(beams)
        self.params = params
        self.kernel = kernel
        self.batch_epsilon_ns = batch_epsilon_ns
        self.trace = trace
        self.ports = [PortState(i) for i in range(len(beams))]
        self.tx_until: SimTime = 0
        self.medium: Optional["Medium"] = None
        self.mac = None  # bound by the engine
        self._rx_seq = 0
        self._pending_delivery: list[Reception] = []
        self._flush_scheduled = False

    # -- transmit side ---------------------------------------------------

    def transmitting(self) -> bool:
        return self.tx_until > self.kernel.now

    def port_busy(self, beam: int) -> bool:
        now = self.kernel.now
        return self.ports[beam].has_energy(now) or self.ports[beam].busy_until > now

    def transmit(self, frames_by_beam: dict[int, Frame], on_complete: Callable[[], None]) -> SimTime:
        """Send one frame per listed beam; returns the transmission end time.

        The node is half duplex: starting a transmission makes every beam
        deaf, so in-flight receptions on any port are garbled.  A live valid
        reception on a listed beam is a MAC sequencing bug and raises.
        """
        if not frames_by_beam:
            on_complete()
            return self.kernel.now
        now = self.kernel.now
        for beam in frames_by_beam:
            for rec in self.ports[beam].active:
                if rec.status == ReceptionStatus.VALID and rec.end > now:
                    raise HalfDuplexViolation(
                        f"node {self.node_id} beam {beam} transmit during valid reception"
                    )
        for port in self.ports:
            for rec in port.active:
                if rec.end > now and rec.status != ReceptionStatus.NOISE:
                    rec.status = ReceptionStatus.NOISE
                    rec.demoted = True
                    if self.trace:
                        self.trace(
                            f"rx_killed node={self.node_id} port={port.port_id} "
                            f"from={rec.tx_node} kind={rec.frame.kind.name}"
                        )
        tx_end = now
        for beam, frame in frames_by_beam.items():
            air = frame_air_time(frame, self.params)
            end = now + air
            tx_end = max(tx_end, end)
            self.ports[beam].busy_until = max(self.ports[beam].busy_until, end)
            if self.trace:
                self.trace(
                    f"tx node={self.node_id} beam={beam} kind={frame.kind.name} "
                    f"to={frame.rx_addr} dur_ns={frame.duration_ns} end={end}"
                )
            assert self.medium is not None
            self.medium.cast(self.node_id, beam, frame, now, air)
        self.tx_until = max(self.tx_until, tx_end)
        self.kernel.schedule(
            tx_end, EventKind.TX_END, lambda ev: on_complete(), node=self.node_id
        )
        return tx_end

    # -- receive side ----------------------------------------------------

    def on_rx_begin(self, rec: Reception) -> None:
        now = self.kernel.now
        port = self.ports[rec.port]
        prior_busy = port.has_energy(now)
        port.active.append(rec)
        if self.transmitting():
            # Receiver is blind while the node transmits.
            rec.status = ReceptionStatus.NOISE
            rec.demoted = True
        else:
            self.resolve_port_contention(port)
        if self.mac is not None:
            self.mac.on_carrier_busy(rec.port, prior_busy)

    def resolve_port_contention(self, port: PortState) -> None:
        """Max-power capture among time-overlapping receptions on one port.

        The strongest arrival holds (or takes) the valid status; everything
        else on the port is ignored.  A reception that has ever been demoted
        stays demoted, even if the stronger one ends first.
        """
        now = self.kernel.now
        live = [r for r in port.active if r.end > now and r.status != ReceptionStatus.NOISE]
        if not live:
            return
        top = max(live, key=lambda r: (r.power_dbm, -r.start, -r.seq))
        for r in live:
            if r is top and not r.demoted:
                r.status = ReceptionStatus.VALID
            else:
                if r.status == ReceptionStatus.VALID or not r.demoted:
                    r.status = ReceptionStatus.IGNORED
                    r.demoted = True

    def on_rx_end(self, rec: Reception) -> None:
        now = self.kernel.now
        port = self.ports[rec.port]
        if rec in port.active:
            port.active.remove(rec)
        if rec.status == ReceptionStatus.VALID and not rec.delivered:
            self._pending_delivery.append(rec)
            if not self._flush_scheduled:
                self._flush_scheduled = True
                self.kernel.schedule(
                    now + self.batch_epsilon_ns,
                    EventKind.RX_DELIVER,
                    self._flush_deliveries,
                    node=self.node_id,
                )
        if not port.has_energy(now) and not self.transmitting() and self.mac is not None:
            self.mac.on_carrier_idle(rec.port)

    def _flush_deliveries(self, ev: Event) -> None:
        self._flush_scheduled = False
        batch = [r for r in self._pending_delivery if r.status == ReceptionStatus.VALID]
        self._pending_delivery = []
        if not batch or self.mac is None:
            return
        batch.sort(key=lambda r: (r.port, r.seq))
        deliveries = []
        for rec in batch:
            rec.delivered = True
            frame = rec.frame.copy()
            frame.antenna_index = rec.port
            deliveries.append((rec.port, frame, rec.power_dbm))
            if self.trace:
                self.trace(
                    f"rx_deliver node={self.node_id} port={rec.port} "
                    f"from={rec.tx_node} kind={frame.kind.name} power={rec.power_dbm:.2f}"
                )
        self.mac.on_batch(deliveries)


class Medium:
    """Static free-space coupling between every transmit beam and every port."""

    def __init__(self, kernel: Kernel, freq_hz: float):
        self.kernel = kernel
        self.freq_hz = freq_hz
        self._radios: dict[int, Radio] = {}
        self._positions: dict[int, Position] = {}
        self._tx_power_w: dict[int, float] = {}
        self._rx_threshold_dbm: dict[int, float] = {}
        self._targets: dict[tuple[int, int], list[_LinkTarget]] = {}
        self._finalized = False

    def register(
        self,
        radio: Radio,
        position: Position,
        tx_power_w: float,
        rx_threshold_dbm: float,
    ) -> None:
        self._radios[radio.node_id] = radio
        self._positions[radio.node_id] = position
        self._tx_power_w[radio.node_id] = tx_power_w
        self._rx_threshold_dbm[radio.node_id] = rx_threshold_dbm
        radio.medium = self

    def compute_rx_power(
        self, tx_node: int, tx_beam: int, rx_node: int, rx_port: int
    ) -> float:
        """Friis power with the transmit and receive beam gains applied, dBm."""
        a = self._positions[tx_node]
        b = self._positions[rx_node]
        az_ab, dist = direction_between(a, b)
        az_ba, _ = direction_between(b, a)
        gt = self._radios[tx_node].beams[tx_beam].gain_toward(az_ab)
        gr = self._radios[rx_node].beams[rx_port].gain_toward(az_ba)
        return friis_received_power(
            self._tx_power_w[tx_node], gt, gr, self.freq_hz, dist
        )

    def finalize(self) -> None:
        """Precompute every above-threshold link; geometry is static."""
        for tx_id, tx_radio in self._radios.items():
            for tx_beam in range(len(tx_radio.beams)):
                targets: list[_LinkTarget] = []
                for rx_id, rx_radio in self._radios.items():
                    if rx_id == tx_id:
                        continue
                    _, dist = direction_between(
                        self._positions[tx_id], self._positions[rx_id]
                    )
                    prop = propagation_delay_ns(dist)
                    for rx_port in range(len(rx_radio.beams)):
                        power = self.compute_rx_power(tx_id, tx_beam, rx_id, rx_port)
                        if power >= self._rx_threshold_dbm[rx_id]:
                            targets.append(_LinkTarget(rx_id, rx_port, power, prop))
                self._targets[(tx_id, tx_beam)] = targets
        self._finalized = True

    def cast(
        self, tx_node: int, beam: int, frame: Frame, start: SimTime, air_ns: SimTime
    ) -> int:
        """Schedule the arrival of one transmitted frame at every reachable port."""
        if not self._finalized:
            self.finalize()
        count = 0
        for target in self._targets[(tx_node, beam)]:
            radio = self._radios[target.rx_node]
            radio._rx_seq += 1
            rec = Reception(
                frame=frame,
                tx_node=tx_node,
                tx_beam=beam,
                port=target.rx_port,
                power_dbm=target.power_dbm,
                start=start + target.prop_ns,
                end=start + target.prop_ns + air_ns,
                seq=radio._rx_seq,
            )
            self.kernel.schedule(
                rec.start, EventKind.RX_BEGIN,
                lambda ev, r=rec, rad=radio: rad.on_rx_begin(r),
                node=target.rx_node, port=target.rx_port,
            )
            self.kernel.schedule(
                rec.end, EventKind.RX_END,
                lambda ev, r=rec, rad=radio: rad.on_rx_end(r),
                node=target.rx_node, port=target.rx_port,
            )
            count += 1
        return count
