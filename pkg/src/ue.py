"""
Victim terminal model

Periodic traffic source with a drop-head transmit buffer, HARQ
retransmission, radio-link-failure detection, reestablishment or fresh
connection, growing back-off and cell barring. Modem behaviour is selected by
a ``UeProfile`` loaded from ``scenarios/profiles.yaml``.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    from src.dci_codec import DEFAULT_LAYOUT, DciLayout, EncodedDci, ScramblingMode, UplinkDci, blind_decode
    from src.enb import (BLOCK_DATA, BLOCK_MSG3, BLOCK_SETUP, BLOCK_UCI, HARQ_PROCESSES, Feedback, Preamble,
                         PucchReport, RarGrant, Reconfiguration, UplinkBlock)
    from src.metrics import EventSink, NullSink
    from src.phy_grid import McsTable
except ImportError:
    from dci_codec import DEFAULT_LAYOUT, DciLayout, EncodedDci, ScramblingMode, UplinkDci, blind_decode
    from enb import (BLOCK_DATA, BLOCK_MSG3, BLOCK_SETUP, BLOCK_UCI, HARQ_PROCESSES, Feedback, Preamble,
                     PucchReport, RarGrant, Reconfiguration, UplinkBlock)
    from metrics import EventSink, NullSink
    from phy_grid import McsTable

logger = logging.getLogger(__name__)

SUBFRAMES_PER_SECOND = 1000
SETUP_BLOCK_BYTES = 32


class RrcKind(str, Enum):
    IDLE = 'idle'
    RANDOM_ACCESS = 'random_access'
    CONNECTED = 'connected'
    REESTABLISHING = 'reestablishing'
    BACKOFF = 'backoff'
    CELL_BARRED = 'cell_barred'
    CRASHED = 'crashed'


ALLOWED_TRANSITIONS = {
    RrcKind.IDLE: {RrcKind.RANDOM_ACCESS, RrcKind.CELL_BARRED},
    RrcKind.RANDOM_ACCESS: {RrcKind.CONNECTED, RrcKind.BACKOFF, RrcKind.CELL_BARRED},
    RrcKind.REESTABLISHING: {RrcKind.CONNECTED, RrcKind.BACKOFF, RrcKind.CELL_BARRED},
    RrcKind.CONNECTED: {RrcKind.CONNECTED, RrcKind.REESTABLISHING, RrcKind.RANDOM_ACCESS,
                        RrcKind.IDLE, RrcKind.CRASHED},
    RrcKind.BACKOFF: {RrcKind.RANDOM_ACCESS, RrcKind.REESTABLISHING},
    RrcKind.CELL_BARRED: {RrcKind.IDLE},
    RrcKind.CRASHED: set(),
}


@dataclass(frozen=True)
class RrcState:
    kind: RrcKind
    attempt: Optional[int] = None
    rnti: Optional[int] = None
    prev_rnti: Optional[int] = None
    until: Optional[int] = None

    @classmethod
    def idle(cls) -> 'RrcState':
        return cls(RrcKind.IDLE)

    @classmethod
    def random_access(cls, attempt: int) -> 'RrcState':
        return cls(RrcKind.RANDOM_ACCESS, attempt=attempt)

    @classmethod
    def connected(cls, rnti: int) -> 'RrcState':
        return cls(RrcKind.CONNECTED, rnti=rnti)

    @classmethod
    def reestablishing(cls, prev_rnti: int, attempt: int) -> 'RrcState':
        return cls(RrcKind.REESTABLISHING, attempt=attempt, prev_rnti=prev_rnti)

    @classmethod
    def backoff(cls, until: int) -> 'RrcState':
        return cls(RrcKind.BACKOFF, until=until)

    @classmethod
    def cell_barred(cls, until: int) -> 'RrcState':
        return cls(RrcKind.CELL_BARRED, until=until)

    @classmethod
    def crashed(cls) -> 'RrcState':
        return cls(RrcKind.CRASHED)


@dataclass(frozen=True)
class UeProfile:
    name: str = 'modem-b'
    reestablish_with_previous_rnti: bool = True
    fresh_connection_gain_threshold: Optional[float] = None
    backoff_base_s: float = 2.0
    backoff_growth: float = 2.0
    backoff_cap_s: float = 22.0
    max_rach_attempts: int = 10
    barring_s: float = 300.0
    rlf_consecutive_failures: int = 40
    crash_probability_per_rlf: float = 0.0
    ra_response_window_subframes: int = 10
    setup_timeout_subframes: int = 50

    def violations(self) -> List[Tuple[str, str]]:
        problems = []
        if self.backoff_base_s <= 0:
            problems.append(('backoff_base_s', 'must be positive'))
        if self.backoff_growth < 1:
            problems.append(('backoff_growth', 'must be >= 1'))
        if self.backoff_cap_s < self.backoff_base_s:
            problems.append(('backoff_cap_s', 'must be >= backoff_base_s'))
        if not 6 <= self.max_rach_attempts <= 200:
            problems.append(('max_rach_attempts', 'must be within [6, 200]'))
        if not 0 < self.barring_s <= 300:
            problems.append(('barring_s', 'must be within (0, 300]'))
        if self.rlf_consecutive_failures < 1:
            problems.append(('rlf_consecutive_failures', 'must be >= 1'))
        if not 0.0 <= self.crash_probability_per_rlf <= 1.0:
            problems.append(('crash_probability_per_rlf', 'must be within [0, 1]'))
        return problems

    def backoff_duration(self, failure_count: int) -> float:
        """Seconds to wait after ``failure_count`` failed procedures"""
        if failure_count < 1:
            raise ValueError(f"failure_count must be >= 1, got {failure_count}")
        return min(self.backoff_base_s * self.backoff_growth ** (failure_count - 1), self.backoff_cap_s)


def backoff_duration(profile: UeProfile, failure_count: int) -> float:
    return profile.backoff_duration(failure_count)


@dataclass(frozen=True)
class TrafficConfig:
    packet_size_bytes: int = 800
    interval_subframes: int = 1
    buffer_capacity_packets: int = 500

    def violations(self) -> List[Tuple[str, str]]:
        return [(name, 'must be positive') for name in
                ('packet_size_bytes', 'interval_subframes', 'buffer_capacity_packets')
                if getattr(self, name) <= 0]


@dataclass
class HarqBlock:
    block_id: int
    kind: str
    packets: int
    payload_bytes: int
    harq_id: int
    retx_count: int = 0
    sent_at: Optional[int] = None


class HarqProcessSet:
    """Eight stop-and-wait processes; a block lives in one until ACKed or dropped"""

    def __init__(self, max_retx: int = 4, size: int = HARQ_PROCESSES):
        self.max_retx = max_retx
        self.processes: List[Optional[HarqBlock]] = [None] * size

    def free_slot(self) -> Optional[int]:
        for index, block in enumerate(self.processes):
            if block is None:
                return index
        return None

    def store(self, block: HarqBlock) -> None:
        if self.processes[block.harq_id] is not None:
            raise ValueError(f"HARQ process {block.harq_id} is busy")
        self.processes[block.harq_id] = block

    def find(self, block_id: int) -> Optional[HarqBlock]:
        return next((b for b in self.processes if b is not None and b.block_id == block_id), None)

    def retransmittable(self, now: int, capacity: int) -> Optional[HarqBlock]:
        """Oldest NACKed block that fits ``capacity`` and was not sent at ``now``"""
        waiting = [b for b in self.processes if b is not None and b.sent_at != now and b.payload_bytes <= capacity]
        return min(waiting, key=lambda b: b.block_id) if waiting else None

    def ack(self, block_id: int) -> Optional[HarqBlock]:
        block = self.find(block_id)
        if block is not None:
            self.processes[block.harq_id] = None
        return block

    def nack(self, block_id: int) -> Tuple[Optional[HarqBlock], bool]:
        """Returns ``(block, dropped)``"""
        block = self.find(block_id)
        if block is None:
            return None, False
        if block.retx_count >= self.max_retx:
            self.processes[block.harq_id] = None
            return block, True
        block.retx_count += 1
        return block, False

    def clear(self) -> List[HarqBlock]:
        blocks = [b for b in self.processes if b is not None]
        self.processes = [None] * len(self.processes)
        return blocks

    @property
    def packets_in_flight(self) -> int:
        return sum(b.packets for b in self.processes if b is not None)

    @property
    def bytes_pending(self) -> int:
        return sum(b.payload_bytes for b in self.processes if b is not None)


@dataclass
class AccessProcedure:
    phase: str
    started: int
    reestablish_rnti: Optional[int] = None
    deadline: Optional[int] = None
    rar: Optional[RarGrant] = None
    rnti: Optional[int] = None


@dataclass
class UplinkBurst:
    """Everything the UE puts on the air in one subframe"""
    blocks: List[UplinkBlock] = field(default_factory=list)
    pucch: Optional[PucchReport] = None
    preamble: Optional[Preamble] = None


class UeModel:
    """One terminal; mutated only by the run's event loop"""

    def __init__(
        self,
        ue_id: int,
        profile: UeProfile,
        traffic: TrafficConfig,
        table: McsTable,
        rng: np.random.Generator,
        mode: ScramblingMode,
        unjammed_sinr_db: float,
        grant_delay_subframes: int = 4,
        max_retx: int = 4,
        msg3_mcs_index: int = 0,
        layout: DciLayout = DEFAULT_LAYOUT,
        sink: Optional[EventSink] = None,
        cell_gate: Optional[Callable[[int], bool]] = None,
        critical: bool = False,
        traffic_end: Optional[int] = None,
    ):
        self.ue_id = ue_id
        self.profile = profile
        self.traffic = traffic
        self.table = table
        self.rng = rng
        self.mode = ScramblingMode.parse(mode)
        self.unjammed_sinr_db = unjammed_sinr_db
        self.grant_delay = grant_delay_subframes
        self.msg3_mcs_index = msg3_mcs_index
        self.layout = layout
        self.sink = sink or NullSink()
        self.cell_gate = cell_gate
        self.critical = critical
        self.traffic_end = traffic_end

        self.state = RrcState.idle()
        self.history: List[Tuple[int, RrcKind]] = [(0, RrcKind.IDLE)]
        self.rnti: Optional[int] = None
        self.prev_rnti: Optional[int] = None
        self.access: Optional[AccessProcedure] = None
        self.failure_count = 0

        self.buffer: Deque[int] = deque()
        self.harq = HarqProcessSet(max_retx)
        self.grants: Dict[int, List[Tuple[int, UplinkDci]]] = {}
        self.tpc_offset_db = 0.0
        self.uci_on_pusch = False
        self.consecutive_failures = 0
        self.last_deficit_db = 0.0
        self._sent: Dict[int, UplinkBlock] = {}
        self._next_block_id = 0
        self._next_packet = 0

        self.offered = 0
        self.delivered = 0
        self.dropped = 0
        self.retransmissions = 0
        self.rlf_count = 0
        self.transmissions = 0

    # State machine

    def _enter(self, now: int, state: RrcState) -> None:
        if state.kind not in ALLOWED_TRANSITIONS[self.state.kind]:
            raise RuntimeError(f"illegal RRC transition {self.state.kind.value} -> {state.kind.value}")
        self.state = state
        self.history.append((now, state.kind))

    @property
    def crashed(self) -> bool:
        return self.state.kind is RrcKind.CRASHED

    @property
    def packets_in_flight(self) -> int:
        return self.harq.packets_in_flight

    def ledger_balanced(self) -> bool:
        return self.offered == self.delivered + self.dropped + len(self.buffer) + self.packets_in_flight

    def _start_access(self, now: int) -> None:
        attempt = self.failure_count + 1
        if self.prev_rnti is not None and self.profile.reestablish_with_previous_rnti:
            self._enter(now, RrcState.reestablishing(self.prev_rnti, attempt))
            self.access = AccessProcedure('preamble', now, reestablish_rnti=self.prev_rnti)
            self.sink.record(now, 'reestablish_start', self.prev_rnti, attempt)
        else:
            self._enter(now, RrcState.random_access(attempt))
            self.access = AccessProcedure('preamble', now)
            self.sink.record(now, 'rach_start', None, attempt)

    def _fail_procedure(self, now: int, reason: str) -> None:
        self.access = None
        self.rnti = None
        self.grants.clear()
        self.failure_count += 1
        self.sink.record(now, 'rach_failed', self.prev_rnti, {'reason': reason, 'failures': self.failure_count})
        if self.failure_count >= self.profile.max_rach_attempts:
            self.bar_cell(now)
            return
        until = now + max(1, round(self.profile.backoff_duration(self.failure_count) * SUBFRAMES_PER_SECOND))
        self._enter(now, RrcState.backoff(until))
        self.sink.record(now, 'backoff', self.prev_rnti, until)

    def bar_cell(self, now: int) -> RrcState:
        until = now + round(self.profile.barring_s * SUBFRAMES_PER_SECOND)
        self._enter(now, RrcState.cell_barred(until))
        self.sink.record(now, 'cell_barred', None, until)
        return self.state

    def _connected(self, now: int) -> None:
        rnti = self.access.rnti
        self.access = None
        self.rnti = rnti
        self.prev_rnti = rnti
        self.failure_count = 0
        self.consecutive_failures = 0
        self._enter(now, RrcState.connected(rnti))
        self.sink.record(now, 'connected', rnti)

    def _return_in_flight(self, drop: bool) -> None:
        blocks = sorted(self.harq.clear(), key=lambda b: b.block_id, reverse=True)
        for block in blocks:
            if drop:
                self.dropped += block.packets
            else:
                for _ in range(block.packets):
                    self.buffer.appendleft(0)
        self._enforce_capacity()

    def detect_rlf(self, now: int) -> RrcState:
        """Apply the profile's reaction once consecutive failures reach the limit"""
        if self.state.kind is not RrcKind.CONNECTED:
            return self.state
        if self.consecutive_failures < self.profile.rlf_consecutive_failures:
            return self.state
        self.rlf_count += 1
        self.sink.record(now, 'rlf', self.rnti, round(self.last_deficit_db, 2))
        self.grants.clear()
        self.consecutive_failures = 0
        self.rnti = None

        if self.rng.random() < self.profile.crash_probability_per_rlf:
            self._return_in_flight(drop=True)
            self.dropped += len(self.buffer)
            self.buffer.clear()
            self._enter(now, RrcState.crashed())
            self.sink.record(now, 'crashed', self.prev_rnti)
            return self.state

        threshold = self.profile.fresh_connection_gain_threshold
        if threshold is not None and self.last_deficit_db > threshold:
            self._return_in_flight(drop=True)
            self.dropped += len(self.buffer)
            self.buffer.clear()
            self.prev_rnti = None
            self._enter(now, RrcState.idle())
            self.sink.record(now, 'fresh_connection', None, round(self.last_deficit_db, 2))
            self._start_access(now)
            return self.state

        self._return_in_flight(drop=False)
        if not self.profile.reestablish_with_previous_rnti:
            self.prev_rnti = None
        self._start_access(now)
        return self.state

    # Traffic

    def _enforce_capacity(self) -> None:
        while len(self.buffer) > self.traffic.buffer_capacity_packets:
            self.buffer.popleft()
            self.dropped += 1

    def generate_traffic(self, now: int) -> int:
        """Enqueue the packet due at ``now``; returns packets offered"""
        if now % self.traffic.interval_subframes:
            return 0
        if self.traffic_end is not None and now >= self.traffic_end:
            return 0
        self.offered += 1
        if self.crashed:
            self.dropped += 1
            return 1
        self.buffer.append(self._next_packet)
        self._next_packet += 1
        self._enforce_capacity()
        return 1

    # Downlink

    def observe_downlink(self, now: int, dcis: Sequence[EncodedDci], rars: Sequence[RarGrant] = ()) -> None:
        access = self.access
        if access is not None and access.phase == 'await_rar':
            for rar in rars:
                if rar.ue_id == self.ue_id:
                    access.rar = rar
                    access.rnti = rar.assigned_rnti
                    access.phase = 'msg3'
                    break
        listening = self.rnti if self.state.kind is RrcKind.CONNECTED else (
            access.rnti if access is not None and access.phase == 'setup' else None)
        if listening is None or not dcis:
            return
        for rnti, dci in blind_decode(dcis, [listening], self.mode, self.layout):
            self.grants.setdefault(now + self.grant_delay, []).append((rnti, dci))

    def apply_reconfiguration(self, now: int, reconfiguration: Reconfiguration) -> None:
        if self.state.kind is not RrcKind.CONNECTED or reconfiguration.old_rnti != self.rnti:
            return
        self.rnti = reconfiguration.new_rnti
        self.prev_rnti = reconfiguration.new_rnti
        self._enter(now, RrcState.connected(reconfiguration.new_rnti))

    # Uplink

    def _new_block_id(self) -> int:
        self._next_block_id += 1
        return self._next_block_id

    def report_bytes(self) -> int:
        return len(self.buffer) * self.traffic.packet_size_bytes + self.harq.bytes_pending

    def head_bytes(self) -> int:
        """Size of the packet at the head of the buffer, 0 when it is empty"""
        return self.traffic.packet_size_bytes if self.buffer else 0

    def _emit(self, now: int, rnti: int, dci: UplinkDci, kind: str, block_id: int, packets: int,
              payload: int, report: int, retx: int, harq_id: int, head: int = 0) -> UplinkBlock:
        block = UplinkBlock(self.ue_id, rnti, kind, dci.rb_start, dci.rb_len, dci.mcs_index, block_id,
                            harq_id, packets, payload, report, self.tpc_offset_db, retx, head)
        self._sent[block_id] = block
        self.transmissions += 1
        return block

    def _fill_grant(self, now: int, rnti: int, dci: UplinkDci, report: int, head: int = 0) -> Optional[UplinkBlock]:
        capacity = self.table.block_bytes(dci.mcs_index, dci.rb_len)
        pending = self.harq.retransmittable(now, capacity)
        if pending is not None:
            pending.sent_at = now
            self.retransmissions += 1
            return self._emit(now, rnti, dci, pending.kind, pending.block_id, pending.packets,
                              pending.payload_bytes, report, pending.retx_count, pending.harq_id, head)

        if self.state.kind is not RrcKind.CONNECTED:
            if capacity < SETUP_BLOCK_BYTES:
                return None
            slot = self.harq.free_slot()
            if slot is None:
                return None
            block = HarqBlock(self._new_block_id(), BLOCK_SETUP, 0, SETUP_BLOCK_BYTES, slot, sent_at=now)
            self.harq.store(block)
            return self._emit(now, rnti, dci, BLOCK_SETUP, block.block_id, 0, SETUP_BLOCK_BYTES, report, 0, slot, head)

        slot = self.harq.free_slot()
        count = min(len(self.buffer), capacity // self.traffic.packet_size_bytes)
        if slot is not None and count > 0:
            for _ in range(count):
                self.buffer.popleft()
            payload = count * self.traffic.packet_size_bytes
            block = HarqBlock(self._new_block_id(), BLOCK_DATA, count, payload, slot, sent_at=now)
            self.harq.store(block)
            return self._emit(now, rnti, dci, BLOCK_DATA, block.block_id, count, payload, report, 0, slot, head)
        # a grant too small for the head packet still carries the buffer status
        if self.uci_on_pusch or report > 0:
            return self._emit(now, rnti, dci, BLOCK_UCI, self._new_block_id(), 0, 0, report, 0, dci.harq_id, head)
        return None

    def transmit(self, now: int) -> UplinkBurst:
        """Uplink for subframe ``now``: Msg3/setup/data blocks on granted RBs, PUCCH, PRACH"""
        burst = UplinkBurst()
        self._sent.clear()
        grants = self.grants.pop(now, [])
        if self.state.kind in (RrcKind.IDLE, RrcKind.BACKOFF, RrcKind.CELL_BARRED, RrcKind.CRASHED):
            return burst

        report = self.report_bytes()
        head = self.head_bytes()
        access = self.access
        if access is not None:
            if access.phase == 'preamble':
                burst.preamble = Preamble(self.ue_id, now, access.reestablish_rnti, self.critical)
                access.phase = 'await_rar'
                access.deadline = now + self.profile.ra_response_window_subframes
            elif access.phase == 'msg3' and access.rar.msg3_subframe == now:
                rbs = access.rar.msg3_rbs
                dci = UplinkDci(rbs.start, len(rbs), self.msg3_mcs_index, 0, 0)
                burst.blocks.append(self._emit(now, access.rnti, dci, BLOCK_MSG3, self._new_block_id(),
                                               0, 0, report, 0, 0))
                access.phase = 'msg3_sent'
            elif access.phase == 'setup':
                for rnti, dci in grants:
                    if rnti == access.rnti:
                        block = self._fill_grant(now, rnti, dci, report, head)
                        if block is not None:
                            burst.blocks.append(block)
            return burst

        for rnti, dci in grants:
            block = self._fill_grant(now, rnti, dci, report, head)
            if block is not None:
                burst.blocks.append(block)
        burst.pucch = PucchReport(self.ue_id, self.rnti, report, head)
        return burst

    def receive_feedback(self, now: int, feedback: Sequence[Feedback]) -> int:
        """Apply HARQ feedback for blocks sent at ``now``; returns packets delivered"""
        delivered = 0
        for fb in feedback:
            sent = self._sent.get(fb.block_id)
            if sent is None:
                continue
            if fb.kind == BLOCK_MSG3:
                self._on_msg3(now, fb)
                continue
            self.tpc_offset_db = fb.tpc_offset_db
            self.uci_on_pusch = fb.uci_on_pusch
            self.last_deficit_db = self.unjammed_sinr_db - (fb.sinr_db - sent.tpc_offset_db)
            if fb.ack:
                block = self.harq.ack(fb.block_id)
                self.consecutive_failures = 0
                if fb.kind == BLOCK_SETUP and self.access is not None:
                    self._connected(now)
                elif block is not None:
                    delivered += block.packets
                continue

            if self.state.kind is RrcKind.CONNECTED:
                self.consecutive_failures += 1
            if fb.kind == BLOCK_UCI:
                continue
            block, dropped = self.harq.nack(fb.block_id)
            if dropped:
                self.dropped += block.packets
                self.sink.record(now, 'block_dropped', sent.rnti, block.packets)
                if fb.kind == BLOCK_SETUP and self.access is not None:
                    self._fail_procedure(now, 'setup dropped')
        self.delivered += delivered
        if self.state.kind is RrcKind.CONNECTED:
            self.detect_rlf(now)
        return delivered

    def _on_msg3(self, now: int, fb: Feedback) -> None:
        access = self.access
        if access is None or access.phase != 'msg3_sent':
            return
        if not fb.ack:
            self._fail_procedure(now, 'msg3 failed')
            return
        access.phase = 'setup'
        access.deadline = now + self.profile.setup_timeout_subframes
        self.tpc_offset_db = fb.tpc_offset_db
        self.uci_on_pusch = False

    # Timers

    def step(self, now: int) -> None:
        """End-of-subframe: traffic arrival, timers, access deadlines"""
        self.generate_traffic(now)
        kind = self.state.kind
        if kind is RrcKind.IDLE:
            if self.cell_gate is not None and not self.cell_gate(now):
                self.bar_cell(now)
            else:
                self._start_access(now)
        elif kind is RrcKind.BACKOFF and now >= self.state.until:
            self._start_access(now)
        elif kind is RrcKind.CELL_BARRED and now >= self.state.until:
            self._enter(now, RrcState.idle())
            self.failure_count = 0
            self.prev_rnti = None
            self.sink.record(now, 'barring_expired', None)
        elif self.access is not None and self.access.deadline is not None and now >= self.access.deadline:
            if self.access.phase == 'await_rar':
                self._fail_procedure(now, 'no RAR')
            elif self.access.phase == 'setup':
                self.harq.clear()
                self._fail_procedure(now, 'setup timeout')
        for stale in [s for s in self.grants if s <= now]:
            del self.grants[stale]

    @property
    def idle_for_report(self) -> bool:
        """Nothing left to send: buffer and HARQ empty"""
        return not self.buffer and self.harq.packets_in_flight == 0
