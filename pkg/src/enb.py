"""
Base-station model

RACH handling and RNTI assignment, per-subframe PUSCH scheduling with the
grant-to-transmission delay, HARQ feedback, link adaptation (slow windowed
path and the detector-driven fast path), power control, PUCCH-to-PUSCH
control fallback and the RNTI-hopping mitigation.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    from src.dci_codec import RNTI_MAX, RNTI_MIN, DciLayout, EncodedDci, ScramblingMode, UplinkDci, encode_dci
    from src.metrics import EventSink, NullSink
    from src.phy_grid import BlockOutcome, LinkBudget, McsTable, RbGrid, TOTAL_RBS
except ImportError:
    from dci_codec import RNTI_MAX, RNTI_MIN, DciLayout, EncodedDci, ScramblingMode, UplinkDci, encode_dci
    from metrics import EventSink, NullSink
    from phy_grid import BlockOutcome, LinkBudget, McsTable, RbGrid, TOTAL_RBS

logger = logging.getLogger(__name__)

HARQ_PROCESSES = 8

BLOCK_DATA = 'data'
BLOCK_UCI = 'uci'
BLOCK_SETUP = 'setup'
BLOCK_MSG3 = 'msg3'

STATE_PENDING_SETUP = 'pending_setup'
STATE_ACTIVE = 'active'


class RntiPolicyKind(str, Enum):
    REUSE_ON_REESTABLISH = 'reuse_on_reestablish'
    FRESH_PER_CONNECTION = 'fresh_per_connection'
    HOPPING = 'hopping'


@dataclass(frozen=True)
class RntiPolicy:
    kind: RntiPolicyKind = RntiPolicyKind.REUSE_ON_REESTABLISH
    period_subframes: Optional[int] = None

    @classmethod
    def parse(cls, value) -> 'RntiPolicy':
        """Accepts a policy, a name, ``hopping(500)`` or ``{kind, period_subframes}``"""
        if isinstance(value, cls):
            return value
        if isinstance(value, dict):
            kind = RntiPolicyKind(str(value.get('kind', 'reuse_on_reestablish')).lower())
            period = value.get('period_subframes')
            return cls(kind, int(period) if period is not None else None)
        text = str(value).strip().lower()
        if text.startswith('hopping'):
            period = text[len('hopping'):].strip('() ')
            return cls(RntiPolicyKind.HOPPING, int(period) if period else None)
        return cls(RntiPolicyKind(text))

    @property
    def hopping(self) -> bool:
        return self.kind is RntiPolicyKind.HOPPING


@dataclass
class SchedulerConfig:
    grant_delay_subframes: int = 4
    adaptation_enabled: bool = True
    adaptation_fail_threshold: float = 0.1
    adaptation_window: int = 50
    pucch_fallback_threshold: int = 8
    pucch_probe_interval: int = 100
    rnti_policy: RntiPolicy = field(default_factory=RntiPolicy)
    initial_mcs_index: Optional[int] = None
    target_sinr_db: float = 19.0
    pc_margin_db: float = 1.0
    max_headroom_db: float = 3.0
    critical_max_headroom_db: float = 6.0
    min_tpc_offset_db: float = -10.0
    detection_enabled: bool = True
    detection_threshold_db: float = 11.0
    detection_alpha: float = 0.05
    detection_hysteresis_db: float = 1.0
    rar_delay_subframes: int = 2
    msg3_offset_subframes: int = 0
    msg3_rbs: int = 4
    msg3_mcs_index: int = 0
    setup_rbs: int = 2
    uci_grant_rbs: int = 1
    max_retx: int = 4
    context_timeout_subframes: int = 500
    rnti_min: int = RNTI_MIN
    rnti_max: int = RNTI_MAX
    rnti_quarantine_subframes: int = 1000

    def violations(self) -> List[Tuple[str, str]]:
        """``(field, message)`` pairs for every broken invariant"""
        problems = []
        if self.grant_delay_subframes < 1:
            problems.append(('grant_delay_subframes', 'must be >= 1'))
        if not 0.0 < self.adaptation_fail_threshold <= 1.0:
            problems.append(('adaptation_fail_threshold', 'must be in (0, 1]'))
        if self.adaptation_window < 1:
            problems.append(('adaptation_window', 'must be >= 1'))
        if self.pucch_fallback_threshold < 1:
            problems.append(('pucch_fallback_threshold', 'must be >= 1'))
        if self.pucch_probe_interval < 1:
            problems.append(('pucch_probe_interval', 'must be >= 1'))
        if self.max_headroom_db < 0 or self.critical_max_headroom_db < 0:
            problems.append(('max_headroom_db', 'headroom must be non-negative'))
        if not 0.0 < self.detection_alpha <= 1.0:
            problems.append(('detection_alpha', 'must be in (0, 1]'))
        if self.rnti_policy.hopping and not (self.rnti_policy.period_subframes or 0) > 0:
            problems.append(('rnti_policy', 'hopping needs a positive period'))
        if not RNTI_MIN <= self.rnti_min <= self.rnti_max <= RNTI_MAX:
            problems.append(('rnti_min', f'pool must lie within [{RNTI_MIN:#06x}, {RNTI_MAX:#06x}]'))
        for name in ('msg3_rbs', 'setup_rbs', 'uci_grant_rbs'):
            if getattr(self, name) < 1:
                problems.append((name, 'must be >= 1'))
        return problems


# Uplink messages the eNB receives

@dataclass
class UplinkBlock:
    """One PUSCH transport block as the UE put it on the air"""
    ue_id: int
    rnti: int
    kind: str
    rb_start: int
    rb_len: int
    mcs_index: int
    block_id: int
    harq_id: int = 0
    payload_packets: int = 0
    payload_bytes: int = 0
    report_bytes: int = 0
    tpc_offset_db: float = 0.0
    retx_count: int = 0
    head_bytes: int = 0

    @property
    def rbs(self) -> range:
        return range(self.rb_start, self.rb_start + self.rb_len)


@dataclass
class PucchReport:
    ue_id: int
    rnti: int
    report_bytes: int
    head_bytes: int = 0


@dataclass(frozen=True)
class Preamble:
    ue_id: int
    subframe: int
    reestablish_rnti: Optional[int] = None
    critical: bool = False


@dataclass(frozen=True)
class RarGrant:
    assigned_rnti: int
    msg3_subframe: int
    msg3_rbs: range
    rar_subframe: int
    ue_id: int = 0
    reestablish: bool = False


@dataclass
class Feedback:
    """HARQ feedback plus the closed-loop commands riding with it"""
    ue_id: int
    block_id: int
    kind: str
    ack: bool
    sinr_db: float
    tpc_offset_db: float = 0.0
    uci_on_pusch: bool = False
    rnti: Optional[int] = None


@dataclass(frozen=True)
class Reconfiguration:
    """RNTI change delivered over the ciphered signalling bearer"""
    ue_id: int
    old_rnti: int
    new_rnti: int
    subframe: int


@dataclass
class ConnectedUeContext:
    rnti: int
    mcs_index: int
    ue_id: int = 0
    granted_rbs: int = 0
    tpc_offset_db: float = 0.0
    buffer_report: int = 0
    head_bytes: int = 0
    hopping_deadline: Optional[int] = None
    state: str = STATE_PENDING_SETUP
    critical: bool = False
    demand_weight: int = 1
    uci_on_pusch: bool = False
    pucch_failures: int = 0
    pucch_clean: int = 0
    retx_bytes: int = 0
    setup_failures: int = 0
    ndi: int = 0
    created: int = 0
    last_heard: int = 0
    last_sinr_db: Optional[float] = None
    baseline_sinr_db: Optional[float] = None
    jamming_flagged: bool = False
    outcomes: Deque[bool] = field(default_factory=deque)

    @property
    def recent_crc_failures(self) -> int:
        return sum(self.outcomes)

    @property
    def active(self) -> bool:
        return self.state == STATE_ACTIVE


class JammingDetector:
    """
    Flags a context whose power-control-normalised SINR falls far below its
    own history.

    The baseline is an EWMA updated only while the context is not flagged,
    seeded from the cell's nominal unjammed SINR.
    """

    def __init__(self, threshold_db: float, alpha: float, hysteresis_db: float, expected_sinr_db: float):
        self.threshold_db = threshold_db
        self.alpha = alpha
        self.hysteresis_db = hysteresis_db
        self.expected_sinr_db = expected_sinr_db

    def deficit(self, ctx: ConnectedUeContext, measured_sinr_db: float, tpc_db: float) -> float:
        baseline = self.expected_sinr_db if ctx.baseline_sinr_db is None else ctx.baseline_sinr_db
        return baseline - (measured_sinr_db - tpc_db)

    def observe(self, ctx: ConnectedUeContext, measured_sinr_db: float, tpc_db: float) -> Optional[str]:
        """Update the context; returns ``'detected'`` / ``'cleared'`` on a flag change"""
        normalized = measured_sinr_db - tpc_db
        deficit = self.deficit(ctx, measured_sinr_db, tpc_db)
        if ctx.jamming_flagged:
            if deficit < self.threshold_db - self.hysteresis_db:
                ctx.jamming_flagged = False
                return 'cleared'
            return None
        if deficit >= self.threshold_db:
            ctx.jamming_flagged = True
            return 'detected'
        baseline = self.expected_sinr_db if ctx.baseline_sinr_db is None else ctx.baseline_sinr_db
        ctx.baseline_sinr_db = (1 - self.alpha) * baseline + self.alpha * normalized
        return None


def share_interior(demands: Sequence[Tuple[int, int]], available: int) -> Dict[int, int]:
    """
    Split ``available`` RBs over ``(rnti, demand)`` pairs

    Everyone gets their demand when it fits; otherwise each gets the floor of
    its proportional share and the remainder is handed out one RB at a time in
    ascending RNTI order.
    """
    wanted = [(rnti, demand) for rnti, demand in sorted(demands) if demand > 0]
    total = sum(demand for _, demand in wanted)
    if total <= available:
        return dict(wanted)
    shares = {rnti: (available * demand) // total for rnti, demand in wanted}
    remainder = available - sum(shares.values())
    while remainder > 0:
        progressed = False
        for rnti, demand in wanted:
            if remainder == 0:
                break
            if shares[rnti] < demand:
                shares[rnti] += 1
                remainder -= 1
                progressed = True
        if not progressed:
            break
    return {rnti: rbs for rnti, rbs in shares.items() if rbs > 0}


def usable_bytes(capacity: int, head_bytes: int) -> int:
    """Bytes of a grant the UE can fill with whole packets of ``head_bytes``"""
    if head_bytes <= 0:
        return capacity
    return (capacity // head_bytes) * head_bytes


class ENodeB:
    """Single-cell base station; owns every ``ConnectedUeContext`` of a run"""

    def __init__(
        self,
        config: SchedulerConfig,
        table: McsTable,
        budget: LinkBudget,
        mode: ScramblingMode,
        rng: np.random.Generator,
        sink: Optional[EventSink] = None,
        total_rbs: int = TOTAL_RBS,
        edge_rbs: int = 2,
    ):
        self.config = config
        self.table = table
        self.budget = budget
        self.mode = ScramblingMode.parse(mode)
        self.rng = rng
        self.sink = sink or NullSink()
        self.total_rbs = total_rbs
        self.edge_rbs = edge_rbs
        self.layout = DciLayout(total_rbs, edge_rbs, len(table))
        self.detector = JammingDetector(
            config.detection_threshold_db, config.detection_alpha,
            config.detection_hysteresis_db, budget.unjammed_sinr_db,
        )
        self.contexts: Dict[int, ConnectedUeContext] = {}
        self._by_rnti: Dict[int, int] = {}
        self._reserved: Dict[int, int] = {}
        self._retiring: Dict[int, int] = {}
        self._quarantine: Dict[int, int] = {}
        self._pending_rars: List[RarGrant] = []
        self._pending_msg3: List[RarGrant] = []
        self._critical_pending: set = set()
        self.grids: Dict[int, RbGrid] = {}
        # target subframe -> rnti -> (ue_id, dci, bytes the UE can fill)
        self._issued: Dict[int, Dict[int, Tuple[int, UplinkDci, int]]] = {}
        self._outstanding: Dict[int, int] = {}

    # RNTI pool

    @property
    def initial_mcs(self) -> int:
        index = self.config.initial_mcs_index
        return self.table.top.index if index is None else index

    def live_rntis(self) -> set:
        return set(self._by_rnti) | set(self._reserved)

    def _unavailable(self) -> set:
        return self.live_rntis() | set(self._quarantine)

    def _draw_rnti(self) -> Optional[int]:
        low, high = self.config.rnti_min, self.config.rnti_max
        taken = self._unavailable()
        if len(taken) >= high - low + 1:
            return None
        for _ in range(64):
            candidate = int(self.rng.integers(low, high + 1))
            if candidate not in taken:
                return candidate
        free = np.setdiff1d(np.arange(low, high + 1), np.fromiter(taken, dtype=np.int64))
        if free.size == 0:
            return None
        return int(self.rng.choice(free))

    def _retire(self, rnti: int, now: int) -> None:
        self._by_rnti.pop(rnti, None)
        self._quarantine[rnti] = now + self.config.rnti_quarantine_subframes

    # Random access

    def handle_rach(self, preamble_subframe: int, reestablish_rnti: Optional[int] = None,
                    ue_id: int = 0, critical: bool = False) -> Optional[RarGrant]:
        """Answer a preamble with a RAR; ``None`` (and an event) when access is rejected"""
        cfg = self.config
        reuse = (cfg.rnti_policy.kind is RntiPolicyKind.REUSE_ON_REESTABLISH and reestablish_rnti is not None)
        if reuse and self._by_rnti.get(reestablish_rnti, ue_id) == ue_id and reestablish_rnti not in self._reserved:
            rnti = reestablish_rnti
        else:
            rnti = self._draw_rnti()
        if rnti is None:
            self.sink.record(preamble_subframe, 'access_rejected', None, 'rnti pool exhausted')
            return None

        rar_subframe = preamble_subframe + cfg.rar_delay_subframes
        msg3_subframe = rar_subframe + cfg.grant_delay_subframes + cfg.msg3_offset_subframes
        slot = sum(1 for rar in self._pending_msg3 if rar.msg3_subframe == msg3_subframe)
        start = self.edge_rbs + slot * cfg.msg3_rbs
        if start + cfg.msg3_rbs > self.total_rbs - self.edge_rbs:
            self.sink.record(preamble_subframe, 'access_rejected', None, 'no Msg3 capacity')
            return None

        rar = RarGrant(rnti, msg3_subframe, range(start, start + cfg.msg3_rbs), rar_subframe,
                       ue_id, reestablish_rnti is not None)
        self._reserved[rnti] = ue_id
        self._pending_rars.append(rar)
        self._pending_msg3.append(rar)
        if critical:
            self._critical_pending.add(rnti)
        self.sink.record(preamble_subframe, 'rar', rnti, {'msg3_subframe': msg3_subframe, 'ue_id': ue_id})
        return rar

    def rars_due(self, now: int) -> List[RarGrant]:
        """RARs broadcast at ``now`` (visible to every downlink observer)"""
        due = [rar for rar in self._pending_rars if rar.rar_subframe == now]
        self._pending_rars = [rar for rar in self._pending_rars if rar.rar_subframe > now]
        return due

    # Scheduling

    def _demand(self, ctx: ConnectedUeContext, interior: int) -> int:
        if ctx.state == STATE_PENDING_SETUP:
            return self.config.setup_rbs
        wanted = ctx.buffer_report + ctx.retx_bytes
        rbs = self.table.rbs_for_bytes(wanted, ctx.mcs_index)
        if ctx.buffer_report > 0:
            # never less than the packet at the head of the UE's queue
            rbs = max(rbs, self.table.rbs_for_bytes(ctx.head_bytes, ctx.mcs_index))
        rbs *= ctx.demand_weight
        if ctx.uci_on_pusch:
            rbs = max(rbs, self.config.uci_grant_rbs)
        return min(rbs, interior)

    def schedule_subframe(self, now: int) -> Tuple[RbGrid, List[EncodedDci]]:
        """Build the grid for ``now + grant_delay`` and the DCIs announcing it"""
        target = now + self.config.grant_delay_subframes
        grid = RbGrid(target, self.total_rbs, self.edge_rbs)
        for rar in self._pending_msg3:
            if rar.msg3_subframe == target:
                grid.grant(rar.assigned_rnti, rar.msg3_rbs.start, len(rar.msg3_rbs))

        # Msg3 slots are packed from the lower edge, everything else follows them
        first_free = max([self.edge_rbs] + [rar.msg3_rbs.stop for rar in self._pending_msg3
                                            if rar.msg3_subframe == target])
        limit = self.total_rbs - self.edge_rbs
        contexts = sorted(self.contexts.values(), key=lambda c: c.rnti)
        setup = [c for c in contexts if c.state == STATE_PENDING_SETUP]
        active = [c for c in contexts if c.state == STATE_ACTIVE]

        allocations: List[Tuple[ConnectedUeContext, int]] = []
        free = limit - first_free
        for ctx in setup:
            rbs = min(self._demand(ctx, grid.interior_size), free)
            if rbs > 0:
                allocations.append((ctx, rbs))
                free -= rbs
        demands = {ctx.rnti: self._demand(ctx, grid.interior_size) for ctx in active}
        shares = share_interior(list(demands.items()), free)
        allocations.extend((ctx, shares[ctx.rnti]) for ctx in active if ctx.rnti in shares)

        cursor = first_free
        dcis: List[EncodedDci] = []
        issued = self._issued.setdefault(target, {})
        for ctx, rbs in allocations:
            grid.grant(ctx.rnti, cursor, rbs)
            ctx.ndi ^= 1
            dci = UplinkDci(cursor, rbs, ctx.mcs_index, ctx.ndi, target % HARQ_PROCESSES)
            dcis.append(encode_dci(dci, ctx.rnti, self.mode, self.layout))
            ctx.granted_rbs = rbs
            usable = 0
            if ctx.state == STATE_ACTIVE:
                capacity = self.table.block_bytes(ctx.mcs_index, rbs)
                if 0 < ctx.retx_bytes <= capacity:
                    # a retransmission occupies the whole grant
                    usable, ctx.retx_bytes = ctx.retx_bytes, 0
                else:
                    usable = usable_bytes(capacity, ctx.head_bytes)
                    ctx.buffer_report = max(0, ctx.buffer_report - usable)
            issued[ctx.rnti] = (ctx.ue_id, dci, usable)
            self._outstanding[ctx.ue_id] = self._outstanding.get(ctx.ue_id, 0) + usable
            cursor += rbs
        for ctx in contexts:
            if ctx.rnti not in issued:
                ctx.granted_rbs = 0
        self.grids[target] = grid
        return grid, dcis

    def _expire_issued(self, upto: int) -> None:
        """Forget grants firing at or before ``upto``"""
        for fire in [s for s in self._issued if s <= upto]:
            for ue_id, _, usable in self._issued.pop(fire).values():
                left = self._outstanding.get(ue_id, 0) - usable
                if left > 0:
                    self._outstanding[ue_id] = left
                else:
                    self._outstanding.pop(ue_id, None)

    def outstanding_bytes(self, ue_id: int) -> int:
        """Fillable bytes of grants issued to ``ue_id`` that have not fired yet"""
        return self._outstanding.get(ue_id, 0)

    def _take_report(self, ctx: ConnectedUeContext, report_bytes: int, head_bytes: int) -> None:
        ctx.head_bytes = head_bytes
        ctx.buffer_report = max(0, report_bytes - self.outstanding_bytes(ctx.ue_id))

    # Uplink processing

    def _create_context(self, rar: RarGrant, now: int) -> ConnectedUeContext:
        replaced = self._by_rnti.get(rar.assigned_rnti)
        if replaced is not None and replaced in self.contexts:
            self.contexts.pop(replaced)
            self.sink.record(now, 'context_replaced', rar.assigned_rnti)
        stale = self.contexts.get(rar.ue_id)
        if stale is not None and stale.rnti != rar.assigned_rnti:
            self._retire(stale.rnti, now)
            self.sink.record(now, 'context_released', stale.rnti, 'superseded')
        ctx = ConnectedUeContext(
            rnti=rar.assigned_rnti,
            mcs_index=self.initial_mcs,
            ue_id=rar.ue_id,
            created=now,
            last_heard=now,
            critical=rar.assigned_rnti in self._critical_pending,
            outcomes=deque(maxlen=self.config.adaptation_window),
        )
        self.contexts[rar.ue_id] = ctx
        self._by_rnti[ctx.rnti] = rar.ue_id
        return ctx

    def _release(self, ctx: ConnectedUeContext, now: int, reason: str) -> None:
        if self.contexts.get(ctx.ue_id) is ctx:
            self.contexts.pop(ctx.ue_id)
        self._retire(ctx.rnti, now)
        self.sink.record(now, 'context_released', ctx.rnti, reason)

    def _handle_msg3(self, block: UplinkBlock, outcome: BlockOutcome, now: int) -> Feedback:
        rar = next((r for r in self._pending_msg3 if r.assigned_rnti == block.rnti and r.msg3_subframe == now), None)
        if rar is None:
            return Feedback(block.ue_id, block.block_id, BLOCK_MSG3, False, outcome.sinr_db, rnti=block.rnti)
        self._pending_msg3.remove(rar)
        self._reserved.pop(rar.assigned_rnti, None)
        if not outcome.decoded:
            self._critical_pending.discard(rar.assigned_rnti)
            self.sink.record(now, 'msg3_failed', rar.assigned_rnti)
            return Feedback(block.ue_id, block.block_id, BLOCK_MSG3, False, outcome.sinr_db, rnti=block.rnti)
        ctx = self._create_context(rar, now)
        self._critical_pending.discard(rar.assigned_rnti)
        self.sink.record(now, 'msg3_decoded', ctx.rnti, {'reestablish': rar.reestablish})
        return Feedback(block.ue_id, block.block_id, BLOCK_MSG3, True, outcome.sinr_db, ctx.tpc_offset_db,
                        ctx.uci_on_pusch, ctx.rnti)

    def process_uplink(
        self,
        now: int,
        blocks: Sequence[Tuple[UplinkBlock, BlockOutcome]],
        pucch: Sequence[Tuple[PucchReport, BlockOutcome]] = (),
    ) -> List[Feedback]:
        """HARQ feedback for every block received at ``now`` plus context updates"""
        feedback: List[Feedback] = []
        self._expire_issued(now - 1)
        issued = self._issued.get(now, {})
        for block, outcome in blocks:
            if block.kind == BLOCK_MSG3:
                feedback.append(self._handle_msg3(block, outcome, now))
                continue
            owner = issued.get(block.rnti)
            ctx = self.contexts.get(owner[0]) if owner else None
            if ctx is None:
                feedback.append(Feedback(block.ue_id, block.block_id, block.kind, False, outcome.sinr_db,
                                         rnti=block.rnti))
                continue

            ctx.last_sinr_db = outcome.sinr_db
            self.power_control(ctx, outcome.sinr_db)
            if self.config.detection_enabled:
                change = self.detector.observe(ctx, outcome.sinr_db, block.tpc_offset_db)
                if change:
                    self.sink.record(now, f'jamming_{change}', ctx.rnti,
                                     round(self.detector.deficit(ctx, outcome.sinr_db, block.tpc_offset_db), 2))
            ctx.outcomes.append(not outcome.decoded)

            if outcome.decoded:
                ctx.last_heard = now
                self._take_report(ctx, block.report_bytes, block.head_bytes)
                if block.kind == BLOCK_SETUP and ctx.state == STATE_PENDING_SETUP:
                    ctx.state = STATE_ACTIVE
                    if self.config.rnti_policy.hopping:
                        ctx.hopping_deadline = now + self.config.rnti_policy.period_subframes
                    self.sink.record(now, 'context_active', ctx.rnti)
            else:
                if block.kind == BLOCK_SETUP:
                    ctx.setup_failures += 1
                    if ctx.setup_failures > self.config.max_retx:
                        self._release(ctx, now, 'setup failed')
                elif block.payload_bytes:
                    ctx.retx_bytes = max(ctx.retx_bytes, block.payload_bytes)
            feedback.append(Feedback(block.ue_id, block.block_id, block.kind, outcome.decoded, outcome.sinr_db,
                                     ctx.tpc_offset_db, ctx.uci_on_pusch, ctx.rnti))

        for report, outcome in pucch:
            owner = self._by_rnti.get(report.rnti)
            ctx = self.contexts.get(owner) if owner is not None else None
            if ctx is None or not ctx.active:
                continue
            if outcome.decoded:
                ctx.last_heard = now
                ctx.pucch_failures = 0
                self._take_report(ctx, report.report_bytes, report.head_bytes)
                if ctx.uci_on_pusch:
                    ctx.pucch_clean += 1
                    if ctx.pucch_clean >= self.config.pucch_probe_interval:
                        ctx.uci_on_pusch = False
                        ctx.pucch_clean = 0
                        self.sink.record(now, 'pucch_restored', ctx.rnti)
            else:
                ctx.pucch_failures += 1
                ctx.pucch_clean = 0
                if ctx.pucch_failures >= self.config.pucch_fallback_threshold and not ctx.uci_on_pusch:
                    self.pucch_fallback(ctx, now)
        return feedback

    # Closed loops

    def power_control(self, ctx: ConnectedUeContext, measured_sinr: float) -> float:
        """One-step TPC update; returns the new offset"""
        cfg = self.config
        cap = cfg.critical_max_headroom_db if ctx.critical else cfg.max_headroom_db
        if measured_sinr > cfg.target_sinr_db + cfg.pc_margin_db:
            ctx.tpc_offset_db = max(cfg.min_tpc_offset_db, ctx.tpc_offset_db - 1.0)
        elif measured_sinr < cfg.target_sinr_db - cfg.pc_margin_db:
            ctx.tpc_offset_db = min(cap, ctx.tpc_offset_db + 1.0)
        ctx.tpc_offset_db = min(ctx.tpc_offset_db, cap)
        return ctx.tpc_offset_db

    def link_adapt(self, ctx: ConnectedUeContext, now: int = 0) -> ConnectedUeContext:
        cfg = self.config
        if not cfg.adaptation_enabled or not ctx.active:
            return ctx
        interior = self.total_rbs - 2 * self.edge_rbs

        if ctx.jamming_flagged and ctx.last_sinr_db is not None:
            level = self.table.highest_decodable(ctx.last_sinr_db)
            target = level.index if level is not None else 0
            ctx.demand_weight = min(max(ctx.demand_weight, 2), interior)
            if target != ctx.mcs_index:
                self.sink.record(now, 'mcs_change', ctx.rnti, {'from': ctx.mcs_index, 'to': target, 'path': 'fast'})
                ctx.mcs_index = target
                ctx.outcomes.clear()
            return ctx

        failures = ctx.recent_crc_failures
        if failures / cfg.adaptation_window > cfg.adaptation_fail_threshold:
            previous = ctx.mcs_index
            ctx.mcs_index = max(0, ctx.mcs_index - 1)
            ctx.demand_weight = min(ctx.demand_weight * 2, interior)
            ctx.outcomes.clear()
            self.sink.record(now, 'mcs_change', ctx.rnti, {'from': previous, 'to': ctx.mcs_index, 'path': 'slow'})
        elif failures == 0 and len(ctx.outcomes) >= cfg.adaptation_window:
            previous = ctx.mcs_index
            ctx.mcs_index = min(len(self.table) - 1, ctx.mcs_index + 1)
            ctx.demand_weight = 1
            ctx.outcomes.clear()
            if ctx.mcs_index != previous:
                self.sink.record(now, 'mcs_change', ctx.rnti, {'from': previous, 'to': ctx.mcs_index, 'path': 'slow'})
        return ctx

    def pucch_fallback(self, ctx: ConnectedUeContext, now: int = 0) -> ConnectedUeContext:
        ctx.uci_on_pusch = True
        ctx.pucch_clean = 0
        self.sink.record(now, 'pucch_fallback', ctx.rnti, ctx.pucch_failures)
        return ctx

    def rnti_hop(self, ctx: ConnectedUeContext, now: int) -> Optional[Reconfiguration]:
        period = self.config.rnti_policy.period_subframes
        new_rnti = self._draw_rnti()
        ctx.hopping_deadline = (ctx.hopping_deadline or now) + period
        if new_rnti is None:
            self.sink.record(now, 'hop_skipped', ctx.rnti, 'rnti pool exhausted')
            logger.warning(f"RNTI pool exhausted, hop for {ctx.rnti:#06x} skipped")
            return None
        old_rnti = ctx.rnti
        ctx.rnti = new_rnti
        self._by_rnti[new_rnti] = ctx.ue_id
        # grants already issued under the old RNTI still fire
        self._retiring[old_rnti] = now + self.config.grant_delay_subframes + 1
        self.sink.record(now, 'rnti_hop', new_rnti, old_rnti)
        return Reconfiguration(ctx.ue_id, old_rnti, new_rnti, now)

    def step(self, now: int) -> List[Reconfiguration]:
        """End-of-subframe housekeeping: adaptation, hops, releases, expiry"""
        reconfigurations = []
        for ctx in list(self.contexts.values()):
            if now - ctx.last_heard > self.config.context_timeout_subframes:
                self._release(ctx, now, 'inactivity')
                continue
            self.link_adapt(ctx, now)
            if (self.config.rnti_policy.hopping and ctx.active
                    and ctx.hopping_deadline is not None and now >= ctx.hopping_deadline):
                hop = self.rnti_hop(ctx, now)
                if hop is not None:
                    reconfigurations.append(hop)

        for rnti, until in list(self._retiring.items()):
            if now >= until:
                del self._retiring[rnti]
                if rnti in self._by_rnti:
                    self._retire(rnti, now)
        for rnti, until in list(self._quarantine.items()):
            if now >= until:
                del self._quarantine[rnti]
        self._expire_issued(now)
        for stale in [s for s in self.grids if s < now]:
            del self.grids[stale]
        return reconfigurations

    def context_for(self, ue_id: int) -> Optional[ConnectedUeContext]:
        return self.contexts.get(ue_id)

    def grid_for(self, subframe: int) -> Optional[RbGrid]:
        return self.grids.get(subframe)
