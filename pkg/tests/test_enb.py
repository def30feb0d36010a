"""
Tests for the base-station model
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.dci_codec import ScramblingMode, UplinkDci, decode_dci
from src.enb import (BLOCK_DATA, BLOCK_MSG3, BLOCK_SETUP, BLOCK_UCI, STATE_ACTIVE, STATE_PENDING_SETUP,
                     ConnectedUeContext, ENodeB, JammingDetector, PucchReport, RntiPolicy, RntiPolicyKind,
                     SchedulerConfig, UplinkBlock, share_interior, usable_bytes)
from src.metrics import EventSink
from src.phy_grid import BlockOutcome, LinkBudget, McsTable

TABLE = McsTable.from_config([-2, 0, 3, 6, 9, 12, 15, 18], [160, 224, 320, 448, 640, 896, 1152, 1440])
BUDGET = LinkBudget(20.0, 0.0, -7.0)


def make_enb(**overrides) -> ENodeB:
    return ENodeB(SchedulerConfig(**overrides), TABLE, BUDGET, ScramblingMode.CRC_MASK_ONLY,
                  np.random.default_rng(11), EventSink())


def outcome(now, block, decoded=True, sinr=20.0) -> BlockOutcome:
    return BlockOutcome(now, block.rnti, tuple(block.rbs), block.mcs_index, sinr, decoded)


def connect(enb: ENodeB, ue_id: int = 0, preamble_at: int = 0, reestablish_rnti=None):
    """Drive RACH, Msg3 and the setup block; returns the active context"""
    rar = enb.handle_rach(preamble_at, reestablish_rnti, ue_id)
    msg3 = UplinkBlock(ue_id, rar.assigned_rnti, BLOCK_MSG3, rar.msg3_rbs.start, len(rar.msg3_rbs), 0, block_id=1)
    enb.process_uplink(rar.msg3_subframe, [(msg3, outcome(rar.msg3_subframe, msg3))])
    ctx = enb.context_for(ue_id)
    now = rar.msg3_subframe + 1
    _, dcis = enb.schedule_subframe(now)
    fire = now + enb.config.grant_delay_subframes
    dci = next(d for d in (decode_dci(e, ctx.rnti, enb.mode, enb.layout) for e in dcis) if d is not None)
    setup = UplinkBlock(ue_id, ctx.rnti, BLOCK_SETUP, dci.rb_start, dci.rb_len, dci.mcs_index, block_id=2)
    enb.process_uplink(fire, [(setup, outcome(fire, setup))])
    return ctx


class TestRntiPolicy:
    """Policy parsing"""

    def test_parse_forms(self):
        assert RntiPolicy.parse('reuse_on_reestablish').kind is RntiPolicyKind.REUSE_ON_REESTABLISH
        assert RntiPolicy.parse('FRESH_PER_CONNECTION').kind is RntiPolicyKind.FRESH_PER_CONNECTION
        hop = RntiPolicy.parse('hopping(500)')
        assert hop.hopping and hop.period_subframes == 500
        assert RntiPolicy.parse({'kind': 'hopping', 'period_subframes': 250}).period_subframes == 250
        with pytest.raises(ValueError):
            RntiPolicy.parse('sometimes')

    def test_hopping_needs_period(self):
        problems = SchedulerConfig(rnti_policy=RntiPolicy(RntiPolicyKind.HOPPING)).violations()
        assert ('rnti_policy', 'hopping needs a positive period') in problems
        assert SchedulerConfig().violations() == []


class TestShareInterior:
    """Proportional split with round-robin remainder"""

    def test_everyone_fits(self):
        assert share_interior([(7, 10), (3, 20)], 96) == {3: 20, 7: 10}

    def test_proportional_floor(self):
        assert share_interior([(5, 50), (3, 50)], 96) == {3: 48, 5: 48}

    def test_remainder_by_ascending_rnti(self):
        assert share_interior([(3, 1), (1, 1), (2, 1)], 2) == {1: 1, 2: 1}

    def test_zero_demand_skipped(self):
        assert share_interior([(1, 0), (2, 4)], 10) == {2: 4}

    def test_usable_bytes_rounds_down_to_packets(self):
        assert usable_bytes(900, 800) == 800
        assert usable_bytes(180, 800) == 0
        assert usable_bytes(540, 0) == 540


class TestRandomAccess:
    """RACH, RAR timing and RNTI assignment"""

    def test_rar_and_msg3_timing(self):
        enb = make_enb()
        rar = enb.handle_rach(10)
        assert rar.rar_subframe == 12
        assert rar.msg3_subframe == 16
        assert rar.msg3_rbs == range(2, 6)
        assert enb.rars_due(11) == []
        assert enb.rars_due(12) == [rar]
        assert enb.rars_due(12) == []

    def test_simultaneous_preambles_get_separate_msg3_slots(self):
        enb = make_enb()
        first = enb.handle_rach(0, ue_id=0)
        second = enb.handle_rach(0, ue_id=1)
        assert first.assigned_rnti != second.assigned_rnti
        assert second.msg3_rbs == range(6, 10)

    def test_msg3_grant_in_grid(self):
        enb = make_enb()
        rar = enb.handle_rach(0)
        grid, dcis = enb.schedule_subframe(rar.msg3_subframe - 4)
        assert grid.granted_rbs(rar.assigned_rnti) == set(rar.msg3_rbs)
        assert dcis == []

    def test_context_lifecycle(self):
        enb = make_enb()
        ctx = connect(enb)
        assert ctx.state == STATE_ACTIVE
        assert ctx.mcs_index == 7
        assert enb.sink.count('msg3_decoded') == 1
        assert enb.sink.count('context_active') == 1

    def test_failed_msg3_creates_nothing(self):
        enb = make_enb()
        rar = enb.handle_rach(0)
        msg3 = UplinkBlock(0, rar.assigned_rnti, BLOCK_MSG3, 2, 4, 0, block_id=1)
        feedback = enb.process_uplink(rar.msg3_subframe, [(msg3, outcome(rar.msg3_subframe, msg3, False, -8.0))])
        assert not feedback[0].ack
        assert enb.context_for(0) is None
        assert enb.sink.count('msg3_failed') == 1

    def test_reestablish_reuses_previous_rnti(self):
        enb = make_enb()
        ctx = connect(enb)
        rar = enb.handle_rach(100, reestablish_rnti=ctx.rnti, ue_id=0)
        assert rar.assigned_rnti == ctx.rnti and rar.reestablish

    def test_fresh_policy_draws_new_rnti(self):
        enb = make_enb(rnti_policy=RntiPolicy(RntiPolicyKind.FRESH_PER_CONNECTION))
        ctx = connect(enb)
        rar = enb.handle_rach(100, reestablish_rnti=ctx.rnti, ue_id=0)
        assert rar.assigned_rnti != ctx.rnti

    def test_pool_exhaustion_rejects_access(self):
        enb = make_enb(rnti_min=0x100, rnti_max=0x101)
        assert enb.handle_rach(0, ue_id=0) is not None
        assert enb.handle_rach(0, ue_id=1) is not None
        assert enb.handle_rach(0, ue_id=2) is None
        assert enb.sink.count('access_rejected') == 1


class TestScheduling:
    """Grants for active contexts"""

    def test_data_grant_decodes_for_owner(self):
        enb = make_enb()
        ctx = connect(enb)
        ctx.buffer_report = 400
        grid, dcis = enb.schedule_subframe(30)
        assert grid.subframe == 34
        dci = decode_dci(dcis[0], ctx.rnti, ScramblingMode.CRC_MASK_ONLY)
        assert dci == UplinkDci(2, 3, 7, dci.ndi, 34 % 8)
        assert grid.granted_rbs(ctx.rnti) == {2, 3, 4}
        assert ctx.buffer_report == 0
        assert grid.audit()

    def test_no_grant_without_demand(self):
        enb = make_enb()
        ctx = connect(enb)
        ctx.buffer_report = 0
        grid, dcis = enb.schedule_subframe(30)
        assert dcis == [] and grid.granted_rbs(ctx.rnti) == set()

    def test_two_ues_share_without_overlap(self):
        enb = make_enb()
        a = connect(enb, 0, 0)
        b = connect(enb, 1, 40)
        a.buffer_report = b.buffer_report = 20000
        grid, dcis = enb.schedule_subframe(80)
        assert len(dcis) == 2
        assert grid.granted_rbs(a.rnti).isdisjoint(grid.granted_rbs(b.rnti))
        assert len(grid.granted_rbs(a.rnti)) == len(grid.granted_rbs(b.rnti)) == 48
        assert grid.audit()

    def test_single_ue_takes_the_whole_interior(self):
        enb = make_enb()
        ctx = connect(enb)
        ctx.buffer_report = 200_000
        grid, dcis = enb.schedule_subframe(30)
        assert len(dcis) == 1
        assert grid.granted_rbs(ctx.rnti) == set(range(2, 98))
        assert decode_dci(dcis[0], ctx.rnti, ScramblingMode.CRC_MASK_ONLY).rb_len == 96
        assert grid.idle_rbs() == []

    def test_grant_never_smaller_than_the_head_packet(self):
        enb = make_enb()
        ctx = connect(enb)
        ctx.buffer_report, ctx.head_bytes = 100, 800
        grid, _ = enb.schedule_subframe(30)
        assert len(grid.granted_rbs(ctx.rnti)) == 5
        assert enb.outstanding_bytes(0) == 800
        assert ctx.buffer_report == 0

    def test_only_whole_packets_count_as_outstanding(self):
        enb = make_enb()
        ctx = connect(enb)
        ctx.buffer_report, ctx.head_bytes = 2400, 800
        grid, _ = enb.schedule_subframe(30)
        assert len(grid.granted_rbs(ctx.rnti)) == 14
        assert enb.outstanding_bytes(0) == 2400
        report = PucchReport(0, ctx.rnti, 3200, 800)
        clean = BlockOutcome(31, ctx.rnti, (0, 1, 98, 99), 0, 20.0, True, 0, 'pucch')
        enb.process_uplink(31, [], [(report, clean)])
        assert ctx.buffer_report == 800
        enb.step(34)
        assert enb.outstanding_bytes(0) == 0

    def test_control_grant_learns_the_buffer(self):
        enb = make_enb()
        ctx = connect(enb)
        ctx.uci_on_pusch, ctx.head_bytes = True, 800
        grid, dcis = enb.schedule_subframe(30)
        assert len(grid.granted_rbs(ctx.rnti)) == 1
        assert enb.outstanding_bytes(0) == 0
        dci = decode_dci(dcis[0], ctx.rnti, ScramblingMode.CRC_MASK_ONLY)
        uci = UplinkBlock(0, ctx.rnti, BLOCK_UCI, dci.rb_start, dci.rb_len, dci.mcs_index, block_id=9,
                          report_bytes=2400, head_bytes=800)
        feedback = enb.process_uplink(34, [(uci, outcome(34, uci))])
        assert feedback[0].ack and feedback[0].uci_on_pusch
        assert ctx.buffer_report == 2400 and ctx.last_heard == 34
        grid, _ = enb.schedule_subframe(35)
        assert len(grid.granted_rbs(ctx.rnti)) == 14


class TestClosedLoops:
    """Power control, detection, link adaptation and PUCCH fallback"""

    def setup_method(self):
        self.enb = make_enb()
        self.ctx = connect(self.enb)

    def test_power_control_steps_and_caps(self):
        assert self.enb.power_control(self.ctx, 25.0) == -1.0
        for _ in range(10):
            self.enb.power_control(self.ctx, 10.0)
        assert self.ctx.tpc_offset_db == 3.0
        self.ctx.critical = True
        for _ in range(10):
            self.enb.power_control(self.ctx, 10.0)
        assert self.ctx.tpc_offset_db == 6.0
        assert self.enb.power_control(self.ctx, 19.5) == 6.0

    def test_detector_flags_and_clears(self):
        detector = JammingDetector(11.0, 0.05, 1.0, 20.0)
        ctx = ConnectedUeContext(rnti=0x100, mcs_index=7)
        assert detector.observe(ctx, 19.0, 0.0) is None
        assert ctx.baseline_sinr_db == pytest.approx(19.95)
        assert detector.observe(ctx, 8.0, 3.0) == 'detected'
        assert detector.observe(ctx, 10.0, 3.0) is None
        assert ctx.baseline_sinr_db == pytest.approx(19.95)
        assert detector.observe(ctx, 20.0, 0.0) == 'cleared'

    def test_slow_path_steps_down_above_threshold(self):
        self.ctx.outcomes.extend([True] * 6 + [False] * 44)
        self.enb.link_adapt(self.ctx, 100)
        assert self.ctx.mcs_index == 6
        assert self.ctx.demand_weight == 2
        assert len(self.ctx.outcomes) == 0

    def test_slow_path_holds_at_threshold(self):
        self.ctx.outcomes.extend([True] * 5 + [False] * 45)
        self.enb.link_adapt(self.ctx, 100)
        assert self.ctx.mcs_index == 7

    def test_fast_path_jumps_to_decodable_level(self):
        self.ctx.jamming_flagged = True
        self.ctx.last_sinr_db = 10.73
        self.enb.link_adapt(self.ctx, 100)
        assert self.ctx.mcs_index == 4
        events = self.enb.sink.of_kind('mcs_change')
        assert events[-1].detail == {'from': 7, 'to': 4, 'path': 'fast'}

    def test_adaptation_disabled_keeps_mcs(self):
        enb = make_enb(adaptation_enabled=False)
        ctx = connect(enb)
        ctx.outcomes.extend([True] * 50)
        enb.link_adapt(ctx, 100)
        assert ctx.mcs_index == 7

    def test_pucch_fallback_after_consecutive_failures(self):
        report = PucchReport(0, self.ctx.rnti, 100)
        for now in range(40, 48):
            jammed = BlockOutcome(now, self.ctx.rnti, (0, 1, 98, 99), 0, -5.0, False, 4, 'pucch')
            self.enb.process_uplink(now, [], [(report, jammed)])
        assert self.ctx.uci_on_pusch
        assert self.enb.sink.count('pucch_fallback') == 1

    def test_failed_data_block_requests_retransmission_capacity(self):
        self.ctx.buffer_report = 300
        _, dcis = self.enb.schedule_subframe(30)
        dci = decode_dci(dcis[0], self.ctx.rnti, ScramblingMode.CRC_MASK_ONLY)
        block = UplinkBlock(0, self.ctx.rnti, BLOCK_DATA, dci.rb_start, dci.rb_len, dci.mcs_index, block_id=9,
                            payload_packets=3, payload_bytes=300)
        feedback = self.enb.process_uplink(34, [(block, outcome(34, block, False, -8.0))])
        assert not feedback[0].ack
        assert self.ctx.retx_bytes == 300


class TestRntiLifecycle:
    """Hopping and release"""

    def test_hop_issues_reconfiguration(self):
        enb = make_enb(rnti_policy=RntiPolicy(RntiPolicyKind.HOPPING, 500))
        ctx = connect(enb)
        old = ctx.rnti
        deadline = ctx.hopping_deadline
        assert enb.step(deadline - 1) == []
        reconfigurations = enb.step(deadline)
        assert len(reconfigurations) == 1
        hop = reconfigurations[0]
        assert hop.old_rnti == old and hop.new_rnti == ctx.rnti != old
        assert ctx.hopping_deadline == deadline + 500
        assert old not in enb.live_rntis() or old in enb._retiring

    def test_hop_skipped_when_pool_is_exhausted(self):
        enb = make_enb(rnti_min=0x100, rnti_max=0x100, rnti_policy=RntiPolicy(RntiPolicyKind.HOPPING, 500))
        ctx = connect(enb)
        deadline = ctx.hopping_deadline
        assert enb.rnti_hop(ctx, deadline) is None
        assert ctx.rnti == 0x100
        assert ctx.hopping_deadline == deadline + 500
        assert enb.sink.count('hop_skipped') == 1

    def test_inactivity_release_quarantines_rnti(self):
        enb = make_enb()
        ctx = connect(enb)
        enb.step(ctx.last_heard + 501)
        assert enb.context_for(0) is None
        assert ctx.rnti in enb._quarantine
        assert enb.sink.count('context_released') == 1
        print("✅ inactive context released and RNTI quarantined")
