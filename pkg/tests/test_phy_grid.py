"""
Tests for the uplink grid, link budget and decode model
"""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.phy_grid import (GridError, LinkBudget, McsTable, RbGrid, PUCCH_REGION, db_to_linear, decode_success,
                          effective_sinr, linear_to_db, pucch_region, resolve_block)

THRESHOLDS = [-2, 0, 3, 6, 9, 12, 15, 18]
BITS = [160, 224, 320, 448, 640, 896, 1152, 1440]


class TestLinkBudget:
    """Interference and SINR in dB with linear-domain summation"""

    def setup_method(self):
        self.budget = LinkBudget(ue_signal_db=20.0, noise_floor_db=0.0, jammer_base_db=-7.0)
        self.table = McsTable.from_config(THRESHOLDS, BITS)

    def test_unjammed_sinr(self):
        assert self.budget.unjammed_sinr_db == 20.0
        assert effective_sinr(self.budget, 35.0, jammed=False) == 20.0

    def test_db_linear_roundtrip_values(self):
        assert float(db_to_linear(10.0)) == pytest.approx(10.0)
        assert float(linear_to_db(100.0)) == pytest.approx(20.0)

    def test_jammed_sinr_sums_noise_and_jammer_linearly(self):
        # gain 9: jammer at 2 dB above a 0 dB noise floor
        assert effective_sinr(self.budget, 9.0, jammed=True) == pytest.approx(15.875, abs=0.01)
        assert effective_sinr(self.budget, 11.0, jammed=True) == pytest.approx(14.545, abs=0.01)
        assert effective_sinr(self.budget, 35.0, jammed=True) == pytest.approx(-8.0, abs=0.01)

    def test_onset_between_9_and_11_db_with_headroom(self):
        top = self.table.top
        assert decode_success(effective_sinr(self.budget.with_signal_offset(3.0), 9.0, True), top)
        assert not decode_success(effective_sinr(self.budget.with_signal_offset(3.0), 11.0, True), top)

    def test_sinr_monotone_in_gain(self):
        values = [effective_sinr(self.budget, g, True) for g in range(1, 36, 2)]
        assert all(a > b for a, b in zip(values, values[1:]))


class TestMcsTable:
    """MCS table validation and lookups"""

    def setup_method(self):
        self.table = McsTable.from_config(THRESHOLDS, BITS)

    def test_highest_decodable(self):
        assert self.table.highest_decodable(20.0).index == 7
        assert self.table.highest_decodable(10.73).index == 4
        assert self.table.highest_decodable(-5.0) is None

    def test_decode_at_threshold(self):
        assert decode_success(18.0, self.table[7])
        assert not decode_success(17.99, self.table[7])

    def test_rbs_for_bytes(self):
        assert self.table.rbs_for_bytes(0, 7) == 0
        assert self.table.rbs_for_bytes(180, 7) == 1
        assert self.table.rbs_for_bytes(181, 7) == 2
        assert self.table.block_bytes(0, 10) == 200

    def test_rejects_non_monotone_table(self):
        with pytest.raises(GridError):
            McsTable.from_config([0, 0, 3], [100, 200, 300])
        with pytest.raises(GridError):
            McsTable.from_config([0, 1], [200, 100])
        with pytest.raises(GridError):
            McsTable.from_config([0, 1], [100])


class TestRbGrid:
    """Grid conservation"""

    def test_pucch_region(self):
        assert pucch_region(100, 2) == {0, 1, 98, 99}
        with pytest.raises(GridError):
            pucch_region(4, 2)

    def test_fresh_grid_layout(self):
        grid = RbGrid(0, 100, 2)
        assert grid.cells[0] == PUCCH_REGION and grid.cells[99] == PUCCH_REGION
        assert len(grid.idle_rbs()) == 96
        assert grid.interior_size == 96
        assert grid.audit()

    def test_grant_and_double_booking(self):
        grid = RbGrid(4, 100, 2)
        grid.grant(0x1234, 2, 10)
        assert grid.granted_rbs(0x1234) == set(range(2, 12))
        with pytest.raises(GridError):
            grid.grant(0x2222, 11, 3)
        with pytest.raises(GridError):
            grid.grant(0x2222, 97, 2)
        with pytest.raises(GridError):
            grid.grant(0x2222, 50, 0)
        grid.grant(0x2222, 12, 86)
        assert grid.idle_rbs() == []
        assert grid.audit()
        assert grid.owners() == {0x1234, 0x2222}
        assert grid.owns(0x2222, range(12, 98)) and not grid.owns(0x2222, range(11, 20))

    def test_partial_fill_leaves_edge_rbs_idle(self):
        grid = RbGrid(4, 100, 2)
        grid.grant(0x2222, 12, 84)
        assert grid.idle_rbs() == list(range(2, 12)) + [96, 97]

    def test_audit_catches_overlap(self):
        grid = RbGrid(4, 100, 2)
        grid.grant(0x1234, 2, 10)
        grid._allocations[0x2222] = [(8, 4)]
        assert not grid.audit()


class TestResolveBlock:
    """Block decodes iff every RB decodes"""

    def setup_method(self):
        self.budget = LinkBudget(20.0, 0.0, -7.0)
        self.table = McsTable.from_config(THRESHOLDS, BITS)

    def test_clean_block_decodes(self):
        decoded, sinr, jammed = resolve_block(self.budget, range(2, 50), self.table[7], {})
        assert decoded and sinr == 20.0 and jammed == 0

    def test_single_jammed_rb_fails_block(self):
        decoded, sinr, jammed = resolve_block(self.budget, range(2, 50), self.table[7], {30: 35.0})
        assert not decoded
        assert jammed == 1
        assert sinr == pytest.approx(-8.0, abs=0.01)

    def test_jamming_elsewhere_is_harmless(self):
        decoded, _, jammed = resolve_block(self.budget, range(2, 50), self.table[7], {0: 35.0, 99: 35.0})
        assert decoded and jammed == 0

    def test_strongest_rb_sets_the_worst_sinr(self):
        decoded, sinr, jammed = resolve_block(self.budget, [10, 11, 12], self.table[0], {10: 9.0, 11: 35.0, 60: 35.0})
        assert not decoded and jammed == 2
        assert sinr == pytest.approx(-8.0, abs=0.01)

    def test_power_headroom_rescues_gain_9(self):
        assert not resolve_block(self.budget, [10], self.table[7], {10: 9.0})[0]
        assert resolve_block(self.budget, [10], self.table[7], {10: 9.0}, signal_offset_db=3.0)[0]
        print("✅ +3 dB headroom keeps MCS 7 decodable at gain 9")
