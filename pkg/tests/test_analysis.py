"""
Tests for the paired-sweep checks, on synthetic sweep tables
"""

import sys
from pathlib import Path

import pandas as pd
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.analysis import CHECKS, CheckReport, compare_figures, curve_shape, has_increase
from src.harness import SWEEP_COLUMNS
from src.output_manager import export_csv

GAINS = [1.0, 3.0, 5.0, 7.0, 9.0, 11.0, 13.0]


def make_frame(received: dict, offered: int = 60_000, retransmissions: dict = None, runs: int = 2,
               crashed_runs: int = 0) -> pd.DataFrame:
    """Sweep table with ``runs`` identical rows per gain"""
    rows = []
    for gain, value in received.items():
        for run in range(runs):
            rows.append({
                'gain_db': gain, 'run': run, 'offered': offered, 'received': value,
                'dropped': offered - value, 'retransmissions': (retransmissions or {}).get(gain, 0),
                'rnti_changes': 0, 'crashed': run < crashed_runs, 'time_to_recovery_s': None,
            })
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


class TestCurveShape:
    """Onset and recovery bands"""

    def test_bands(self):
        curve = pd.Series([100, 100, 100, 80, 50, 70, 90, 90], index=[1, 3, 5, 7, 9, 11, 13, 15])
        shape = curve_shape(curve, tolerance=1)
        assert shape.baseline == 100
        assert shape.onset_band == [5, 7, 9]
        assert shape.recovery_band == [9, 11, 13]
        assert shape.has_recovery

    def test_monotone_curve_has_no_recovery(self):
        curve = pd.Series([100, 100, 60, 30, 10], index=[1, 3, 5, 7, 9])
        shape = curve_shape(curve, tolerance=1)
        assert shape.onset_band == [3, 5, 7, 9]
        assert not shape.has_recovery

    def test_flat_and_empty_curves(self):
        assert curve_shape(pd.Series([5, 5, 5], index=[1, 2, 3]), 0).onset_band == []
        assert curve_shape(pd.Series([], dtype=float), 0).baseline == 0.0

    def test_has_increase_respects_tolerance(self):
        curve = pd.Series([10, 12, 30], index=[1, 2, 3])
        assert not has_increase(curve, [1, 2], tolerance=5)
        assert has_increase(curve, [1, 2, 3], tolerance=5)


class TestPucchVsPusch:
    """Low-gain zero loss on PUCCH, starved PUSCH window at high gain"""

    def test_passes(self):
        pucch = make_frame({9.0: 60_000, 35.0: 60_000})
        pusch = make_frame({9.0: 60_000, 35.0: 21_000}, retransmissions={9.0: 12})
        report = compare_figures(pucch, pusch, 'pucch-vs-pusch')
        assert report.passed, report.lines()
        assert report.measurements['pucch_loss_at_low'] == 0
        assert report.measurements['pusch_in_window_received_share_at_high'] == 0.0

    def test_pucch_loss_fails(self):
        pucch = make_frame({9.0: 59_990, 35.0: 60_000})
        pusch = make_frame({9.0: 60_000, 35.0: 21_000}, retransmissions={9.0: 12})
        assert not compare_figures(pucch, pusch, 'pucch-vs-pusch').passed

    def test_no_retransmissions_fails(self):
        pucch = make_frame({9.0: 60_000, 35.0: 60_000})
        pusch = make_frame({9.0: 60_000, 35.0: 21_000})
        assert not compare_figures(pucch, pusch, 'pucch-vs-pusch').passed

    def test_window_fraction_changes_the_share(self):
        pucch = make_frame({9.0: 60_000, 35.0: 60_000})
        pusch = make_frame({9.0: 60_000, 35.0: 21_000}, retransmissions={9.0: 12})
        report = compare_figures(pucch, pusch, 'pucch-vs-pusch', window_fraction=0.5)
        assert report.measurements['pusch_in_window_received_share_at_high'] == 0.0
        report = compare_figures(pucch, pusch, 'pucch-vs-pusch', window_fraction=0.9)
        assert report.measurements['pusch_in_window_received_share_at_high'] == pytest.approx(15_000 / 54_000, abs=1e-4)
        assert not report.passed


class TestAdaptationAblation:
    """Recovery band present only with adaptation enabled"""

    ENABLED = dict(zip(GAINS, [60_000, 60_000, 40_000, 20_000, 30_000, 45_000, 45_000]))

    def test_passes(self):
        disabled = dict(zip(GAINS, [60_000, 60_000, 40_000, 20_000, 10_000, 5_000, 5_000]))
        report = compare_figures(make_frame(self.ENABLED), make_frame(disabled), 'adaptation-ablation')
        assert report.passed, report.lines()
        assert report.measurements['recovery_band_db'] == [7.0, 9.0, 11.0]
        assert report.measurements['onset_band_db'] == [3.0, 5.0, 7.0]

    def test_disabled_side_recovering_fails(self):
        report = compare_figures(make_frame(self.ENABLED), make_frame(self.ENABLED), 'adaptation-ablation')
        assert not report.passed
        assert report.measurements['disabled_increase_in_band'] is True

    def test_crashed_runs_are_excluded(self):
        enabled = make_frame(self.ENABLED, crashed_runs=0)
        crashed = enabled.copy()
        crashed.loc[(crashed['gain_db'] == 9.0) & (crashed['run'] == 0), ['received', 'crashed']] = [0, True]
        disabled = make_frame(dict(zip(GAINS, [60_000, 60_000, 40_000, 20_000, 10_000, 5_000, 5_000])))
        assert compare_figures(crashed, disabled, 'adaptation-ablation').passed


class TestMitigation:
    """Received share with and without the mitigation"""

    def test_passes(self):
        report = compare_figures(make_frame({35.0: 59_000}), make_frame({35.0: 20_000}), 'mitigation')
        assert report.passed
        assert report.measurements['mitigated_received_share'] == pytest.approx(0.9833, abs=1e-4)

    def test_weak_mitigation_fails(self):
        assert not compare_figures(make_frame({35.0: 50_000}), make_frame({35.0: 20_000}), 'mitigation').passed

    def test_no_common_gain(self):
        report = compare_figures(make_frame({35.0: 59_000}), make_frame({33.0: 20_000}), 'mitigation')
        assert not report.passed and report.message == 'no common gain'


class TestIdenticalAndFiles:
    """Determinism check and CSV inputs"""

    def test_identical_csvs(self, tmp_path):
        frame = make_frame({9.0: 60_000, 35.0: 21_000})
        a = export_csv(frame, tmp_path / 'a.csv')
        b = export_csv(frame, tmp_path / 'b.csv')
        report = compare_figures(str(a), str(b), 'identical')
        assert report.passed
        assert report.measurements['rows_a'] == 4

    def test_one_differing_row(self):
        a = make_frame({9.0: 60_000, 35.0: 21_000})
        b = a.copy()
        b.loc[3, 'received'] = 1
        report = compare_figures(a, b, 'identical')
        assert not report.passed
        assert report.measurements['differing_rows'] == 1

    def test_unknown_check_and_empty_side(self):
        frame = make_frame({9.0: 60_000})
        with pytest.raises(ValueError):
            compare_figures(frame, frame, 'fig-9')
        with pytest.raises(ValueError):
            compare_figures(frame, frame.iloc[0:0], 'identical')
        with pytest.raises(ValueError):
            compare_figures(frame, None, 'identical')

    def test_report_lines(self):
        report = CheckReport('mitigation', True, {'gain_db': 35.0})
        assert report.lines() == ['mitigation: PASS', '  gain_db = 35.0']
        assert set(CHECKS) == {'pucch-vs-pusch', 'adaptation-ablation', 'mitigation', 'identical'}
        print("✅ report formatting")
