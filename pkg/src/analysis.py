"""
Qualitative comparison of paired sweeps

Each check reads two sweep tables, reduces them to mean-per-gain curves over
non-crashed runs and reports the measured numbers with a pass/fail verdict.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd

try:
    from src.harness import SweepTable, sweep_curve
    from src.output_manager import read_sweep_csv
except ImportError:
    from harness import SweepTable, sweep_curve
    from output_manager import read_sweep_csv

logger = logging.getLogger(__name__)

CHECKS = ('pucch-vs-pusch', 'adaptation-ablation', 'mitigation', 'identical')

# Default scenarios jam from 6 s to 45 s of a 60 s run
DEFAULT_WINDOW_FRACTION = 39 / 60


@dataclass
class CheckReport:
    name: str
    passed: bool
    measurements: Dict[str, Any] = field(default_factory=dict)
    message: str = ''

    def lines(self) -> List[str]:
        out = [f"{self.name}: {'PASS' if self.passed else 'FAIL'}" + (f" ({self.message})" if self.message else '')]
        out.extend(f"  {key} = {value}" for key, value in self.measurements.items())
        return out


@dataclass
class CurveShape:
    baseline: float
    onset_band: List[float]
    recovery_band: List[float]

    @property
    def has_recovery(self) -> bool:
        return len(self.recovery_band) >= 2


def curve_shape(curve: pd.Series, tolerance: float) -> CurveShape:
    """
    Split a received-vs-gain curve into its flat part, onset band and recovery band

    The onset band starts at the last gain still at the baseline level and
    runs while the curve strictly decreases. The recovery band is the first
    run of increases (each larger than ``tolerance``) after the onset band.
    """
    gains = list(curve.index)
    values = list(curve.values)
    if not values:
        return CurveShape(0.0, [], [])
    baseline = float(values[0])
    start = 0
    while start + 1 < len(values) and values[start + 1] >= baseline - tolerance:
        start += 1
    end = start
    while end + 1 < len(values) and values[end + 1] < values[end]:
        end += 1
    onset = gains[start:end + 1] if end > start else []

    recovery: List[float] = []
    i = end
    while i + 1 < len(values):
        if values[i + 1] - values[i] > tolerance:
            if not recovery:
                recovery.append(gains[i])
            recovery.append(gains[i + 1])
        elif recovery:
            break
        i += 1
    return CurveShape(baseline, onset, recovery)


def has_increase(curve: pd.Series, gains: List[float], tolerance: float) -> bool:
    values = [curve.get(g) for g in gains]
    return any(b is not None and a is not None and b - a > tolerance for a, b in zip(values, values[1:]))


def _frame(source: Union[str, Path, SweepTable, pd.DataFrame]) -> pd.DataFrame:
    if isinstance(source, SweepTable):
        return source.to_dataframe()
    if isinstance(source, pd.DataFrame):
        return source
    return read_sweep_csv(source)


def _offered(frame: pd.DataFrame) -> float:
    return float(frame['offered'].max())


def check_pucch_vs_pusch(pucch: pd.DataFrame, pusch: pd.DataFrame, window_fraction: float) -> CheckReport:
    common = sorted(set(pucch['gain_db']) & set(pusch['gain_db']))
    if not common:
        return CheckReport('pucch-vs-pusch', False, message='no common gain')
    low, high = common[0], common[-1]
    pucch_loss = sweep_curve(pucch, 'offered') - sweep_curve(pucch, 'received')
    pusch_loss = sweep_curve(pusch, 'offered') - sweep_curve(pusch, 'received')
    pusch_retx = sweep_curve(pusch, 'retransmissions')

    offered = _offered(pusch)
    offered_in_window = offered * window_fraction
    received_in_window = max(0.0, float(sweep_curve(pusch, 'received')[high]) - (offered - offered_in_window))
    in_window_share = received_in_window / offered_in_window if offered_in_window else 0.0

    measurements = {
        'low_gain_db': low,
        'pucch_loss_at_low': float(pucch_loss[low]),
        'pusch_loss_at_low': float(pusch_loss[low]),
        'pusch_retransmissions_at_low': float(pusch_retx[low]),
        'high_gain_db': high,
        'pusch_in_window_received_share_at_high': round(in_window_share, 4),
    }
    passed = (measurements['pucch_loss_at_low'] == 0
              and measurements['pusch_loss_at_low'] >= 0
              and measurements['pusch_retransmissions_at_low'] >= 1
              and in_window_share < 0.05)
    return CheckReport('pucch-vs-pusch', passed, measurements)


def check_adaptation_ablation(enabled: pd.DataFrame, disabled: pd.DataFrame) -> CheckReport:
    on = sweep_curve(enabled)
    off = sweep_curve(disabled)
    tolerance = 0.01 * _offered(enabled)
    shape_on = curve_shape(on, tolerance)
    shape_off = curve_shape(off, tolerance)
    band = [g for g in on.index if shape_on.recovery_band and shape_on.recovery_band[0] <= g <= shape_on.recovery_band[-1]]
    off_increase = has_increase(off, band, tolerance) if band else False
    offered = _offered(enabled)
    flat_on = float(on.iloc[0]) == offered
    flat_off = float(off.iloc[0]) == offered
    measurements = {
        'baseline_enabled': float(on.iloc[0]),
        'baseline_disabled': float(off.iloc[0]),
        'onset_band_db': shape_on.onset_band,
        'recovery_band_db': shape_on.recovery_band,
        'disabled_increase_in_band': off_increase,
        'disabled_onset_band_db': shape_off.onset_band,
    }
    passed = (flat_on and flat_off and len(shape_on.onset_band) >= 2
              and shape_on.has_recovery and not off_increase)
    return CheckReport('adaptation-ablation', passed, measurements)


def check_mitigation(mitigated: pd.DataFrame, unmitigated: pd.DataFrame) -> CheckReport:
    common = sorted(set(mitigated['gain_db']) & set(unmitigated['gain_db']))
    if not common:
        return CheckReport('mitigation', False, message='no common gain')
    gain = common[-1]
    offered = _offered(mitigated)
    with_share = float(sweep_curve(mitigated)[gain]) / offered
    without_share = float(sweep_curve(unmitigated)[gain]) / _offered(unmitigated)
    measurements = {
        'gain_db': gain,
        'mitigated_received_share': round(with_share, 4),
        'unmitigated_received_share': round(without_share, 4),
    }
    return CheckReport('mitigation', with_share >= 0.9 and without_share < 0.5, measurements)


def check_identical(a: pd.DataFrame, b: pd.DataFrame) -> CheckReport:
    a = a.reset_index(drop=True)
    b = b.reset_index(drop=True)
    same = a.shape == b.shape and a.equals(b)
    if same:
        differing = 0
    elif a.shape == b.shape:
        differing = int((a.fillna('') != b.fillna('')).any(axis=1).sum())
    else:
        differing = max(len(a), len(b))
    return CheckReport('identical', same, {'rows_a': len(a), 'rows_b': len(b), 'differing_rows': differing})


def compare_figures(a, b, check: str, window_fraction: Optional[float] = None) -> CheckReport:
    """
    Run one named check on a pair of sweeps (CSV paths, tables or DataFrames)

    ``a`` is the attacked or enabled side: PUCCH jam, adaptation on,
    mitigation on. Raises ``ValueError`` for an unknown check or a missing
    side of the pair.
    """
    if check not in CHECKS:
        raise ValueError(f"unknown check '{check}', expected one of {', '.join(CHECKS)}")
    if a is None or b is None:
        raise ValueError(f"check '{check}' needs both sweeps of the pair")
    frame_a, frame_b = _frame(a), _frame(b)
    for label, frame in (('a', frame_a), ('b', frame_b)):
        if frame.empty:
            raise ValueError(f"check '{check}': sweep {label} has no rows")
    if check == 'pucch-vs-pusch':
        report = check_pucch_vs_pusch(frame_a, frame_b, window_fraction or DEFAULT_WINDOW_FRACTION)
    elif check == 'adaptation-ablation':
        report = check_adaptation_ablation(frame_a, frame_b)
    elif check == 'mitigation':
        report = check_mitigation(frame_a, frame_b)
    else:
        report = check_identical(frame_a, frame_b)
    logger.info(" | ".join(report.lines()))
    return report
