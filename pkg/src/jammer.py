"""
Attacker agents

Barrage, PUCCH-region, RNTI-targeted PUSCH and PRATTLE jammers. Each one sees
only what a real smart jammer sees on the downlink (encoded DCIs and RAR
grants) and returns per-RB interference for the physical layer.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Set, Tuple, Union

try:
    from src.dci_codec import (DEFAULT_LAYOUT, DciLayout, EncodedDci, ScramblingMode, UplinkDci, blind_decode,
                               decode_dci, is_valid_rnti, unmask_rnti)
    from src.enb import RarGrant
    from src.metrics import EventSink, Exposure, NullSink
    from src.phy_grid import TOTAL_RBS, db_to_linear, pucch_region
except ImportError:
    from dci_codec import (DEFAULT_LAYOUT, DciLayout, EncodedDci, ScramblingMode, UplinkDci, blind_decode,
                           decode_dci, is_valid_rnti, unmask_rnti)
    from enb import RarGrant
    from metrics import EventSink, Exposure, NullSink
    from phy_grid import TOTAL_RBS, db_to_linear, pucch_region

logger = logging.getLogger(__name__)

TARGET_AUTO = 'auto'
TARGET_UNMASK = 'unmask'


class JammerKind(str, Enum):
    BARRAGE = 'barrage'
    PUCCH_JAM = 'pucch_jam'
    PUSCH_TARGETED = 'pusch_targeted'
    PRATTLE = 'prattle'

    @classmethod
    def parse(cls, value) -> 'JammerKind':
        if isinstance(value, cls):
            return value
        normalized = str(value).strip().lower().replace('-', '_')
        aliases = {'pucchjam': 'pucch_jam', 'puschtargeted': 'pusch_targeted', 'targeted': 'pusch_targeted'}
        return cls(aliases.get(normalized, normalized))


@dataclass
class JammerConfig:
    kind: JammerKind
    gain_db: float
    active_start_s: float = 6.0
    active_end_s: float = 45.0
    duty_cycle: float = 1.0
    duty_period_subframes: int = 10
    target_rnti: Union[int, str, None] = TARGET_AUTO
    candidate_rntis: List[int] = field(default_factory=list)

    def violations(self, duration_s: float) -> List[Tuple[str, str]]:
        problems = []
        if not 0 <= self.active_start_s < self.active_end_s:
            problems.append(('active_start_s', 'must be >= 0 and before active_end_s'))
        if self.active_end_s > duration_s:
            problems.append(('active_end_s', f'must not exceed the run duration ({duration_s} s)'))
        if not 0.0 < self.duty_cycle <= 1.0:
            problems.append(('duty_cycle', 'must be in (0, 1]'))
        if self.duty_period_subframes < 1:
            problems.append(('duty_period_subframes', 'must be >= 1'))
        if isinstance(self.target_rnti, str) and self.target_rnti not in (TARGET_AUTO, TARGET_UNMASK):
            problems.append(('target_rnti', f"must be an integer, '{TARGET_AUTO}' or '{TARGET_UNMASK}'"))
        return problems

    @property
    def start_subframe(self) -> int:
        return round(self.active_start_s * 1000)

    @property
    def end_subframe(self) -> int:
        return round(self.active_end_s * 1000)


@dataclass(frozen=True)
class TrackedGrant:
    rnti: int
    dci: UplinkDci
    fire_subframe: int


class Jammer:
    def __init__(
        self,
        config: JammerConfig,
        mode: ScramblingMode,
        grant_delay_subframes: int = 4,
        total_rbs: int = TOTAL_RBS,
        edge_rbs: int = 2,
        layout: DciLayout = DEFAULT_LAYOUT,
        sink: Optional[EventSink] = None,
        record_emissions: bool = False,
    ):
        self.config = config
        self.mode = ScramblingMode.parse(mode)
        self.grant_delay = grant_delay_subframes
        self.total_rbs = total_rbs
        self.layout = layout
        self.sink = sink or NullSink()
        self.pucch = sorted(pucch_region(total_rbs, edge_rbs))
        self.tracked: Dict[int, List[TrackedGrant]] = {}
        self.tracked_total = 0
        self.exposure = Exposure()
        self.emissions: Optional[List[Tuple[int, frozenset]]] = [] if record_emissions else None
        self._gain_linear = float(db_to_linear(config.gain_db))
        self.target: Optional[int] = config.target_rnti if isinstance(config.target_rnti, int) else None

    @property
    def kind(self) -> JammerKind:
        return self.config.kind

    def in_window(self, now: int) -> bool:
        return self.config.start_subframe <= now < self.config.end_subframe

    def active(self, now: int) -> bool:
        """Inside the window and in the on-phase of the duty cycle"""
        if not self.in_window(now):
            return False
        period = self.config.duty_period_subframes
        on = round(self.config.duty_cycle * period)
        return (now - self.config.start_subframe) % period < on

    def resolve_target(self, now: int, victim_rnti: Optional[int]) -> None:
        """Hand the jammer the victim's RNTI (reconnaissance stand-in for ``auto``)"""
        if self.config.target_rnti == TARGET_AUTO and self.target is None and victim_rnti is not None:
            self.target = victim_rnti
            self.sink.record(now, 'jammer_target', victim_rnti, 'auto')

    def _learn_by_unmasking(self, now: int, dcis: Sequence[EncodedDci]) -> None:
        for enc in dcis:
            candidate = unmask_rnti(enc)
            if not is_valid_rnti(candidate):
                continue
            # the attacker checks the guess against the LTE CRC-mask scheme
            if decode_dci(enc, candidate, ScramblingMode.CRC_MASK_ONLY, self.layout) is not None:
                self.target = candidate
                self.sink.record(now, 'jammer_target', candidate, 'unmask')
                return

    def _track(self, grant: TrackedGrant) -> None:
        self.tracked.setdefault(grant.fire_subframe, []).append(grant)
        self.tracked_total += 1

    def observe_downlink(self, now: int, dcis: Sequence[EncodedDci],
                         rars: Sequence[RarGrant] = ()) -> List[TrackedGrant]:
        """Turn observed downlink control into grants to jam; returns the new ones"""
        new: List[TrackedGrant] = []
        kind = self.config.kind
        if kind is JammerKind.PUSCH_TARGETED:
            if self.target is None and self.config.target_rnti == TARGET_UNMASK and self.in_window(now):
                self._learn_by_unmasking(now, dcis)
            candidates = [self.target] if self.target is not None else list(self.config.candidate_rntis)
            for rnti, dci in blind_decode(dcis, candidates, self.mode, self.layout):
                new.append(TrackedGrant(rnti, dci, now + self.grant_delay))
        elif kind is JammerKind.PRATTLE:
            for rar in rars:
                dci = UplinkDci(rar.msg3_rbs.start, len(rar.msg3_rbs), 0, 0, 0)
                new.append(TrackedGrant(rar.assigned_rnti, dci, rar.msg3_subframe))
        for grant in new:
            self._track(grant)
        for stale in [s for s in self.tracked if s < now]:
            del self.tracked[stale]
        return new

    def emit_interference(self, now: int) -> Dict[int, float]:
        """``{rb: gain_db}`` radiated at ``now``"""
        if not self.active(now):
            self.tracked.pop(now, None)
            return {}
        kind = self.config.kind
        if kind is JammerKind.BARRAGE:
            rbs: Set[int] = set(range(self.total_rbs))
        elif kind is JammerKind.PUCCH_JAM:
            rbs = set(self.pucch)
        else:
            rbs = set()
            for grant in self.tracked.pop(now, []):
                rbs.update(grant.dci.rbs)
        if not rbs:
            return {}
        self.exposure.rb_subframes += len(rbs)
        self.exposure.energy_linear += len(rbs) * self._gain_linear
        if self.emissions is not None:
            self.emissions.append((now, frozenset(rbs)))
        gain = self.config.gain_db
        return {rb: gain for rb in rbs}

    def exposure_metric(self) -> Tuple[int, float]:
        """``(RB-subframes jammed, summed linear power)`` over the run so far"""
        return self.exposure.as_tuple()
