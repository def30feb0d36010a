"""
Run metrics and the structured event sink.

Every component emits ``EventRecord`` tuples ``(subframe, kind, rnti, detail)``
into the sink owned by its run. ``RunMetrics`` is the per-run summary the
harness returns and the sweep exports.
"""

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

logger = logging.getLogger(__name__)

RRC_EVENT_KINDS = frozenset({
    'rlf', 'rach_start', 'rach_failed', 'connected', 'reestablish_start', 'fresh_connection',
    'backoff', 'cell_barred', 'barring_expired', 'crashed', 'access_rejected', 'context_released',
})


class EventRecord(NamedTuple):
    subframe: int
    kind: str
    rnti: Optional[int]
    detail: Any = None


class EventSink:
    """Collects event records for exactly one run"""

    def __init__(self):
        self.records: List[EventRecord] = []

    def record(self, subframe: int, kind: str, rnti: Optional[int] = None, detail: Any = None) -> None:
        self.records.append(EventRecord(subframe, kind, rnti, detail))

    def of_kind(self, *kinds: str) -> List[EventRecord]:
        wanted = set(kinds)
        return [r for r in self.records if r.kind in wanted]

    def count(self, kind: str) -> int:
        return sum(1 for r in self.records if r.kind == kind)

    def rrc_events(self) -> List[Tuple[int, str]]:
        return [(r.subframe, r.kind) for r in self.records if r.kind in RRC_EVENT_KINDS]


class NullSink(EventSink):
    def record(self, subframe: int, kind: str, rnti: Optional[int] = None, detail: Any = None) -> None:
        pass


@dataclass
class Exposure:
    rb_subframes: int = 0
    energy_linear: float = 0.0

    def as_tuple(self) -> Tuple[int, float]:
        return self.rb_subframes, self.energy_linear


@dataclass
class RunMetrics:
    packets_offered: int = 0
    packets_received: int = 0
    packets_dropped: int = 0
    throughput_series: List[int] = field(default_factory=list)
    retransmissions: int = 0
    rrc_events: List[Tuple[int, str]] = field(default_factory=list)
    rnti_changes: int = 0
    time_to_recovery_s: Optional[float] = None
    exposure: Exposure = field(default_factory=Exposure)
    crashed: bool = False
    residual_buffer: int = 0
    in_flight: int = 0
    rlf_count: int = 0
    tracked_grants: int = 0
    detections: int = 0
    audit_violations: int = 0
    seed: int = 0
    bin_ms: int = 100

    def ledger_balanced(self) -> bool:
        return self.packets_offered == (
            self.packets_received + self.packets_dropped + self.residual_buffer + self.in_flight
        )

    def summary_row(self, gain_db: float, run: int) -> Dict[str, Any]:
        return {
            'gain_db': gain_db,
            'run': run,
            'offered': self.packets_offered,
            'received': self.packets_received,
            'dropped': self.packets_dropped,
            'retransmissions': self.retransmissions,
            'rnti_changes': self.rnti_changes,
            'crashed': self.crashed,
            'time_to_recovery_s': self.time_to_recovery_s,
        }

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['exposure'] = list(self.exposure.as_tuple())
        return data


class ThroughputCounter:
    """Received packets per fixed-width bin"""

    def __init__(self, total_subframes: int, bin_ms: int = 100):
        self.bin_ms = bin_ms
        self.bins: List[int] = [0] * max(1, math.ceil(total_subframes / bin_ms))

    def add(self, subframe: int, packets: int) -> None:
        index = subframe // self.bin_ms
        if index >= len(self.bins):
            self.bins.extend([0] * (index - len(self.bins) + 1))
        self.bins[index] += packets

    def series(self) -> List[int]:
        return list(self.bins)


def time_to_recovery(
    series: Sequence[int],
    bin_ms: int,
    jam_start_s: float,
    jam_end_s: float,
    unjammed_per_bin: float,
    level: float = 0.9,
    hold_bins: int = 10,
) -> Optional[float]:
    """
    Seconds from jammer start until throughput is back while still jammed

    Returns ``0.0`` if no bin inside the active window fell below
    ``level * unjammed_per_bin``, ``None`` if it fell and never held the
    level for ``hold_bins`` consecutive bins before the window closed.
    """
    first = int(math.ceil(jam_start_s * 1000 / bin_ms))
    last = int(math.floor(jam_end_s * 1000 / bin_ms))  # exclusive
    window = [series[i] for i in range(first, min(last, len(series)))]
    threshold = level * unjammed_per_bin
    below = [i for i, value in enumerate(window) if value < threshold]
    if not below:
        return 0.0
    for start in range(below[0] + 1, len(window) - hold_bins + 1):
        if all(value >= threshold for value in window[start:start + hold_bins]):
            return round((first + start) * bin_ms / 1000.0 - jam_start_s, 6)
    return None
