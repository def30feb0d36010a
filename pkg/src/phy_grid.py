"""
Uplink resource grid, link budget and the deterministic interference/decode model.

Powers are handled in dB; any summation of powers happens in the linear
domain (``db_to_linear`` / ``linear_to_db``) and is converted back.
"""

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PowerLevel = float
SubframeIndex = int

TOTAL_RBS = 100

PUCCH_REGION = 'pucch'
IDLE = None


class GridError(ValueError):
    """Raised on invalid grid geometry or conflicting RB assignments"""


def db_to_linear(value_db):
    return np.power(10.0, np.asarray(value_db, dtype=float) / 10.0)


def linear_to_db(value_linear):
    return 10.0 * np.log10(np.asarray(value_linear, dtype=float))


@lru_cache(maxsize=64)
def _pucch_region(total_rbs: int, edge_rbs: int) -> frozenset:
    if total_rbs <= 0:
        raise GridError(f"total_rbs must be positive, got {total_rbs}")
    if edge_rbs <= 0:
        raise GridError(f"edge_rbs must be positive, got {edge_rbs}")
    if 2 * edge_rbs >= total_rbs:
        raise GridError(f"PUCCH edges of {edge_rbs} RBs cover the whole {total_rbs}-RB band")
    return frozenset(range(edge_rbs)) | frozenset(range(total_rbs - edge_rbs, total_rbs))


def pucch_region(total_rbs: int, edge_rbs: int) -> Set[int]:
    """Indices of the PUCCH region: ``edge_rbs`` RBs at each band edge"""
    return set(_pucch_region(total_rbs, edge_rbs))


@dataclass(frozen=True)
class LinkBudget:
    ue_signal_db: PowerLevel
    noise_floor_db: PowerLevel
    jammer_base_db: PowerLevel

    def with_signal_offset(self, offset_db: PowerLevel) -> 'LinkBudget':
        return replace(self, ue_signal_db=self.ue_signal_db + offset_db)

    @property
    def unjammed_sinr_db(self) -> PowerLevel:
        return self.ue_signal_db - self.noise_floor_db


@lru_cache(maxsize=4096)
def _interference_db(jammer_db: PowerLevel, noise_floor_db: PowerLevel) -> PowerLevel:
    # scalar path of linear_to_db(db_to_linear(j) + db_to_linear(n))
    return 10.0 * math.log10(10.0 ** (jammer_db / 10.0) + 10.0 ** (noise_floor_db / 10.0))


def effective_sinr(budget: LinkBudget, jammer_gain_db: PowerLevel, jammed: bool) -> PowerLevel:
    """SINR at the eNB receiver for one RB"""
    if not jammed:
        return float(budget.ue_signal_db - budget.noise_floor_db)
    return float(budget.ue_signal_db - _interference_db(budget.jammer_base_db + jammer_gain_db,
                                                        budget.noise_floor_db))


@dataclass(frozen=True)
class McsLevel:
    index: int
    sinr_threshold_db: PowerLevel
    bits_per_rb: int


def decode_success(sinr_db: PowerLevel, mcs: McsLevel) -> bool:
    return bool(sinr_db >= mcs.sinr_threshold_db)


class McsTable:
    """Ordered MCS levels; thresholds and capacities strictly increasing"""

    def __init__(self, levels: Sequence[McsLevel]):
        if not levels:
            raise GridError("MCS table is empty")
        for position, level in enumerate(levels):
            if level.index != position:
                raise GridError(f"MCS level at position {position} has index {level.index}")
            if level.bits_per_rb <= 0:
                raise GridError(f"MCS {position}: bits_per_rb must be positive")
        for lower, upper in zip(levels, levels[1:]):
            if upper.sinr_threshold_db <= lower.sinr_threshold_db:
                raise GridError(f"MCS {upper.index}: thresholds must be strictly increasing")
            if upper.bits_per_rb <= lower.bits_per_rb:
                raise GridError(f"MCS {upper.index}: bits_per_rb must be strictly increasing")
        self._levels = tuple(levels)

    @classmethod
    def from_config(cls, thresholds_db: Sequence[float], bits_per_rb: Sequence[int]) -> 'McsTable':
        if len(thresholds_db) != len(bits_per_rb):
            raise GridError("MCS thresholds and bits_per_rb differ in length")
        return cls([McsLevel(i, float(t), int(b)) for i, (t, b) in enumerate(zip(thresholds_db, bits_per_rb))])

    def __len__(self) -> int:
        return len(self._levels)

    def __getitem__(self, index: int) -> McsLevel:
        return self._levels[index]

    def __iter__(self):
        return iter(self._levels)

    @property
    def top(self) -> McsLevel:
        return self._levels[-1]

    def highest_decodable(self, sinr_db: PowerLevel) -> Optional[McsLevel]:
        """Most efficient level that still decodes at ``sinr_db``"""
        best = None
        for level in self._levels:
            if decode_success(sinr_db, level):
                best = level
        return best

    def rbs_for_bytes(self, n_bytes: int, index: int) -> int:
        """RBs needed to carry ``n_bytes`` at MCS ``index``"""
        if n_bytes <= 0:
            return 0
        bits = n_bytes * 8
        per_rb = self._levels[index].bits_per_rb
        return -(-bits // per_rb)

    def block_bytes(self, index: int, rb_len: int) -> int:
        return (self._levels[index].bits_per_rb * rb_len) // 8


@lru_cache(maxsize=64)
def _grid_template(total_rbs: int, edge_rbs: int) -> Tuple:
    region = _pucch_region(total_rbs, edge_rbs)
    return tuple(PUCCH_REGION if rb in region else IDLE for rb in range(total_rbs))


class RbGrid:
    """
    Per-subframe owner map of the uplink band

    Each cell is ``PUCCH_REGION``, ``IDLE`` (None) or the integer RNTI it is
    granted to.
    """

    def __init__(self, subframe: SubframeIndex, total_rbs: int = TOTAL_RBS, edge_rbs: int = 2):
        self.subframe = subframe
        self.total_rbs = total_rbs
        self.edge_rbs = edge_rbs
        self.pucch = _pucch_region(total_rbs, edge_rbs)
        self.cells: List = list(_grid_template(total_rbs, edge_rbs))
        self._allocations: Dict[int, List[Tuple[int, int]]] = {}

    @property
    def interior(self) -> range:
        return range(self.edge_rbs, self.total_rbs - self.edge_rbs)

    @property
    def interior_size(self) -> int:
        return self.total_rbs - 2 * self.edge_rbs

    def grant(self, rnti: int, rb_start: int, rb_len: int) -> None:
        if rb_len <= 0:
            raise GridError(f"empty grant for RNTI {rnti:#06x}")
        stop = rb_start + rb_len
        if rb_start < 0 or stop > self.total_rbs:
            raise GridError(f"grant {rb_start}+{rb_len} exceeds the {self.total_rbs}-RB grid")
        span = self.cells[rb_start:stop]
        if span.count(IDLE) != rb_len:
            for rb, owner in enumerate(span, rb_start):
                if owner == PUCCH_REGION:
                    raise GridError(f"RB {rb} is in the PUCCH region")
                if owner is not IDLE:
                    raise GridError(f"RB {rb} already granted to {owner:#06x}")
        self.cells[rb_start:stop] = [rnti] * rb_len
        self._allocations.setdefault(rnti, []).append((rb_start, rb_len))

    def allocations(self, rnti: int) -> List[Tuple[int, int]]:
        return list(self._allocations.get(rnti, []))

    def granted_rbs(self, rnti: int) -> Set[int]:
        return {rb for rb, owner in enumerate(self.cells) if owner == rnti}

    def owns(self, rnti: int, rbs: range) -> bool:
        """True iff every RB of ``rbs`` is granted to ``rnti``"""
        if rbs.start < 0 or rbs.stop > self.total_rbs:
            return False
        return self.cells[rbs.start:rbs.stop].count(rnti) == len(rbs)

    def owners(self) -> Set[int]:
        return set(self._allocations)

    def idle_rbs(self) -> List[int]:
        return [rb for rb, owner in enumerate(self.cells) if owner is IDLE]

    def audit(self) -> bool:
        """Conservation: granted sets pairwise disjoint and clear of PUCCH"""
        spans = sorted(span for spans in self._allocations.values() for span in spans)
        low, high = self.edge_rbs, self.total_rbs - self.edge_rbs
        for start, length in spans:
            if start < low or start + length > high:
                return False
            low = start + length
        return len(self.cells) == self.total_rbs


@dataclass
class BlockOutcome:
    """Decode result of one uplink transmission"""
    subframe: SubframeIndex
    rnti: int
    rbs: Sequence[int]
    mcs_index: int
    sinr_db: PowerLevel
    decoded: bool
    jammed_rbs: int = 0
    channel: str = 'pusch'


def resolve_block(
    budget: LinkBudget,
    rbs: Iterable[int],
    mcs: McsLevel,
    interference: Mapping[int, PowerLevel],
    signal_offset_db: PowerLevel = 0.0,
) -> Tuple[bool, PowerLevel, int]:
    """
    Decode a transport block spread over ``rbs``

    The block decodes iff every RB decodes. Returns ``(decoded, worst SINR,
    number of jammed RBs)``.
    """
    signal = budget.ue_signal_db + signal_offset_db
    worst = signal - budget.noise_floor_db
    jammed = 0
    if interference:
        if not isinstance(rbs, (range, set, frozenset)):
            rbs = frozenset(rbs)
        if len(interference) <= len(rbs):
            gains = [gain for rb, gain in interference.items() if rb in rbs]
        else:
            gains = [interference[rb] for rb in rbs if rb in interference]
        jammed = len(gains)
        if gains:
            # the strongest jammed RB sets the worst SINR
            interference_db = _interference_db(budget.jammer_base_db + max(gains), budget.noise_floor_db)
            worst = min(worst, signal - interference_db)
    return decode_success(worst, mcs), float(worst), jammed
