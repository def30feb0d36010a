"""
Uplink grant (DCI) codec

Bit layout of the 24-bit payload, MSB first::

    rb_start(7) | rb_len(7) | mcs_index(5) | ndi(1) | harq_id(3) | pad(1)

followed by 16 CRC bits. The CRC is CRC-16/CCITT-FALSE over the three
plaintext payload bytes, XORed with the RNTI. Under ``FULL_SCRAMBLE`` the
payload bits are additionally XORed with ``rnti_sequence(rnti, 24)``.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PAYLOAD_BITS = 24
CRC_BITS = 16
ENCODED_BITS = PAYLOAD_BITS + CRC_BITS

RNTI_MIN = 0x003D
RNTI_MAX = 0xFFF3
LFSR_ZERO_SEED = 0xACE1

_FIELDS = (('rb_start', 7), ('rb_len', 7), ('mcs_index', 5), ('ndi', 1), ('harq_id', 3))


class DciError(ValueError):
    """Raised when a DCI or encoded vector violates its invariants"""


class ScramblingMode(str, Enum):
    CRC_MASK_ONLY = 'crc_mask_only'
    FULL_SCRAMBLE = 'full_scramble'

    @classmethod
    def parse(cls, value) -> 'ScramblingMode':
        if isinstance(value, cls):
            return value
        normalized = str(value).strip().lower().replace('-', '_')
        aliases = {'crcmaskonly': 'crc_mask_only', 'fullscramble': 'full_scramble'}
        return cls(aliases.get(normalized, normalized))


@dataclass(frozen=True)
class DciLayout:
    """Grid geometry a decoded DCI must respect"""
    total_rbs: int = 100
    pucch_edge_rbs: int = 2
    mcs_levels: int = 8

    def violations(self, dci: 'UplinkDci') -> List[str]:
        problems = []
        if dci.rb_len < 1:
            problems.append("rb_len must be positive")
        if dci.rb_start + dci.rb_len > self.total_rbs:
            problems.append(f"rb_start + rb_len exceeds {self.total_rbs}")
        if dci.rb_start < self.pucch_edge_rbs or dci.rb_start + dci.rb_len > self.total_rbs - self.pucch_edge_rbs:
            problems.append("granted range intersects the PUCCH region")
        if not 0 <= dci.mcs_index < self.mcs_levels:
            problems.append(f"mcs_index outside [0, {self.mcs_levels - 1}]")
        if dci.ndi not in (0, 1):
            problems.append("ndi must be a single bit")
        if not 0 <= dci.harq_id <= 7:
            problems.append("harq_id outside [0, 7]")
        return problems


DEFAULT_LAYOUT = DciLayout()


@dataclass(frozen=True)
class UplinkDci:
    rb_start: int
    rb_len: int
    mcs_index: int
    ndi: int
    harq_id: int

    @property
    def rbs(self) -> range:
        return range(self.rb_start, self.rb_start + self.rb_len)


@dataclass(frozen=True)
class EncodedDci:
    value: int
    length: int = ENCODED_BITS

    @property
    def bits(self) -> np.ndarray:
        return np.array([(self.value >> (self.length - 1 - i)) & 1 for i in range(self.length)], dtype=np.uint8)

    def to_hex(self) -> str:
        return f"{self.value:0{(self.length + 3) // 4}x}"

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> 'EncodedDci':
        bits = [int(b) & 1 for b in bits]
        value = 0
        for b in bits:
            value = (value << 1) | b
        return cls(value, len(bits))

    @classmethod
    def from_hex(cls, text: str, length: int = ENCODED_BITS) -> 'EncodedDci':
        return cls(int(text, 16), length)

    @property
    def payload(self) -> int:
        return self.value >> CRC_BITS

    @property
    def masked_crc(self) -> int:
        return self.value & 0xFFFF


def _crc_table() -> Tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _crc_table()


def crc16_ccitt_false(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout"""
    crc = 0xFFFF
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ byte]
    return crc


@lru_cache(maxsize=65536)
def _payload_crc(payload: int) -> int:
    return crc16_ccitt_false(payload.to_bytes(PAYLOAD_BITS // 8, 'big'))


def is_valid_rnti(rnti: int) -> bool:
    return RNTI_MIN <= rnti <= RNTI_MAX


@lru_cache(maxsize=8192)
def _sequence_word(rnti: int, length: int) -> int:
    # 16-bit Fibonacci LFSR, taps 16/14/13/11, output is the pre-shift LSB
    state = (rnti & 0xFFFF) or LFSR_ZERO_SEED
    word = 0
    for _ in range(length):
        word = (word << 1) | (state & 1)
        feedback = (state ^ (state >> 2) ^ (state >> 3) ^ (state >> 5)) & 1
        state = (state >> 1) | (feedback << 15)
    return word


def rnti_sequence(rnti: int, length: int) -> np.ndarray:
    """Scrambling bits derived from ``rnti`` (first output bit first)"""
    if length <= 0:
        raise DciError(f"sequence length must be positive, got {length}")
    word = _sequence_word(rnti, length)
    return np.array([(word >> (length - 1 - i)) & 1 for i in range(length)], dtype=np.uint8)


def pack_payload(dci: UplinkDci) -> int:
    value = 0
    for name, width in _FIELDS:
        field_value = getattr(dci, name)
        if field_value < 0 or field_value >= (1 << width):
            raise DciError(f"{name}={field_value} does not fit in {width} bits")
        value = (value << width) | field_value
    used = sum(width for _, width in _FIELDS)
    return value << (PAYLOAD_BITS - used)


def unpack_payload(payload: int) -> Tuple[UplinkDci, int]:
    """Split a payload into fields; also returns the padding bits"""
    used = sum(width for _, width in _FIELDS)
    pad_width = PAYLOAD_BITS - used
    padding = payload & ((1 << pad_width) - 1)
    value = payload >> pad_width
    fields = {}
    for name, width in reversed(_FIELDS):
        fields[name] = value & ((1 << width) - 1)
        value >>= width
    return UplinkDci(**fields), padding


def encode_dci(dci: UplinkDci, rnti: int, mode: ScramblingMode,
               layout: DciLayout = DEFAULT_LAYOUT) -> EncodedDci:
    problems = layout.violations(dci)
    if problems:
        raise DciError(f"invalid DCI {dci}: {'; '.join(problems)}")
    if not 0 <= rnti <= 0xFFFF:
        raise DciError(f"RNTI {rnti} is not a 16-bit value")
    return _encode(dci, rnti, mode)


@lru_cache(maxsize=16384)
def _encode(dci: UplinkDci, rnti: int, mode: ScramblingMode) -> EncodedDci:
    payload = pack_payload(dci)
    crc = _payload_crc(payload) ^ rnti
    if mode is ScramblingMode.FULL_SCRAMBLE:
        payload ^= _sequence_word(rnti, PAYLOAD_BITS)
    return EncodedDci((payload << CRC_BITS) | crc, ENCODED_BITS)


def _descramble(enc: EncodedDci, rnti: int, mode: ScramblingMode) -> int:
    if enc.length != ENCODED_BITS:
        raise DciError(f"encoded DCI has {enc.length} bits, expected {ENCODED_BITS}")
    payload = enc.payload
    if mode is ScramblingMode.FULL_SCRAMBLE:
        payload ^= _sequence_word(rnti, PAYLOAD_BITS)
    return payload


def crc_passes(enc: EncodedDci, rnti: int, mode: ScramblingMode) -> bool:
    """CRC check alone, before any field validation"""
    return _payload_crc(_descramble(enc, rnti, mode)) ^ rnti == enc.masked_crc


def decode_dci(enc: EncodedDci, rnti: int, mode: ScramblingMode,
               layout: DciLayout = DEFAULT_LAYOUT) -> Optional[UplinkDci]:
    """Inverse of ``encode_dci``; ``None`` on CRC mismatch or invalid fields"""
    if enc.length != ENCODED_BITS:
        raise DciError(f"encoded DCI has {enc.length} bits, expected {ENCODED_BITS}")
    return _decode(enc.value, rnti, mode, layout)


@lru_cache(maxsize=65536)
def _decode(value: int, rnti: int, mode: ScramblingMode, layout: DciLayout) -> Optional[UplinkDci]:
    payload = value >> CRC_BITS
    if mode is ScramblingMode.FULL_SCRAMBLE:
        payload ^= _sequence_word(rnti, PAYLOAD_BITS)
    if _payload_crc(payload) ^ rnti != value & 0xFFFF:
        return None
    dci, padding = unpack_payload(payload)
    if padding or layout.violations(dci):
        return None
    return dci


def blind_decode(enc_list: Sequence[EncodedDci], candidates: Sequence[int], mode: ScramblingMode,
                 layout: DciLayout = DEFAULT_LAYOUT) -> List[Tuple[int, UplinkDci]]:
    """Every ``(rnti, dci)`` for which a candidate decodes, in input order"""
    matches = []
    if not candidates:
        return matches
    for enc in enc_list:
        for rnti in candidates:
            dci = decode_dci(enc, rnti, mode, layout)
            if dci is not None:
                matches.append((rnti, dci))
    return matches


def unmask_rnti(enc: EncodedDci) -> int:
    """
    RNTI implied by an LTE-style CRC mask

    Exact for ``CRC_MASK_ONLY`` vectors: the mask is a plain XOR over a CRC
    of readable payload. Under ``FULL_SCRAMBLE`` the result is unrelated to
    the addressee.
    """
    return _payload_crc(enc.payload) ^ enc.masked_crc


def descrambled_payloads(enc: EncodedDci, candidates: Sequence[int]) -> List[int]:
    """Payload each candidate RNTI would see after descrambling"""
    return [enc.payload ^ _sequence_word(rnti, PAYLOAD_BITS) for rnti in candidates]
