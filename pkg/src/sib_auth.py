"""
Signed system information

The operator signs the MIB and the scheduled SIBs, framed as
``mib || len32(sib_1) || sib_1 || ... || len32(sib_n) || sib_n``, with
RSA PKCS#1 v1.5 over SHA-256 and broadcasts the signature in a dedicated
SIB. A UE applies the broadcast settings tentatively, verifies, and either
commits them or rolls back and treats the cell as malicious.
"""

import copy
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import padding, rsa

try:
    from src.utils import parse_key_values
except ImportError:
    from utils import parse_key_values

logger = logging.getLogger(__name__)

DEFAULT_MODULUS_BITS = 2048


class SignatureError(ValueError):
    """Raised when a key cannot be used with the signature scheme"""


class CellVerdict(str, Enum):
    VERIFIED = 'verified'
    MALICIOUS = 'malicious'


@dataclass(frozen=True)
class OperatorKeyPair:
    private_key: Optional[bytes]
    public_key: bytes
    modulus_bits: int = DEFAULT_MODULUS_BITS

    @classmethod
    def generate(cls, modulus_bits: int = DEFAULT_MODULUS_BITS) -> 'OperatorKeyPair':
        key = rsa.generate_private_key(public_exponent=65537, key_size=modulus_bits)
        private_pem = key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
                                        serialization.NoEncryption())
        return cls(private_pem, _public_pem(key.public_key()), modulus_bits)

    @classmethod
    def from_private_pem(cls, pem: bytes) -> 'OperatorKeyPair':
        key = load_private_key(pem)
        return cls(pem, _public_pem(key.public_key()), key.key_size)

    @classmethod
    def from_files(cls, private_path: Union[str, Path, None], public_path: Union[str, Path, None] = None
                   ) -> 'OperatorKeyPair':
        if private_path is not None:
            return cls.from_private_pem(Path(private_path).read_bytes())
        if public_path is None:
            raise SignatureError("need a private or a public key file")
        pem = Path(public_path).read_bytes()
        return cls(None, pem, load_public_key(pem).key_size)

    def signing_key(self) -> rsa.RSAPrivateKey:
        if self.private_key is None:
            raise SignatureError("key pair has no private half")
        return load_private_key(self.private_key)

    def verification_key(self) -> rsa.RSAPublicKey:
        return load_public_key(self.public_key)


def _public_pem(key: rsa.RSAPublicKey) -> bytes:
    return key.public_bytes(serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo)


def load_private_key(pem: bytes) -> rsa.RSAPrivateKey:
    try:
        key = serialization.load_pem_private_key(pem, password=None)
    except (ValueError, TypeError) as e:
        raise SignatureError(f"unreadable private key: {e}") from e
    if not isinstance(key, rsa.RSAPrivateKey):
        raise SignatureError("private key is not an RSA key")
    return key


def load_public_key(pem: bytes) -> rsa.RSAPublicKey:
    try:
        key = serialization.load_pem_public_key(pem)
    except (ValueError, TypeError) as e:
        raise SignatureError(f"unreadable public key: {e}") from e
    if not isinstance(key, rsa.RSAPublicKey):
        raise SignatureError("public key is not an RSA key")
    return key


def _as_private(key) -> rsa.RSAPrivateKey:
    if isinstance(key, OperatorKeyPair):
        return key.signing_key()
    if isinstance(key, rsa.RSAPrivateKey):
        return key
    if isinstance(key, (bytes, bytearray)):
        return load_private_key(bytes(key))
    raise SignatureError(f"unsupported private key type {type(key).__name__}")


def _as_public(key) -> rsa.RSAPublicKey:
    if isinstance(key, OperatorKeyPair):
        return key.verification_key()
    if isinstance(key, rsa.RSAPublicKey):
        return key
    if isinstance(key, rsa.RSAPrivateKey):
        return key.public_key()
    if isinstance(key, (bytes, bytearray)):
        return load_public_key(bytes(key))
    raise SignatureError(f"unsupported public key type {type(key).__name__}")


@dataclass(frozen=True)
class SystemInfoBroadcast:
    mib: bytes
    sibs: Tuple[bytes, ...]
    signature: Optional[bytes] = None

    @classmethod
    def from_text(cls, mib: str, sibs: Sequence[str], signature: Optional[bytes] = None) -> 'SystemInfoBroadcast':
        return cls(mib.encode('utf-8'), tuple(s.encode('utf-8') for s in sibs), signature)

    @classmethod
    def from_hex(cls, mib: str, sibs: Sequence[str], signature: Optional[str]) -> 'SystemInfoBroadcast':
        return cls(bytes.fromhex(mib), tuple(bytes.fromhex(s) for s in sibs),
                   bytes.fromhex(signature) if signature else None)

    def with_signature(self, signature: Optional[bytes]) -> 'SystemInfoBroadcast':
        return SystemInfoBroadcast(self.mib, self.sibs, signature)

    def settings(self) -> Dict[str, Any]:
        """Cell settings the SIB text announces (``SIBn key=value ...``)"""
        settings: Dict[str, Any] = {}
        for sib in self.sibs:
            try:
                text = sib.decode('utf-8')
            except UnicodeDecodeError:
                continue
            for key, value in parse_key_values(text).items():
                settings[key] = int(value) if value.lstrip('-').isdigit() else value
        return settings


def frame_si(mib: bytes, sibs: Sequence[bytes]) -> bytes:
    """Signed content: the MIB followed by each SIB with a 32-bit big-endian length"""
    parts = [bytes(mib)]
    for sib in sibs:
        parts.append(struct.pack('>I', len(sib)))
        parts.append(bytes(sib))
    return b''.join(parts)


def sign_si(mib: bytes, sibs: Sequence[bytes], private_key) -> bytes:
    key = _as_private(private_key)
    return key.sign(frame_si(mib, sibs), padding.PKCS1v15(), hashes.SHA256())


def verify_si(broadcast: SystemInfoBroadcast, public_key) -> CellVerdict:
    if not broadcast.signature:
        return CellVerdict.MALICIOUS
    key = _as_public(public_key)
    try:
        key.verify(broadcast.signature, frame_si(broadcast.mib, broadcast.sibs), padding.PKCS1v15(), hashes.SHA256())
    except InvalidSignature:
        return CellVerdict.MALICIOUS
    return CellVerdict.VERIFIED


class SystemInfoStore:
    """Committed cell settings plus an optional tentatively applied overlay"""

    def __init__(self, committed: Optional[Dict[str, Any]] = None):
        self.committed: Dict[str, Any] = dict(committed or {})
        self.tentative: Optional[Dict[str, Any]] = None

    @property
    def settings(self) -> Dict[str, Any]:
        if self.tentative is None:
            return dict(self.committed)
        merged = dict(self.committed)
        merged.update(self.tentative)
        return merged

    def apply_tentative(self, settings: Dict[str, Any]) -> None:
        self.tentative = copy.deepcopy(settings)

    def commit(self) -> None:
        if self.tentative is not None:
            self.committed.update(self.tentative)
        self.tentative = None

    def rollback(self) -> None:
        self.tentative = None


def verify_and_commit(broadcast: SystemInfoBroadcast, public_key, store: SystemInfoStore,
                      tentative_settings: Optional[Dict[str, Any]] = None) -> Tuple[CellVerdict, Dict[str, Any]]:
    store.apply_tentative(broadcast.settings() if tentative_settings is None else tentative_settings)
    verdict = verify_si(broadcast, public_key)
    if verdict is CellVerdict.VERIFIED:
        store.commit()
    else:
        store.rollback()
        logger.debug("system information failed verification, settings rolled back")
    return verdict, store.settings


@dataclass
class CellCandidate:
    broadcast: SystemInfoBroadcast
    settings: Dict[str, Any] = field(default_factory=dict)
    name: str = ''

    def claimed(self) -> Dict[str, Any]:
        return self.settings or self.broadcast.settings()

    @property
    def cell_id(self) -> int:
        return int(self.claimed().get('cell_id', 0))

    @property
    def signal_db(self) -> float:
        return float(self.claimed().get('signal_db', 0))

    @property
    def barred(self) -> bool:
        return int(self.claimed().get('cell_barred', 0)) == 1


def cell_select(candidates: Sequence[CellCandidate], public_key, verify: bool = True) -> Optional[CellCandidate]:
    """
    Pick the cell to camp on

    With verification only Verified cells are considered and only their
    barring flags count. Without it the UE camps on the strongest cell and a
    barred strongest cell leaves it with nothing.
    """
    ranked = sorted(candidates, key=lambda c: (-c.signal_db, c.cell_id))
    if not verify:
        if not ranked or ranked[0].barred:
            return None
        return ranked[0]
    verified = [c for c in ranked if verify_si(c.broadcast, public_key) is CellVerdict.VERIFIED]
    usable = [c for c in verified if not c.barred]
    return usable[0] if usable else None


def load_corpus(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    with open(path, 'r', encoding='utf-8') as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data.get('records'), list):
        raise ValueError(f"{path}: corpus has no 'records' list")
    return data


def verify_corpus(path: Union[str, Path], public_key=None) -> List[Dict[str, Any]]:
    """
    Verify every record of a corpus file

    Returns one dict per record with ``name``, ``expected``, ``verdict`` and
    ``ok``. The public key defaults to the file's ``public_key`` entry,
    resolved relative to the corpus.
    """
    path = Path(path)
    data = load_corpus(path)
    if public_key is None:
        key_file = data.get('public_key')
        if not key_file:
            raise SignatureError(f"{path}: no public_key given")
        public_key = load_public_key((path.parent / key_file).read_bytes())
    results = []
    for index, record in enumerate(data['records']):
        broadcast = SystemInfoBroadcast.from_hex(record['mib'], record.get('sibs') or [], record.get('signature'))
        verdict = verify_si(broadcast, public_key)
        expected = CellVerdict(str(record.get('expected', 'verified')).lower())
        results.append({
            'name': record.get('name', f'record-{index}'),
            'expected': expected.value,
            'verdict': verdict.value,
            'ok': verdict is expected,
        })
    return results
