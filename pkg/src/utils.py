"""
Shared utilities for JamSim
Logging bootstrap, validation-result helpers, seed derivation and config merging
"""

import copy
import hashlib
import logging
import math
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, List, Optional

import coloredlogs

logger = logging.getLogger(__name__)

SEED_MASK = (1 << 64) - 1


def setup_logging(logging_config: Dict[str, Any], level: Optional[str] = None) -> None:
    """
    Install console (coloredlogs) and optional rotating file handlers

    Args:
        logging_config: the ``LOGGING`` section of ``Config``
        level: overrides ``logging_config['level']`` when given
    """
    level = (level or logging_config.get('level', 'INFO')).upper()
    fmt = logging_config.get('format')
    console = logging_config.get('console_handler', {})

    if console.get('enabled', True):
        if console.get('colored', True):
            coloredlogs.install(level=level, fmt=fmt)
        else:
            logging.basicConfig(level=level, format=fmt)

    file_cfg = logging_config.get('file_handler', {})
    if file_cfg.get('enabled'):
        log_path = Path(file_cfg['filename'])
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handler = RotatingFileHandler(
            log_path,
            maxBytes=file_cfg.get('max_bytes', 10 * 1024 * 1024),
            backupCount=file_cfg.get('backup_count', 5),
            encoding='utf-8',
        )
        handler.setFormatter(logging.Formatter(fmt))
        logging.getLogger().addHandler(handler)

    logging.getLogger().setLevel(level)


def new_validation_result() -> Dict[str, Any]:
    """Empty validation result in the shape every validator returns"""
    return {'valid': True, 'errors': [], 'warnings': [], 'info': []}


def add_validation_error(result: Dict[str, Any], field: str, message: str) -> None:
    result['valid'] = False
    result['errors'].append({'field': field, 'message': message})


def add_validation_warning(result: Dict[str, Any], field: str, message: str) -> None:
    result['warnings'].append({'field': field, 'message': message})


def add_validation_info(result: Dict[str, Any], field: str, message: str) -> None:
    result['info'].append({'field': field, 'message': message})


def derive_seed(base_seed: int, *parts: Any) -> int:
    """
    Derive an independent 64-bit seed for one sweep cell

    The result is ``base_seed XOR blake2b(parts)`` so it does not depend on
    execution order, worker count or the interpreter's hash randomisation.
    """
    material = '|'.join(repr(p) for p in parts).encode('utf-8')
    digest = hashlib.blake2b(material, digest_size=8).digest()
    return (int(base_seed) ^ int.from_bytes(digest, 'big')) & SEED_MASK


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge two mappings; values from ``override`` win"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def safe_float_conversion(value: Any, default: float = 0.0) -> float:
    """Convert to a finite float, falling back to ``default``"""
    if value is None or value == '':
        return default
    try:
        result = float(value)
    except (TypeError, ValueError):
        return default
    return result if math.isfinite(result) else default


def parse_key_values(text: str) -> Dict[str, str]:
    """Parse ``name key=value key=value`` text into a dict (name dropped)"""
    pairs = {}
    for token in text.split()[1:]:
        if '=' in token:
            key, value = token.split('=', 1)
            pairs[key] = value
    return pairs


def gains_range(start: float, stop: float, step: float) -> List[float]:
    """Inclusive float range used for gain sweeps"""
    if step <= 0:
        raise ValueError("step must be positive")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 6) for i in range(max(count, 0))]
