"""
Output Manager for JamSim
CSV export of sweep tables and throughput series, plus date-based run sessions with serial numbering
"""

import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import orjson
import pandas as pd

try:
    from src.harness import SWEEP_COLUMNS, SweepTable
    from src.metrics import RunMetrics
except ImportError:
    from harness import SWEEP_COLUMNS, SweepTable
    from metrics import RunMetrics

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ['bin_start_s', 'received_in_bin']


def sweep_frame(table: Union[SweepTable, pd.DataFrame]) -> pd.DataFrame:
    frame = table.to_dataframe() if isinstance(table, SweepTable) else table
    if frame.empty:
        return pd.DataFrame(columns=SWEEP_COLUMNS)
    frame = frame[SWEEP_COLUMNS].sort_values(['gain_db', 'run'], kind='mergesort')
    return frame.astype({'run': int, 'offered': int, 'received': int, 'dropped': int,
                         'retransmissions': int, 'rnti_changes': int, 'crashed': bool})


def series_frame(metrics: RunMetrics) -> pd.DataFrame:
    bin_s = metrics.bin_ms / 1000
    return pd.DataFrame({
        'bin_start_s': [round(i * bin_s, 6) for i in range(len(metrics.throughput_series))],
        'received_in_bin': metrics.throughput_series,
    }, columns=SERIES_COLUMNS)


def export_csv(data: Union[SweepTable, pd.DataFrame, RunMetrics], path: Union[str, Path]) -> Path:
    """
    Write a sweep table or a run's throughput series as UTF-8 CSV with LF endings

    Rows are ordered by ``(gain_db, run)`` for tables and by bin for series.
    A missing time-to-recovery is an empty field; an empty table still gets
    its header.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = series_frame(data) if isinstance(data, RunMetrics) else sweep_frame(data)
    try:
        with open(path, 'w', encoding='utf-8', newline='') as f:
            frame.to_csv(f, index=False, lineterminator='\n', na_rep='')
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    logger.info(f"Saved CSV: {path} ({len(frame)} rows)")
    return path


def read_sweep_csv(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path)
    missing = [c for c in SWEEP_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: not a sweep table, missing columns {missing}")
    frame['crashed'] = frame['crashed'].astype(str).str.lower().isin(['true', '1'])
    return frame


class OutputManager:
    """
    Organizes run outputs as ``<base>/<YYYY-MM-DD>/serial_NNN/`` with a
    ``session_metadata.json`` next to the CSVs.
    """

    def __init__(self, base_output_dir: Union[str, Path] = "outputs"):
        self.base_dir = Path(base_output_dir)
        self.base_dir.mkdir(parents=True, exist_ok=True)
        logger.debug(f"OutputManager initialized with base directory: {self.base_dir}")

    def get_date_folder(self, date: Optional[datetime] = None) -> Path:
        folder = self.base_dir / (date or datetime.now()).strftime("%Y-%m-%d")
        folder.mkdir(exist_ok=True)
        return folder

    def get_next_serial_number(self, date_folder: Path) -> int:
        """Get next available serial number for the date folder"""
        existing = []
        for item in date_folder.iterdir() if date_folder.exists() else []:
            if item.is_dir() and item.name.startswith("serial_"):
                try:
                    existing.append(int(item.name.split("_")[1]))
                except (IndexError, ValueError):
                    continue
        return max(existing, default=0) + 1

    def create_output_session(self, scenario_name: str, command: str, seed: Optional[int] = None) -> Path:
        current_time = datetime.now()
        date_folder = self.get_date_folder(current_time)
        serial_number = self.get_next_serial_number(date_folder)
        session_dir = date_folder / f"serial_{serial_number:03d}"
        session_dir.mkdir()

        metadata = {
            'session_id': f"{current_time.strftime('%Y%m%d')}_{serial_number:03d}",
            'created_at': current_time.isoformat(),
            'scenario': scenario_name,
            'command': command,
            'seed': seed,
            'files': [],
        }
        self._write_metadata(session_dir, metadata)
        logger.info(f"Created output session: {metadata['session_id']} ({scenario_name})")
        return session_dir

    def save_csv(self, session_dir: Path, name: str, data) -> Path:
        path = export_csv(data, session_dir / f"{self._sanitize_filename(name)}.csv")
        metadata = self.load_metadata(session_dir)
        metadata['files'].append(path.name)
        self._write_metadata(session_dir, metadata)
        return path

    def save_metrics(self, session_dir: Path, name: str, metrics: RunMetrics) -> Path:
        path = session_dir / f"{self._sanitize_filename(name)}.json"
        path.write_bytes(orjson.dumps(metrics.to_dict(), option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY))
        return path

    def annotate(self, session_dir: Path, **fields: Any) -> Dict[str, Any]:
        """Merge extra fields into the session metadata"""
        metadata = self.load_metadata(session_dir)
        metadata.update(fields)
        self._write_metadata(session_dir, metadata)
        return metadata

    def load_metadata(self, session_dir: Path) -> Dict[str, Any]:
        try:
            return orjson.loads((session_dir / "session_metadata.json").read_bytes())
        except (OSError, orjson.JSONDecodeError) as e:
            logger.warning(f"Could not load session metadata: {e}")
            return {'files': []}

    def _write_metadata(self, session_dir: Path, metadata: Dict[str, Any]) -> None:
        (session_dir / "session_metadata.json").write_bytes(orjson.dumps(metadata, option=orjson.OPT_INDENT_2))

    def list_sessions(self) -> List[Dict[str, Any]]:
        """Newest first"""
        sessions = []
        for metadata_file in self.base_dir.glob("*/serial_*/session_metadata.json"):
            info = self.load_metadata(metadata_file.parent)
            info['path'] = str(metadata_file.parent)
            sessions.append(info)
        sessions.sort(key=lambda s: s.get('session_id', ''), reverse=True)
        return sessions

    def _sanitize_filename(self, filename: str) -> str:
        for char in '<>:"/\\|?* ':
            filename = filename.replace(char, '_')
        while '__' in filename:
            filename = filename.replace('__', '_')
        return filename.strip('_') or 'output'
