"""
Configuration management for JamSim
Centralized application settings with environment-specific overrides
"""

import os
import logging
from pathlib import Path
from typing import Dict, Any, Optional

import orjson
from dotenv import load_dotenv

try:
    from src.utils import (add_validation_error, add_validation_info, add_validation_warning, new_validation_result,
                           safe_float_conversion)
except ImportError:
    from utils import (add_validation_error, add_validation_info, add_validation_warning, new_validation_result,
                       safe_float_conversion)


class Config:
    """
    Application settings for JamSim

    Holds application-level settings (directories, logging, sweep execution,
    caching). Scenario parameters live in the YAML files under ``scenarios/``
    and are handled by ``scenario.py``.
    """

    PERSISTED_SECTIONS = ('SIMULATION', 'SWEEP', 'CACHE')
    MEASUREMENT_KEYS = ('throughput_bin_ms', 'recovery_level', 'recovery_hold_bins', 'report_timeout_s')

    def __init__(self, env_file: Optional[str] = None):
        self.base_dir = Path(__file__).parent.parent
        load_dotenv(env_file or self.base_dir / '.env', override=False)
        self.load_configuration()

    def load_configuration(self):
        """Load configuration from environment and defaults"""

        # Application Settings
        self.APP_NAME = "JamSim"
        self.APP_VERSION = "1.0.0"
        self.APP_DESCRIPTION = "Deterministic LTE uplink jamming and mitigation simulator"

        # Directory Structure
        self.setup_directories()

        # Logging Configuration
        self.setup_logging()

        # Simulation Settings
        self.setup_simulation_config()

        # Sweep Execution Settings
        self.setup_sweep_config()

        # Result Cache Settings
        self.setup_cache_config()

    def setup_directories(self):
        """Setup directory structure"""
        self.DIRS = {
            'base': self.base_dir,
            'src': self.base_dir / 'src',
            'scenarios': Path(os.getenv('JAMSIM_SCENARIO_DIR', self.base_dir / 'scenarios')),
            'output': Path(os.getenv('JAMSIM_OUTPUT_DIR', self.base_dir / 'outputs')),
            'logs': Path(os.getenv('JAMSIM_LOG_DIR', self.base_dir / 'logs')),
            'cache': Path(os.getenv('JAMSIM_CACHE_DIR', self.base_dir / '.cache' / 'sweeps')),
            'tests': self.base_dir / 'tests',
        }

    def setup_logging(self):
        """Setup logging configuration"""
        self.LOGGING = {
            'level': os.getenv('LOG_LEVEL', 'INFO'),
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            'file_handler': {
                'enabled': os.getenv('JAMSIM_LOG_FILE', '0') == '1',
                'filename': self.DIRS['logs'] / 'jamsim.log',
                'max_bytes': 10 * 1024 * 1024,  # 10MB
                'backup_count': 5
            },
            'console_handler': {
                'enabled': True,
                'colored': os.getenv('JAMSIM_COLOR_LOGS', '1') == '1'
            }
        }

    def setup_simulation_config(self):
        """Setup simulation defaults shared by every scenario"""
        self.SIMULATION = {
            'default_scenario': 'baseline.yaml',
            'profiles_file': 'profiles.yaml',
            'throughput_bin_ms': 100,
            'recovery_level': 0.9,
            'recovery_hold_bins': 10,
            'report_timeout_s': 1.0,
        }

    def setup_sweep_config(self):
        """Setup sweep execution configuration"""
        self.SWEEP = {
            'workers': int(safe_float_conversion(os.getenv('JAMSIM_WORKERS'), 1)),
            'batch_size': int(safe_float_conversion(os.getenv('JAMSIM_BATCH_SIZE'), 20)),
            'show_progress': os.getenv('JAMSIM_PROGRESS', '1') == '1',
        }

    def setup_cache_config(self):
        """Setup sweep result cache configuration"""
        self.CACHE = {
            'enabled': os.getenv('JAMSIM_CACHE', '0') == '1',
            'size_limit_mb': int(safe_float_conversion(os.getenv('JAMSIM_CACHE_SIZE_MB'), 256)),
            'expire_s': None,
        }

    def get_scenario_path(self, name: str) -> Path:
        """Resolve a scenario name or path against the scenario directory"""
        path = Path(name)
        if path.exists():
            return path
        candidate = self.DIRS['scenarios'] / name
        if candidate.suffix == '':
            candidate = candidate.with_suffix('.yaml')
        return candidate

    def measurement_defaults(self) -> Dict[str, Any]:
        """Scenario ``measurement`` values used where a scenario file leaves them out"""
        return {key: self.SIMULATION[key] for key in self.MEASUREMENT_KEYS}

    def _section(self, name: str) -> Optional[Dict[str, Any]]:
        section = getattr(self, name.upper(), None)
        return section if isinstance(section, dict) else None

    def update_config(self, section: str, key: str, value: Any) -> bool:
        """Set one known key; unknown sections or keys are refused"""
        values = self._section(section)
        if values is None or key not in values:
            return False
        values[key] = value
        return True

    def get_config(self, section: str, key: str = None, default: Any = None) -> Any:
        """Whole section when ``key`` is None, else one value"""
        values = self._section(section)
        if values is None:
            return default
        return values if key is None else values.get(key, default)

    def save_config(self, filepath: str = None) -> bool:
        """Write the persisted sections as indented JSON"""
        target = Path(filepath) if filepath else self.DIRS['base'] / 'jamsim-settings.json'
        snapshot = {'version': self.APP_VERSION}
        snapshot.update({name: getattr(self, name) for name in self.PERSISTED_SECTIONS})
        try:
            target.write_bytes(orjson.dumps(snapshot, option=orjson.OPT_INDENT_2))
        except OSError as e:
            logging.error(f"Cannot write settings to {target}: {e}")
            return False
        return True

    def load_config_file(self, filepath: str) -> bool:
        """Merge persisted sections from a JSON file written by ``save_config``"""
        try:
            snapshot = orjson.loads(Path(filepath).read_bytes())
        except (OSError, orjson.JSONDecodeError) as e:
            logging.error(f"Cannot read settings from {filepath}: {e}")
            return False

        for name in self.PERSISTED_SECTIONS:
            if isinstance(snapshot.get(name), dict):
                getattr(self, name).update(snapshot[name])
        return True

    def validate_environment(self) -> Dict[str, Any]:
        """Check scenario files and sweep settings; fixes bad worker and batch counts"""
        validation = new_validation_result()

        if not self.DIRS['scenarios'].exists():
            add_validation_error(validation, 'JAMSIM_SCENARIO_DIR', f"Scenario directory missing: {self.DIRS['scenarios']}")
        elif not (self.DIRS['scenarios'] / self.SIMULATION['profiles_file']).exists():
            add_validation_error(validation, 'profiles_file', "UE profile file missing from scenario directory")

        if self.SWEEP['workers'] < 1:
            add_validation_warning(validation, 'JAMSIM_WORKERS', "below 1, sweeps will run sequentially")
            self.SWEEP['workers'] = 1
        if self.SWEEP['batch_size'] < 1:
            add_validation_warning(validation, 'JAMSIM_BATCH_SIZE', "below 1, using 20")
            self.SWEEP['batch_size'] = 20

        add_validation_info(validation, 'JAMSIM_WORKERS', f"sweeps run on {self.SWEEP['workers']} worker(s)")
        cache = f"enabled at {self.DIRS['cache']}" if self.CACHE['enabled'] else "off unless --cache-dir is given"
        add_validation_info(validation, 'JAMSIM_CACHE', f"sweep cache {cache}")
        add_validation_info(validation, 'JAMSIM_OUTPUT_DIR', f"sessions are written under {self.DIRS['output']}")
        return validation


# Global configuration instance
config = Config()
