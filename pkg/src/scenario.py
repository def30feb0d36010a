"""
Scenario and sweep configuration

Scenario files are YAML. A file may name a parent with ``extends:``; the
parent is loaded first and the child is deep-merged over it. UE profiles are
looked up by name in ``profiles.yaml`` next to the scenario.
"""

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import yaml

try:
    from src.config import config
    from src.dci_codec import DciLayout, ScramblingMode
    from src.enb import RntiPolicy, SchedulerConfig
    from src.jammer import JammerConfig, JammerKind
    from src.phy_grid import GridError, LinkBudget, McsTable
    from src.ue import TrafficConfig, UeProfile
    from src.utils import deep_merge, gains_range
except ImportError:
    from config import config
    from dci_codec import DciLayout, ScramblingMode
    from enb import RntiPolicy, SchedulerConfig
    from jammer import JammerConfig, JammerKind
    from phy_grid import GridError, LinkBudget, McsTable
    from ue import TrafficConfig, UeProfile
    from utils import deep_merge, gains_range

logger = logging.getLogger(__name__)

MAX_EXTENDS_DEPTH = 8


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` names the offending entry"""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


@dataclass
class SiCellConfig:
    name: str
    mib: str
    sibs: List[str]
    signer: str = 'operator'


@dataclass
class SystemInfoConfig:
    verify: bool = True
    private_key: Optional[Path] = None
    public_key: Optional[Path] = None
    cells: List[SiCellConfig] = field(default_factory=list)


@dataclass
class MeasurementConfig:
    recovery_grace_s: float = 0.0
    report_timeout_s: float = 1.0
    throughput_bin_ms: int = 100
    recovery_level: float = 0.9
    recovery_hold_bins: int = 10


@dataclass
class ScenarioConfig:
    name: str
    duration_s: float
    seed: int
    mode: ScramblingMode
    total_rbs: int
    edge_rbs: int
    budget: LinkBudget
    mcs_table: McsTable
    scheduler: SchedulerConfig
    profile: UeProfile
    traffic: TrafficConfig
    pucch_power_offset_db: float = 3.0
    pucch_mcs_index: int = 0
    ue_count: int = 1
    critical: bool = False
    max_retx: int = 4
    jammer: Optional[JammerConfig] = None
    system_info: Optional[SystemInfoConfig] = None
    measurement: MeasurementConfig = field(default_factory=MeasurementConfig)
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)
    source: Optional[Path] = None

    @property
    def duration_subframes(self) -> int:
        return round(self.duration_s * 1000)

    @property
    def layout(self) -> DciLayout:
        return DciLayout(self.total_rbs, self.edge_rbs, len(self.mcs_table))

    @property
    def base_dir(self) -> Path:
        return self.source.parent if self.source is not None else config.DIRS['scenarios']


@dataclass
class SweepConfig:
    scenario: ScenarioConfig
    gains_db: List[float]
    runs_per_gain: int = 20
    base_seed: int = 1
    workers: int = 1

    def cells(self) -> List[tuple]:
        return [(gain, run) for gain in self.gains_db for run in range(self.runs_per_gain)]


def _read_yaml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError('scenario', f"file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError('scenario', f"{path} is not valid YAML: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError('scenario', f"{path} must contain a mapping")
    return data


def load_raw(path: Union[str, Path], _depth: int = 0) -> Dict[str, Any]:
    """Read a scenario file with its ``extends`` chain merged in"""
    path = Path(path)
    if _depth > MAX_EXTENDS_DEPTH:
        raise ConfigError('extends', f"chain deeper than {MAX_EXTENDS_DEPTH} (cycle?) at {path}")
    data = _read_yaml(path)
    parent = data.pop('extends', None)
    if parent:
        base = load_raw(path.parent / parent, _depth + 1)
        data = deep_merge(base, data)
    return data


def load_profiles(path: Union[str, Path]) -> Dict[str, Dict[str, Any]]:
    data = _read_yaml(Path(path))
    profiles = data.get('profiles')
    if not isinstance(profiles, dict) or not profiles:
        raise ConfigError('profiles', f"{path} defines no profiles")
    return profiles


def _build(cls, values: Optional[Dict[str, Any]], prefix: str, **extra):
    values = dict(values or {})
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{prefix}.{key}", "unknown setting")
    values.update(extra)
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(prefix, str(e))


def _check(problems, prefix: str) -> None:
    if problems:
        name, message = problems[0]
        raise ConfigError(f"{prefix}.{name}", message)


def _profile(ue: Dict[str, Any], base_dir: Path) -> UeProfile:
    selected = ue.get('profile', 'modem-b')
    if isinstance(selected, dict):
        values = dict(selected)
    else:
        profiles_file = base_dir / ue.get('profiles_file', config.SIMULATION['profiles_file'])
        profiles = load_profiles(profiles_file)
        if selected not in profiles:
            raise ConfigError('ue.profile', f"unknown profile '{selected}' (known: {', '.join(sorted(profiles))})")
        values = dict(profiles[selected] or {})
        values.setdefault('name', selected)
    values.update(ue.get('profile_overrides') or {})
    profile = _build(UeProfile, values, 'ue.profile')
    _check(profile.violations(), 'ue.profile')
    return profile


def _jammer(data: Optional[Dict[str, Any]], duration_s: float) -> Optional[JammerConfig]:
    if not data:
        return None
    values = dict(data)
    if 'kind' not in values:
        raise ConfigError('jammer.kind', "missing")
    try:
        values['kind'] = JammerKind.parse(values['kind'])
    except ValueError:
        raise ConfigError('jammer.kind', f"unknown jammer kind '{data['kind']}'")
    if 'gain_db' not in values:
        raise ConfigError('jammer.gain_db', "missing")
    target = values.get('target_rnti')
    if isinstance(target, str) and target.lower().startswith('0x'):
        values['target_rnti'] = int(target, 16)
    jammer = _build(JammerConfig, values, 'jammer')
    _check(jammer.violations(duration_s), 'jammer')
    return jammer


def _system_info(data: Optional[Dict[str, Any]], base_dir: Path) -> Optional[SystemInfoConfig]:
    if not data:
        return None
    cells = []
    for index, cell in enumerate(data.get('cells') or []):
        if 'mib' not in cell or 'sibs' not in cell:
            raise ConfigError(f"system_info.cells[{index}]", "needs 'mib' and 'sibs'")
        signer = cell.get('signer', 'operator')
        if signer not in ('operator', 'rogue', 'none', 'replay'):
            raise ConfigError(f"system_info.cells[{index}].signer", f"unknown signer '{signer}'")
        cells.append(SiCellConfig(cell.get('name', f'cell-{index}'), cell['mib'], list(cell['sibs']), signer))
    if not cells:
        raise ConfigError('system_info.cells', "at least one cell is required")
    resolve = (lambda p: base_dir / p if p else None)
    return SystemInfoConfig(bool(data.get('verify', True)), resolve(data.get('private_key')),
                            resolve(data.get('public_key')), cells)


def build_scenario(raw: Dict[str, Any], base_dir: Optional[Path] = None, source: Optional[Path] = None
                   ) -> ScenarioConfig:
    """Validate a merged scenario mapping and turn it into a ``ScenarioConfig``"""
    base_dir = Path(base_dir or config.DIRS['scenarios'])
    duration_s = float(raw.get('duration_s', 60))
    if duration_s <= 0:
        raise ConfigError('duration_s', "must be positive")

    try:
        mode = ScramblingMode.parse(raw.get('scrambling_mode', 'crc_mask_only'))
    except ValueError:
        raise ConfigError('scrambling_mode', f"unknown mode '{raw.get('scrambling_mode')}'")

    grid = raw.get('grid') or {}
    total_rbs = int(grid.get('total_rbs', 100))
    edge_rbs = int(grid.get('pucch_edge_rbs', 2))
    if total_rbs <= 0 or edge_rbs <= 0 or 2 * edge_rbs >= total_rbs:
        raise ConfigError('grid.pucch_edge_rbs', "PUCCH edges must leave a non-empty interior")

    budget = _build(LinkBudget, raw.get('link_budget'), 'link_budget')
    table_cfg = raw.get('mcs_table') or {}
    try:
        table = McsTable.from_config(table_cfg['thresholds_db'], table_cfg['bits_per_rb'])
    except KeyError as e:
        raise ConfigError(f"mcs_table.{e.args[0]}", "missing")
    except GridError as e:
        raise ConfigError('mcs_table', str(e))

    sched_values = dict(raw.get('scheduler') or {})
    try:
        policy = RntiPolicy.parse(sched_values.pop('rnti_policy', 'reuse_on_reestablish'))
    except ValueError:
        raise ConfigError('scheduler.rnti_policy', f"unknown policy '{raw['scheduler']['rnti_policy']}'")
    scheduler = _build(SchedulerConfig, sched_values, 'scheduler', rnti_policy=policy)
    _check(scheduler.violations(), 'scheduler')
    if scheduler.initial_mcs_index is not None and not 0 <= scheduler.initial_mcs_index < len(table):
        raise ConfigError('scheduler.initial_mcs_index', "outside the MCS table")

    ue = raw.get('ue') or {}
    profile = _profile(ue, base_dir)
    traffic = _build(TrafficConfig, ue.get('traffic'), 'ue.traffic')
    _check(traffic.violations(), 'ue.traffic')
    ue_count = int(ue.get('count', 1))
    if ue_count < 1:
        raise ConfigError('ue.count', "must be >= 1")

    pucch = raw.get('pucch') or {}
    measurement_values = config.measurement_defaults()
    measurement_values.update(raw.get('measurement') or {})
    measurement = _build(MeasurementConfig, measurement_values, 'measurement')

    return ScenarioConfig(
        name=str(raw.get('name', source.stem if source else 'scenario')),
        duration_s=duration_s,
        seed=int(raw.get('seed', 1)),
        mode=mode,
        total_rbs=total_rbs,
        edge_rbs=edge_rbs,
        budget=budget,
        mcs_table=table,
        scheduler=scheduler,
        profile=profile,
        traffic=traffic,
        pucch_power_offset_db=float(pucch.get('power_offset_db', 3.0)),
        pucch_mcs_index=int(pucch.get('mcs_index', 0)),
        ue_count=ue_count,
        critical=bool(ue.get('critical', False)),
        max_retx=int(ue.get('max_retx', scheduler.max_retx)),
        jammer=_jammer(raw.get('jammer'), duration_s),
        system_info=_system_info(raw.get('system_info'), base_dir),
        measurement=measurement,
        raw=raw,
        source=source,
    )


def load_scenario(path: Union[str, Path], overrides: Optional[Dict[str, Any]] = None) -> ScenarioConfig:
    """Load, merge and validate a scenario file; raises ``ConfigError``"""
    path = config.get_scenario_path(str(path))
    raw = load_raw(path)
    if raw.get('kind') == 'sib_auth_corpus':
        raise ConfigError('kind', f"{path.name} is a system-information corpus, not a scenario")
    if overrides:
        raw = deep_merge(raw, overrides)
    return build_scenario(raw, path.parent, path)


def sweep_from_scenario(scenario: ScenarioConfig, gains_db: Optional[Sequence[float]] = None,
                        runs_per_gain: Optional[int] = None, workers: Optional[int] = None) -> SweepConfig:
    """Sweep settings from the scenario's ``sweep`` block, arguments taking precedence"""
    block = scenario.raw.get('sweep') or {}
    if gains_db is None:
        gains = block.get('gains_db', {'start': 1, 'stop': 35, 'step': 2})
        gains_db = gains_range(gains['start'], gains['stop'], gains['step']) if isinstance(gains, dict) else gains
    if scenario.jammer is None:
        raise ConfigError('jammer', "a sweep needs a jammer to vary")
    runs = int(runs_per_gain if runs_per_gain is not None else block.get('runs_per_gain', 20))
    if runs < 1:
        raise ConfigError('sweep.runs_per_gain', "must be >= 1")
    return SweepConfig(
        scenario=scenario,
        gains_db=[float(g) for g in gains_db],
        runs_per_gain=runs,
        base_seed=int(block.get('seed', scenario.seed)),
        workers=int(workers if workers is not None else config.SWEEP['workers']),
    )
