"""
Deterministic event loop and sweep driver

One simpy process advances the subframe clock. Every subframe runs the same
fixed phases:

1. eNB schedules the grid for ``now + grant_delay``
2. DCIs and due RARs are broadcast to every UE and the jammer
3. UEs and the jammer transmit for the grid scheduled ``grant_delay`` earlier
4. the physical layer resolves every block and PUCCH report
5. the eNB processes preambles and uplink, HARQ feedback goes back to the UEs
6. state machines step (adaptation, hops, traffic, timers)
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import simpy

try:
    from src.enb import ENodeB
    from src.jammer import Jammer, JammerKind
    from src.metrics import EventSink, RunMetrics, ThroughputCounter, time_to_recovery
    from src.performance_optimizer import batch_process_items, monitor_performance
    from src.phy_grid import BlockOutcome, resolve_block
    from src.scenario import ScenarioConfig, SweepConfig, build_scenario
    from src.sib_auth import CellCandidate, OperatorKeyPair, SystemInfoBroadcast, cell_select, sign_si
    from src.ue import UeModel
    from src.utils import deep_merge, derive_seed
except ImportError:
    from enb import ENodeB
    from jammer import Jammer, JammerKind
    from metrics import EventSink, RunMetrics, ThroughputCounter, time_to_recovery
    from performance_optimizer import batch_process_items, monitor_performance
    from phy_grid import BlockOutcome, resolve_block
    from scenario import ScenarioConfig, SweepConfig, build_scenario
    from sib_auth import CellCandidate, OperatorKeyPair, SystemInfoBroadcast, cell_select, sign_si
    from ue import UeModel
    from utils import deep_merge, derive_seed

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ['gain_db', 'run', 'offered', 'received', 'dropped', 'retransmissions',
                 'rnti_changes', 'crashed', 'time_to_recovery_s']


def build_cell_gate(scenario: ScenarioConfig) -> Optional[Callable[[int], bool]]:
    """Cell-selection outcome for the scenario's broadcast cells, or ``None`` without SI"""
    si = scenario.system_info
    if si is None:
        return None
    operator = OperatorKeyPair.from_files(si.private_key, si.public_key)
    rogue = None
    replay_signature = None
    candidates = []
    for cell in si.cells:
        broadcast = SystemInfoBroadcast.from_text(cell.mib, cell.sibs)
        if cell.signer == 'operator':
            signature = sign_si(broadcast.mib, broadcast.sibs, operator)
            replay_signature = replay_signature or signature
        elif cell.signer == 'rogue':
            rogue = rogue or OperatorKeyPair.generate()
            signature = sign_si(broadcast.mib, broadcast.sibs, rogue)
        elif cell.signer == 'replay':
            signature = replay_signature
        else:
            signature = None
        candidates.append(CellCandidate(broadcast.with_signature(signature), name=cell.name))
    chosen = cell_select(candidates, operator, verify=si.verify)
    logger.debug(f"cell selection ({'verified' if si.verify else 'unverified'}): "
                 f"{chosen.name if chosen else 'no suitable cell'}")
    return lambda now: chosen is not None


class Simulation:
    """Owns every component of one run; state is never shared across runs"""

    def __init__(self, scenario: ScenarioConfig, seed: Optional[int] = None, record_emissions: bool = False):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        self.sink = EventSink()
        sched = scenario.scheduler
        self.duration = scenario.duration_subframes
        self.enb = ENodeB(sched, scenario.mcs_table, scenario.budget, scenario.mode,
                          np.random.default_rng(derive_seed(self.seed, 'enb')), self.sink,
                          scenario.total_rbs, scenario.edge_rbs)
        gate = build_cell_gate(scenario)
        self.ues = [
            UeModel(
                ue_id=index,
                profile=scenario.profile,
                traffic=scenario.traffic,
                table=scenario.mcs_table,
                rng=np.random.default_rng(derive_seed(self.seed, 'ue', index)),
                mode=scenario.mode,
                unjammed_sinr_db=scenario.budget.unjammed_sinr_db,
                grant_delay_subframes=sched.grant_delay_subframes,
                max_retx=scenario.max_retx,
                msg3_mcs_index=sched.msg3_mcs_index,
                layout=scenario.layout,
                sink=self.sink,
                cell_gate=gate,
                critical=scenario.critical,
                traffic_end=self.duration,
            )
            for index in range(scenario.ue_count)
        ]
        self.jammer = None
        if scenario.jammer is not None:
            self.jammer = Jammer(scenario.jammer, scenario.mode, sched.grant_delay_subframes,
                                 scenario.total_rbs, scenario.edge_rbs, scenario.layout, self.sink,
                                 record_emissions)
        measurement = scenario.measurement
        self.throughput = ThroughputCounter(self.duration, measurement.throughput_bin_ms)
        self.pucch_rbs = sorted(set(range(scenario.edge_rbs))
                                | set(range(scenario.total_rbs - scenario.edge_rbs, scenario.total_rbs)))
        self.audit_violations = 0
        self.rnti_changes = 0
        self._victim_rnti: Optional[int] = None
        self.now = 0
        self.env = simpy.Environment()

    @property
    def victim(self) -> UeModel:
        return self.ues[0]

    def _resolve(self, now: int, rnti: int, rbs, mcs_index: int, interference: Dict[int, float],
                 offset_db: float, channel: str) -> BlockOutcome:
        level = self.scenario.mcs_table[mcs_index]
        decoded, sinr, jammed = resolve_block(self.scenario.budget, rbs, level, interference, offset_db)
        return BlockOutcome(now, rnti, rbs, mcs_index, sinr, decoded, jammed, channel)

    def _audit(self, now: int, blocks) -> None:
        grid = self.enb.grid_for(now)
        if grid is None:
            if blocks:
                self.audit_violations += len(blocks)
            return
        if not grid.audit():
            self.audit_violations += 1
        for block in blocks:
            if not grid.owns(block.rnti, block.rbs):
                self.audit_violations += 1
        if self.jammer is not None and self.jammer.kind in (JammerKind.PUSCH_TARGETED, JammerKind.PRATTLE):
            for tracked in self.jammer.tracked.get(now, []):
                if not grid.owns(tracked.rnti, tracked.dci.rbs):
                    self.audit_violations += 1

    def subframe(self, now: int) -> None:
        # 1
        _, dcis = self.enb.schedule_subframe(now)
        rars = self.enb.rars_due(now)

        # 2
        for ue in self.ues:
            ue.observe_downlink(now, dcis, rars)
        if self.jammer is not None:
            if self.jammer.in_window(now) and self.victim.rnti is not None:
                self.jammer.resolve_target(now, self.victim.rnti)
            self.jammer.observe_downlink(now, dcis, rars)

        # 3
        bursts = [ue.transmit(now) for ue in self.ues]
        blocks = [block for burst in bursts for block in burst.blocks]
        self._audit(now, blocks)
        interference = self.jammer.emit_interference(now) if self.jammer is not None else {}

        # 4
        received = [(block, self._resolve(now, block.rnti, block.rbs, block.mcs_index, interference,
                                          block.tpc_offset_db, 'pusch'))
                    for block in blocks]
        pucch = [(burst.pucch, self._resolve(now, burst.pucch.rnti, self.pucch_rbs,
                                             self.scenario.pucch_mcs_index, interference,
                                             -self.scenario.pucch_power_offset_db, 'pucch'))
                 for burst in bursts if burst.pucch is not None]

        # 5
        for burst in bursts:
            if burst.preamble is not None:
                pre = burst.preamble
                self.enb.handle_rach(pre.subframe, pre.reestablish_rnti, pre.ue_id, pre.critical)
        feedback = self.enb.process_uplink(now, received, pucch)
        for ue in self.ues:
            delivered = ue.receive_feedback(now, [fb for fb in feedback if fb.ue_id == ue.ue_id])
            if delivered:
                self.throughput.add(now, delivered)

        # 6
        for reconfiguration in self.enb.step(now):
            self.ues[reconfiguration.ue_id].apply_reconfiguration(now, reconfiguration)
        for ue in self.ues:
            ue.step(now)
        rnti = self.victim.rnti
        if rnti is not None and rnti != self._victim_rnti:
            if self._victim_rnti is not None:
                self.rnti_changes += 1
            self._victim_rnti = rnti

    def _finished(self, now: int) -> bool:
        measurement = self.scenario.measurement
        drain_start = self.duration + round(measurement.recovery_grace_s * 1000)
        if now < drain_start:
            return False
        if now >= drain_start + round(measurement.report_timeout_s * 1000):
            return True
        return all(ue.idle_for_report for ue in self.ues)

    def _clock(self):
        while not self._finished(self.now):
            self.subframe(self.now)
            self.now += 1
            yield self.env.timeout(1)

    def run(self) -> RunMetrics:
        self.env.process(self._clock())
        self.env.run()
        return self.metrics()

    def metrics(self) -> RunMetrics:
        scenario = self.scenario
        measurement = scenario.measurement
        series = self.throughput.series()
        metrics = RunMetrics(
            packets_offered=sum(ue.offered for ue in self.ues),
            packets_received=sum(ue.delivered for ue in self.ues),
            packets_dropped=sum(ue.dropped for ue in self.ues),
            throughput_series=series,
            retransmissions=sum(ue.retransmissions for ue in self.ues),
            rrc_events=self.sink.rrc_events(),
            rnti_changes=self.rnti_changes,
            crashed=self.victim.crashed,
            residual_buffer=sum(len(ue.buffer) for ue in self.ues),
            in_flight=sum(ue.packets_in_flight for ue in self.ues),
            rlf_count=sum(ue.rlf_count for ue in self.ues),
            detections=self.sink.count('jamming_detected'),
            audit_violations=self.audit_violations,
            seed=self.seed,
            bin_ms=measurement.throughput_bin_ms,
        )
        if self.jammer is not None:
            metrics.exposure = self.jammer.exposure
            metrics.tracked_grants = self.jammer.tracked_total
            per_bin = scenario.ue_count * measurement.throughput_bin_ms / scenario.traffic.interval_subframes
            metrics.time_to_recovery_s = time_to_recovery(
                series, measurement.throughput_bin_ms, scenario.jammer.active_start_s,
                scenario.jammer.active_end_s, per_bin, measurement.recovery_level, measurement.recovery_hold_bins,
            )
        return metrics


def run_scenario(scenario: ScenarioConfig, seed: Optional[int] = None) -> RunMetrics:
    """Run one scenario; identical ``(scenario, seed)`` gives identical metrics"""
    simulation = Simulation(scenario, seed)
    metrics = simulation.run()
    logger.debug(f"{scenario.name} seed={simulation.seed}: received {metrics.packets_received}"
                 f"/{metrics.packets_offered}, {metrics.rlf_count} RLF")
    return metrics


@dataclass
class SweepTable:
    rows: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)

    def to_dataframe(self) -> pd.DataFrame:
        if not self.rows:
            return pd.DataFrame(columns=SWEEP_COLUMNS)
        frame = pd.DataFrame(self.rows)
        return frame[SWEEP_COLUMNS]

    def curve(self, metric: str = 'received', exclude_crashed: bool = True) -> pd.Series:
        return sweep_curve(self.to_dataframe(), metric, exclude_crashed)


def sweep_curve(frame: pd.DataFrame, metric: str = 'received', exclude_crashed: bool = True) -> pd.Series:
    """Mean of ``metric`` per gain, crashed runs left out (they model manual restarts)"""
    if exclude_crashed and 'crashed' in frame:
        kept = frame[~frame['crashed'].astype(bool)]
        if not kept.empty:
            frame = kept
    return frame.groupby('gain_db')[metric].mean().sort_index()


@dataclass(frozen=True)
class SweepCell:
    raw: Dict[str, Any]
    base_dir: str
    source: Optional[str]
    gain_db: float
    run: int
    seed: int

    def cache_description(self) -> Dict[str, Any]:
        return {'scenario': self.raw, 'gain_db': self.gain_db, 'run': self.run, 'seed': self.seed}


def run_cell(cell: SweepCell) -> Dict[str, Any]:
    """Summary row for one sweep cell (module-level so worker processes can pickle it)"""
    raw = deep_merge(cell.raw, {'jammer': {'gain_db': cell.gain_db}})
    scenario = build_scenario(raw, Path(cell.base_dir), Path(cell.source) if cell.source else None)
    metrics = run_scenario(scenario, cell.seed)
    row = metrics.summary_row(cell.gain_db, cell.run)
    row['audit_violations'] = metrics.audit_violations
    return row


def sweep_cells(sweep: SweepConfig) -> List[SweepCell]:
    scenario = sweep.scenario
    source = str(scenario.source) if scenario.source else None
    return [SweepCell(scenario.raw, str(scenario.base_dir), source, gain, run,
                      derive_seed(sweep.base_seed, gain, run))
            for gain, run in sweep.cells()]


@monitor_performance("sweep")
def run_sweep(sweep: SweepConfig, cache=None, show_progress: bool = False, batch_size: int = 20) -> SweepTable:
    """
    Run every (gain, run) cell of a sweep

    Cells are independent: each gets ``derive_seed(base_seed, gain, run)``,
    so the table does not depend on execution order or worker count. A cell
    that raises is logged and listed in ``failures``; the rest still run.
    """
    cells = sweep_cells(sweep)
    rows: Dict[Tuple[float, int], Dict[str, Any]] = {}
    pending = []
    for cell in cells:
        cached = cache.get(cell.cache_description()) if cache is not None else None
        if cached is not None:
            rows[(cell.gain_db, cell.run)] = cached
        else:
            pending.append(cell)

    table = SweepTable()
    logger.info(f"sweep {sweep.scenario.name}: {len(pending)} of {len(cells)} cells to run")
    for cell, row, error in batch_process_items(run_cell, pending, workers=sweep.workers, batch_size=batch_size,
                                                show_progress=show_progress):
        if error is not None:
            logger.error(f"sweep cell gain={cell.gain_db} run={cell.run} failed: {error}")
            table.failures.append({'gain_db': cell.gain_db, 'run': cell.run, 'error': str(error)})
            continue
        rows[(cell.gain_db, cell.run)] = row
        if cache is not None:
            cache.set(cell.cache_description(), row)

    table.rows = [rows[key] for key in sorted(rows)]
    return table
