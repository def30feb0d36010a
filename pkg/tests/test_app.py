"""
Tests for the command line entry points
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.app import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK, build_parser, main
from src.config import config
from src.harness import SWEEP_COLUMNS, SweepTable
from src.output_manager import OutputManager, export_csv

SCENARIOS = Path(__file__).parent.parent / 'scenarios'


def write_sweep(path: Path, received_at_high: int) -> Path:
    rows = []
    for gain, received in ((9.0, 60_000), (35.0, received_at_high)):
        rows.append({'gain_db': gain, 'run': 0, 'offered': 60_000, 'received': received,
                     'dropped': 60_000 - received, 'retransmissions': 0, 'rnti_changes': 0,
                     'crashed': False, 'time_to_recovery_s': None})
    return export_csv(SweepTable(rows), path)


class TestCommandLine:
    """Exit codes and outputs"""

    def test_parser_requires_command(self):
        args = build_parser().parse_args(['simulate', '--config', 'baseline', '--seed', '3'])
        assert args.command == 'simulate' and args.seed == 3

    def test_simulate_writes_row(self, tmp_path, capsys):
        out = tmp_path / 'run.csv'
        series = tmp_path / 'series.csv'
        config_file = tmp_path / 'short.yaml'
        config_file.write_text(f"extends: {SCENARIOS / 'baseline.yaml'}\nname: short\nduration_s: 1\n"
                               f"ue:\n  profiles_file: {SCENARIOS / 'profiles.yaml'}\n", encoding='utf-8')
        code = main(['simulate', '--config', str(config_file), '--out', str(out), '--series-out', str(series)])
        assert code == EXIT_OK
        lines = out.read_text(encoding='utf-8').splitlines()
        assert lines[0] == ','.join(SWEEP_COLUMNS)
        assert lines[1].startswith('0.0,0,1000,1000,0,')
        assert len(series.read_text(encoding='utf-8').splitlines()) >= 11
        assert 'received=1000' in capsys.readouterr().out

    def test_bad_config_exits_1(self, tmp_path):
        bad = tmp_path / 'bad.yaml'
        bad.write_text(f"extends: {SCENARIOS / 'baseline.yaml'}\nscheduler:\n  bogus: 1\n", encoding='utf-8')
        assert main(['simulate', '--config', str(bad)]) == EXIT_CONFIG
        assert main(['simulate', '--config', str(tmp_path / 'missing.yaml')]) == EXIT_CONFIG

    def test_verify_si(self, capsys):
        assert main(['verify-si', '--corpus', str(SCENARIOS / 'sib-auth-corpus.yaml')]) == EXIT_OK
        assert 'genuine: verified (expected verified) ok' in capsys.readouterr().out

    def test_compare_pass_and_fail(self, tmp_path):
        mitigated = write_sweep(tmp_path / 'mitigated.csv', 59_000)
        plain = write_sweep(tmp_path / 'plain.csv', 20_000)
        assert main(['compare', '--a', str(mitigated), '--b', str(plain), '--check', 'mitigation']) == EXIT_OK
        assert main(['compare', '--a', str(plain), '--b', str(plain), '--check', 'mitigation']) == EXIT_CHECK_FAILED
        assert main(['compare', '--a', str(plain), '--b', str(plain), '--check', 'identical']) == EXIT_OK

    def test_compare_missing_file(self, tmp_path):
        code = main(['compare', '--a', str(tmp_path / 'nope.csv'), '--b', str(tmp_path / 'nope.csv'),
                     '--check', 'identical'])
        assert code == EXIT_CONFIG


class TestOutputSessions:
    """Archived runs and settings-driven defaults"""

    def setup_method(self):
        self.profiles = SCENARIOS / 'profiles.yaml'

    def short_config(self, tmp_path: Path, parent: str, extra: str = '') -> Path:
        path = tmp_path / f'{parent}-short.yaml'
        path.write_text(f"extends: {SCENARIOS / parent}.yaml\nname: short\nduration_s: 1\n{extra}"
                        f"ue:\n  profiles_file: {self.profiles}\n", encoding='utf-8')
        return path

    def test_simulate_archives_a_session(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setitem(config.DIRS, 'output', tmp_path / 'outputs')
        assert main(['simulate', '--config', str(self.short_config(tmp_path, 'baseline')), '--session']) == EXIT_OK
        sessions = OutputManager(tmp_path / 'outputs').list_sessions()
        assert len(sessions) == 1
        assert sessions[0]['command'] == 'simulate' and sessions[0]['files'] == ['run.csv', 'series.csv']
        assert (Path(sessions[0]['path']) / 'metrics.json').exists()
        capsys.readouterr()
        assert main(['sessions']) == EXIT_OK
        assert sessions[0]['session_id'] in capsys.readouterr().out

    def test_simulate_falls_back_to_default_scenario(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setitem(config.SIMULATION, 'default_scenario', str(self.short_config(tmp_path, 'baseline')))
        assert main(['simulate']) == EXIT_OK
        assert 'received=1000' in capsys.readouterr().out

    def test_sweep_uses_enabled_cache_and_session(self, tmp_path, monkeypatch):
        monkeypatch.setitem(config.DIRS, 'output', tmp_path / 'outputs')
        monkeypatch.setitem(config.DIRS, 'cache', tmp_path / 'cache')
        monkeypatch.setitem(config.CACHE, 'enabled', True)
        monkeypatch.setitem(config.SWEEP, 'show_progress', False)
        window = "jammer:\n  active_start_s: 0.25\n  active_end_s: 0.75\n"
        scenario = self.short_config(tmp_path, 'pusch-targeted', window)
        out = tmp_path / 'sweep.csv'
        args = ['sweep', '--config', str(scenario), '--out', str(out), '--gains', '9,35', '--runs', '1',
                '--workers', '1', '--session']
        assert main(args) == EXIT_OK
        assert (tmp_path / 'cache').exists()
        assert len(out.read_text(encoding='utf-8').splitlines()) == 3
        session = OutputManager(tmp_path / 'outputs').list_sessions()[0]
        assert session['files'] == ['sweep.csv'] and session['failures'] == []
        assert session['performance']['operations'] >= 1
