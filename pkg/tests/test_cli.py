"""End-to-end runs of the logiguide command line."""

import json

import pytest
import yaml

from conftest import MODELS
from logiguide import main


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


class TestCompile:

    def test_compiles_and_certifies(self, capsys):
        assert main(['compile', '-q', 'color.red & shape.circle']) == 0
        out = capsys.readouterr().out
        assert 'circuit: (andCI color.red shape.circle)' in out
        assert 'worlds: 1/9' in out
        assert 'equivalent: true' in out
        assert 'valid: true' in out

    def test_degenerate_query(self, capsys):
        assert main(['compile', '-q', 'color.red | ~color.red']) == 0
        assert 'degenerate' in capsys.readouterr().out

    def test_direct_mapping_reports_violations(self, capsys):
        assert main(['compile', '--direct', '-q', 'color.red |CI color.green']) == 1
        out = capsys.readouterr().out
        assert 'valid: false' in out
        assert 'Violations' in out

    def test_save_then_eval_circuit_file(self, workdir, capsys):
        assert main(['compile', '-q', 'color.blue | shape.square', '--save', 'c.sexp']) == 0
        assert (workdir / 'c.sexp').read_text().startswith('(orME')
        capsys.readouterr()
        assert main(['eval', '--circuit', 'c.sexp', '--n-probes', '2']) == 0
        assert len(json.loads(capsys.readouterr().out)['probes']) == 2

    def test_syntax_error_line(self, capsys):
        assert main(['compile', '-q', 'color.red &']) == 1
        lines = capsys.readouterr().err.splitlines()
        assert any(line.startswith('error code=syntax offset=11 ') for line in lines)

    def test_unknown_atom_line(self, capsys):
        assert main(['compile', '-q', 'color.mauve']) == 1
        assert 'error code=unknown_atom' in capsys.readouterr().err

    def test_unsatisfiable(self, capsys):
        assert main(['compile', '-q', 'color.red & color.green']) == 1
        assert 'error code=unsatisfiable' in capsys.readouterr().err


class TestEval:

    def test_gmm_probes_match_oracle(self, capsys):
        assert main(['eval', '-q', 'color.red | shape.square', '--t', '0.4', '--n-probes', '3',
                     '--exact-mode']) == 0
        report = json.loads(capsys.readouterr().out)
        assert report['testbed'] == 'gmm' and report['exact_mode'] is True
        for probe in report['probes']:
            assert probe['posterior'] == pytest.approx(probe['oracle_posterior'], rel=1e-9)
            assert probe['score'] == pytest.approx(probe['oracle_score'], abs=1e-8)
            assert set(probe['coefficients']) <= {'color.red', 'shape.square', 'shape.circle',
                                                  'shape.triangle', 'color.green', 'color.blue'}

    def test_explicit_state(self, capsys):
        assert main(['eval', '-q', 'shape.circle', '--x', '0,0,0,0']) == 0
        probe = json.loads(capsys.readouterr().out)['probes'][0]
        assert probe['x'] == [0.0, 0.0, 0.0, 0.0]

    def test_discrete_state(self, capsys):
        assert main(['eval', '-q', 'color.green & ~shape.circle', '--testbed', 'discrete',
                     '--step', '2', '--state', '3']) == 0
        probe = json.loads(capsys.readouterr().out)['probes'][0]
        assert (probe['step'], probe['state'], probe['world']) == (2, 3, 'green/circle')
        assert probe['row'] == pytest.approx(probe['oracle_row'], abs=1e-9)

    def test_step_zero_rejected(self, capsys):
        assert main(['eval', '-q', 'color.red', '--testbed', 'discrete', '--step', '0',
                     '--state', '0']) == 1
        assert 'error code=invalid_value' in capsys.readouterr().err

    def test_needs_a_query(self, capsys):
        assert main(['eval']) == 1
        assert 'error code=invalid_value' in capsys.readouterr().err

    def test_query_and_circuit_conflict(self, capsys):
        assert main(['eval', '-q', 'color.red', '--circuit', 'color.red']) == 1
        assert 'error code=invalid_value' in capsys.readouterr().err


class TestVerify:

    def test_discrete_campaign(self, capsys):
        assert main(['verify', '--testbed', 'discrete', '--n-formulas', '3']) == 0
        out = capsys.readouterr().out
        assert '[compilation] 3 formulas' in out
        assert '[discrete] 3 formulas' in out

    def test_zero_formulas_rejected(self, capsys):
        assert main(['verify', '--testbed', 'discrete', '--n-formulas', '0']) == 1
        assert 'error code=invalid_value' in capsys.readouterr().err

    def test_failed_tolerance(self, workdir, capsys):
        config = {'verify': {'tolerances': {'discrete': {'transition': -1.0}}}}
        (workdir / 'strict.yaml').write_text(yaml.safe_dump(config))
        assert main(['verify', '-c', 'strict.yaml', '--testbed', 'discrete', '--n-formulas', '2']) == 1
        captured = capsys.readouterr()
        assert 'failure(s)' in captured.out
        assert 'error code=verification' in captured.err


class TestSampleAndReport:

    def test_discrete_sample_run(self, workdir, capsys):
        assert main(['sample', '-q', 'color.red', '--testbed', 'discrete', '--n', '50',
                     '--seed', '4', '-o', 'out']) == 0
        out = capsys.readouterr().out
        assert '| conformity |' in out
        manifest = json.loads((workdir / 'out' / 'manifest.json').read_text())
        assert manifest['command'] == 'sample'
        assert manifest['seed'] == 4
        assert manifest['outputs'] == ['samples.csv']
        assert manifest['run']['query'] == 'color.red'
        assert (workdir / 'out' / 'samples.csv').exists()

    def test_gmm_sample_run(self, workdir):
        assert main(['sample', '-q', 'shape.square', '--n', '4', '--steps', '20', '--repulsive',
                     '-o', 'out']) == 0
        header = (workdir / 'out' / 'samples.csv').read_text().splitlines()[0]
        assert header == 'x0,x1,x2,x3,color,shape,satisfies'

    def test_report_with_sweep(self, workdir, capsys):
        assert main(['report', '-q', 'color.blue', '--testbed', 'discrete', '--n', '40',
                     '--sweep', '0,1', '-o', 'rep']) == 0
        out = capsys.readouterr().out
        assert 'sweep.csv' in out
        assert len(list((workdir / 'rep').glob('logiguide_report_*.html'))) == 1
        manifest = json.loads((workdir / 'rep' / 'manifest.json').read_text())
        assert [row['w'] for row in manifest['metrics']['sweep']] == [0.0, 1.0]

    def test_report_from_saved_samples(self, workdir, capsys):
        assert main(['sample', '-q', 'color.red', '--testbed', 'discrete', '--n', '30', '-o', 'out']) == 0
        assert main(['report', '-q', 'color.red', '--testbed', 'discrete',
                     '--samples', 'out/samples.csv', '-o', 'rep']) == 0
        assert 'wrote:' in capsys.readouterr().out

    def test_report_rejects_mismatched_samples(self, capsys):
        assert main(['sample', '-q', 'color.red', '--testbed', 'discrete', '--n', '10', '-o', 'out']) == 0
        capsys.readouterr()
        assert main(['report', '-q', 'color.red', '--samples', 'out/samples.csv']) == 1
        assert 'error code=invalid_value' in capsys.readouterr().err


class TestErrors:

    def test_missing_model(self, capsys):
        assert main(['compile', '-q', 'a', '--model', 'missing.json']) == 1
        assert 'error code=not_found' in capsys.readouterr().err

    def test_taxonomy_model(self, capsys):
        assert main(['compile', '-q', 'mammal', '--model', str(MODELS / 'taxonomy.json')]) == 0
        assert 'valid: true' in capsys.readouterr().out
