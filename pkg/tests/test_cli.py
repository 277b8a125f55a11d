import json

from click.testing import CliRunner

from eit_shapes.cli import cli
from eit_shapes.exceptions import ReconstructionError
from eit_shapes.recon import InitialGuess, NGon, initial_guess
from eit_shapes.recon.main import ReconResult
from eit_shapes.recon.trace import IterationRecord, ReconTrace
from eit_shapes.verify import CheckResult

GUESS = 'ngon:0.5,0.5,0.2,8,10'


def _synthesize(runner, *args):
    result = runner.invoke(cli, ['synthesize', 'pentagon', '--refine-levels', '1', *args])
    assert result.exit_code == 0, result.output
    return result


def _fake_result():
    trace = ReconTrace(status='converged', message='done')
    trace.records.append(IterationRecord(0, 1e-6, [1.0, 10.0], [8], 1e-3))
    sigma = initial_guess(InitialGuess((NGon((0.5, 0.5), 0.2, 8, 10.0),)))
    trace.final_partition = sigma.partition.to_json()
    return ReconResult(sigma, trace)


def test_cli_help():
    runner = CliRunner()
    result = runner.invoke(cli, ['--help'])
    assert result.exit_code == 0
    for command in ('synthesize', 'reconstruct', 'verify', 'phantoms', 'experiments'):
        assert command in result.output
    result = runner.invoke(cli, ['reconstruct', '--help'])
    assert result.exit_code == 0
    assert 'Reconstruct a piecewise constant conductivity from boundary data' in result.output
    assert 'EIT_SHAPES_THREADS' in result.output


def test_version():
    result = CliRunner().invoke(cli, ['--version'])
    assert result.exit_code == 0
    assert result.output.startswith('eit-shapes, version ')


def test_phantoms():
    result = CliRunner().invoke(cli, ['phantoms'])
    assert result.exit_code == 0, result.output
    assert 'heart_lung   inclusions=3 vertices=16/16/16 σ=[1, 0.5, 0.5, 2]' in result.output
    assert 'pentagon     inclusions=1 vertices=5 σ=[1, 10]' in result.output


def test_synthesize_bad_level():
    result = CliRunner().invoke(cli, ['synthesize', 'pentagon', '--level', '5'])
    assert result.exit_code == 2
    assert "Invalid value for '-l' / '--level'" in result.output


def test_synthesize_unknown_phantom(tmpworkdir):
    result = CliRunner().invoke(cli, ['synthesize', 'circle'])
    assert result.exit_code == 2
    assert 'Error: unknown phantom "circle", choose from: heart_lung, nonconvex, pentagon, square\n' in result.output


def test_synthesize(tmpworkdir):
    runner = CliRunner()
    result = _synthesize(runner, '--noise', '0.05', '--seed', '3', '-o', 'data')
    assert '6 patterns on 32 boundary nodes' in result.output
    assert {p.basename for p in tmpworkdir.join('data').listdir()} == {
        'manifest.json', 'measurements.json', 'traces.csv', 'truth.json', 'truth.svg',
    }
    manifest = json.loads(tmpworkdir.join('data', 'manifest.json').read())
    assert manifest['command'] == 'synthesize'
    assert manifest['seeds'] == [3]
    assert manifest['inputs'] == {'truth': 'pentagon'}
    assert 0.03 < manifest['metrics']['noise_level'] < 0.07
    measurements = json.loads(tmpworkdir.join('data', 'measurements.json').read())
    assert measurements['noise_meta']['seed'] == 3

    again = _synthesize(runner, '--noise', '0.05', '--seed', '3', '-o', 'again')
    assert again.exit_code == 0
    assert tmpworkdir.join('again', 'measurements.json').read() == tmpworkdir.join('data', 'measurements.json').read()
    assert tmpworkdir.join('again', 'manifest.json').read() == tmpworkdir.join('data', 'manifest.json').read()


def test_reconstruct(mocker, tmpworkdir):
    runner = CliRunner()
    _synthesize(runner)
    mock_reconstruct = mocker.patch('eit_shapes.cli._reconstruct', return_value=_fake_result())
    result = runner.invoke(cli, ['reconstruct', '-d', 'measurements.json', '-g', GUESS, '-t', 'pentagon',
                                 '--max-iter', '5', '--values-known', '-o', 'run'])
    assert result.exit_code == 0, result.output
    assert 'converged after 1 iterations, σ=[1, 10]' in result.output
    assert 'symmetric difference' in result.output
    assert mock_reconstruct.call_count == 1
    cfg = mock_reconstruct.call_args[0][2]
    assert cfg.max_iter == 5
    assert cfg.values_known is True
    assert cfg.tol == 0.004
    assert {p.basename for p in tmpworkdir.join('run').listdir()} == {
        'conductivity.json', 'convergence.csv', 'convergence.svg', 'manifest.json', 'overlay.svg', 'trace.jsonl',
    }
    manifest = json.loads(tmpworkdir.join('run', 'manifest.json').read())
    assert manifest['config_hash'] == cfg.config_hash()
    assert manifest['seeds'] == []
    assert manifest['metrics']['status'] == 'converged'
    assert 0 < manifest['metrics']['relative_symmetric_difference'] < 1


def test_reconstruct_config_file(mocker, tmpworkdir):
    runner = CliRunner()
    _synthesize(runner)
    tmpworkdir.join('config.json').write(json.dumps({'beta': 0.1, 'max_iter': 50}))
    mock_reconstruct = mocker.patch('eit_shapes.cli._reconstruct', return_value=_fake_result())
    result = runner.invoke(cli, ['reconstruct', '-d', 'measurements.json', '-g', GUESS, '-c', 'config.json',
                                 '--max-iter', '20'])
    assert result.exit_code == 0, result.output
    cfg = mock_reconstruct.call_args[0][2]
    assert (cfg.beta, cfg.max_iter) == (0.1, 20)


def test_reconstruct_missing_data(tmpworkdir):
    result = CliRunner().invoke(cli, ['reconstruct', '-d', 'missing.json', '-g', GUESS])
    assert result.exit_code == 2
    assert 'Error: unable to read measurements from "missing.json"' in result.output


def test_reconstruct_bad_guess(tmpworkdir):
    runner = CliRunner()
    _synthesize(runner)
    result = runner.invoke(cli, ['reconstruct', '-d', 'measurements.json', '-g', 'circle:0.5'])
    assert result.exit_code == 2
    assert 'Error: unable to parse guess item "circle:0.5"' in result.output


def test_reconstruct_failure_writes_trace(mocker, tmpworkdir):
    runner = CliRunner()
    _synthesize(runner)
    trace = ReconTrace(status='failed', message='triangulation failed')
    error = ReconstructionError('iteration 4 failed: triangulation failed', trace)
    mocker.patch('eit_shapes.cli._reconstruct', side_effect=error)
    result = runner.invoke(cli, ['reconstruct', '-d', 'measurements.json', '-g', GUESS, '-o', 'run'])
    assert result.exit_code == 2
    assert 'Error: iteration 4 failed: triangulation failed\n' in result.output
    assert ReconTrace.from_jsonl(str(tmpworkdir.join('run', 'trace.jsonl'))).status == 'failed'
    manifest = json.loads(tmpworkdir.join('run', 'manifest.json').read())
    assert manifest['outputs'] == ['trace.jsonl']
    assert manifest['metrics'] == {
        'status': 'failed', 'iterations': 0, 'error': 'iteration 4 failed: triangulation failed',
    }


def test_reconstruct_guess_at_background(mocker, tmpworkdir):
    runner = CliRunner()
    _synthesize(runner)
    mock_reconstruct = mocker.patch('eit_shapes.cli._reconstruct')
    result = runner.invoke(cli, ['reconstruct', '-d', 'measurements.json', '-g', 'ngon:0.5,0.5,0.2,8,2;bg:2'])
    assert result.exit_code == 2
    assert 'inclusion 1 has the background value 2' in result.output
    assert not mock_reconstruct.called


def test_reconstruct_error_verbose(mocker, tmpworkdir):
    runner = CliRunner()
    _synthesize(runner)
    mocker.patch('eit_shapes.cli._reconstruct', side_effect=ReconstructionError('foobar'))
    result = runner.invoke(cli, ['reconstruct', '-d', 'measurements.json', '-g', GUESS, '--verbose'])
    assert result.exit_code == 2
    assert 'Error: foobar\n' in result.output
    assert 'ReconstructionError traceback:' in result.output
    assert 'eit_shapes.exceptions.ReconstructionError: foobar' in result.output


def test_verify(mocker, tmpworkdir):
    mock_run_checks = mocker.patch('eit_shapes.cli.run_checks', return_value=[
        CheckResult('fem', 1e-14, 1e-10, True),
        CheckResult('reciprocity', 1e-12, 1e-8, True),
    ])
    result = CliRunner().invoke(cli, ['verify', '-c', 'fem', '-c', 'reciprocity'])
    assert result.exit_code == 0, result.output
    assert 'all 2 checks passed' in result.output
    mock_run_checks.assert_called_once_with('pentagon', ['fem', 'reciprocity'], 4, 3, 0, 1)
    assert tmpworkdir.join('report.json').check()
    assert json.loads(tmpworkdir.join('manifest.json').read())['metrics'] == {'fem': 1e-14, 'reciprocity': 1e-12}


def test_verify_threads(mocker, tmpworkdir):
    mock_run_checks = mocker.patch('eit_shapes.cli.run_checks', return_value=[CheckResult('fem', 1e-14, 1e-10, True)])
    result = CliRunner().invoke(cli, ['verify', '-c', 'fem'], env={'EIT_SHAPES_THREADS': '3'})
    assert result.exit_code == 0, result.output
    mock_run_checks.assert_called_once_with('pentagon', ['fem'], 4, 3, 0, 3)


def test_verify_failure(mocker, tmpworkdir):
    mocker.patch('eit_shapes.cli.run_checks', return_value=[
        CheckResult('fd', 2e-3, 1e-4, False),
    ])
    result = CliRunner().invoke(cli, ['verify', '-c', 'fd'])
    assert result.exit_code == 1
    assert 'checks failed: fd' in result.output


def test_verify_unknown_check():
    result = CliRunner().invoke(cli, ['verify', '-c', 'gauss'])
    assert result.exit_code == 2
    assert "Invalid value for '-c' / '--checks'" in result.output


def test_experiments(mocker, tmpworkdir):
    mock_run_variants = mocker.patch('eit_shapes.cli.run_variants', return_value=[])
    result = CliRunner().invoke(cli, ['experiments', 'pentagon', '--max-iter', '3', '-s', '7'])
    assert result.exit_code == 0, result.output
    base, variants = mock_run_variants.call_args[0]
    assert base.seed == 7
    assert base.config.max_iter == 3
    assert [v.label for v in variants] == ['pentagon-6', 'pentagon-6-3%']
    manifest = json.loads(tmpworkdir.join('manifest.json').read())
    assert manifest['command'] == 'experiments pentagon'


def test_experiments_unknown():
    result = CliRunner().invoke(cli, ['experiments', 'circle'])
    assert result.exit_code == 2
    assert "'circle' is not one of" in result.output
