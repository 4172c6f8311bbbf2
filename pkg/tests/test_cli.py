"""
Test cases for the command-line interface
"""

import json

import pytest

from cmixer_workbench.harness import ExperimentConfig
from cmixer_workbench.main import EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, run_cli
from cmixer_workbench.visualize import read_pgm


@pytest.fixture
def cli(tmp_path):
    """Fixture running one command with the log kept under tmp_path."""
    log_file = str(tmp_path / 'cli.log')

    def run(*argv):
        return run_cli([*argv, '--log-file', log_file])

    return run


@pytest.fixture
def workspace(tmp_path, cli, tiny_hp):
    """Fixture providing an 8x8 dataset and a matching one-epoch experiment file."""
    scenario = tmp_path / 'scenario.json'
    scenario.write_text(json.dumps({'n_t': 8, 'n_c': 8}))
    assert cli('generate', '--config', str(scenario), '--samples', '30', '--seed', '3',
               '--out', str(tmp_path / 'data')) == EXIT_OK
    experiment = tmp_path / 'experiment.json'
    config = ExperimentConfig(model=tiny_hp, batch_size=8, epochs=1, precision='f64')
    experiment.write_text(json.dumps(config.to_dict()))
    return tmp_path, tmp_path / 'data' / 'dataset.cmxd', experiment


def test_info_reports_table_counts(cli, capsys):
    """Test the default model's parameter and MAC totals."""
    assert cli('info') == EXIT_OK
    out = capsys.readouterr().out
    assert "parameters: 176768" in out
    assert "flops (mac, 1 per multiply-accumulate): 5528704" in out
    assert "flops (mul_add, 2 per multiply-accumulate): 11057408" in out


def test_generate_is_reproducible(tmp_path, cli):
    """Test that two runs with one seed write byte-identical datasets."""
    scenario = tmp_path / 'scenario.json'
    scenario.write_text(json.dumps({'n_t': 4, 'n_c': 6}))
    for name in ('a', 'b'):
        assert cli('generate', '--config', str(scenario), '--samples', '5', '--seed', '9',
                   '--out', str(tmp_path / name)) == EXIT_OK
    first = (tmp_path / 'a' / 'dataset.cmxd').read_bytes()
    assert first == (tmp_path / 'b' / 'dataset.cmxd').read_bytes()


def test_usage_errors_exit_two(cli, capsys):
    """Test unknown commands and malformed flag values."""
    assert cli('frobnicate') == EXIT_USAGE
    assert "error: usage:" in capsys.readouterr().err
    assert cli('generate', '--samples', 'many') == EXIT_USAGE


def test_validation_errors_exit_three(tmp_path, cli, capsys):
    """Test a bad known size, a missing dataset and a bad sample count."""
    assert cli('info', '--known', 'five') == EXIT_VALIDATION
    assert "error: validation:" in capsys.readouterr().err
    assert cli('info', '--known', '40x1') == EXIT_VALIDATION
    assert cli('train', '--dataset', str(tmp_path / 'missing.cmxd')) == EXIT_VALIDATION
    assert cli('generate', '--samples', '0', '--out', str(tmp_path)) == EXIT_VALIDATION
    assert not (tmp_path / 'dataset.cmxd').exists()


def test_mismatched_dataset_is_rejected(workspace, cli):
    """Test that the full-size default model refuses an 8x8 dataset before training."""
    root, dataset, _ = workspace
    assert cli('train', '--dataset', str(dataset), '--out', str(root / 'run')) == EXIT_VALIDATION
    assert not (root / 'run').exists()


def test_train_eval_and_viz(workspace, cli, capsys):
    """Test a one-epoch run end to end through evaluation and image export."""
    root, dataset, experiment = workspace
    run_dir = root / 'run'
    assert cli('train', '--config', str(experiment), '--dataset', str(dataset),
               '--out', str(run_dir)) == EXIT_OK
    assert "NMSE" in capsys.readouterr().out
    for name in ('model.cmxw', 'model.json', 'config.json', 'report.json'):
        assert (run_dir / name).is_file()
    report = json.loads((run_dir / 'report.json').read_text())
    assert report['epochs'][0]['epoch'] == 1
    assert set(report['test']) == {'nmse_linear', 'nmse_db', 'rho'}

    assert cli('eval', str(run_dir / 'model.cmxw'), '--config', str(experiment),
               '--dataset', str(dataset), '--out', str(root / 'eval')) == EXIT_OK
    evaluation = json.loads((root / 'eval' / 'eval.json').read_text())
    assert evaluation['nmse_linear'] == pytest.approx(report['test']['nmse_linear'], rel=1e-4)
    assert evaluation['test_samples'] == 6

    assert cli('viz', '--dataset', str(dataset), '--index', '2', '--checkpoint',
               str(run_dir / 'model.cmxw'), '--out', str(root / 'img')) == EXIT_OK
    true_image = read_pgm(root / 'img' / 'sample2_true.pgm')
    assert (true_image.height, true_image.width) == (8, 8)
    assert (root / 'img' / 'sample2_predicted.pgm').is_file()


def test_viz_rejects_bad_index(workspace, cli):
    """Test that an index outside the dataset is a validation error."""
    root, dataset, _ = workspace
    assert cli('viz', '--dataset', str(dataset), '--index', '30', '--out', str(root)) == EXIT_VALIDATION


def test_info_from_checkpoint(workspace, cli, capsys):
    """Test that info reads widths from a checkpoint's descriptor."""
    root, dataset, experiment = workspace
    assert cli('train', '--config', str(experiment), '--dataset', str(dataset),
               '--out', str(root / 'run')) == EXIT_OK
    capsys.readouterr()
    assert cli('info', str(root / 'run' / 'model.cmxw')) == EXIT_OK
    out = capsys.readouterr().out
    assert "variant: cmixer" in out
    assert "parameters: 176768" not in out


def test_malformed_config_files_exit_three(workspace, cli, capsys):
    """Test that unknown keys, bad enum values and wrong types in config files are validation errors."""
    root, dataset, experiment = workspace
    scenario = root / 'bad_scenario.json'
    scenario.write_text(json.dumps({'n_tt': 8}))
    assert cli('generate', '--config', str(scenario), '--samples', '5',
               '--out', str(root / 'bad')) == EXIT_VALIDATION
    assert "error: validation:" in capsys.readouterr().err
    assert not (root / 'bad' / 'dataset.cmxd').exists()

    good = json.loads(experiment.read_text())
    broken = [
        {**good, 'shuffle': {**good['shuffle'], 'mode': 'bogus'}},
        {**good, 'batch_size': '8'},
        {**good, 'model': {**good['model'], 'K': 'two'}},
    ]
    for index, data in enumerate(broken):
        path = root / f'broken{index}.json'
        path.write_text(json.dumps(data))
        assert cli('train', '--config', str(path), '--dataset', str(dataset),
                   '--out', str(root / f'run{index}')) == EXIT_VALIDATION
        assert "error: validation:" in capsys.readouterr().err


def test_checkpoint_descriptor_carries_training_scale(workspace, cli):
    """Test that model.json records the normalization factor reported for the run."""
    root, dataset, experiment = workspace
    run_dir = root / 'run'
    assert cli('train', '--config', str(experiment), '--dataset', str(dataset),
               '--out', str(run_dir)) == EXIT_OK
    descriptor = json.loads((run_dir / 'model.json').read_text())
    report = json.loads((run_dir / 'report.json').read_text())
    assert descriptor['training_scale'] == pytest.approx(report['scale'])
    assert descriptor['training_scale'] > 0
