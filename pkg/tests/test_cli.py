import sys

import pandas as pd
import pytest
from click.testing import CliRunner
from loguru import logger

from magnus.cli import cli
from magnus.matrix_io import BINARY_MAGIC, load_matrix


@pytest.fixture
def runner():
    yield CliRunner(mix_stderr=False)
    # the group callback points loguru at the runner's captured stderr
    logger.remove()
    logger.add(sys.stderr, level='WARNING')


def test_gen_then_stats(runner, tmp_path):
    out = tmp_path / 'band.mtx'
    result = runner.invoke(cli, ['gen', 'banded', str(out), '--rows', '5', '--cols', '5', '--half-bandwidth', '1'])
    assert result.exit_code == 0, result.output
    assert load_matrix(str(out)).nnz == 13
    result = runner.invoke(cli, ['stats', str(out)])
    assert result.exit_code == 0
    assert '19' in result.output and '35' in result.output


def test_gen_binary_appends_suffix(runner, tmp_path):
    result = runner.invoke(cli, ['gen', 'rmat', str(tmp_path / 'graph'), '--scale', '5', '--edge-factor', '4',
                                 '--format', 'binary', '--seed', '7'])
    assert result.exit_code == 0
    path = tmp_path / 'graph.mgcsr'
    assert path.read_bytes()[:len(BINARY_MAGIC)] == BINARY_MAGIC
    assert load_matrix(str(path)).n_rows == 32


def test_spgemm_writes_records(runner, tmp_path):
    csv_path = tmp_path / 'runs.csv'
    result = runner.invoke(cli, ['spgemm', '--scale', '6', '--algo', 'magnus', '--algo', 'esc', '--reps', '2',
                                 '--l2-bytes', '4096', '--csv', str(csv_path)])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(csv_path)
    assert len(frame) == 4
    assert frame['verified'].all()
    assert 'magnus' in result.output and 'esc' in result.output


def test_spgemm_force_fine_only(runner):
    result = runner.invoke(cli, ['spgemm', '--scale', '5', '--reps', '1', '--force-fine-only'])
    assert result.exit_code == 0
    assert 'magnus-fine-only' in result.output


def test_spgemm_rejects_zero_reps(runner):
    result = runner.invoke(cli, ['spgemm', '--scale', '5', '--reps', '0'])
    assert result.exit_code == 2


def test_bound_from_counts(runner):
    result = runner.invoke(cli, ['bound', '--n-a', '2', '--nnz-a', '3', '--n-inter-prod', '5', '--n-c', '2',
                                 '--nnz-c', '0', '--s-col-idx', '4', '--s-val', '4', '--bandwidth', '1'])
    assert result.exit_code == 0
    assert '240' in result.output
    assert 'read_bytes' in result.output


def test_bound_needs_counts_or_matrix(runner):
    result = runner.invoke(cli, ['bound', '--n-a', '2', '--bandwidth', '1'])
    assert result.exit_code == 2


def test_microbench_building_blocks(runner, tmp_path):
    json_path = tmp_path / 'mb.json'
    result = runner.invoke(cli, ['microbench', '--size', '2000', '--length', '1024', '--chunks', '1',
                                 '--chunks', '16', '--reps', '1', '--json', str(json_path)])
    assert result.exit_code == 0, result.output
    frame = pd.read_json(json_path)
    assert frame['checksum_ok'].all()
    assert set(frame['algorithm']) >= {'histogram', 'reorder', 'total'}


def test_microbench_accumulators_report_crossover(runner):
    result = runner.invoke(cli, ['microbench', '--accumulators', '--size', '256', '--length', '1024',
                                 '--reps', '1'])
    assert result.exit_code == 0
    assert 'crossover:' in result.output


def test_microbench_bad_chunk_count(runner):
    result = runner.invoke(cli, ['microbench', '--size', '100', '--length', '64', '--chunks', '3', '--reps', '1'])
    assert result.exit_code == 2


def test_verify_small_corpus(runner):
    result = runner.invoke(cli, ['verify', '--cases', '6', '--wide-cases', '0'])
    assert result.exit_code == 0, result.output
    assert 'runs passed' in result.output
    assert 'FAIL' not in result.output


def test_verify_injected_fault_fails(runner):
    result = runner.invoke(cli, ['verify', '--cases', '6', '--wide-cases', '0', '--inject-fault', 'all'])
    assert result.exit_code == 1
    assert 'FAIL' in result.output


def test_bad_environment_value_is_a_usage_error(runner, monkeypatch):
    monkeypatch.setenv('MAGNUS_THREADS', 'many')
    result = runner.invoke(cli, ['bandwidth', '--bytes', '4096', '--reps', '1'])
    assert result.exit_code == 2
    assert 'MAGNUS_THREADS' in result.stderr


def test_bandwidth(runner):
    result = runner.invoke(cli, ['bandwidth', '--bytes', str(1 << 16), '--reps', '2'])
    assert result.exit_code == 0
    assert 'bytes/s' in result.output
