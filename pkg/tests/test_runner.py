import numpy as np
import pytest

from magnus.csr import csr_from_triplets
from magnus.errors import ConfigError, DimensionError, InputError
from magnus.matrix_io import write_matrix_market
from magnus.runner import (SPGEMM_COLUMNS, GeneratorSpec, SpgemmConfig, VerifyConfig, load_operands,
                           matrices_match, run_algorithm, run_spgemm_command, summarize_runs, verify_command,
                           verify_corpus)
from magnus.planner import SystemParams

SMALL_RMAT = GeneratorSpec(kind='rmat', scale=6, edge_factor=4)


@pytest.mark.parametrize('kwargs, error', [
    (dict(reps=0), ConfigError),
    (dict(threads=0), ConfigError),
    (dict(algorithms=()), ConfigError),
    (dict(bandwidth=0.0), ConfigError),
    (dict(algorithms=('hash',)), InputError),
])
def test_spgemm_config_validation(kwargs, error):
    with pytest.raises(error):
        SpgemmConfig(**kwargs).validate()


def test_generator_spec():
    assert SMALL_RMAT.describe() == 'rmat-s6-e4'
    assert SMALL_RMAT.build().shape == (64, 64)
    assert GeneratorSpec(kind='banded', n_rows=10, n_cols=10, half_bandwidth=2).build().nnz == 44
    with pytest.raises(InputError):
        GeneratorSpec(kind='kronecker').build()


def test_run_spgemm_records_every_timed_run():
    cfg = SpgemmConfig(algorithms=('magnus', 'esc', 'reference'), generator=SMALL_RMAT, reps=2,
                       system=SystemParams(l2_bytes=4096), bandwidth=1e10)
    frame = run_spgemm_command(cfg)
    assert list(frame.columns) == SPGEMM_COLUMNS
    assert len(frame) == 3 * 2
    assert frame['verified'].all()
    assert frame['matrix'].unique().tolist() == ['rmat-s6-e4']
    assert frame['nnz_c'].nunique() == 1
    assert (frame['ideal_s'] > 0).all()
    magnus_rows = frame[frame['algorithm'] == 'magnus']
    assert (magnus_rows[['rows_sort', 'rows_dense', 'rows_fine', 'rows_coarse']].sum(axis=1) == 64).all()

    summary = summarize_runs(frame)
    assert summary['algorithm'].tolist() == ['magnus', 'esc', 'reference']
    assert summary['verified'].all()
    assert (summary['min'] <= summary['mean']).all()


def test_run_spgemm_without_bandwidth_leaves_ideal_empty():
    frame = run_spgemm_command(SpgemmConfig(generator=SMALL_RMAT, reps=1, verify=False))
    assert frame['ideal_s'].isna().all()
    assert frame['verified'].all()


def test_load_operands_from_files(tmp_path):
    a = csr_from_triplets([(0, 0, 1.0), (1, 2, 2.0)], 2, 3)
    b = csr_from_triplets([(0, 1, 1.0), (2, 0, 3.0)], 3, 2)
    write_matrix_market(a, str(tmp_path / 'a.mtx'))
    write_matrix_market(b, str(tmp_path / 'b.mtx'))
    loaded_a, loaded_b, name = load_operands(SpgemmConfig(matrix=str(tmp_path / 'a.mtx'),
                                                          other=str(tmp_path / 'b.mtx')))
    assert loaded_a.same_as(a) and loaded_b.same_as(b)
    assert name.endswith('a.mtx')
    with pytest.raises(DimensionError):
        load_operands(SpgemmConfig(matrix=str(tmp_path / 'a.mtx')))


def test_run_algorithm_agrees_across_algorithms(make_csr):
    a, b = make_csr(20, 30, 0.2), make_csr(30, 500, 0.05)
    expected = run_algorithm('reference', a, b, SystemParams()).c
    for name in ('gustavson-dense', 'esc', 'magnus', 'magnus-fine-only'):
        assert matrices_match(run_algorithm(name, a, b, SystemParams(l2_bytes=4096), threads=2).c, expected)
    with pytest.raises(InputError):
        run_algorithm('hash', a, b, SystemParams())


def test_matrices_match_tolerance():
    a = csr_from_triplets([(0, 0, 1.0)], 1, 1)
    close = csr_from_triplets([(0, 0, 1.0 + 1e-9)], 1, 1)
    far = csr_from_triplets([(0, 0, 1.1)], 1, 1)
    assert matrices_match(a, close)
    assert not matrices_match(a, close, rtol=0.0)
    assert not matrices_match(a, far)


SMALL_CORPUS = dict(cases=12, wide_cases=2, max_dim=32, l2_sizes=(4 << 10, 1 << 20))


def test_verify_corpus_names_and_shapes():
    corpus = verify_corpus(VerifyConfig(**SMALL_CORPUS))
    names = [name for name, _, _ in corpus]
    assert names[:2] == ['random-000', 'random-001']
    assert names[-2:] == ['wide-000', 'wide-001']
    assert [b.n_cols for _, _, b in corpus[-2:]] == [2048, 40000]
    assert all(a.n_cols == b.n_rows for _, a, b in corpus)


def test_verify_passes_on_small_corpus():
    report = verify_command(VerifyConfig(**SMALL_CORPUS))
    assert report.passed
    # two magnus sweeps of two L2 sizes plus one run each for the gustavson variants
    assert len(report.cases) == 14 * (2 * 2 + 2)
    assert all(row[3] == 'PASS' for row in report.table())
    assert sum(report.category_rows.values()) > 0


def test_injected_fault_is_reported():
    # density 1.0 always yields a non-empty product
    report = verify_command(VerifyConfig(**SMALL_CORPUS, inject_fault='random-005'))
    assert not report.passed
    assert {case.name for case in report.failures} == {'random-005'}
    failing = [row for row in report.table() if row[3] == 'FAIL']
    assert [row[0] for row in failing] == ['random-005'] * 4
    assert np.all([row[2].startswith('0/') for row in failing])


def test_empty_corpus_is_a_config_error():
    with pytest.raises(ConfigError):
        verify_command(VerifyConfig(cases=0, wide_cases=0))
    with pytest.raises(InputError):
        verify_command(VerifyConfig(algorithms=('hash',)))


@pytest.mark.slow
def test_default_corpus_passes_and_reaches_every_category():
    cfg = VerifyConfig()
    report = verify_command(cfg)
    assert report.passed
    assert len({case.name for case in report.cases}) == cfg.cases + cfg.wide_cases >= 200
    assert report.category_rows.keys() == {'rows_sort', 'rows_dense', 'rows_fine', 'rows_coarse'}
    assert all(count > 0 for count in report.category_rows.values()), report.category_rows
