import numpy as np
import pytest

from magnus.bench import (BUILDING_BLOCK_STAGES, BenchRecord, IdealBoundInputs, StreamSpec, accumulator_crossover,
                          ideal_bound, ideal_bound_for, matrix_stats, measure_bandwidth, microbench_accumulators,
                          microbench_building_blocks, microbench_sweep, multiset_hash, records_frame, write_records)
from magnus.csr import csr_from_triplets, empty_csr
from magnus.errors import InputError
from magnus.generators import BandedParams, gen_banded


def test_ideal_bound_worked_example():
    bound = ideal_bound(IdealBoundInputs(n_a=2, nnz_a=3, n_inter_prod=5, n_c=2, nnz_c=0,
                                         s_row_ptr=8, s_col_idx=4, s_val=4))
    assert bound.read_volume == 240
    assert bound.write_volume == 3 * 8


def test_ideal_bound_empty_product():
    bound = ideal_bound(IdealBoundInputs(n_a=4, nnz_a=0, n_inter_prod=0, n_c=4, nnz_c=0, s_row_ptr=8,
                                         bandwidth_bytes_per_sec=2.0))
    assert bound.read_volume == 80
    assert bound.write_volume == 40
    assert bound.t_ideal == 60.0


def test_ideal_bound_scales_with_bandwidth():
    inputs = dict(n_a=100, nnz_a=900, n_inter_prod=5000, n_c=100, nnz_c=3000)
    slow = ideal_bound(IdealBoundInputs(**inputs, bandwidth_bytes_per_sec=1e9))
    fast = ideal_bound(IdealBoundInputs(**inputs, bandwidth_bytes_per_sec=2e9))
    assert fast.t_ideal == pytest.approx(slow.t_ideal / 2)


def test_ideal_bound_is_linear_in_counts(rng):
    names = ('n_a', 'nnz_a', 'n_inter_prod', 'n_c', 'nnz_c')
    for _ in range(20):
        x = dict(zip(names, rng.integers(0, 1000, 5).tolist()))
        y = dict(zip(names, rng.integers(0, 1000, 5).tolist()))
        xy = {k: x[k] + y[k] for k in names}
        zero = ideal_bound(IdealBoundInputs(**dict.fromkeys(names, 0)))
        total = lambda d: sum(ideal_bound(IdealBoundInputs(**d))[:2])
        assert total(xy) - sum(zero[:2]) == (total(x) - sum(zero[:2])) + (total(y) - sum(zero[:2]))


@pytest.mark.parametrize('kwargs', [dict(n_a=-1), dict(bandwidth_bytes_per_sec=0.0)])
def test_ideal_bound_rejects_bad_inputs(kwargs):
    base = dict(n_a=1, nnz_a=1, n_inter_prod=1, n_c=1, nnz_c=1)
    with pytest.raises(InputError):
        ideal_bound(IdealBoundInputs(**{**base, **kwargs}))


def test_ideal_bound_for_matrix():
    a = csr_from_triplets([(0, 0, 1.0), (0, 1, 1.0), (1, 1, 1.0)], 2, 2)
    bound = ideal_bound_for(a, a, n_inter_prod=5, bandwidth=1.0)
    assert bound.read_volume == 2 * 3 * 8 + 3 * (32 + 8 + 8) + 5 * (8 + 8)


def test_measure_bandwidth():
    result = measure_bandwidth(1 << 16, reps=3)
    assert result.rate > 0
    assert result.bytes_moved == 2 * (1 << 16)
    assert len(result.seconds) == 3
    with pytest.raises(InputError):
        measure_bandwidth(1024, reps=0)


def test_multiset_hash_ignores_order(rng):
    cols = rng.integers(0, 100, 50)
    vals = rng.random(50)
    perm = rng.permutation(50)
    before = multiset_hash(cols, vals)
    assert before == multiset_hash(cols[perm], vals[perm])
    vals[0] += 1.0
    assert multiset_hash(cols, vals) != before


@pytest.mark.parametrize('threads', [1, 2])
def test_building_blocks_checksums_hold(threads):
    records = microbench_building_blocks(StreamSpec(size=5000, length=1 << 12, seed=3), n_chunks=16, reps=2,
                                         threads=threads)
    assert len(records) == 2 * (len(BUILDING_BLOCK_STAGES) + 1)
    assert all(r.checksum_ok for r in records)
    assert {r.algorithm for r in records} == set(BUILDING_BLOCK_STAGES) | {'total'}
    for rep in range(2):
        stages = {r.algorithm: r.seconds for r in records if r.repetition == rep}
        assert stages['total'] == pytest.approx(
            stages['histogram'] + stages['prefix_sum'] + stages['reorder'] + stages['dense_accumulate'])


@pytest.mark.parametrize('n_chunks', [3, 1 << 13])
def test_building_blocks_reject_bad_chunk_counts(n_chunks):
    with pytest.raises(InputError):
        microbench_building_blocks(StreamSpec(size=100, length=1 << 12), n_chunks)


def test_stream_spec_validation():
    with pytest.raises(InputError):
        StreamSpec(size=10, length=0).generate()
    cols, vals = StreamSpec(size=1000, length=7, seed=1).generate()
    assert cols.min() >= 0 and cols.max() < 7
    assert np.all((vals > 0) & (vals <= 1))


def test_sweep_one_record_per_stage_per_point():
    records = microbench_sweep(StreamSpec(size=2000, length=256), [1, 4, 256])
    frame = records_frame(records)
    assert len(frame) == 3 * (len(BUILDING_BLOCK_STAGES) + 1)
    assert frame['checksum_ok'].all()
    assert frame['params'].nunique() == 3


def test_accumulator_comparison():
    records = microbench_accumulators([16, 256], length=1 << 10, reps=2)
    assert {r.algorithm for r in records} == {'dense', 'sort'}
    assert all(r.checksum_ok for r in records)
    assert len(records) == 2 * 2 * 2


def test_accumulator_crossover_from_records():
    def rec(size, name, seconds):
        return BenchRecord('accumulators', name, f'size={size};length=1024', 0, seconds, 1.0)
    records = [rec(16, 'sort', 1.0), rec(16, 'dense', 2.0), rec(256, 'sort', 3.0), rec(256, 'dense', 1.0),
               rec(1024, 'sort', 9.0), rec(1024, 'dense', 2.0)]
    assert accumulator_crossover(records) == 256
    assert accumulator_crossover(records[:2]) is None
    assert accumulator_crossover([]) is None


def test_records_frame_and_writers(tmp_path):
    records = [BenchRecord('building_blocks', 'histogram', 'size=1', 0, 0.0, 1.0)]
    frame = records_frame(records)
    assert list(frame.columns) == ['benchmark', 'algorithm', 'matrix', 'params', 'repetition', 'seconds', 'rate',
                                   'checksum_ok']
    assert frame['seconds'].iloc[0] > 0
    csv_path, json_path = tmp_path / 'r.csv', tmp_path / 'r.json'
    write_records(frame, str(csv_path), str(json_path))
    assert csv_path.read_text().splitlines()[0].startswith('benchmark,algorithm')
    assert '"histogram"' in json_path.read_text()


def test_matrix_stats():
    a = gen_banded(BandedParams(n_rows=5, n_cols=5, half_bandwidth=1))
    stats = matrix_stats(a)
    assert stats.nnz == 13
    assert stats.n_inter_prod == int(a.row_nnz()[a.col].sum()) == 35
    assert stats.nnz_c == 19
    assert stats.compression_ratio == pytest.approx(stats.n_inter_prod / stats.nnz_c)
    assert matrix_stats(empty_csr(0, 0)).avg_nnz_per_row == 0.0
