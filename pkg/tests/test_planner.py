import numpy as np
import pytest

from magnus.config import Settings
from magnus.errors import InputError
from magnus.planner import (ChunkPlan, Phase, SystemParams, ceil_pow2, compute_chunk_plan, detect_system_params,
                            fine_level_exceeds_l2, fine_level_storage, fine_level_storage_optimal, floor_pow2,
                            is_pow2, max_columns_in_l2, resolve_system_params, round_pow2)

MIB = 1 << 20


@pytest.mark.parametrize('x, ceil, floor', [
    (1, 1, 1), (2, 2, 2), (3, 4, 2), (1000, 1024, 512), (1 << 40, 1 << 40, 1 << 40),
])
def test_pow2_helpers(x, ceil, floor):
    assert ceil_pow2(x) == ceil
    assert floor_pow2(x) == floor
    assert is_pow2(ceil) and is_pow2(floor)


@pytest.mark.parametrize('x, expected', [(1, 1), (1.4, 1), (1.5, 2), (98.17, 128), (90.0, 64), (100.0, 128)])
def test_round_pow2(x, expected):
    assert round_pow2(x) == expected


def test_fine_plan_for_quarter_million_columns():
    sys = SystemParams(val_bytes=4)
    plan = compute_chunk_plan(sys, 1 << 18, Phase.NUMERIC)
    assert plan.s_dense_accum == 5
    assert plan.s_chunk_fine == 136
    assert plan.n_chunks_fine == 128
    assert plan.chunk_len_fine == 1 << 11
    assert plan.shift_fine == 11
    assert not plan.use_coarse
    assert plan.n_chunks_coarse == 1
    assert plan.chunk_len_coarse == 1 << 18


@pytest.mark.parametrize('l2, expected', [(MIB, 1 << 30), (2 * MIB, 1 << 32)])
def test_max_columns_in_l2(l2, expected):
    assert max_columns_in_l2(l2, 1, 136) == expected
    plan = compute_chunk_plan(SystemParams(l2_bytes=l2), 1 << 10, Phase.SYMBOLIC)
    assert plan.m_c_max_l2 == expected


def test_coarse_split_above_l2_limit():
    plan = compute_chunk_plan(SystemParams(l2_bytes=MIB), 1 << 31, Phase.NUMERIC)
    assert plan.use_coarse
    assert plan.n_chunks_coarse == 2
    assert plan.chunk_len_coarse == 1 << 30
    assert plan.n_chunks_coarse * plan.chunk_len_coarse == plan.m_c_pow2
    assert plan.fine_span == plan.chunk_len_coarse


def test_coarse_boundary_matches_storage_model():
    sys = SystemParams(l2_bytes=4096)
    s = sys.chunk_fine_bytes
    for m in (1 << 14, 1 << 15, 1 << 16):
        exceeds = fine_level_storage_optimal(m, 1, s) > sys.l2_bytes
        assert fine_level_exceeds_l2(m, 1, s, sys.l2_bytes) == exceeds
        assert compute_chunk_plan(sys, m, Phase.NUMERIC).use_coarse == exceeds


def test_phases_share_the_coarse_split():
    sys = SystemParams(l2_bytes=4096)
    for m in (100, 5000, 40000, 1 << 20):
        sym = compute_chunk_plan(sys, m, Phase.SYMBOLIC)
        num = compute_chunk_plan(sys, m, Phase.NUMERIC)
        assert sym.use_coarse == num.use_coarse
        assert sym.chunk_len_coarse == num.chunk_len_coarse
        assert sym.n_chunks_fine <= num.n_chunks_fine


def test_force_fine_only_disables_coarse():
    plan = compute_chunk_plan(SystemParams(l2_bytes=4096), 1 << 20, Phase.NUMERIC, allow_coarse=False)
    assert not plan.use_coarse
    assert plan.fine_span == 1 << 20


@pytest.mark.parametrize('m_c', [1, 2, 7, 64, 1000, 1 << 20, (1 << 20) + 1])
def test_plan_invariants(m_c):
    plan = compute_chunk_plan(SystemParams(), m_c, Phase.NUMERIC)
    assert is_pow2(plan.n_chunks_fine) and is_pow2(plan.chunk_len_fine)
    assert plan.n_chunks_fine * plan.chunk_len_fine == plan.chunk_len_coarse
    assert plan.m_c_pow2 >= m_c
    assert plan.chunk_len_fine >= min(plan.chunk_len_coarse, 8)


def test_fine_chunks_minimise_storage():
    sys = SystemParams(val_bytes=4)
    plan = compute_chunk_plan(sys, 1 << 18, Phase.NUMERIC)
    best = fine_level_storage(1 << 18, plan.n_chunks_fine, plan.s_dense_accum, plan.s_chunk_fine)
    for n in (plan.n_chunks_fine // 2, plan.n_chunks_fine * 2):
        assert best <= fine_level_storage(1 << 18, n, plan.s_dense_accum, plan.s_chunk_fine)


def _neighbour_counts(plan: ChunkPlan, sys: SystemParams):
    span = plan.fine_span
    min_len = min(span, max(1, sys.cache_line_bytes // sys.index_bytes))
    if plan.n_chunks_fine > 1:
        yield plan.n_chunks_fine // 2
    if span // (2 * plan.n_chunks_fine) >= min_len:
        yield plan.n_chunks_fine * 2


@pytest.mark.parametrize('phase', list(Phase))
def test_fine_chunks_minimise_storage_over_random_points(rng, phase):
    for _ in range(50):
        sys = SystemParams(l2_bytes=1 << int(rng.integers(12, 25)), val_bytes=int(rng.choice([4, 8])))
        m_c = int(rng.integers(1, 1 << 36))
        plan = compute_chunk_plan(sys, m_c, phase)
        best = fine_level_storage(plan.fine_span, plan.n_chunks_fine, plan.s_dense_accum, plan.s_chunk_fine)
        for n in _neighbour_counts(plan, sys):
            assert best <= fine_level_storage(plan.fine_span, n, plan.s_dense_accum, plan.s_chunk_fine), \
                (m_c, sys.l2_bytes, sys.val_bytes, n)


def test_max_columns_in_l2_grows_with_l2(rng):
    sizes = np.sort(rng.integers(1 << 10, 1 << 26, 200))
    for s_dense in (1, 5, 9):
        limits = [max_columns_in_l2(int(l2), s_dense, 136) for l2 in sizes]
        assert all(x <= y for x, y in zip(limits, limits[1:]))


def test_coarse_chunk_count_grows_with_columns(rng):
    sys = SystemParams(l2_bytes=4096)
    widths = np.sort(rng.integers(1, 1 << 40, 200))
    for phase in Phase:
        counts = [compute_chunk_plan(sys, int(m), phase).n_chunks_coarse for m in widths]
        assert all(x <= y for x, y in zip(counts, counts[1:]))


@pytest.mark.parametrize('m_c', [0, -5, (1 << 52) + 1])
def test_plan_rejects_bad_column_counts(m_c):
    with pytest.raises(InputError):
        compute_chunk_plan(SystemParams(), m_c, Phase.NUMERIC)


def test_many_coarse_chunks_warn(caplog_loguru):
    compute_chunk_plan(SystemParams(l2_bytes=4096), 1 << 40, Phase.NUMERIC)
    assert any('coarse chunks exceed' in m for m in caplog_loguru)


def test_manual_plan():
    plan = ChunkPlan.manual(8, 2, 2)
    assert plan.chunk_len_coarse == 4
    assert plan.chunk_len_fine == 2
    assert plan.use_coarse
    with pytest.raises(InputError):
        ChunkPlan.manual(8, 3)
    with pytest.raises(InputError):
        ChunkPlan.manual(4, 4, 2)


@pytest.mark.parametrize('kwargs', [dict(l2_bytes=0), dict(cache_line_bytes=48), dict(val_bytes=-1)])
def test_system_params_validation(kwargs):
    with pytest.raises(InputError):
        SystemParams(**kwargs)


def test_dense_accum_bytes_per_phase():
    sys = SystemParams()
    assert sys.dense_accum_bytes(Phase.NUMERIC) == 9
    assert sys.dense_accum_bytes(Phase.SYMBOLIC) == 1
    assert sys.element_bytes == 16


def test_detection_returns_valid_params():
    sys = detect_system_params()
    assert is_pow2(sys.cache_line_bytes)
    assert sys.l2_bytes > 0 and sys.memory_budget_bytes > 0


def test_resolution_order():
    settings = Settings(l2_bytes=8192, cache_line=128)
    sys = resolve_system_params(l2_bytes=4096, settings=settings)
    assert sys.l2_bytes == 4096
    assert sys.cache_line_bytes == 128
    assert resolve_system_params(mem_budget=1 << 20).memory_budget_bytes == 1 << 20
