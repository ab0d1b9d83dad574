import numpy as np
import pytest
from conftest import scipy_product

from magnus.csr import CsrMatrix, csr_from_triplets, empty_csr, validate_csr
from magnus.errors import ContractViolation, DimensionError, InputError
from magnus.gustavson import (gustavson_dense_numeric, gustavson_dense_symbolic, gustavson_esc_numeric,
                              inter_product_size, row_intermediate_stats, spgemm_gustavson, spgemm_reference)

SHAPES = [
    (1, 1, 1, 1.0),
    (8, 8, 8, 0.0),
    (16, 32, 10, 0.3),
    (64, 40, 90, 0.1),
    (50, 50, 50, 0.5),
    (1, 200, 300, 0.2),
    (120, 3, 7, 0.9),
]


@pytest.mark.parametrize('n, k, m, density', SHAPES)
def test_reference_matches_scipy(make_csr, n, k, m, density):
    a, b = make_csr(n, k, density), make_csr(k, m, density)
    c = spgemm_reference(a, b)
    assert validate_csr(c)
    assert c.same_as(scipy_product(a, b))


@pytest.mark.parametrize('algorithm', ['dense', 'esc'])
@pytest.mark.parametrize('n, k, m, density', SHAPES)
@pytest.mark.parametrize('threads', [1, 3])
def test_gustavson_matches_reference(make_csr, algorithm, n, k, m, density, threads):
    a, b = make_csr(n, k, density), make_csr(k, m, density)
    result = spgemm_gustavson(a, b, algorithm, threads)
    assert validate_csr(result.c)
    assert result.c.same_as(spgemm_reference(a, b))
    assert set(result.phase_timings) == {'setup', 'symbolic', 'numeric', 'canonicalize'}
    assert result.counters['nnz_c'] == result.c.nnz
    assert result.counters['n_inter_prod'] == inter_product_size(a, b)


def test_symbolic_row_pointer_is_exact(make_csr):
    a, b = make_csr(30, 40, 0.2), make_csr(40, 25, 0.2)
    row_ptr = gustavson_dense_symbolic(a, b)
    assert row_ptr.tolist() == scipy_product(a, b).row_ptr.tolist()


def test_numeric_rejects_foreign_row_pointer(make_csr):
    a, b = make_csr(10, 10, 0.5), make_csr(10, 10, 0.5)
    row_ptr = gustavson_dense_symbolic(a, b)
    assert row_ptr[-1] > 0
    with pytest.raises(ContractViolation):
        gustavson_dense_numeric(a, b, np.zeros_like(row_ptr))
    with pytest.raises(ContractViolation):
        gustavson_esc_numeric(a, b, row_ptr[:-1])


def test_small_worked_product():
    a = csr_from_triplets([(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)], 2, 2)
    b = csr_from_triplets([(0, 0, 4.0), (0, 1, 5.0), (1, 1, 6.0)], 2, 2)
    c = spgemm_gustavson(a, b, 'esc').c
    assert c.to_dense().tolist() == [[4.0, 17.0], [0.0, 18.0]]


def test_cancellation_keeps_structural_zero():
    a = csr_from_triplets([(0, 0, 1.0), (0, 1, 1.0)], 1, 2)
    b = csr_from_triplets([(0, 0, 2.0), (1, 0, -2.0)], 2, 1)
    for c in (spgemm_reference(a, b), spgemm_gustavson(a, b, 'dense').c, spgemm_gustavson(a, b, 'esc').c):
        assert c.nnz == 1 and c.val.tolist() == [0.0]


def test_empty_operands():
    a, b = empty_csr(0, 5), empty_csr(5, 3)
    for algorithm in ('dense', 'esc'):
        c = spgemm_gustavson(a, b, algorithm).c
        assert c.shape == (0, 3) and c.nnz == 0
    assert spgemm_reference(empty_csr(4, 0), empty_csr(0, 6)).nnz == 0


def test_row_stats():
    a = csr_from_triplets([(0, 0, 1.0), (0, 2, 1.0), (2, 1, 1.0)], 3, 3)
    b = csr_from_triplets([(0, 4, 1.0), (0, 9, 1.0), (2, 1, 1.0)], 3, 10)
    stats = row_intermediate_stats(a, b)
    assert stats.inter_size.tolist() == [3, 0, 0]
    assert stats.min_col.tolist() == [1, 0, 0]
    assert stats.max_col.tolist() == [9, -1, -1]
    assert stats.row_range.tolist() == [9, 0, 0]
    assert stats.n_inter_prod == 3


def test_dimension_errors(make_csr):
    with pytest.raises(DimensionError):
        spgemm_gustavson(make_csr(3, 4, 0.5), make_csr(5, 4, 0.5))
    wide = CsrMatrix(1, (1 << 16) + 1, np.array([0, 0]), np.zeros(0, dtype=np.int64), np.zeros(0))
    with pytest.raises(DimensionError):
        spgemm_reference(empty_csr(1, 1), wide)


def test_unknown_variant(make_csr):
    with pytest.raises(InputError):
        spgemm_gustavson(make_csr(3, 3, 0.5), make_csr(3, 3, 0.5), 'hash')
