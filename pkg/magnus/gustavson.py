"""Baseline SpGEMM: dense-accumulation Gustavson, expand-sort-compress, and a
dense-row reference used as the ground truth in tests.

The row kernels here take an explicit row list and a per-row column base so
the MAGNUS engine can reuse them for its sort and dense categories.
"""
import time
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from loguru import logger
from numba import njit

from .accumulators import (DenseAccumulator, bitmap_clear, bitmap_insert, dense_drain, dense_insert,
                           sort_accumulate_into)
from .config import REFERENCE_MAX_COLS
from .csr import INDEX_DTYPE, VALUE_DTYPE, CsrMatrix, check_conformable, sort_rows_kernel
from .errors import ContractViolation, DimensionError, InputError, kernel_contract
from .workers import WorkList, run_dynamic

ALGORITHMS = ('dense', 'esc')


@dataclass
class SpgemmResult:
    c: CsrMatrix
    phase_timings: Dict[str, float] = field(default_factory=dict)
    counters: Dict[str, int] = field(default_factory=dict)

    @property
    def total_seconds(self) -> float:
        return sum(self.phase_timings.values())


@dataclass(frozen=True, eq=False)
class RowStats:
    """Per-row intermediate-product size and column range; empty rows have min 0, max -1."""
    inter_size: np.ndarray
    min_col: np.ndarray
    max_col: np.ndarray

    @property
    def n_inter_prod(self) -> int:
        return int(self.inter_size.sum())

    @property
    def row_range(self) -> np.ndarray:
        return self.max_col - self.min_col + 1


class RowScratch:
    """Worker-local buffers for the row kernels, grown geometrically."""

    def __init__(self, dense_capacity: int = 0) -> None:
        self.acc = DenseAccumulator(dense_capacity)
        self.buf_col = np.empty(0, dtype=INDEX_DTYPE)
        self.buf_val = np.empty(0, dtype=VALUE_DTYPE)
        self.out_col = np.empty(0, dtype=INDEX_DTYPE)
        self.out_val = np.empty(0, dtype=VALUE_DTYPE)

    def ensure_buffers(self, size: int) -> 'RowScratch':
        if size > self.buf_col.size:
            size = max(size, 2 * self.buf_col.size)
            self.buf_col = np.empty(size, dtype=INDEX_DTYPE)
            self.buf_val = np.empty(size, dtype=VALUE_DTYPE)
            self.out_col = np.empty(size, dtype=INDEX_DTYPE)
            self.out_val = np.empty(size, dtype=VALUE_DTYPE)
        return self


INT64_MAX = np.iinfo(np.int64).max
NO_INDEX = np.zeros(0, dtype=INDEX_DTYPE)
NO_VALUE = np.zeros(0, dtype=VALUE_DTYPE)


def counts_to_row_ptr(counts: np.ndarray) -> np.ndarray:
    row_ptr = np.zeros(counts.size + 1, dtype=INDEX_DTYPE)
    np.cumsum(counts, out=row_ptr[1:])
    return row_ptr


def inter_product_size(a: CsrMatrix, b: CsrMatrix) -> int:
    return int(b.row_nnz()[a.col].sum())


# --- kernels --- #

@njit(nogil=True, cache=True)
def row_stats_kernel(a_row_ptr, a_col, b_row_ptr, b_col):
    n_b = b_row_ptr.shape[0] - 1
    b_min = np.zeros(n_b, dtype=np.int64)
    b_max = np.full(n_b, -1, dtype=np.int64)
    for j in range(n_b):
        lo = b_row_ptr[j]
        hi = b_row_ptr[j + 1]
        if hi > lo:
            mn = b_col[lo]
            mx = b_col[lo]
            for l in range(lo + 1, hi):
                if b_col[l] < mn:
                    mn = b_col[l]
                elif b_col[l] > mx:
                    mx = b_col[l]
            b_min[j] = mn
            b_max[j] = mx
    n_a = a_row_ptr.shape[0] - 1
    inter = np.zeros(n_a, dtype=np.int64)
    min_col = np.zeros(n_a, dtype=np.int64)
    max_col = np.full(n_a, -1, dtype=np.int64)
    for i in range(n_a):
        size = 0
        mn = INT64_MAX
        mx = -1
        for k in range(a_row_ptr[i], a_row_ptr[i + 1]):
            j = a_col[k]
            nnz_j = b_row_ptr[j + 1] - b_row_ptr[j]
            if nnz_j:
                size += nnz_j
                mn = min(mn, b_min[j])
                mx = max(mx, b_max[j])
        if size:
            inter[i] = size
            min_col[i] = mn
            max_col[i] = mx
    return inter, min_col, max_col


@njit(nogil=True, cache=True)
def reference_kernel(a_row_ptr, a_col, a_val, b_row_ptr, b_col, b_val, n_cols):
    n = a_row_ptr.shape[0] - 1
    dense = np.zeros(n_cols, dtype=np.float64)
    touched = np.zeros(n_cols, dtype=np.uint8)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        count = 0
        for k in range(a_row_ptr[i], a_row_ptr[i + 1]):
            j = a_col[k]
            for l in range(b_row_ptr[j], b_row_ptr[j + 1]):
                if touched[b_col[l]] == 0:
                    touched[b_col[l]] = 1
                    count += 1
        row_ptr[i + 1] = row_ptr[i] + count
        touched[:] = 0
    col = np.empty(row_ptr[n], dtype=np.int64)
    val = np.empty(row_ptr[n], dtype=np.float64)
    for i in range(n):
        for k in range(a_row_ptr[i], a_row_ptr[i + 1]):
            j = a_col[k]
            av = a_val[k]
            for l in range(b_row_ptr[j], b_row_ptr[j + 1]):
                touched[b_col[l]] = 1
                dense[b_col[l]] += av * b_val[l]
        w = row_ptr[i]
        for c in range(n_cols):
            if touched[c]:
                col[w] = c
                val[w] = dense[c]
                w += 1
                touched[c] = 0
                dense[c] = 0.0
    return row_ptr, col, val


@njit(nogil=True, cache=True)
def dense_rows_kernel(a_row_ptr, a_col, a_val, b_row_ptr, b_col, b_val, rows, lo, hi, base,
                      buffer, bitmap, col_buff, c_row_ptr, c_col, c_val, counts, numeric):
    """Dense accumulation of rows[lo:hi]; column c lands in slot c - base[row]."""
    for r in range(lo, hi):
        i = rows[r]
        off = base[i]
        count = 0
        if numeric:
            for k in range(a_row_ptr[i], a_row_ptr[i + 1]):
                j = a_col[k]
                av = a_val[k]
                for l in range(b_row_ptr[j], b_row_ptr[j + 1]):
                    count = dense_insert(b_col[l] - off, av * b_val[l], buffer, bitmap, col_buff, count)
            if c_row_ptr[i] + count != c_row_ptr[i + 1]:
                bitmap_clear(bitmap, col_buff, count)
                raise AssertionError('row size differs from the symbolic row pointer')
            dense_drain(buffer, bitmap, col_buff, count, off, c_col, c_val, c_row_ptr[i])
        else:
            for k in range(a_row_ptr[i], a_row_ptr[i + 1]):
                j = a_col[k]
                for l in range(b_row_ptr[j], b_row_ptr[j + 1]):
                    count = bitmap_insert(b_col[l] - off, bitmap, col_buff, count)
            bitmap_clear(bitmap, col_buff, count)
            counts[i] = count


@njit(nogil=True, cache=True)
def esc_rows_kernel(a_row_ptr, a_col, a_val, b_row_ptr, b_col, b_val, rows, lo, hi,
                    buf_col, buf_val, out_col, out_val, c_row_ptr, c_col, c_val, counts, numeric):
    """Expand each row of rows[lo:hi] into the buffers, sort, compress."""
    for r in range(lo, hi):
        i = rows[r]
        n = 0
        for k in range(a_row_ptr[i], a_row_ptr[i + 1]):
            j = a_col[k]
            av = a_val[k]
            for l in range(b_row_ptr[j], b_row_ptr[j + 1]):
                buf_col[n] = b_col[l]
                if numeric:
                    buf_val[n] = av * b_val[l]
                n += 1
        count = sort_accumulate_into(buf_col, buf_val, 0, n, 0, out_col, out_val, 0, numeric)
        if numeric:
            start = c_row_ptr[i]
            if start + count != c_row_ptr[i + 1]:
                raise AssertionError('row size differs from the symbolic row pointer')
            c_col[start:start + count] = out_col[:count]
            c_val[start:start + count] = out_val[:count]
        else:
            counts[i] = count


# --- drivers --- #

def row_intermediate_stats(a: CsrMatrix, b: CsrMatrix) -> RowStats:
    """Intermediate-product size and column range per row of C, without forming the product."""
    check_conformable(a, b)
    inter, min_col, max_col = row_stats_kernel(a.row_ptr, a.col, b.row_ptr, b.col)
    return RowStats(inter, min_col, max_col)


def spgemm_reference(a: CsrMatrix, b: CsrMatrix) -> CsrMatrix:
    """Ground-truth product through a full dense row, drained in column order."""
    check_conformable(a, b)
    if b.n_cols > REFERENCE_MAX_COLS:
        raise DimensionError(f'reference product supports at most {REFERENCE_MAX_COLS} columns, '
                             f'got {b.n_cols}')
    row_ptr, col, val = reference_kernel(a.row_ptr, a.col, a.val, b.row_ptr, b.col, b.val, b.n_cols)
    return CsrMatrix(a.n_rows, b.n_cols, row_ptr, col, val)


def run_dense_rows(a: CsrMatrix, b: CsrMatrix, rows: np.ndarray, base: np.ndarray, capacity: int,
                   c_row_ptr: np.ndarray, c_col: np.ndarray, c_val: np.ndarray, counts: np.ndarray,
                   numeric: bool, name: str = 'dense') -> WorkList:
    def body(lo, hi, scratch):
        acc = scratch.acc.ensure(capacity)
        dense_rows_kernel(a.row_ptr, a.col, a.val, b.row_ptr, b.col, b.val, rows, lo, hi, base,
                          acc.buffer, acc.bitmap, acc.col_buff, c_row_ptr, c_col, c_val, counts, numeric)
    return WorkList(name, rows.size, body)


def run_esc_rows(a: CsrMatrix, b: CsrMatrix, rows: np.ndarray, inter_size: np.ndarray,
                 c_row_ptr: np.ndarray, c_col: np.ndarray, c_val: np.ndarray, counts: np.ndarray,
                 numeric: bool, name: str = 'sort') -> WorkList:
    def body(lo, hi, scratch):
        scratch.ensure_buffers(int(inter_size[rows[lo:hi]].max(initial=0)))
        esc_rows_kernel(a.row_ptr, a.col, a.val, b.row_ptr, b.col, b.val, rows, lo, hi,
                        scratch.buf_col, scratch.buf_val, scratch.out_col, scratch.out_val,
                        c_row_ptr, c_col, c_val, counts, numeric)
    return WorkList(name, rows.size, body)


def canonicalize_output(row_ptr: np.ndarray, col: np.ndarray, val: np.ndarray, threads: int = 1) -> None:
    """Sort every row of a freshly written C in place."""
    n = row_ptr.size - 1

    def body(lo, hi, _):
        sort_rows_kernel(row_ptr, col, val, lo, hi)
    run_dynamic([WorkList('canonicalize', n, body)], threads, lambda: None)


def _all_rows(a: CsrMatrix) -> np.ndarray:
    return np.arange(a.n_rows, dtype=INDEX_DTYPE)


def gustavson_dense_symbolic(a: CsrMatrix, b: CsrMatrix, threads: int = 1) -> np.ndarray:
    """Exact row pointer of C from a bitmap-only pass."""
    check_conformable(a, b)
    counts = np.zeros(a.n_rows, dtype=INDEX_DTYPE)
    base = np.zeros(a.n_rows, dtype=INDEX_DTYPE)
    work = run_dense_rows(a, b, _all_rows(a), base, b.n_cols, NO_INDEX, NO_INDEX, NO_VALUE, counts, False)
    run_dynamic([work], threads, lambda: RowScratch(b.n_cols))
    return counts_to_row_ptr(counts)


def _check_row_ptr(a: CsrMatrix, row_ptr: np.ndarray) -> None:
    if row_ptr.shape != (a.n_rows + 1,) or row_ptr[0] != 0 or np.any(np.diff(row_ptr) < 0):
        raise ContractViolation('row pointer does not belong to this product')


def _finish(a: CsrMatrix, b: CsrMatrix, row_ptr, col, val, timings, threads) -> SpgemmResult:
    start = time.perf_counter()
    canonicalize_output(row_ptr, col, val, threads)
    timings['canonicalize'] = time.perf_counter() - start
    c = CsrMatrix(a.n_rows, b.n_cols, row_ptr, col, val)
    counters = {'n_inter_prod': inter_product_size(a, b), 'nnz_c': c.nnz}
    return SpgemmResult(c, timings, counters)


def gustavson_dense_numeric(a: CsrMatrix, b: CsrMatrix, row_ptr: np.ndarray, threads: int = 1) -> SpgemmResult:
    check_conformable(a, b)
    _check_row_ptr(a, row_ptr)
    start = time.perf_counter()
    col = np.empty(row_ptr[-1], dtype=INDEX_DTYPE)
    val = np.empty(row_ptr[-1], dtype=VALUE_DTYPE)
    base = np.zeros(a.n_rows, dtype=INDEX_DTYPE)
    work = run_dense_rows(a, b, _all_rows(a), base, b.n_cols, row_ptr, col, val, NO_INDEX, True)
    with kernel_contract():
        run_dynamic([work], threads, lambda: RowScratch(b.n_cols))
    timings = {'numeric': time.perf_counter() - start}
    return _finish(a, b, row_ptr, col, val, timings, threads)


def gustavson_esc_numeric(a: CsrMatrix, b: CsrMatrix, row_ptr: np.ndarray, threads: int = 1,
                          stats: Optional[RowStats] = None) -> SpgemmResult:
    check_conformable(a, b)
    _check_row_ptr(a, row_ptr)
    stats = stats or row_intermediate_stats(a, b)
    start = time.perf_counter()
    col = np.empty(row_ptr[-1], dtype=INDEX_DTYPE)
    val = np.empty(row_ptr[-1], dtype=VALUE_DTYPE)
    work = run_esc_rows(a, b, _all_rows(a), stats.inter_size, row_ptr, col, val, NO_INDEX, True)
    with kernel_contract():
        run_dynamic([work], threads, RowScratch)
    timings = {'numeric': time.perf_counter() - start}
    return _finish(a, b, row_ptr, col, val, timings, threads)


def spgemm_gustavson(a: CsrMatrix, b: CsrMatrix, algorithm: str = 'dense', threads: int = 1) -> SpgemmResult:
    """Symbolic then numeric Gustavson product with per-phase timings."""
    if algorithm not in ALGORITHMS:
        raise InputError(f'unknown Gustavson variant "{algorithm}", expected one of {ALGORITHMS}')
    check_conformable(a, b)
    timings = {}
    start = time.perf_counter()
    stats = row_intermediate_stats(a, b) if algorithm == 'esc' else None
    timings['setup'] = time.perf_counter() - start

    start = time.perf_counter()
    row_ptr = gustavson_dense_symbolic(a, b, threads)
    timings['symbolic'] = time.perf_counter() - start

    if algorithm == 'esc':
        result = gustavson_esc_numeric(a, b, row_ptr, threads, stats)
    else:
        result = gustavson_dense_numeric(a, b, row_ptr, threads)
    result.phase_timings = {**timings, **result.phase_timings}
    logger.debug(f'gustavson-{algorithm}: nnz(C)={result.c.nnz} in {result.total_seconds:.4f}s')
    return result
