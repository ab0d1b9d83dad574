"""Coarse-level locality generation for rows whose fine level would not fit in L2.

Rows are processed in batches. For each batch the intermediate product of all
its rows is generated outer-product style from a CSC copy of the batch rows of
A, reordered into ``n_chunks_coarse`` chunks per row, and only then handed to
the fine level one (row, coarse chunk) at a time.
"""
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from loguru import logger
from numba import njit

from .accumulators import AccumThresholds
from .csr import INDEX_DTYPE, VALUE_DTYPE, CsrMatrix, csr_rows_to_csc
from .errors import OverBudgetError, kernel_contract
from .fine_level import FineScratch, exclusive_offsets_kernel, fine_accumulate_kernel, fine_histogram_kernel, \
    fine_level_chunk, fine_reorder_kernel
from .gustavson import RowStats
from .planner import ChunkPlan, SystemParams
from .workers import WorkList


@dataclass(frozen=True, eq=False)
class CoarseBatch:
    """Reordered intermediate product of one batch.

    ``offsets[r, q]`` is where coarse chunk ``q`` of local row ``r`` starts in
    ``col``/``val``; ``offsets[r, n_chunks]`` equals ``offsets[r + 1, 0]``.
    """
    coarse_rows_c: np.ndarray
    coarse_rows_b: np.ndarray
    counts: np.ndarray
    offsets: np.ndarray
    col: np.ndarray
    val: np.ndarray

    @property
    def n_elements(self) -> int:
        return int(self.offsets[-1, -1]) if self.offsets.size else 0


def build_coarse_batches(coarse_rows: Sequence[int], stats: RowStats, plan: ChunkPlan,
                         sys: SystemParams) -> List[np.ndarray]:
    """Greedy batches of coarse rows.

    A batch closes before a row that would push the buffered intermediate
    product past the memory budget or the chunking metadata past L2.
    """
    coarse_rows = np.asarray(coarse_rows, dtype=INDEX_DTYPE)
    element_bytes = sys.element_bytes
    row_meta_bytes = plan.n_chunks_coarse * plan.s_chunk_fine
    budget = sys.memory_budget_bytes
    batches = []
    start = 0
    buffered = 0
    for k, row in enumerate(coarse_rows):
        needed = int(stats.inter_size[row]) * element_bytes
        if needed > budget:
            raise OverBudgetError(int(row), needed, budget)
        n_rows = k - start
        if n_rows and (buffered + needed > budget or (n_rows + 1) * row_meta_bytes > sys.l2_bytes):
            batches.append(coarse_rows[start:k])
            start = k
            buffered = 0
        buffered += needed
    if coarse_rows.size:
        batches.append(coarse_rows[start:])
    logger.debug(f'{coarse_rows.size} coarse rows in {len(batches)} batches')
    return batches


# --- kernels --- #

@njit(nogil=True, cache=True)
def referenced_rows_kernel(a_row_ptr, a_col, rows, n_b_rows):
    bitmap = np.zeros(n_b_rows, dtype=np.uint8)
    for r in range(rows.shape[0]):
        i = rows[r]
        for k in range(a_row_ptr[i], a_row_ptr[i + 1]):
            bitmap[a_col[k]] = 1
    return np.flatnonzero(bitmap)


@njit(nogil=True, cache=True)
def coarse_histogram_kernel(csc_col_ptr, csc_row, b_row_ptr, b_col, rows_b, shift, counts):
    n_chunks = counts.shape[1]
    for t in range(rows_b.shape[0]):
        i = rows_b[t]
        for j in range(csc_col_ptr[i], csc_col_ptr[i + 1]):
            r = csc_row[j]
            for k in range(b_row_ptr[i], b_row_ptr[i + 1]):
                q = b_col[k] >> shift
                if q >= n_chunks:
                    raise AssertionError('column index outside the coarse chunk range')
                counts[r, q] += 1


@njit(nogil=True, cache=True)
def coarse_offsets_kernel(counts, offsets):
    # inclusive scan per row, continuing from the previous row's total
    total = 0
    for r in range(counts.shape[0]):
        offsets[r, 0] = total
        for q in range(counts.shape[1]):
            total += counts[r, q]
            offsets[r, q + 1] = total


@njit(nogil=True, cache=True)
def coarse_reorder_kernel(csc_col_ptr, csc_row, csc_val, b_row_ptr, b_col, b_val, rows_b, shift,
                          offsets, col_coarse, val_coarse, numeric):
    fill = offsets[:, :-1].copy()
    for t in range(rows_b.shape[0]):
        i = rows_b[t]
        for j in range(csc_col_ptr[i], csc_col_ptr[i + 1]):
            r = csc_row[j]
            av = csc_val[j]
            for k in range(b_row_ptr[i], b_row_ptr[i + 1]):
                c = b_col[k]
                q = c >> shift
                p = fill[r, q]
                fill[r, q] = p + 1
                col_coarse[p] = c - (q << shift)
                if numeric:
                    val_coarse[p] = av * b_val[k]


@njit(nogil=True, cache=True)
def coarse_fine_kernel(col_coarse, val_coarse, offsets, batch_rows, chunk_len_coarse, shift_fine, chunk_len_fine,
                       crossover, sweet_spot, counts, fine_offsets, fill, r_col, r_val, buffer, bitmap, col_buff,
                       sort_col, sort_val, out_col, out_val, group_chunk, group_pos,
                       c_row_ptr, c_col, c_val, row_counts, numeric):
    """Fine level on every (row, coarse chunk) of a reordered batch, depth first."""
    n_coarse = offsets.shape[1] - 1
    for r in range(batch_rows.shape[0]):
        i = batch_rows[r]
        pos = 0
        for q in range(n_coarse):
            lo = offsets[r, q]
            hi = offsets[r, q + 1]
            if hi == lo:
                continue
            fine_histogram_kernel(col_coarse, lo, hi, shift_fine, counts)
            exclusive_offsets_kernel(counts, fine_offsets)
            fine_reorder_kernel(col_coarse, val_coarse, lo, hi, shift_fine, fine_offsets, fill, r_col, r_val,
                                numeric)
            pos, _ = fine_accumulate_kernel(r_col, r_val, fine_offsets, chunk_len_fine, q * chunk_len_coarse,
                                            crossover, sweet_spot, buffer, bitmap, col_buff, sort_col, sort_val,
                                            out_col, out_val, pos, group_chunk, group_pos, numeric)
        if numeric:
            start = c_row_ptr[i]
            if start + pos != c_row_ptr[i + 1]:
                raise AssertionError('row size differs from the symbolic row pointer')
            c_col[start:start + pos] = out_col[:pos]
            c_val[start:start + pos] = out_val[:pos]
        else:
            row_counts[i] = pos


# --- public API --- #

def generate_coarse_chunks(a: CsrMatrix, b: CsrMatrix, batch_rows: np.ndarray, plan: ChunkPlan,
                           numeric: bool = True) -> CoarseBatch:
    """Intermediate product of a batch reordered into coarse chunks (values only when numeric)."""
    batch_rows = np.asarray(batch_rows, dtype=INDEX_DTYPE)
    rows_b = referenced_rows_kernel(a.row_ptr, a.col, batch_rows, b.n_rows)
    a_hat = csr_rows_to_csc(a, batch_rows)
    counts = np.zeros((batch_rows.size, plan.n_chunks_coarse), dtype=INDEX_DTYPE)
    with kernel_contract():
        coarse_histogram_kernel(a_hat.col_ptr, a_hat.row, b.row_ptr, b.col, rows_b, plan.shift_coarse, counts)
    offsets = np.zeros((batch_rows.size, plan.n_chunks_coarse + 1), dtype=INDEX_DTYPE)
    coarse_offsets_kernel(counts, offsets)
    n_elements = int(offsets[-1, -1]) if batch_rows.size else 0
    col = np.empty(n_elements, dtype=INDEX_DTYPE)
    val = np.empty(n_elements if numeric else 0, dtype=VALUE_DTYPE)
    coarse_reorder_kernel(a_hat.col_ptr, a_hat.row, a_hat.val, b.row_ptr, b.col, b.val, rows_b,
                          plan.shift_coarse, offsets, col, val, numeric)
    return CoarseBatch(batch_rows, rows_b, counts, offsets, col, val)


def _fine_pass(batch: CoarseBatch, plan: ChunkPlan, thresholds: AccumThresholds, fine: FineScratch,
               c_row_ptr, c_col, c_val, row_counts, numeric: bool) -> None:
    row_sizes = np.diff(batch.offsets[:, [0, -1]], axis=1).ravel()
    fine.ensure(int(row_sizes.max(initial=0)))
    acc = fine.acc
    with kernel_contract():
        coarse_fine_kernel(batch.col, batch.val, batch.offsets, batch.coarse_rows_c, plan.chunk_len_coarse,
                           plan.shift_fine, plan.chunk_len_fine,
                           thresholds.sort_dense_crossover, thresholds.sort_sweet_spot,
                           fine.counts, fine.offsets, fine.fill, fine.r_col, fine.r_val,
                           acc.buffer, acc.bitmap, acc.col_buff, fine.sort_col, fine.sort_val,
                           fine.out_col, fine.out_val, fine.group_chunk, fine.group_pos,
                           c_row_ptr, c_col, c_val, row_counts, numeric)


def coarse_level_batch(a: CsrMatrix, b: CsrMatrix, batch_rows: np.ndarray, plan: ChunkPlan,
                       thresholds: AccumThresholds = AccumThresholds()) -> CsrMatrix:
    """Rows of C for one batch, as a CSR matrix over the batch rows (chunk-ordered rows)."""
    batch_rows = np.asarray(batch_rows, dtype=INDEX_DTYPE)
    fine = FineScratch.for_plan(plan)
    local = np.arange(batch_rows.size, dtype=INDEX_DTYPE)
    counts = np.zeros(batch_rows.size, dtype=INDEX_DTYPE)
    no_i, no_v = np.zeros(0, dtype=INDEX_DTYPE), np.zeros(0, dtype=VALUE_DTYPE)

    symbolic = generate_coarse_chunks(a, b, batch_rows, plan, numeric=False)
    _fine_pass(_relabel(symbolic, local), plan, thresholds, fine, no_i, no_i, no_v, counts, False)
    row_ptr = np.zeros(batch_rows.size + 1, dtype=INDEX_DTYPE)
    np.cumsum(counts, out=row_ptr[1:])
    col = np.empty(row_ptr[-1], dtype=INDEX_DTYPE)
    val = np.empty(row_ptr[-1], dtype=VALUE_DTYPE)
    batch = generate_coarse_chunks(a, b, batch_rows, plan, numeric=True)
    _fine_pass(_relabel(batch, local), plan, thresholds, fine, row_ptr, col, val, counts, True)
    return CsrMatrix(batch_rows.size, b.n_cols, row_ptr, col, val, canonical=False)


def _relabel(batch: CoarseBatch, rows: np.ndarray) -> CoarseBatch:
    return CoarseBatch(rows, batch.coarse_rows_b, batch.counts, batch.offsets, batch.col, batch.val)


def coarse_chunk_outputs(batch: CoarseBatch, plan: ChunkPlan, thresholds: AccumThresholds = AccumThresholds(),
                         emit: Optional[Callable[[int, int, np.ndarray, np.ndarray], None]] = None) -> None:
    """Walk a numeric batch chunk by chunk; emit(row, column base, cols, vals) per accumulated group."""
    for r, row in enumerate(batch.coarse_rows_c):
        for q in range(plan.n_chunks_coarse):
            lo, hi = batch.offsets[r, q], batch.offsets[r, q + 1]
            if hi == lo:
                continue
            fine_level_chunk(batch.col[lo:hi], batch.val[lo:hi], plan, thresholds,
                             emit=None if emit is None else (lambda base, c, v, row=int(row): emit(row, base, c, v)),
                             col_base=q * plan.chunk_len_coarse)


def run_coarse_batches(a: CsrMatrix, b: CsrMatrix, batches: List[np.ndarray], plan: ChunkPlan,
                       thresholds: AccumThresholds, c_row_ptr: np.ndarray, c_col: np.ndarray, c_val: np.ndarray,
                       row_counts: np.ndarray, numeric: bool) -> WorkList:
    """Whole batches per worker, each with its own CSC copy and chunk buffers."""
    def body(lo, hi, scratch):
        for k in range(lo, hi):
            batch = generate_coarse_chunks(a, b, batches[k], plan, numeric)
            _fine_pass(batch, plan, thresholds, scratch.fine, c_row_ptr, c_col, c_val, row_counts, numeric)
    return WorkList('coarse', len(batches), body, block=1)
