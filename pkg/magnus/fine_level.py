"""Fine-level locality generation.

A stream of column indices is split into ``n_chunks_fine`` chunks of
``chunk_len_fine`` columns by ``col >> shift_fine``. Three passes produce the
reordered stream (histogram, exclusive offsets, stable reorder into
chunk-local indices) and each chunk is then accumulated on its own: chunks with
at least ``sort_dense_crossover`` elements go to the dense accumulator, runs of
smaller chunks are grouped and sorted together.
"""
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from numba import njit

from .accumulators import AccumThresholds, DenseAccumulator, closes_sort_group, dense_accumulate_into, \
    sort_accumulate_into
from .csr import INDEX_DTYPE, VALUE_DTYPE, CsrMatrix
from .errors import InputError, kernel_contract
from .gustavson import row_intermediate_stats
from .planner import ChunkPlan
from .workers import WorkList

# emit(global column base, cols, vals) once per accumulated group
Emit = Callable[[int, np.ndarray, np.ndarray], None]


@dataclass(frozen=True, eq=False)
class FineReorder:
    counts: np.ndarray
    offsets: np.ndarray
    col: np.ndarray
    val: np.ndarray


class FineScratch:
    """Worker-local fine-level arrays for one plan."""

    def __init__(self, n_chunks: int, chunk_len: int) -> None:
        self.counts = np.zeros(n_chunks, dtype=INDEX_DTYPE)
        self.offsets = np.zeros(n_chunks + 1, dtype=INDEX_DTYPE)
        self.fill = np.zeros(n_chunks, dtype=INDEX_DTYPE)
        self.group_chunk = np.zeros(n_chunks + 1, dtype=INDEX_DTYPE)
        self.group_pos = np.zeros(n_chunks + 1, dtype=INDEX_DTYPE)
        self.acc = DenseAccumulator(chunk_len)
        self.capacity = 0
        self._allocate(0)

    @classmethod
    def for_plan(cls, plan: ChunkPlan) -> 'FineScratch':
        return cls(plan.n_chunks_fine, plan.chunk_len_fine)

    def _allocate(self, size: int) -> None:
        self.capacity = size
        self.r_col = np.empty(size, dtype=INDEX_DTYPE)
        self.r_val = np.empty(size, dtype=VALUE_DTYPE)
        self.sort_col = np.empty(size, dtype=INDEX_DTYPE)
        self.sort_val = np.empty(size, dtype=VALUE_DTYPE)
        self.out_col = np.empty(size, dtype=INDEX_DTYPE)
        self.out_val = np.empty(size, dtype=VALUE_DTYPE)

    def ensure(self, size: int) -> 'FineScratch':
        if size > self.capacity:
            self._allocate(max(size, 2 * self.capacity))
        return self


# --- kernels --- #

@njit(nogil=True, cache=True)
def fine_histogram_kernel(cols, lo, hi, shift, counts):
    n_chunks = counts.shape[0]
    counts[:] = 0
    for k in range(lo, hi):
        q = cols[k] >> shift
        if cols[k] < 0 or q >= n_chunks:
            raise AssertionError('column index outside the chunk-local range')
        counts[q] += 1


@njit(nogil=True, cache=True)
def exclusive_offsets_kernel(counts, offsets):
    offsets[0] = 0
    for q in range(counts.shape[0]):
        offsets[q + 1] = offsets[q] + counts[q]


@njit(nogil=True, cache=True)
def fine_reorder_kernel(cols, vals, lo, hi, shift, offsets, fill, r_col, r_val, numeric):
    for q in range(fill.shape[0]):
        fill[q] = offsets[q]
    for k in range(lo, hi):
        c = cols[k]
        q = c >> shift
        p = fill[q]
        fill[q] = p + 1
        r_col[p] = c - (q << shift)
        if numeric:
            r_val[p] = vals[k]


@njit(nogil=True, cache=True)
def fine_accumulate_kernel(r_col, r_val, offsets, chunk_len, col_base, crossover, sweet_spot,
                           buffer, bitmap, col_buff, sort_col, sort_val, out_col, out_val, pos,
                           group_chunk, group_pos, numeric):
    """Accumulate every chunk of a reordered stream; returns (end position, group count).

    Group g starts at chunk group_chunk[g] and output position group_pos[g].
    Empty chunks are skipped without closing a sort group.
    """
    n_chunks = offsets.shape[0] - 1
    n_groups = 0
    q = 0
    while q < n_chunks:
        cnt = offsets[q + 1] - offsets[q]
        if cnt == 0:
            q += 1
            continue
        group_chunk[n_groups] = q
        group_pos[n_groups] = pos
        n_groups += 1
        if cnt >= crossover:
            pos = dense_accumulate_into(r_col, r_val, offsets[q], offsets[q + 1], buffer, bitmap, col_buff,
                                        col_base + q * chunk_len, out_col, out_val, pos, numeric)
            q += 1
            continue
        end = q + 1
        total = cnt
        t = q + 1
        while t < n_chunks:
            following = offsets[t + 1] - offsets[t]
            if following == 0:
                t += 1
                continue
            if following >= crossover or closes_sort_group(total, following, sweet_spot):
                break
            total += following
            t += 1
            end = t
        w = 0
        for g in range(q, end):
            shift_back = g * chunk_len
            for e in range(offsets[g], offsets[g + 1]):
                sort_col[w] = r_col[e] + shift_back
                if numeric:
                    sort_val[w] = r_val[e]
                w += 1
        pos = sort_accumulate_into(sort_col, sort_val, 0, w, col_base, out_col, out_val, pos, numeric)
        q = end
    group_chunk[n_groups] = n_chunks
    group_pos[n_groups] = pos
    return pos, n_groups


@njit(nogil=True, cache=True)
def fine_rows_kernel(a_row_ptr, a_col, a_val, b_row_ptr, b_col, b_val, rows, lo, hi, shift, chunk_len,
                     crossover, sweet_spot, counts, offsets, fill, r_col, r_val, buffer, bitmap, col_buff,
                     sort_col, sort_val, out_col, out_val, group_chunk, group_pos,
                     c_row_ptr, c_col, c_val, row_counts, numeric):
    """Fine level for rows[lo:hi], reading A and B directly in both passes."""
    n_chunks = counts.shape[0]
    for r in range(lo, hi):
        i = rows[r]
        counts[:] = 0
        for k in range(a_row_ptr[i], a_row_ptr[i + 1]):
            j = a_col[k]
            for l in range(b_row_ptr[j], b_row_ptr[j + 1]):
                q = b_col[l] >> shift
                if q >= n_chunks:
                    raise AssertionError('column index outside the chunk-local range')
                counts[q] += 1
        exclusive_offsets_kernel(counts, offsets)
        for q in range(n_chunks):
            fill[q] = offsets[q]
        for k in range(a_row_ptr[i], a_row_ptr[i + 1]):
            j = a_col[k]
            av = a_val[k]
            for l in range(b_row_ptr[j], b_row_ptr[j + 1]):
                c = b_col[l]
                q = c >> shift
                p = fill[q]
                fill[q] = p + 1
                r_col[p] = c - (q << shift)
                if numeric:
                    r_val[p] = av * b_val[l]
        n_out, _ = fine_accumulate_kernel(r_col, r_val, offsets, chunk_len, 0, crossover, sweet_spot,
                                          buffer, bitmap, col_buff, sort_col, sort_val, out_col, out_val,
                                          0, group_chunk, group_pos, numeric)
        if numeric:
            start = c_row_ptr[i]
            if start + n_out != c_row_ptr[i + 1]:
                raise AssertionError('row size differs from the symbolic row pointer')
            c_col[start:start + n_out] = out_col[:n_out]
            c_val[start:start + n_out] = out_val[:n_out]
        else:
            row_counts[i] = n_out


# --- public API --- #

def _stream(cols, vals):
    cols = np.ascontiguousarray(cols, dtype=INDEX_DTYPE)
    vals = np.ascontiguousarray(vals, dtype=VALUE_DTYPE)
    if vals.shape != cols.shape:
        raise InputError('cols and vals must have the same length')
    return cols, vals


def fine_histogram(cols, plan: ChunkPlan) -> np.ndarray:
    cols = np.ascontiguousarray(cols, dtype=INDEX_DTYPE)
    counts = np.zeros(plan.n_chunks_fine, dtype=INDEX_DTYPE)
    with kernel_contract():
        fine_histogram_kernel(cols, 0, cols.size, plan.shift_fine, counts)
    return counts


def exclusive_offsets(counts: np.ndarray) -> np.ndarray:
    offsets = np.zeros(counts.size + 1, dtype=INDEX_DTYPE)
    exclusive_offsets_kernel(np.asarray(counts, dtype=INDEX_DTYPE), offsets)
    return offsets


def fine_reorder(cols, vals, plan: ChunkPlan) -> FineReorder:
    """Stable reorder into fine chunks with chunk-local column indices."""
    cols, vals = _stream(cols, vals)
    counts = fine_histogram(cols, plan)
    offsets = exclusive_offsets(counts)
    r_col = np.empty(cols.size, dtype=INDEX_DTYPE)
    r_val = np.empty(cols.size, dtype=VALUE_DTYPE)
    fill = np.zeros(plan.n_chunks_fine, dtype=INDEX_DTYPE)
    fine_reorder_kernel(cols, vals, 0, cols.size, plan.shift_fine, offsets, fill, r_col, r_val, True)
    return FineReorder(counts, offsets, r_col, r_val)


def fine_level_chunk(cols, vals, plan: ChunkPlan, thresholds: AccumThresholds = AccumThresholds(),
                     emit: Optional[Emit] = None, col_base: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Fine level over one chunk-local stream; returns the accumulated (col, val).

    Output columns are global (``col_base`` added back) and chunk-ordered; inside
    a dense chunk they follow first occurrence.
    """
    reordered = fine_reorder(cols, vals, plan)
    scratch = FineScratch.for_plan(plan).ensure(reordered.col.size)
    acc = scratch.acc
    n_out, n_groups = fine_accumulate_kernel(
        reordered.col, reordered.val, reordered.offsets, plan.chunk_len_fine, col_base,
        thresholds.sort_dense_crossover, thresholds.sort_sweet_spot, acc.buffer, acc.bitmap, acc.col_buff,
        scratch.sort_col, scratch.sort_val, scratch.out_col, scratch.out_val, 0,
        scratch.group_chunk, scratch.group_pos, True)
    out_col = scratch.out_col[:n_out].copy()
    out_val = scratch.out_val[:n_out].copy()
    if emit is not None:
        for g in range(n_groups):
            lo, hi = scratch.group_pos[g], scratch.group_pos[g + 1]
            emit(col_base + int(scratch.group_chunk[g]) * plan.chunk_len_fine, out_col[lo:hi], out_val[lo:hi])
    return out_col, out_val


def run_fine_rows(a: CsrMatrix, b: CsrMatrix, rows: np.ndarray, plan: ChunkPlan, thresholds: AccumThresholds,
                  inter_size: np.ndarray, c_row_ptr: np.ndarray, c_col: np.ndarray, c_val: np.ndarray,
                  row_counts: np.ndarray, numeric: bool) -> WorkList:
    def body(lo, hi, scratch):
        fine = scratch.fine.ensure(int(inter_size[rows[lo:hi]].max(initial=0)))
        acc = fine.acc
        fine_rows_kernel(a.row_ptr, a.col, a.val, b.row_ptr, b.col, b.val, rows, lo, hi,
                         plan.shift_fine, plan.chunk_len_fine,
                         thresholds.sort_dense_crossover, thresholds.sort_sweet_spot,
                         fine.counts, fine.offsets, fine.fill, fine.r_col, fine.r_val,
                         acc.buffer, acc.bitmap, acc.col_buff, fine.sort_col, fine.sort_val,
                         fine.out_col, fine.out_val, fine.group_chunk, fine.group_pos,
                         c_row_ptr, c_col, c_val, row_counts, numeric)
    return WorkList('fine', rows.size, body)


class _RowScratch:
    def __init__(self, plan: ChunkPlan) -> None:
        self.fine = FineScratch.for_plan(plan)


def fine_level_row(a: CsrMatrix, b: CsrMatrix, row: int, plan: ChunkPlan,
                   thresholds: AccumThresholds = AccumThresholds()) -> Tuple[np.ndarray, np.ndarray]:
    """One row of C through the fine level; output is chunk-ordered."""
    if not 0 <= row < a.n_rows:
        raise InputError(f'row {row} is outside a matrix with {a.n_rows} rows')
    rows = np.array([row], dtype=INDEX_DTYPE)
    inter_size = row_intermediate_stats(a, b).inter_size
    row_counts = np.zeros(a.n_rows, dtype=INDEX_DTYPE)
    scratch = _RowScratch(plan)
    empty_i, empty_v = np.zeros(0, dtype=INDEX_DTYPE), np.zeros(0, dtype=VALUE_DTYPE)
    count_pass = run_fine_rows(a, b, rows, plan, thresholds, inter_size, empty_i, empty_i, empty_v,
                               row_counts, False)
    with kernel_contract():
        count_pass.body(0, 1, scratch)
    n_out = int(row_counts[row])
    c_row_ptr = np.zeros(a.n_rows + 1, dtype=INDEX_DTYPE)
    c_row_ptr[row + 1:] = n_out
    c_col = np.empty(n_out, dtype=INDEX_DTYPE)
    c_val = np.empty(n_out, dtype=VALUE_DTYPE)
    fill_pass = run_fine_rows(a, b, rows, plan, thresholds, inter_size, c_row_ptr, c_col, c_val,
                              row_counts, True)
    with kernel_contract():
        fill_pass.body(0, 1, scratch)
    return c_col, c_val
