from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from scipy import sparse

from .errors import DimensionError, InputError

INDEX_DTYPE = np.int64
VALUE_DTYPE = np.float64


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse row matrix; immutable once built and shareable across workers."""
    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col: np.ndarray
    val: np.ndarray
    canonical: bool = True

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[self.n_rows])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.n_rows, self.n_cols

    @property
    def col_index_bytes(self) -> int:
        # 4-byte indices are enough up to 2^32 columns
        return 4 if self.n_cols <= (1 << 32) else 8

    def row(self, i: int) -> Tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col[lo:hi], self.val[lo:hi]

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def to_scipy(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.val, self.col, self.row_ptr), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def canonicalized(self) -> 'CsrMatrix':
        if self.canonical:
            return self
        return canonicalize_rows(self)

    def same_as(self, other: 'CsrMatrix') -> bool:
        """Exact equality of shape, structure and values."""
        return (self.shape == other.shape
                and np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.col, other.col)
                and np.array_equal(self.val, other.val))

    def __repr__(self) -> str:
        return f'CsrMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz}, canonical={self.canonical})'


@dataclass(frozen=True, eq=False)
class CscSubMatrix:
    source_rows: np.ndarray
    n_cols: int
    col_ptr: np.ndarray
    row: np.ndarray
    val: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.col_ptr[self.n_cols])


@dataclass
class ValidationReport:
    ok: bool
    message: str = 'OK'
    index: Optional[int] = None

    def __bool__(self) -> bool:
        return self.ok


def empty_csr(n_rows: int, n_cols: int) -> CsrMatrix:
    return CsrMatrix(n_rows, n_cols,
                     np.zeros(n_rows + 1, dtype=INDEX_DTYPE),
                     np.zeros(0, dtype=INDEX_DTYPE),
                     np.zeros(0, dtype=VALUE_DTYPE))


def from_scipy(matrix: sparse.spmatrix) -> CsrMatrix:
    m = sparse.csr_matrix(matrix)
    m.sum_duplicates()
    n_rows, n_cols = m.shape
    return CsrMatrix(int(n_rows), int(n_cols),
                     m.indptr.astype(INDEX_DTYPE),
                     m.indices.astype(INDEX_DTYPE),
                     m.data.astype(VALUE_DTYPE))


def csr_from_coo(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray,
                 n_rows: int, n_cols: int) -> CsrMatrix:
    rows = np.asarray(rows, dtype=INDEX_DTYPE)
    cols = np.asarray(cols, dtype=INDEX_DTYPE)
    vals = np.asarray(vals, dtype=VALUE_DTYPE)
    if rows.size:
        bad = np.flatnonzero((rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols))
        if bad.size:
            k = int(bad[0])
            raise InputError(
                f'entry {k} at ({rows[k]}, {cols[k]}) is outside a {n_rows}x{n_cols} matrix')
    if rows.size == 0:
        return empty_csr(n_rows, n_cols)
    coo = sparse.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
    return from_scipy(coo.tocsr())


def csr_from_triplets(triplets: Iterable[Sequence], n_rows: int, n_cols: int) -> CsrMatrix:
    """Build a canonical CSR matrix; duplicate (row, col) entries are summed."""
    triplets = list(triplets)
    if not triplets:
        return empty_csr(n_rows, n_cols)
    rows = np.array([t[0] for t in triplets], dtype=INDEX_DTYPE)
    cols = np.array([t[1] for t in triplets], dtype=INDEX_DTYPE)
    vals = np.array([t[2] for t in triplets], dtype=VALUE_DTYPE)
    return csr_from_coo(rows, cols, vals, n_rows, n_cols)


def validate_csr(matrix: CsrMatrix) -> ValidationReport:
    """Check every CsrMatrix invariant and report the first violation."""
    n, m = matrix.n_rows, matrix.n_cols
    row_ptr, col, val = matrix.row_ptr, matrix.col, matrix.val
    if len(row_ptr) != n + 1:
        return ValidationReport(False, f'row_ptr has length {len(row_ptr)}, expected {n + 1}')
    if row_ptr[0] != 0:
        return ValidationReport(False, 'row_ptr[0] is not 0', 0)
    drops = np.flatnonzero(np.diff(row_ptr) < 0)
    if drops.size:
        k = int(drops[0]) + 1
        return ValidationReport(False, f'row_ptr decreases at index {k}', k)
    nnz = int(row_ptr[n])
    if len(col) != nnz or len(val) != nnz:
        return ValidationReport(
            False, f'row_ptr[{n}] = {nnz} but len(col) = {len(col)}, len(val) = {len(val)}', n)
    outside = np.flatnonzero((col < 0) | (col >= m))
    if outside.size:
        k = int(outside[0])
        return ValidationReport(False, f'col[{k}] = {col[k]} is outside [0, {m})', k)
    if matrix.canonical and nnz > 1:
        row_start = np.zeros(nnz, dtype=bool)
        starts = row_ptr[1:n]
        row_start[starts[starts < nnz]] = True
        unordered = np.flatnonzero((np.diff(col) <= 0) & ~row_start[1:])
        if unordered.size:
            k = int(unordered[0]) + 1
            return ValidationReport(False, f'col[{k}] breaks strictly increasing row order', k)
    return ValidationReport(True)


@njit(nogil=True, cache=True)
def rows_to_csc_kernel(row_ptr, col, val, rows, n_cols):
    # histogram of nonzeros per column
    col_ptr = np.zeros(n_cols + 1, dtype=np.int64)
    for r in range(rows.shape[0]):
        i = rows[r]
        for k in range(row_ptr[i], row_ptr[i + 1]):
            col_ptr[col[k] + 1] += 1
    for j in range(n_cols):
        col_ptr[j + 1] += col_ptr[j]
    nnz = col_ptr[n_cols]
    out_row = np.empty(nnz, dtype=np.int64)
    out_val = np.empty(nnz, dtype=np.float64)
    fill = col_ptr[:n_cols].copy()
    for r in range(rows.shape[0]):
        i = rows[r]
        for k in range(row_ptr[i], row_ptr[i + 1]):
            j = col[k]
            out_row[fill[j]] = r
            out_val[fill[j]] = val[k]
            fill[j] += 1
    return col_ptr, out_row, out_val


def csr_rows_to_csc(source: CsrMatrix, rows: Sequence[int]) -> CscSubMatrix:
    """CSC view of the selected rows; row ids in the result are local to ``rows``."""
    rows = np.asarray(rows, dtype=INDEX_DTYPE)
    if rows.size:
        if rows[0] < 0 or rows[-1] >= source.n_rows or np.any(np.diff(rows) <= 0):
            raise InputError('rows must be sorted, unique and inside the source matrix')
    col_ptr, local_row, val = rows_to_csc_kernel(
        source.row_ptr, source.col, source.val, rows, source.n_cols)
    return CscSubMatrix(rows, source.n_cols, col_ptr, local_row, val)


@njit(nogil=True, cache=True)
def sort_rows_kernel(row_ptr, col, val, row_begin, row_end):
    for i in range(row_begin, row_end):
        lo = row_ptr[i]
        hi = row_ptr[i + 1]
        ordered = True
        for k in range(lo + 1, hi):
            if col[k] <= col[k - 1]:
                ordered = False
                break
        if ordered:
            continue
        order = np.argsort(col[lo:hi], kind='mergesort')
        cols = col[lo:hi][order]
        vals = val[lo:hi][order]
        col[lo:hi] = cols
        val[lo:hi] = vals


def canonicalize_rows(matrix: CsrMatrix) -> CsrMatrix:
    """Sort every row by column; rows must already be free of duplicates."""
    col = matrix.col.copy()
    val = matrix.val.copy()
    sort_rows_kernel(matrix.row_ptr, col, val, 0, matrix.n_rows)
    return CsrMatrix(matrix.n_rows, matrix.n_cols, matrix.row_ptr, col, val, canonical=True)


def check_conformable(a: CsrMatrix, b: CsrMatrix) -> None:
    if a.n_cols != b.n_rows:
        raise DimensionError(f'cannot multiply {a.n_rows}x{a.n_cols} by {b.n_rows}x{b.n_cols}')
