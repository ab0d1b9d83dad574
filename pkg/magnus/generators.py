"""Deterministic synthetic matrix generators.

Every generator draws from numpy's PCG64 bit generator. Uniform random rows use
one substream per row, ``SeedSequence(seed, spawn_key=(row,))``, so any subset
of rows can be generated lazily and in any order with identical results.
"""
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from loguru import logger

from .config import DEFAULT_SEED
from .csr import INDEX_DTYPE, VALUE_DTYPE, CsrMatrix
from .errors import InputError


@dataclass(frozen=True)
class RmatParams:
    scale: int
    edge_factor: int = 16
    a: float = 0.57
    b: float = 0.19
    c: float = 0.19
    seed: int = DEFAULT_SEED
    random_values: bool = False

    @property
    def d(self) -> float:
        return 1.0 - self.a - self.b - self.c

    @property
    def n_rows(self) -> int:
        return 1 << self.scale

    @property
    def nnz(self) -> int:
        return self.edge_factor * self.n_rows

    def validate(self) -> None:
        if self.scale < 1:
            raise InputError(f'R-mat scale must be at least 1, got {self.scale}')
        if min(self.a, self.b, self.c) < 0 or self.a + self.b + self.c > 1 + 1e-12:
            raise InputError(f'invalid R-mat probabilities a={self.a} b={self.b} c={self.c}')
        if self.edge_factor < 0:
            raise InputError('edge factor must be non-negative')
        if self.nnz > self.n_rows * self.n_rows:
            raise InputError(f'{self.nnz} nonzeros do not fit in a {self.n_rows}x{self.n_rows} matrix')


@dataclass(frozen=True)
class ErParams:
    n_rows: int
    n_cols: int
    avg_nnz_per_row: int
    seed: int = DEFAULT_SEED
    random_values: bool = False

    def validate(self) -> None:
        if self.n_rows < 0 or self.n_cols < 0 or self.avg_nnz_per_row < 0:
            raise InputError('uniform random parameters must be non-negative')
        if self.avg_nnz_per_row > self.n_cols:
            raise InputError(
                f'{self.avg_nnz_per_row} nonzeros per row do not fit in {self.n_cols} columns')


@dataclass(frozen=True)
class BandedParams:
    n_rows: int
    n_cols: int
    half_bandwidth: int
    seed: int = DEFAULT_SEED
    random_values: bool = False

    def validate(self) -> None:
        if self.n_rows < 0 or self.n_cols < 0 or self.half_bandwidth < 0:
            raise InputError('banded parameters must be non-negative')


def row_stream(seed: int, row: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(row,))))


def _rmat_keys(rng: np.random.Generator, count: int, params: RmatParams) -> np.ndarray:
    rows = np.zeros(count, dtype=INDEX_DTYPE)
    cols = np.zeros(count, dtype=INDEX_DTYPE)
    ab = params.a + params.b
    abc = ab + params.c
    for _ in range(params.scale):
        u = rng.random(count)
        row_bit = u >= ab
        col_bit = ((u >= params.a) & (u < ab)) | (u >= abc)
        rows = (rows << 1) | row_bit
        cols = (cols << 1) | col_bit
    return (rows << params.scale) | cols


def gen_rmat(params: RmatParams) -> CsrMatrix:
    """Square R-mat with exactly edge_factor * 2^scale distinct nonzeros.

    Colliding edges are resampled rather than merged, so the nonzero count is
    exact. Edges are kept in first-draw order before the final sort.
    """
    params.validate()
    n = params.n_rows
    target = params.nnz
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(params.seed)))
    keys = np.zeros(0, dtype=INDEX_DTYPE)
    rounds = 0
    while keys.size < target:
        need = target - keys.size
        drawn = _rmat_keys(rng, need + (need >> 3) + 64, params)
        uniq, first = np.unique(drawn, return_index=True)
        fresh = uniq[np.argsort(first, kind='stable')]
        if keys.size:
            fresh = fresh[~np.isin(fresh, keys, assume_unique=True)]
        keys = np.concatenate([keys, fresh[:need]])
        rounds += 1
    keys.sort()
    rows = keys >> params.scale
    cols = keys & (n - 1)
    row_ptr = np.zeros(n + 1, dtype=INDEX_DTYPE)
    np.cumsum(np.bincount(rows, minlength=n), out=row_ptr[1:])
    if params.random_values:
        val = 1.0 - rng.random(target)
    else:
        val = np.ones(target, dtype=VALUE_DTYPE)
    logger.debug(f'R-mat scale {params.scale}: {target} nonzeros after {rounds} sampling rounds')
    return CsrMatrix(n, n, row_ptr, cols.astype(INDEX_DTYPE), val.astype(VALUE_DTYPE))


class UniformRandomRows:
    """Lazy Erdős–Rényi rows: row(i) depends only on (seed, i)."""

    def __init__(self, params: ErParams) -> None:
        params.validate()
        self.params = params

    def row(self, i: int):
        p = self.params
        rng = row_stream(p.seed, i)
        cols = np.sort(rng.choice(p.n_cols, size=p.avg_nnz_per_row, replace=False)).astype(INDEX_DTYPE)
        if p.random_values:
            vals = 1.0 - rng.random(p.avg_nnz_per_row)
        else:
            vals = np.ones(p.avg_nnz_per_row, dtype=VALUE_DTYPE)
        return cols, vals

    def matrix(self, rows: Optional[Iterable[int]] = None) -> CsrMatrix:
        p = self.params
        wanted = np.arange(p.n_rows) if rows is None else np.unique(np.asarray(list(rows), dtype=INDEX_DTYPE))
        if wanted.size and (wanted[0] < 0 or wanted[-1] >= p.n_rows):
            raise InputError('requested rows are outside the matrix')
        counts = np.zeros(p.n_rows, dtype=INDEX_DTYPE)
        counts[wanted] = p.avg_nnz_per_row
        row_ptr = np.zeros(p.n_rows + 1, dtype=INDEX_DTYPE)
        np.cumsum(counts, out=row_ptr[1:])
        col = np.empty(row_ptr[-1], dtype=INDEX_DTYPE)
        val = np.empty(row_ptr[-1], dtype=VALUE_DTYPE)
        for i in wanted:
            lo, hi = row_ptr[i], row_ptr[i + 1]
            col[lo:hi], val[lo:hi] = self.row(int(i))
        return CsrMatrix(p.n_rows, p.n_cols, row_ptr, col, val)


def gen_uniform_random(params: ErParams, rows: Optional[Iterable[int]] = None) -> CsrMatrix:
    """Uniform random matrix; when ``rows`` is given only those rows are populated."""
    return UniformRandomRows(params).matrix(rows)


def referenced_rows(a: CsrMatrix) -> np.ndarray:
    """Rows of B touched by the nonzeros of A."""
    return np.unique(a.col)


def gen_banded(params: BandedParams) -> CsrMatrix:
    params.validate()
    n, m, h = params.n_rows, params.n_cols, params.half_bandwidth
    i = np.arange(n, dtype=INDEX_DTYPE)
    lo = np.clip(i - h, 0, m)
    hi = np.clip(i + h + 1, 0, m)
    counts = np.maximum(hi - lo, 0)
    row_ptr = np.zeros(n + 1, dtype=INDEX_DTYPE)
    np.cumsum(counts, out=row_ptr[1:])
    nnz = int(row_ptr[-1])
    # column = row start + position inside the row
    col = np.repeat(lo, counts) + (np.arange(nnz, dtype=INDEX_DTYPE) - np.repeat(row_ptr[:-1], counts))
    if params.random_values:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(params.seed)))
        val = 1.0 - rng.random(nnz)
    else:
        val = np.ones(nnz, dtype=VALUE_DTYPE)
    return CsrMatrix(n, m, row_ptr, col.astype(INDEX_DTYPE), val.astype(VALUE_DTYPE))
