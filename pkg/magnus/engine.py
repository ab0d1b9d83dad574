"""MAGNUS driver: setup, symbolic and numeric phases.

Setup computes per-row statistics once, plans both phases, sorts rows into the
four categories and batches the coarse rows. Both phases then walk the
categories in the same order (sort, dense, fine, coarse) with dynamic
scheduling and no barrier between categories.
"""
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from loguru import logger

from .accumulators import AccumThresholds
from .coarse_level import build_coarse_batches, run_coarse_batches
from .csr import INDEX_DTYPE, VALUE_DTYPE, CsrMatrix, check_conformable
from .errors import ContractViolation, kernel_contract
from .fine_level import FineScratch, run_fine_rows
from .gustavson import (NO_INDEX, NO_VALUE, RowScratch, RowStats, SpgemmResult, canonicalize_output,
                        counts_to_row_ptr, row_intermediate_stats, run_dense_rows, run_esc_rows)
from .planner import ChunkPlan, Phase, SystemParams, compute_chunk_plan, detect_system_params
from .workers import run_dynamic

CATEGORY_NAMES = ('sort', 'dense', 'fine', 'coarse')


@dataclass(frozen=True, eq=False)
class RowCategories:
    sort_rows: np.ndarray
    dense_rows: np.ndarray
    fine_rows: np.ndarray
    coarse_rows: np.ndarray

    def counts(self) -> Dict[str, int]:
        return {f'rows_{name}': int(rows.size) for name, rows in zip(CATEGORY_NAMES, self.as_tuple())}

    def as_tuple(self):
        return self.sort_rows, self.dense_rows, self.fine_rows, self.coarse_rows


@dataclass
class MagnusOptions:
    threads: int = 1
    force_fine_only: bool = False
    thresholds: AccumThresholds = field(default_factory=AccumThresholds)


@dataclass(frozen=True, eq=False)
class MagnusSetup:
    """Everything both phases share."""
    stats: RowStats
    symbolic_plan: ChunkPlan
    numeric_plan: ChunkPlan
    categories: RowCategories
    batches: List[np.ndarray]
    dense_capacity: int


class EngineScratch(RowScratch):
    def __init__(self, plan: ChunkPlan, dense_capacity: int) -> None:
        super().__init__(dense_capacity)
        self.fine = FineScratch.for_plan(plan)


def categorize_rows(stats: RowStats, plan: ChunkPlan, sys: SystemParams,
                    thresholds: AccumThresholds = AccumThresholds()) -> RowCategories:
    """First matching rule wins: sort, dense, fine level, coarse level."""
    rows = np.arange(stats.inter_size.size, dtype=INDEX_DTYPE)
    is_sort = stats.inter_size < thresholds.sort_dense_crossover
    is_dense = ~is_sort & (stats.row_range * plan.s_dense_accum <= sys.l2_bytes)
    rest = ~is_sort & ~is_dense
    if plan.use_coarse:
        is_fine, is_coarse = np.zeros_like(rest), rest
    else:
        is_fine, is_coarse = rest, np.zeros_like(rest)
    return RowCategories(rows[is_sort], rows[is_dense], rows[is_fine], rows[is_coarse])


def magnus_setup(a: CsrMatrix, b: CsrMatrix, sys: SystemParams, options: MagnusOptions = MagnusOptions(),
                 stats: Optional[RowStats] = None) -> MagnusSetup:
    check_conformable(a, b)
    stats = stats if stats is not None else row_intermediate_stats(a, b)
    m_c = max(1, b.n_cols)
    allow_coarse = not options.force_fine_only
    symbolic_plan = compute_chunk_plan(sys, m_c, Phase.SYMBOLIC, allow_coarse)
    numeric_plan = compute_chunk_plan(sys, m_c, Phase.NUMERIC, allow_coarse)
    categories = categorize_rows(stats, numeric_plan, sys, options.thresholds)
    batches = build_coarse_batches(categories.coarse_rows, stats, numeric_plan, sys) \
        if categories.coarse_rows.size else []
    dense_capacity = int(stats.row_range[categories.dense_rows].max(initial=0))
    logger.debug(numeric_plan.describe())
    return MagnusSetup(stats, symbolic_plan, numeric_plan, categories, batches, dense_capacity)


def _phase_work(a, b, setup: MagnusSetup, plan: ChunkPlan, thresholds: AccumThresholds,
                c_row_ptr, c_col, c_val, counts, numeric: bool):
    cats = setup.categories
    inter = setup.stats.inter_size
    return [
        run_esc_rows(a, b, cats.sort_rows, inter, c_row_ptr, c_col, c_val, counts, numeric),
        run_dense_rows(a, b, cats.dense_rows, setup.stats.min_col, setup.dense_capacity,
                       c_row_ptr, c_col, c_val, counts, numeric),
        run_fine_rows(a, b, cats.fine_rows, plan, thresholds, inter, c_row_ptr, c_col, c_val, counts, numeric),
        run_coarse_batches(a, b, setup.batches, plan, thresholds, c_row_ptr, c_col, c_val, counts, numeric),
    ]


def magnus_symbolic(a: CsrMatrix, b: CsrMatrix, setup: MagnusSetup, options: MagnusOptions = MagnusOptions()) \
        -> np.ndarray:
    """Exact row pointer of C; accumulators only touch bitmaps and counters."""
    counts = np.zeros(a.n_rows, dtype=INDEX_DTYPE)
    plan = setup.symbolic_plan
    work = _phase_work(a, b, setup, plan, options.thresholds, NO_INDEX, NO_INDEX, NO_VALUE, counts, False)
    with kernel_contract():
        run_dynamic(work, options.threads, lambda: EngineScratch(plan, setup.dense_capacity))
    return counts_to_row_ptr(counts)


def magnus_numeric(a: CsrMatrix, b: CsrMatrix, row_ptr: np.ndarray, setup: MagnusSetup,
                   options: MagnusOptions = MagnusOptions()) -> SpgemmResult:
    """Fill C into the regions given by ``row_ptr``; rows are left in chunk order."""
    if row_ptr.shape != (a.n_rows + 1,):
        raise ContractViolation(f'row pointer of length {row_ptr.size} for {a.n_rows} rows')
    c_col = np.empty(row_ptr[-1], dtype=INDEX_DTYPE)
    c_val = np.empty(row_ptr[-1], dtype=VALUE_DTYPE)
    plan = setup.numeric_plan
    work = _phase_work(a, b, setup, plan, options.thresholds, row_ptr, c_col, c_val, NO_INDEX, True)
    with kernel_contract():
        run_dynamic(work, options.threads, lambda: EngineScratch(plan, setup.dense_capacity))
    c = CsrMatrix(a.n_rows, b.n_cols, row_ptr, c_col, c_val, canonical=False)
    return SpgemmResult(c)


def spgemm_magnus(a: CsrMatrix, b: CsrMatrix, sys: Optional[SystemParams] = None,
                  options: Optional[MagnusOptions] = None) -> SpgemmResult:
    """C = A B with per-phase timings and per-category row counts."""
    check_conformable(a, b)
    sys = sys or detect_system_params()
    options = options or MagnusOptions()
    timings = {}

    start = time.perf_counter()
    setup = magnus_setup(a, b, sys, options)
    timings['setup'] = time.perf_counter() - start

    start = time.perf_counter()
    row_ptr = magnus_symbolic(a, b, setup, options)
    timings['symbolic'] = time.perf_counter() - start

    start = time.perf_counter()
    result = magnus_numeric(a, b, row_ptr, setup, options)
    timings['numeric'] = time.perf_counter() - start

    start = time.perf_counter()
    c = result.c
    canonicalize_output(c.row_ptr, c.col, c.val, options.threads)
    timings['canonicalize'] = time.perf_counter() - start

    counters = {'n_inter_prod': setup.stats.n_inter_prod, 'nnz_c': c.nnz,
                'n_batches': len(setup.batches), **setup.categories.counts()}
    logger.info(f'MAGNUS {a.n_rows}x{b.n_cols}: nnz(C)={c.nnz}, '
                + ', '.join(f'{k}={v}' for k, v in setup.categories.counts().items())
                + f', {sum(timings.values()):.4f}s')
    return SpgemmResult(CsrMatrix(a.n_rows, b.n_cols, c.row_ptr, c.col, c.val), timings, counters)
