"""Benchmarks: ideal bound, streaming bandwidth, building-block microbenchmarks
and matrix statistics.

Every microbenchmark stage checks its own output (``checksum_ok``) after each
timed run, so a timing sweep doubles as a correctness run.
"""
import time
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from loguru import logger
from numba import njit

from . import config
from .accumulators import dense_accumulate_into, sort_accumulate_into
from .csr import INDEX_DTYPE, VALUE_DTYPE, CsrMatrix, check_conformable
from .errors import InputError, ResourceError
from .fine_level import exclusive_offsets_kernel, fine_histogram_kernel, fine_reorder_kernel
from .gustavson import gustavson_dense_symbolic, inter_product_size
from .planner import ceil_pow2, is_pow2, log2_int
from .workers import WorkList, run_dynamic

MICROBENCH_COLUMNS = ['benchmark', 'algorithm', 'matrix', 'params', 'repetition', 'seconds', 'rate',
                      'checksum_ok']
BUILDING_BLOCK_STAGES = ('histogram', 'prefix_sum', 'reorder', 'dense_accumulate', 'sort_accumulate', 'stream')
TOTAL_STAGES = ('histogram', 'prefix_sum', 'reorder', 'dense_accumulate')
TIMER_FLOOR = 1e-9


@dataclass(frozen=True)
class StreamSpec:
    size: int
    length: int
    seed: int = config.DEFAULT_SEED

    def validate(self) -> None:
        if self.length < 1:
            raise InputError(f'stream length must be at least 1, got {self.length}')
        if self.size < 0:
            raise InputError(f'stream size must be non-negative, got {self.size}')

    def generate(self):
        """Indices uniform in [0, length) and values uniform in (0, 1]."""
        self.validate()
        rng = np.random.Generator(np.random.PCG64(self.seed))
        cols = rng.integers(0, self.length, size=self.size, dtype=INDEX_DTYPE)
        vals = 1.0 - rng.random(self.size)
        return cols, vals


@dataclass(frozen=True)
class IdealBoundInputs:
    n_a: int
    nnz_a: int
    n_inter_prod: int
    n_c: int
    nnz_c: int
    s_row_ptr: int = config.ROW_PTR_BYTES
    s_col_idx: int = 4
    s_val: int = config.VAL_BYTES
    bandwidth_bytes_per_sec: float = 1.0

    def validate(self) -> None:
        if min(self.n_a, self.nnz_a, self.n_inter_prod, self.n_c, self.nnz_c,
               self.s_row_ptr, self.s_col_idx, self.s_val) < 0:
            raise InputError('ideal bound inputs must be non-negative')
        if self.bandwidth_bytes_per_sec <= 0:
            raise InputError('bandwidth must be positive')


class IdealBound(NamedTuple):
    read_volume: int
    write_volume: int
    t_ideal: float


@dataclass
class BenchRecord:
    benchmark: str
    algorithm: str
    params: str
    repetition: int
    seconds: float
    rate: float
    checksum_ok: bool = True
    matrix: str = ''

    def __post_init__(self) -> None:
        self.seconds = max(self.seconds, TIMER_FLOOR)


class BandwidthResult(NamedTuple):
    rate: float
    bytes_moved: int
    seconds: List[float]


@dataclass(frozen=True)
class MatrixStats:
    n_rows: int
    n_cols: int
    nnz: int
    avg_nnz_per_row: float
    n_inter_prod: int
    nnz_c: int
    compression_ratio: float


def ideal_bound(inputs: IdealBoundInputs) -> IdealBound:
    """Minimum read/write volume of a CSR SpGEMM and the time to stream it."""
    inputs.validate()
    p, i, v = inputs.s_row_ptr, inputs.s_col_idx, inputs.s_val
    read_volume = (2 * (inputs.n_a + 1) * p + inputs.nnz_a * (4 * p + 2 * i + v)
                   + inputs.n_inter_prod * (2 * i + v))
    write_volume = (inputs.n_c + 1) * p + inputs.nnz_c * (i + v)
    return IdealBound(read_volume, write_volume, (read_volume + write_volume) / inputs.bandwidth_bytes_per_sec)


def ideal_bound_for(a: CsrMatrix, c: CsrMatrix, n_inter_prod: int, bandwidth: float) -> IdealBound:
    return ideal_bound(IdealBoundInputs(
        n_a=a.n_rows, nnz_a=a.nnz, n_inter_prod=n_inter_prod, n_c=c.n_rows, nnz_c=c.nnz,
        s_col_idx=c.col_index_bytes, bandwidth_bytes_per_sec=bandwidth))


def measure_bandwidth(n_bytes: int = config.BANDWIDTH_BYTES, reps: int = 5) -> BandwidthResult:
    """Best-of-reps copy rate of an index array and a value array."""
    if reps < 1:
        raise InputError('bandwidth needs at least one repetition')
    n = max(1, n_bytes // (np.dtype(INDEX_DTYPE).itemsize + np.dtype(VALUE_DTYPE).itemsize))
    try:
        src_col = np.arange(n, dtype=INDEX_DTYPE)
        src_val = np.ones(n, dtype=VALUE_DTYPE)
        dst_col = np.zeros_like(src_col)
        dst_val = np.zeros_like(src_val)
    except MemoryError:
        raise ResourceError(f'could not allocate {2 * n_bytes} bytes for the bandwidth test') from None
    bytes_moved = 2 * (src_col.nbytes + src_val.nbytes)
    seconds = []
    for _ in range(reps):
        start = time.perf_counter()
        np.copyto(dst_col, src_col)
        np.copyto(dst_val, src_val)
        seconds.append(max(time.perf_counter() - start, TIMER_FLOOR))
    rate = bytes_moved / min(seconds)
    logger.info(f'Bandwidth: {rate / 1e9:.2f} GB/s ({bytes_moved} bytes per copy, best of {reps})')
    return BandwidthResult(rate, bytes_moved, seconds)


def multiset_hash(cols: np.ndarray, vals: np.ndarray) -> int:
    """Order-independent hash of (col, value bits) pairs."""
    with np.errstate(over='ignore'):
        key = cols.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        key ^= vals.view(np.uint64)
        key ^= key >> np.uint64(29)
        key *= np.uint64(0xBF58476D1CE4E5B9)
        return int(key.sum(dtype=np.uint64))


# --- stage kernels --- #

@njit(nogil=True, cache=True)
def dense_accumulate_chunks(r_col, r_val, offsets, chunk_len, buffer, bitmap, col_buff, out_col, out_val):
    pos = 0
    for q in range(offsets.shape[0] - 1):
        pos = dense_accumulate_into(r_col, r_val, offsets[q], offsets[q + 1], buffer, bitmap, col_buff,
                                    q * chunk_len, out_col, out_val, pos, True)
    return pos


@njit(nogil=True, cache=True)
def sort_accumulate_chunks(r_col, r_val, offsets, chunk_len, out_col, out_val):
    pos = 0
    for q in range(offsets.shape[0] - 1):
        pos = sort_accumulate_into(r_col, r_val, offsets[q], offsets[q + 1], q * chunk_len,
                                   out_col, out_val, pos, True)
    return pos


class _BlockBuffers:
    """One worker's stream and stage outputs."""

    def __init__(self, spec: StreamSpec, n_chunks: int) -> None:
        self.cols, self.vals = spec.generate()
        self.chunk_len = ceil_pow2(spec.length) // n_chunks
        self.shift = log2_int(self.chunk_len)
        self.counts = np.zeros(n_chunks, dtype=INDEX_DTYPE)
        self.offsets = np.zeros(n_chunks + 1, dtype=INDEX_DTYPE)
        self.fill = np.zeros(n_chunks, dtype=INDEX_DTYPE)
        self.r_col = np.zeros(spec.size, dtype=INDEX_DTYPE)
        self.r_val = np.zeros(spec.size, dtype=VALUE_DTYPE)
        self.out_col = np.zeros(spec.size, dtype=INDEX_DTYPE)
        self.out_val = np.zeros(spec.size, dtype=VALUE_DTYPE)
        self.copy_col = np.zeros(spec.size, dtype=INDEX_DTYPE)
        self.copy_val = np.zeros(spec.size, dtype=VALUE_DTYPE)
        self.buffer = np.zeros(self.chunk_len, dtype=VALUE_DTYPE)
        self.bitmap = np.zeros(self.chunk_len, dtype=np.uint8)
        self.col_buff = np.zeros(self.chunk_len, dtype=INDEX_DTYPE)
        self.n_out = 0
        self.n_distinct = int(np.unique(self.cols).size)


def _stage_histogram(buf: _BlockBuffers) -> None:
    fine_histogram_kernel(buf.cols, 0, buf.cols.size, buf.shift, buf.counts)


def _stage_prefix_sum(buf: _BlockBuffers) -> None:
    exclusive_offsets_kernel(buf.counts, buf.offsets)


def _stage_reorder(buf: _BlockBuffers) -> None:
    fine_reorder_kernel(buf.cols, buf.vals, 0, buf.cols.size, buf.shift, buf.offsets, buf.fill,
                        buf.r_col, buf.r_val, True)


def _stage_dense(buf: _BlockBuffers) -> None:
    buf.n_out = dense_accumulate_chunks(buf.r_col, buf.r_val, buf.offsets, buf.chunk_len,
                                        buf.buffer, buf.bitmap, buf.col_buff, buf.out_col, buf.out_val)


def _stage_sort(buf: _BlockBuffers) -> None:
    buf.n_out = sort_accumulate_chunks(buf.r_col, buf.r_val, buf.offsets, buf.chunk_len, buf.out_col, buf.out_val)


def _stage_stream(buf: _BlockBuffers) -> None:
    np.copyto(buf.copy_col, buf.cols)
    np.copyto(buf.copy_val, buf.vals)


def _accumulated_ok(buf: _BlockBuffers) -> bool:
    return buf.n_out == buf.n_distinct and bool(np.isclose(buf.out_val[:buf.n_out].sum(), buf.vals.sum()))


def _reorder_ok(buf: _BlockBuffers) -> bool:
    chunk = np.repeat(np.arange(buf.counts.size, dtype=INDEX_DTYPE), buf.counts)
    restored = buf.r_col + chunk * buf.chunk_len
    return multiset_hash(restored, buf.r_val) == multiset_hash(buf.cols, buf.vals)


STAGES: Dict[str, Callable[[_BlockBuffers], None]] = {
    'histogram': _stage_histogram,
    'prefix_sum': _stage_prefix_sum,
    'reorder': _stage_reorder,
    'dense_accumulate': _stage_dense,
    'sort_accumulate': _stage_sort,
    'stream': _stage_stream,
}

CHECKS: Dict[str, Callable[[_BlockBuffers], bool]] = {
    'histogram': lambda buf: int(buf.counts.sum()) == buf.cols.size,
    'prefix_sum': lambda buf: int(buf.offsets[-1]) == buf.cols.size and bool(np.all(np.diff(buf.offsets) >= 0)),
    'reorder': _reorder_ok,
    'dense_accumulate': _accumulated_ok,
    'sort_accumulate': _accumulated_ok,
    'stream': lambda buf: np.array_equal(buf.copy_col, buf.cols) and np.array_equal(buf.copy_val, buf.vals),
}


def _timed_stage(stage: str, buffers: List[_BlockBuffers], threads: int) -> float:
    fn = STAGES[stage]
    work = WorkList(stage, len(buffers), lambda lo, hi, _: [fn(buffers[k]) for k in range(lo, hi)], block=1)
    start = time.perf_counter()
    run_dynamic([work], threads, lambda: None)
    return time.perf_counter() - start


def microbench_building_blocks(spec: StreamSpec, n_chunks: int, reps: int = 1,
                               threads: int = 1) -> List[BenchRecord]:
    """Time each fine-level building block in isolation over the same stream.

    With several threads every worker runs the stage on its own stream of
    ``spec.size`` elements.
    """
    spec.validate()
    if not is_pow2(n_chunks) or n_chunks > ceil_pow2(spec.length):
        raise InputError(f'n_chunks={n_chunks} must be a power of two no larger than the stream length')
    try:
        buffers = [_BlockBuffers(StreamSpec(spec.size, spec.length, spec.seed + w), n_chunks)
                   for w in range(max(1, threads))]
    except MemoryError:
        raise ResourceError(f'could not allocate microbenchmark buffers for {spec.size} elements') from None
    params = f'size={spec.size};length={spec.length};n_chunks={n_chunks};threads={len(buffers)}'
    elements = spec.size * len(buffers)
    records = []
    for rep in range(reps):
        stage_seconds = {}
        for stage in BUILDING_BLOCK_STAGES:
            seconds = _timed_stage(stage, buffers, threads)
            ok = all(CHECKS[stage](buf) for buf in buffers)
            if not ok:
                logger.error(f'{stage} checksum failed ({params}, repetition {rep})')
            stage_seconds[stage] = seconds
            records.append(BenchRecord('building_blocks', stage, params, rep, seconds,
                                       elements / max(seconds, TIMER_FLOOR), ok))
        total = sum(stage_seconds[s] for s in TOTAL_STAGES)
        ok = all(r.checksum_ok for r in records[-len(BUILDING_BLOCK_STAGES):])
        records.append(BenchRecord('building_blocks', 'total', params, rep, total,
                                   elements / max(total, TIMER_FLOOR), ok))
    return records


def microbench_sweep(spec: StreamSpec, chunk_counts: Sequence[int], reps: int = 1,
                     threads: int = 1) -> List[BenchRecord]:
    records = []
    for n_chunks in chunk_counts:
        logger.info(f'Building blocks at n_chunks={n_chunks}')
        records.extend(microbench_building_blocks(spec, n_chunks, reps, threads))
    return records


def microbench_accumulators(sizes: Sequence[int], length: int, seed: int = config.DEFAULT_SEED,
                            reps: int = 1) -> List[BenchRecord]:
    """Sort against dense accumulation of a single stream per size."""
    records = []
    for size in sizes:
        spec = StreamSpec(size, length, seed)
        buf = _BlockBuffers(spec, 1)
        _stage_histogram(buf)
        _stage_prefix_sum(buf)
        _stage_reorder(buf)
        for rep in range(reps):
            for name, stage in (('dense', _stage_dense), ('sort', _stage_sort)):
                start = time.perf_counter()
                stage(buf)
                seconds = time.perf_counter() - start
                records.append(BenchRecord('accumulators', name, f'size={size};length={length}', rep,
                                           seconds, size / max(seconds, TIMER_FLOOR), _accumulated_ok(buf)))
    crossover = accumulator_crossover(records)
    logger.info(f'Observed sort/dense crossover: {crossover if crossover is not None else "none in range"}')
    return records


def accumulator_crossover(records: Sequence[BenchRecord]) -> Optional[int]:
    """Smallest stream size at which dense accumulation beats sorting on mean time."""
    frame = records_frame([r for r in records if r.benchmark == 'accumulators'])
    if frame.empty:
        return None
    frame['size'] = frame['params'].str.extract(r'size=(\d+)', expand=False).astype(int)
    means = frame.groupby(['size', 'algorithm'])['seconds'].mean().unstack()
    faster = means.index[means['dense'] < means['sort']]
    return int(faster.min()) if len(faster) else None


def records_frame(records: Sequence) -> pd.DataFrame:
    rows = [asdict(r) for r in records]
    if records and isinstance(records[0], BenchRecord):
        return pd.DataFrame(rows, columns=MICROBENCH_COLUMNS)
    return pd.DataFrame(rows)


def write_records(frame: pd.DataFrame, csv_path: Optional[str] = None, json_path: Optional[str] = None) -> None:
    if csv_path:
        frame.to_csv(csv_path, index=False)
        logger.info(f'Wrote {len(frame)} records to {csv_path}')
    if json_path:
        frame.to_json(json_path, orient='records', indent=2)
        logger.info(f'Wrote {len(frame)} records to {json_path}')


def matrix_stats(a: CsrMatrix, b: Optional[CsrMatrix] = None, threads: int = 1) -> MatrixStats:
    """Size, nonzeros, intermediate-product size and compression ratio of A B (A^2 by default)."""
    b = a if b is None else b
    check_conformable(a, b)
    n_inter = inter_product_size(a, b)
    nnz_c = int(gustavson_dense_symbolic(a, b, threads)[-1])
    return MatrixStats(n_rows=a.n_rows, n_cols=a.n_cols, nnz=a.nnz,
                       avg_nnz_per_row=a.nnz / a.n_rows if a.n_rows else 0.0,
                       n_inter_prod=n_inter, nnz_c=nnz_c,
                       compression_ratio=n_inter / nnz_c if nnz_c else 0.0)
