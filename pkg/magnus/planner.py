"""System-aware chunk planning.

The fine-level working set for ``n`` fine chunks over ``m`` columns is

    s_fineLevel(n) = m * s_denseAccum / n + n * s_chunkFine

which is minimised at n = sqrt(m * s_denseAccum / s_chunkFine), giving
s_fineLevel = 2 * sqrt(m * s_denseAccum * s_chunkFine). When that optimum no
longer fits in L2, the columns are first split into coarse chunks of
m_CmaxL2 = s_L2^2 / (4 * s_denseAccum * s_chunkFine) columns (floored to a power
of two) and the fine level is planned inside one coarse chunk.
"""
import math
import os
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from loguru import logger

from . import config
from .config import Settings
from .errors import InputError


class Phase(str, Enum):
    SYMBOLIC = 'symbolic'
    NUMERIC = 'numeric'


# the coarse/fine split is planned with the symbolic accumulator size in both phases
CATEGORIZATION_DENSE_ACCUM_BYTES = 1


def is_pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


def ceil_pow2(x: int) -> int:
    return 1 if x <= 1 else 1 << (int(x) - 1).bit_length()


def floor_pow2(x: int) -> int:
    return 1 if x < 2 else 1 << (int(x).bit_length() - 1)


def round_pow2(x: float) -> int:
    """Nearest power of two on the log2 scale; ties round up."""
    if x <= 0:
        return 1
    return 1 << max(0, math.floor(math.log2(x) + 0.5))


def log2_int(x: int) -> int:
    return int(x).bit_length() - 1


@dataclass(frozen=True)
class SystemParams:
    cache_line_bytes: int = config.DEFAULT_CACHE_LINE_BYTES
    l2_bytes: int = config.DEFAULT_L2_BYTES
    memory_budget_bytes: int = int(config.DEFAULT_MEMORY_BYTES * config.MEMORY_BUDGET_FRACTION)
    histo_type_bytes: int = config.HISTO_TYPE_BYTES
    prefix_sum_type_bytes: int = config.PREFIX_SUM_TYPE_BYTES
    val_bytes: int = config.VAL_BYTES
    index_bytes: int = config.INDEX_BYTES

    def __post_init__(self) -> None:
        for name in ('cache_line_bytes', 'l2_bytes', 'memory_budget_bytes', 'histo_type_bytes',
                     'prefix_sum_type_bytes', 'val_bytes', 'index_bytes'):
            if getattr(self, name) <= 0:
                raise InputError(f'{name} must be positive')
        if not is_pow2(self.cache_line_bytes):
            raise InputError(f'cache line size {self.cache_line_bytes} is not a power of two')

    @property
    def chunk_fine_bytes(self) -> int:
        return self.histo_type_bytes + self.prefix_sum_type_bytes + 2 * self.cache_line_bytes

    @property
    def element_bytes(self) -> int:
        """Bytes per buffered intermediate-product element."""
        return self.index_bytes + self.val_bytes

    def dense_accum_bytes(self, phase: Phase) -> int:
        return self.val_bytes + 1 if phase == Phase.NUMERIC else 1

    def with_overrides(self, **overrides) -> 'SystemParams':
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def fine_level_storage(m_c: int, n_chunks_fine: int, s_dense_accum: int, s_chunk_fine: int) -> float:
    """Bytes of L2-resident fine-level data for a given number of fine chunks."""
    return m_c * s_dense_accum / n_chunks_fine + n_chunks_fine * s_chunk_fine


def fine_level_storage_optimal(m_c: int, s_dense_accum: int, s_chunk_fine: int) -> float:
    return 2.0 * math.sqrt(m_c * s_dense_accum * s_chunk_fine)


def fine_level_exceeds_l2(m_c: int, s_dense_accum: int, s_chunk_fine: int, l2_bytes: int) -> bool:
    # 2 sqrt(m s c) > L2  <=>  4 m s c > L2^2, kept in integers
    return 4 * m_c * s_dense_accum * s_chunk_fine > l2_bytes * l2_bytes


def max_columns_in_l2(l2_bytes: int, s_dense_accum: int, s_chunk_fine: int) -> int:
    return floor_pow2(l2_bytes * l2_bytes // (4 * s_dense_accum * s_chunk_fine))


@dataclass(frozen=True)
class ChunkPlan:
    phase: Phase
    m_c: int
    m_c_pow2: int
    s_dense_accum: int
    s_chunk_fine: int
    n_chunks_fine: int
    chunk_len_fine: int
    shift_fine: int
    m_c_max_l2: int
    n_chunks_coarse: int
    chunk_len_coarse: int
    shift_coarse: int
    use_coarse: bool

    @property
    def fine_span(self) -> int:
        """Columns covered by one pass of the fine level."""
        return self.n_chunks_fine * self.chunk_len_fine

    @classmethod
    def manual(cls, m_c: int, n_chunks_fine: int, n_chunks_coarse: int = 1,
               phase: Phase = Phase.NUMERIC, sys: Optional[SystemParams] = None) -> 'ChunkPlan':
        """Hand-built plan with explicit power-of-two chunk counts."""
        sys = sys or SystemParams()
        m_pow2 = ceil_pow2(m_c)
        if not (is_pow2(n_chunks_fine) and is_pow2(n_chunks_coarse)):
            raise InputError('chunk counts must be powers of two')
        chunk_len_coarse = m_pow2 // n_chunks_coarse
        chunk_len_fine = chunk_len_coarse // n_chunks_fine
        if chunk_len_fine < 1:
            raise InputError(f'{n_chunks_coarse}x{n_chunks_fine} chunks do not fit {m_pow2} columns')
        return cls(phase=phase, m_c=m_c, m_c_pow2=m_pow2,
                   s_dense_accum=sys.dense_accum_bytes(phase), s_chunk_fine=sys.chunk_fine_bytes,
                   n_chunks_fine=n_chunks_fine, chunk_len_fine=chunk_len_fine,
                   shift_fine=log2_int(chunk_len_fine), m_c_max_l2=chunk_len_coarse,
                   n_chunks_coarse=n_chunks_coarse, chunk_len_coarse=chunk_len_coarse,
                   shift_coarse=log2_int(chunk_len_coarse), use_coarse=n_chunks_coarse > 1)

    def describe(self) -> str:
        text = (f'{self.phase.value} plan: m_C={self.m_c} (2^{log2_int(self.m_c_pow2)}), '
                f'{self.n_chunks_fine} fine chunks of {self.chunk_len_fine}')
        if self.use_coarse:
            text += f', {self.n_chunks_coarse} coarse chunks of {self.chunk_len_coarse}'
        return text


def compute_chunk_plan(sys: SystemParams, m_c: int, phase: Phase, allow_coarse: bool = True) -> ChunkPlan:
    """Optimal power-of-two fine/coarse chunk counts for ``m_c`` columns."""
    if m_c < 1:
        raise InputError(f'm_C must be at least 1, got {m_c}')
    if m_c > config.MAX_COLUMNS:
        raise InputError(f'm_C={m_c} exceeds the supported 2^52 columns')
    m_pow2 = ceil_pow2(m_c)
    s_chunk = sys.chunk_fine_bytes
    s_dense = sys.dense_accum_bytes(phase)
    s_split = CATEGORIZATION_DENSE_ACCUM_BYTES
    m_max_l2 = max_columns_in_l2(sys.l2_bytes, s_split, s_chunk)

    use_coarse = allow_coarse and fine_level_exceeds_l2(m_pow2, s_split, s_chunk, sys.l2_bytes)
    span = min(m_max_l2, m_pow2) if use_coarse else m_pow2
    n_coarse = m_pow2 // span

    n_fine = min(round_pow2(math.sqrt(span * s_dense / s_chunk)), span)
    min_len = min(span, max(1, sys.cache_line_bytes // sys.index_bytes))
    chunk_len = max(span // n_fine, min_len)
    n_fine = span // chunk_len

    if n_coarse > config.COARSE_CHUNK_WARN_LIMIT:
        logger.warning(f'{n_coarse} coarse chunks exceed the {config.COARSE_CHUNK_WARN_LIMIT} '
                       f'chunk limit where reordering stops fitting in L2')
    return ChunkPlan(phase=phase, m_c=m_c, m_c_pow2=m_pow2, s_dense_accum=s_dense,
                     s_chunk_fine=s_chunk, n_chunks_fine=n_fine, chunk_len_fine=chunk_len,
                     shift_fine=log2_int(chunk_len), m_c_max_l2=m_max_l2,
                     n_chunks_coarse=n_coarse, chunk_len_coarse=span,
                     shift_coarse=log2_int(span), use_coarse=use_coarse)


# --- host detection --- #

def _sysconf(name: str) -> Optional[int]:
    try:
        value = os.sysconf(name)
    except (ValueError, OSError, AttributeError):
        return None
    return value if value and value > 0 else None


def _sysfs_cache(index: int, entry: str) -> Optional[int]:
    path = f'/sys/devices/system/cpu/cpu0/cache/index{index}/{entry}'
    try:
        with open(path) as f:
            text = f.read().strip()
    except OSError:
        return None
    scale = {'K': 1 << 10, 'M': 1 << 20, 'G': 1 << 30}.get(text[-1:].upper(), 1)
    digits = text.rstrip('KkMmGg')
    return int(digits) * scale if digits.isdigit() else None


def detect_system_params() -> SystemParams:
    """Query cache line, L2 size and memory; fall back to defaults with a warning."""
    line = _sysconf('SC_LEVEL1_DCACHE_LINESIZE') or _sysfs_cache(0, 'coherency_line_size')
    l2 = _sysconf('SC_LEVEL2_CACHE_SIZE') or _sysfs_cache(2, 'size')
    pages, page_size = _sysconf('SC_PHYS_PAGES'), _sysconf('SC_PAGE_SIZE')
    memory = pages * page_size if pages and page_size else None
    if not line or not is_pow2(line):
        logger.warning(f'Could not detect the cache line size, using {config.DEFAULT_CACHE_LINE_BYTES} B')
        line = config.DEFAULT_CACHE_LINE_BYTES
    if not l2:
        logger.warning(f'Could not detect the L2 size, using {config.DEFAULT_L2_BYTES} B')
        l2 = config.DEFAULT_L2_BYTES
    if not memory:
        logger.warning(f'Could not detect system memory, using {config.DEFAULT_MEMORY_BYTES} B')
        memory = config.DEFAULT_MEMORY_BYTES
    return SystemParams(cache_line_bytes=line, l2_bytes=l2,
                        memory_budget_bytes=int(memory * config.MEMORY_BUDGET_FRACTION))


def resolve_system_params(cache_line: Optional[int] = None, l2_bytes: Optional[int] = None,
                          mem_budget: Optional[int] = None,
                          settings: Optional[Settings] = None) -> SystemParams:
    """Explicit values win over settings, which win over host detection."""
    settings = settings or Settings()
    return detect_system_params().with_overrides(
        cache_line_bytes=cache_line if cache_line is not None else settings.cache_line,
        l2_bytes=l2_bytes if l2_bytes is not None else settings.l2_bytes,
        memory_budget_bytes=mem_budget if mem_budget is not None else settings.mem_budget,
    )
