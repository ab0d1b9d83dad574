import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy import sparse

from . import config
from .accumulators import AccumThresholds
from .bench import ideal_bound_for
from .csr import CsrMatrix, from_scipy, validate_csr
from .engine import CATEGORY_NAMES, MagnusOptions, spgemm_magnus
from .errors import ConfigError, DimensionError, InputError, MagnusError
from .generators import BandedParams, ErParams, RmatParams, gen_banded, gen_rmat, gen_uniform_random
from .gustavson import SpgemmResult, row_intermediate_stats, spgemm_gustavson, spgemm_reference
from .matrix_io import load_matrix
from .planner import SystemParams

SPGEMM_ALGORITHMS = ('gustavson-dense', 'esc', 'magnus', 'magnus-fine-only', 'reference')
GENERATORS = ('rmat', 'er', 'banded')
SPGEMM_COLUMNS = ['algorithm', 'matrix', 'n_rows', 'n_cols', 'nnz_a', 'nnz_b', 'threads', 'repetition',
                  'setup_s', 'symbolic_s', 'numeric_s', 'canonicalize_s', 'total_s', 'n_inter_prod', 'nnz_c',
                  'rows_sort', 'rows_dense', 'rows_fine', 'rows_coarse', 'verified', 'ideal_s', 'ideal_ratio']
VERIFY_L2_SIZES = (4 << 10, 64 << 10, 1 << 20)
VERIFY_ALGORITHMS = ('gustavson-dense', 'esc', 'magnus', 'magnus-fine-only')
RELATIVE_TOLERANCE = 1e-5


@dataclass
class GeneratorSpec:
    kind: str = 'rmat'
    scale: int = 10
    edge_factor: int = 16
    n_rows: int = 1024
    n_cols: int = 1024
    nnz_per_row: int = 16
    half_bandwidth: int = 8
    seed: int = config.DEFAULT_SEED
    random_values: bool = False

    def build(self) -> CsrMatrix:
        if self.kind == 'rmat':
            return gen_rmat(RmatParams(self.scale, self.edge_factor, seed=self.seed,
                                       random_values=self.random_values))
        if self.kind == 'er':
            return gen_uniform_random(ErParams(self.n_rows, self.n_cols, self.nnz_per_row, self.seed,
                                               self.random_values))
        if self.kind == 'banded':
            return gen_banded(BandedParams(self.n_rows, self.n_cols, self.half_bandwidth, self.seed,
                                           self.random_values))
        raise InputError(f'unknown generator "{self.kind}", expected one of {GENERATORS}')

    def describe(self) -> str:
        if self.kind == 'rmat':
            return f'rmat-s{self.scale}-e{self.edge_factor}'
        if self.kind == 'er':
            return f'er-{self.n_rows}x{self.n_cols}-k{self.nnz_per_row}'
        return f'banded-{self.n_rows}x{self.n_cols}-h{self.half_bandwidth}'


@dataclass
class SpgemmConfig:
    algorithms: Sequence[str] = ('magnus',)
    matrix: Optional[str] = None
    other: Optional[str] = None
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    reps: int = config.DEFAULT_REPS
    threads: int = config.DEFAULT_THREADS
    system: SystemParams = field(default_factory=SystemParams)
    bandwidth: Optional[float] = None
    verify: bool = True
    thresholds: AccumThresholds = field(default_factory=AccumThresholds)

    def validate(self) -> None:
        if self.reps < 1:
            raise ConfigError(f'repetitions must be at least 1, got {self.reps}')
        if self.threads < 1:
            raise ConfigError(f'threads must be at least 1, got {self.threads}')
        if not self.algorithms:
            raise ConfigError('no algorithm selected')
        unknown = [a for a in self.algorithms if a not in SPGEMM_ALGORITHMS]
        if unknown:
            raise InputError(f'unknown algorithm(s) {unknown}, expected one of {SPGEMM_ALGORITHMS}')
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ConfigError('bandwidth must be positive')


def _timed(fn: Callable[[], CsrMatrix], phase: str = 'numeric') -> SpgemmResult:
    start = time.perf_counter()
    c = fn()
    return SpgemmResult(c, {phase: time.perf_counter() - start})


def run_algorithm(name: str, a: CsrMatrix, b: CsrMatrix, system: SystemParams, threads: int = 1,
                  thresholds: AccumThresholds = AccumThresholds()) -> SpgemmResult:
    if name == 'reference':
        return _timed(lambda: spgemm_reference(a, b))
    if name == 'gustavson-dense':
        return spgemm_gustavson(a, b, 'dense', threads)
    if name == 'esc':
        return spgemm_gustavson(a, b, 'esc', threads)
    if name in ('magnus', 'magnus-fine-only'):
        options = MagnusOptions(threads=threads, force_fine_only=name == 'magnus-fine-only',
                                thresholds=thresholds)
        return spgemm_magnus(a, b, system, options)
    raise InputError(f'unknown algorithm "{name}", expected one of {SPGEMM_ALGORITHMS}')


def matrices_match(c: CsrMatrix, expected: CsrMatrix, rtol: float = RELATIVE_TOLERANCE) -> bool:
    """Identical structure and values equal up to ``rtol``."""
    return (c.shape == expected.shape
            and np.array_equal(c.row_ptr, expected.row_ptr)
            and np.array_equal(c.col, expected.col)
            and np.allclose(c.val, expected.val, rtol=rtol, atol=0.0))


def load_operands(cfg: SpgemmConfig) -> Tuple[CsrMatrix, CsrMatrix, str]:
    if cfg.matrix:
        a = load_matrix(cfg.matrix)
        name = cfg.matrix
    else:
        a = cfg.generator.build()
        name = cfg.generator.describe()
    b = load_matrix(cfg.other) if cfg.other else a
    if a.n_cols != b.n_rows:
        raise DimensionError(f'cannot multiply {a.n_rows}x{a.n_cols} by {b.n_rows}x{b.n_cols}')
    return a, b, name


def _oracle(a: CsrMatrix, b: CsrMatrix, threads: int) -> CsrMatrix:
    if b.n_cols <= config.REFERENCE_MAX_COLS:
        return spgemm_reference(a, b)
    return spgemm_gustavson(a, b, 'dense', threads).c


def run_spgemm_command(cfg: SpgemmConfig) -> pd.DataFrame:
    """One warm-up and ``reps`` timed runs per algorithm; one record per timed run."""
    cfg.validate()
    a, b, name = load_operands(cfg)
    expected = _oracle(a, b, cfg.threads) if cfg.verify else None
    rows = []
    for algorithm in cfg.algorithms:
        logger.info(f'{algorithm} on {name} ({a.n_rows}x{b.n_cols}), {cfg.reps} runs after '
                    f'{config.WARMUP_RUNS} warm-up')
        for _ in range(config.WARMUP_RUNS):
            run_algorithm(algorithm, a, b, cfg.system, cfg.threads, cfg.thresholds)
        for rep in range(cfg.reps):
            result = run_algorithm(algorithm, a, b, cfg.system, cfg.threads, cfg.thresholds)
            rows.append(_spgemm_record(algorithm, name, a, b, cfg, rep, result, expected))
    frame = pd.DataFrame(rows, columns=SPGEMM_COLUMNS)
    if cfg.verify and not frame['verified'].all():
        logger.error(f'Verification failed for {sorted(frame.loc[~frame["verified"], "algorithm"].unique())}')
    return frame


def _spgemm_record(algorithm: str, name: str, a: CsrMatrix, b: CsrMatrix, cfg: SpgemmConfig, rep: int,
                   result: SpgemmResult, expected: Optional[CsrMatrix]) -> Dict:
    t = result.phase_timings
    total = result.total_seconds
    n_inter = result.counters.get('n_inter_prod', int(b.row_nnz()[a.col].sum()))
    record = {
        'algorithm': algorithm, 'matrix': name, 'n_rows': a.n_rows, 'n_cols': b.n_cols,
        'nnz_a': a.nnz, 'nnz_b': b.nnz, 'threads': cfg.threads, 'repetition': rep,
        'setup_s': t.get('setup', 0.0), 'symbolic_s': t.get('symbolic', 0.0), 'numeric_s': t.get('numeric', 0.0),
        'canonicalize_s': t.get('canonicalize', 0.0), 'total_s': total,
        'n_inter_prod': n_inter, 'nnz_c': result.c.nnz,
        'verified': bool(expected is None or matrices_match(result.c, expected)),
        'ideal_s': np.nan, 'ideal_ratio': np.nan,
    }
    for category in CATEGORY_NAMES:
        record[f'rows_{category}'] = result.counters.get(f'rows_{category}', 0)
    if cfg.bandwidth:
        bound = ideal_bound_for(a, result.c, n_inter, cfg.bandwidth)
        record['ideal_s'] = bound.t_ideal
        record['ideal_ratio'] = total / bound.t_ideal if bound.t_ideal else np.nan
    return record


def summarize_runs(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean, min and standard deviation of the total time per algorithm."""
    summary = frame.groupby('algorithm', sort=False)['total_s'].agg(['mean', 'min', 'std']).reset_index()
    summary['nnz_c'] = frame.groupby('algorithm', sort=False)['nnz_c'].first().values
    summary['verified'] = frame.groupby('algorithm', sort=False)['verified'].all().values
    return summary


# --- verification corpus --- #

@dataclass
class VerifyConfig:
    cases: int = 200
    wide_cases: int = 12
    seed: int = config.DEFAULT_SEED
    max_dim: int = 128
    wide_cols: Tuple[int, ...] = (2048, 40000)
    l2_sizes: Sequence[int] = VERIFY_L2_SIZES
    algorithms: Sequence[str] = VERIFY_ALGORITHMS
    random_values: bool = False
    threads: int = 1
    inject_fault: Optional[str] = None

    def validate(self) -> None:
        if self.cases + self.wide_cases < 1 or not self.l2_sizes or not self.algorithms:
            raise ConfigError('the verification corpus is empty')
        unknown = [a for a in self.algorithms if a not in SPGEMM_ALGORITHMS]
        if unknown:
            raise InputError(f'unknown algorithm(s) {unknown}')


@dataclass
class VerifyCase:
    name: str
    algorithm: str
    l2_bytes: Optional[int]
    passed: bool
    detail: str = ''


@dataclass
class VerifyReport:
    cases: List[VerifyCase]
    category_rows: Dict[str, int]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cases)

    @property
    def failures(self) -> List[VerifyCase]:
        return [c for c in self.cases if not c.passed]

    def table(self) -> List[List]:
        """One row per case name and algorithm, pass counts over the L2 sweep."""
        frame = pd.DataFrame([asdict(c) for c in self.cases])
        grouped = frame.groupby(['name', 'algorithm'], sort=False)['passed'] \
            .agg(n_passed='sum', n_runs='size').reset_index()
        return [[r.name, r.algorithm, f'{r.n_passed}/{r.n_runs}', 'PASS' if r.n_passed == r.n_runs else 'FAIL']
                for r in grouped.itertuples()]


def _random_operand(rng: np.random.Generator, n_rows: int, n_cols: int, density: float,
                    random_values: bool) -> CsrMatrix:
    if random_values:
        values = lambda size: 1.0 - rng.random(size)
    else:
        values = lambda size: rng.integers(1, 5, size).astype(np.float64)
    return from_scipy(sparse.random(n_rows, n_cols, density=density, format='csr', random_state=rng,
                                    data_rvs=values))


def verify_corpus(cfg: VerifyConfig) -> List[Tuple[str, CsrMatrix, CsrMatrix]]:
    """Small random pairs with densities from empty to dense, then wide pairs for the chunked paths."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    densities = (0.0, 0.01, 0.05, 0.2, 0.5, 1.0)
    corpus = []
    for k in range(cfg.cases):
        n, inner, m = (int(x) for x in rng.integers(1, cfg.max_dim + 1, size=3))
        density = float(densities[k % len(densities)])
        a = _random_operand(rng, n, inner, density, cfg.random_values)
        b = _random_operand(rng, inner, m, density, cfg.random_values)
        corpus.append((f'random-{k:03d}', a, b))
    for k in range(cfg.wide_cases):
        m = cfg.wide_cols[k % len(cfg.wide_cols)]
        n, inner = (int(x) for x in rng.integers(16, cfg.max_dim + 1, size=2))
        a = _random_operand(rng, n, inner, min(1.0, 24 / inner), cfg.random_values)
        b = _random_operand(rng, inner, m, 32 / m, cfg.random_values)
        corpus.append((f'wide-{k:03d}', a, b))
    return corpus


def _verify_system(l2_bytes: int, max_inter: int, element_bytes: int) -> SystemParams:
    # room for two of the largest rows, so coarse rows spread over several batches
    return SystemParams(cache_line_bytes=config.DEFAULT_CACHE_LINE_BYTES, l2_bytes=l2_bytes,
                        memory_budget_bytes=max(max_inter, 1) * element_bytes * 2)


def verify_command(cfg: VerifyConfig) -> VerifyReport:
    """Every algorithm against the reference product over the corpus and L2 sweep."""
    cfg.validate()
    corpus = verify_corpus(cfg)
    cases = []
    categories = {f'rows_{name}': 0 for name in CATEGORY_NAMES}
    element_bytes = SystemParams().element_bytes
    rtol = RELATIVE_TOLERANCE if cfg.random_values else 0.0
    for name, a, b in corpus:
        expected = spgemm_reference(a, b)
        max_inter = int(row_intermediate_stats(a, b).inter_size.max(initial=0))
        for algorithm in cfg.algorithms:
            sweep = cfg.l2_sizes if algorithm.startswith('magnus') else (None,)
            for l2 in sweep:
                system = _verify_system(l2 or config.DEFAULT_L2_BYTES, max_inter, element_bytes)
                try:
                    result = run_algorithm(algorithm, a, b, system, cfg.threads)
                except MagnusError as e:
                    cases.append(VerifyCase(name, algorithm, l2, False, f'{type(e).__name__}: {e}'))
                    continue
                c = result.c
                if cfg.inject_fault in (name, 'all') and c.nnz:
                    c = CsrMatrix(c.n_rows, c.n_cols, c.row_ptr, c.col, c.val + 1.0)
                report = validate_csr(c)
                if not report:
                    cases.append(VerifyCase(name, algorithm, l2, False, report.message))
                elif not matrices_match(c, expected, rtol):
                    cases.append(VerifyCase(name, algorithm, l2, False, 'differs from the reference product'))
                else:
                    cases.append(VerifyCase(name, algorithm, l2, True))
                if algorithm == 'magnus':
                    for key in categories:
                        categories[key] += result.counters.get(key, 0)
    report = VerifyReport(cases, categories)
    if report.passed:
        logger.success(f'All {len(cases)} verification runs passed; category rows {categories}')
    else:
        for case in report.failures:
            logger.error(f'{case.name} [{case.algorithm}, l2={case.l2_bytes}]: {case.detail}')
    return report
