from .accumulators import AccumKind, AccumThresholds, select_accumulator
from .bench import IdealBoundInputs, StreamSpec, ideal_bound, matrix_stats, measure_bandwidth
from .csr import CsrMatrix, csr_from_triplets, csr_rows_to_csc, from_scipy, validate_csr
from .engine import MagnusOptions, categorize_rows, magnus_numeric, magnus_setup, magnus_symbolic, spgemm_magnus
from .errors import (ConfigError, ContractViolation, DimensionError, InputError, MagnusError, OverBudgetError,
                     ParseError, ResourceError)
from .generators import BandedParams, ErParams, RmatParams, gen_banded, gen_rmat, gen_uniform_random
from .gustavson import SpgemmResult, row_intermediate_stats, spgemm_gustavson, spgemm_reference
from .matrix_io import load_matrix, read_matrix_market, save_matrix, write_matrix_market
from .planner import ChunkPlan, Phase, SystemParams, compute_chunk_plan, detect_system_params

__version__ = '0.1.0'
