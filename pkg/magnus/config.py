import os
from dataclasses import dataclass, fields
from typing import Optional

import dacite
from dotenv import load_dotenv

from .errors import ConfigError

# --- SYSTEM DEFAULTS (used when host detection fails) --- #
DEFAULT_CACHE_LINE_BYTES = 64
DEFAULT_L2_BYTES = 1 << 20
DEFAULT_MEMORY_BYTES = 4 << 30
MEMORY_BUDGET_FRACTION = 0.25
# -------------------------------------------------------- #

# --- TYPE SIZES --- #
HISTO_TYPE_BYTES = 4
PREFIX_SUM_TYPE_BYTES = 4
VAL_BYTES = 8
INDEX_BYTES = 8
ROW_PTR_BYTES = 8
# ------------------ #

# --- ACCUMULATION --- #
SORT_DENSE_CROSSOVER = 256
SORT_SWEET_SPOT = 32
SORT_NETWORK_SIZE = 16
# -------------------- #

# --- PLANNER --- #
COARSE_CHUNK_WARN_LIMIT = 1 << 13
MAX_COLUMNS = 1 << 52
# --------------- #

# --- SCHEDULING --- #
BLOCK_ROWS = 64
DEFAULT_THREADS = 1
# ------------------ #

# --- BENCHMARKING --- #
DEFAULT_SEED = 42
DEFAULT_REPS = 10
WARMUP_RUNS = 1
BANDWIDTH_BYTES = 1 << 28
REFERENCE_MAX_COLS = 1 << 16
# -------------------- #

ENV_PREFIX = 'MAGNUS_'


@dataclass
class Settings:
    cache_line: Optional[int] = None
    l2_bytes: Optional[int] = None
    mem_budget: Optional[int] = None
    threads: int = DEFAULT_THREADS
    seed: int = DEFAULT_SEED
    reps: int = DEFAULT_REPS
    log_level: str = 'INFO'


def load_settings(dotenv_path: Optional[str] = None) -> Settings:
    """Read MAGNUS_* overrides from the environment (and a .env file if present)."""
    load_dotenv(dotenv_path=dotenv_path)
    data = {}
    for field in fields(Settings):
        raw = os.environ.get(ENV_PREFIX + field.name.upper())
        if raw is None or raw == '':
            continue
        if field.name == 'log_level':
            data[field.name] = raw
            continue
        try:
            data[field.name] = int(raw, 0)
        except ValueError:
            raise ConfigError(f'{ENV_PREFIX}{field.name.upper()}={raw!r} is not an integer') from None
    return dacite.from_dict(Settings, data, config=dacite.Config(cast=[int]))
