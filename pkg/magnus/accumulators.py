"""Accumulators for intermediate-product chunks.

Two kernels are provided: dense accumulation (value buffer + one-byte bitmap +
insertion-order column list) and sort-merge accumulation (stable key sort, then
a merge of equal columns). ``select_accumulator`` picks between them per chunk
and ``merge_chunks_for_sort`` groups small consecutive chunks into sorts of a
size close to the sorting sweet spot.
"""
from dataclasses import dataclass
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np
from numba import njit

from .config import SORT_DENSE_CROSSOVER, SORT_NETWORK_SIZE, SORT_SWEET_SPOT
from .errors import ContractViolation, InputError


class AccumKind(str, Enum):
    SORT = 'sort'
    DENSE = 'dense'


@dataclass(frozen=True)
class AccumThresholds:
    sort_dense_crossover: int = SORT_DENSE_CROSSOVER
    sort_sweet_spot: int = SORT_SWEET_SPOT

    def __post_init__(self) -> None:
        if self.sort_sweet_spot > self.sort_dense_crossover:
            raise InputError('sort sweet spot must not exceed the sort/dense crossover')


def odd_even_merge_network(size: int) -> List[Tuple[int, int]]:
    """Comparator pairs of Batcher's odd-even mergesort for a power-of-two size."""
    def sort_net(indices):
        if len(indices) < 2:
            return
        mid = len(indices) // 2
        yield from sort_net(indices[:mid])
        yield from sort_net(indices[mid:])
        yield from merge_net(indices)

    def merge_net(indices):
        if len(indices) == 2:
            yield indices[0], indices[1]
        elif len(indices) > 2:
            yield from merge_net(indices[0::2])
            yield from merge_net(indices[1::2])
            for x, y in zip(indices[1::2], indices[2::2]):
                yield x, y

    return list(sort_net(list(range(size))))


SORT_NETWORK = np.array(odd_even_merge_network(SORT_NETWORK_SIZE), dtype=np.int64)
KEY_SENTINEL = np.iinfo(np.int64).max


class DenseAccumulator:
    """Worker-local dense accumulator scratch; never shared between workers."""

    def __init__(self, capacity: int) -> None:
        self.capacity = int(capacity)
        self.buffer = np.zeros(self.capacity, dtype=np.float64)
        self.bitmap = np.zeros(self.capacity, dtype=np.uint8)
        self.col_buff = np.zeros(self.capacity, dtype=np.int64)
        self.count = 0

    def ensure(self, capacity: int) -> 'DenseAccumulator':
        if capacity > self.capacity:
            self.__init__(max(capacity, 2 * self.capacity))
        return self

    def reset(self) -> None:
        self.bitmap[:] = 0
        self.count = 0

    def is_clear(self) -> bool:
        return self.count == 0 and not self.bitmap.any()


# --- kernels --- #

@njit(nogil=True, cache=True, inline='always')
def dense_insert(j, v, buffer, bitmap, col_buff, count):
    if bitmap[j] == 0:
        bitmap[j] = 1
        buffer[j] = v
        col_buff[count] = j
        return count + 1
    buffer[j] += v
    return count


@njit(nogil=True, cache=True, inline='always')
def bitmap_insert(j, bitmap, col_buff, count):
    if bitmap[j] == 0:
        bitmap[j] = 1
        col_buff[count] = j
        return count + 1
    return count


@njit(nogil=True, cache=True)
def dense_drain(buffer, bitmap, col_buff, count, offset, out_col, out_val, out_pos):
    # bitmap slots are cleared while draining, so no full reset is needed
    for t in range(count):
        j = col_buff[t]
        out_col[out_pos + t] = j + offset
        out_val[out_pos + t] = buffer[j]
        bitmap[j] = 0
    return out_pos + count


@njit(nogil=True, cache=True)
def bitmap_clear(bitmap, col_buff, count):
    for t in range(count):
        bitmap[col_buff[t]] = 0


@njit(nogil=True, cache=True)
def dense_accumulate_into(cols, vals, lo, hi, buffer, bitmap, col_buff, offset,
                          out_col, out_val, out_pos, numeric):
    """Accumulate cols[lo:hi]; returns the new output position (numeric) or count."""
    count = 0
    if numeric:
        for k in range(lo, hi):
            count = dense_insert(cols[k], vals[k], buffer, bitmap, col_buff, count)
        return dense_drain(buffer, bitmap, col_buff, count, offset, out_col, out_val, out_pos)
    for k in range(lo, hi):
        count = bitmap_insert(cols[k], bitmap, col_buff, count)
    bitmap_clear(bitmap, col_buff, count)
    return out_pos + count


@njit(nogil=True, cache=True)
def network_argsort(cols, lo, hi):
    n = hi - lo
    key = np.empty(SORT_NETWORK_SIZE, dtype=np.int64)
    idx = np.empty(SORT_NETWORK_SIZE, dtype=np.int64)
    for t in range(SORT_NETWORK_SIZE):
        key[t] = cols[lo + t] if t < n else KEY_SENTINEL
        idx[t] = t
    for p in range(SORT_NETWORK.shape[0]):
        x = SORT_NETWORK[p, 0]
        y = SORT_NETWORK[p, 1]
        if key[x] > key[y] or (key[x] == key[y] and idx[x] > idx[y]):
            key[x], key[y] = key[y], key[x]
            idx[x], idx[y] = idx[y], idx[x]
    return idx[:n].copy()


@njit(nogil=True, cache=True)
def stable_argsort(cols, lo, hi):
    if hi - lo <= SORT_NETWORK_SIZE:
        return network_argsort(cols, lo, hi)
    return np.argsort(cols[lo:hi], kind='mergesort')


@njit(nogil=True, cache=True)
def sort_accumulate_into(cols, vals, lo, hi, offset, out_col, out_val, out_pos, numeric):
    """Sort cols[lo:hi] by (column, position) and merge equal columns."""
    if hi <= lo:
        return out_pos
    order = stable_argsort(cols, lo, hi)
    w = out_pos - 1
    prev = -1
    for t in range(hi - lo):
        k = lo + order[t]
        c = cols[k]
        if c != prev:
            w += 1
            prev = c
            if numeric:
                out_col[w] = c + offset
                out_val[w] = vals[k]
        elif numeric:
            out_val[w] += vals[k]
    return w + 1


@njit(nogil=True, cache=True)
def closes_sort_group(current, following, target):
    return abs(current + following - target) >= abs(current - target)


# --- public API --- #

def _as_stream(cols, vals=None):
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    if vals is None:
        return cols, np.zeros(0, dtype=np.float64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    if vals.shape != cols.shape:
        raise InputError('cols and vals must have the same length')
    return cols, vals


def _check_capacity(cols: np.ndarray, acc: DenseAccumulator) -> None:
    bad = np.flatnonzero((cols < 0) | (cols >= acc.capacity))
    if bad.size:
        k = int(bad[0])
        raise ContractViolation(
            f'column {int(cols[k])} at position {k} is outside the accumulator capacity {acc.capacity}')


def dense_accumulate(cols, vals, acc: DenseAccumulator) -> Tuple[np.ndarray, np.ndarray]:
    """Dense accumulation; output columns are in first-occurrence order."""
    cols, vals = _as_stream(cols, vals)
    _check_capacity(cols, acc)
    out_col = np.empty(cols.size, dtype=np.int64)
    out_val = np.empty(cols.size, dtype=np.float64)
    n = dense_accumulate_into(cols, vals, 0, cols.size, acc.buffer, acc.bitmap, acc.col_buff, 0,
                              out_col, out_val, 0, True)
    acc.count = 0
    return out_col[:n], out_val[:n]


def dense_accumulate_symbolic(cols, acc: DenseAccumulator) -> int:
    """Number of distinct columns; only the bitmap and a counter are touched."""
    cols, vals = _as_stream(cols)
    _check_capacity(cols, acc)
    unused_col = np.empty(0, dtype=np.int64)
    return int(dense_accumulate_into(cols, vals, 0, cols.size, acc.buffer, acc.bitmap, acc.col_buff, 0,
                                     unused_col, vals, 0, False))


def sort_accumulate(cols, vals) -> Tuple[np.ndarray, np.ndarray]:
    """Sort-merge accumulation; equal columns are summed in input order."""
    cols, vals = _as_stream(cols, vals)
    out_col = np.empty(cols.size, dtype=np.int64)
    out_val = np.empty(cols.size, dtype=np.float64)
    n = sort_accumulate_into(cols, vals, 0, cols.size, 0, out_col, out_val, 0, True)
    return out_col[:n], out_val[:n]


def select_accumulator(n_elems: int, thresholds: AccumThresholds = AccumThresholds()) -> AccumKind:
    return AccumKind.SORT if n_elems < thresholds.sort_dense_crossover else AccumKind.DENSE


def merge_chunks_for_sort(chunk_sizes: Sequence[int], target: int = SORT_SWEET_SPOT) -> List[Tuple[int, int]]:
    """Greedy left-to-right grouping of consecutive chunks into [start, end) groups.

    A group closes when adding the next chunk would not bring its total closer
    to ``target``; chunks are never split.
    """
    groups = []
    start = 0
    total = 0
    for k, size in enumerate(chunk_sizes):
        if k > start and closes_sort_group(total, size, target):
            groups.append((start, k))
            start = k
            total = 0
        total += size
    if len(chunk_sizes):
        groups.append((start, len(chunk_sizes)))
    return groups


def canonical_order(cols: np.ndarray, vals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    order = np.argsort(cols, kind='stable')
    return cols[order], vals[order]
