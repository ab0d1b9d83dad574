import io
import os
import re
import struct

import numpy as np
import pandas as pd
from loguru import logger

from .csr import INDEX_DTYPE, VALUE_DTYPE, CsrMatrix, csr_from_coo
from .errors import InputError, ParseError

MM_BANNER = '%%MatrixMarket'
MM_FIELDS = ('real', 'double', 'integer', 'complex', 'pattern')
MM_SYMMETRIES = ('general', 'symmetric', 'skew-symmetric', 'hermitian')

# Binary cache layout (little endian):
#   magic 8s | version u16 | index bytes u8 | value bytes u8 | flags u32 |
#   n_rows u64 | n_cols u64 | nnz u64 |
#   row_ptr u64[n_rows + 1] | col u32/u64[nnz] | val f64[nnz]
# flags bit 0 marks a canonical matrix.
BINARY_MAGIC = b'MAGNUSCS'
BINARY_VERSION = 1
BINARY_HEADER = struct.Struct('<8sHBBIQQQ')
BINARY_SUFFIX = '.mgcsr'


def _parse_banner(line: str, path: str):
    tokens = line.strip().lower().split()
    if len(tokens) != 5 or tokens[0] != MM_BANNER.lower() or tokens[1] != 'matrix':
        raise ParseError(f'expected "{MM_BANNER} matrix <format> <field> <symmetry>"', 1, path)
    fmt, field, symmetry = tokens[2:]
    if fmt == 'array':
        raise ParseError('dense array format is not supported', 1, path)
    if fmt != 'coordinate':
        raise ParseError(f'unknown format "{fmt}"', 1, path)
    if field not in MM_FIELDS:
        raise ParseError(f'unknown field "{field}"', 1, path)
    if symmetry not in MM_SYMMETRIES:
        raise ParseError(f'unknown symmetry "{symmetry}"', 1, path)
    return field, symmetry


def read_matrix_market(path: str) -> CsrMatrix:
    """Read a coordinate Matrix Market file into a canonical CsrMatrix.

    Symmetric, skew-symmetric and hermitian files are expanded to full storage,
    pattern entries get the value 1.0, and integer/complex fields are coerced
    to real (complex keeps the real part).
    """
    path = str(path)
    with open(path, 'r') as f:
        text = f.read()
    lines = text.splitlines()
    if not lines:
        raise ParseError('empty file', 1, path)
    field, symmetry = _parse_banner(lines[0], path)

    line_no = 1
    size_line = None
    while line_no < len(lines):
        stripped = lines[line_no].strip()
        line_no += 1
        if stripped and not stripped.startswith('%'):
            size_line = stripped
            break
    if size_line is None:
        raise ParseError('missing size line', line_no + 1, path)
    try:
        n_rows, n_cols, nnz = (int(tok) for tok in size_line.split())
    except ValueError:
        raise ParseError(f'malformed size line "{size_line}"', line_no, path) from None
    if n_rows < 0 or n_cols < 0 or nnz < 0:
        raise ParseError('negative dimension', line_no, path)
    header_lines = line_no

    n_fields = {'pattern': 2, 'complex': 4}.get(field, 3)
    body = '\n'.join(lines[header_lines:])
    if nnz == 0 or not body.strip():
        table = np.zeros((0, n_fields))
    else:
        try:
            frame = pd.read_csv(io.StringIO(body), sep=r'\s+', header=None, comment='%',
                                usecols=range(n_fields), dtype=np.float64, float_precision='round_trip')
        except (pd.errors.ParserError, ValueError) as e:
            found = re.search(r'line (\d+)', str(e))
            offset = int(found.group(1)) if found else 1
            raise ParseError(f'malformed entry: {e}', header_lines + offset, path) from None
        table = frame.to_numpy()
        if np.isnan(table).any():
            k = int(np.flatnonzero(np.isnan(table).any(axis=1))[0])
            raise ParseError('entry has missing fields', header_lines + k + 1, path)
    if table.shape[0] != nnz:
        raise ParseError(f'expected {nnz} entries, found {table.shape[0]}',
                         header_lines + table.shape[0] + 1, path)

    rows = table[:, 0].astype(INDEX_DTYPE) - 1
    cols = table[:, 1].astype(INDEX_DTYPE) - 1
    vals = np.ones(nnz, dtype=VALUE_DTYPE) if field == 'pattern' else table[:, 2].astype(VALUE_DTYPE)
    bad = np.flatnonzero((rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols))
    if bad.size:
        k = int(bad[0])
        raise ParseError(f'index ({rows[k] + 1}, {cols[k] + 1}) outside {n_rows}x{n_cols}',
                         header_lines + k + 1, path)

    if symmetry != 'general':
        off = rows != cols
        mirror = -vals[off] if symmetry == 'skew-symmetric' else vals[off]
        rows, cols, vals = (np.concatenate([rows, cols[off]]),
                            np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, mirror]))

    matrix = csr_from_coo(rows, cols, vals, n_rows, n_cols)
    logger.info(f'Read {path}: {n_rows}x{n_cols}, {field} {symmetry}, nnz={matrix.nnz}')
    return matrix


def write_matrix_market(matrix: CsrMatrix, path: str, comment: str = '') -> None:
    path = str(path)
    rows = np.repeat(np.arange(matrix.n_rows, dtype=INDEX_DTYPE), matrix.row_nnz())
    with open(path, 'w') as f:
        f.write(f'{MM_BANNER} matrix coordinate real general\n')
        if comment:
            for line in comment.splitlines():
                f.write(f'% {line}\n')
        f.write(f'{matrix.n_rows} {matrix.n_cols} {matrix.nnz}\n')
        if matrix.nnz:
            entries = pd.DataFrame({'row': rows + 1, 'col': matrix.col + 1, 'val': matrix.val})
            entries.to_csv(f, sep=' ', header=False, index=False, float_format='%.17g')
    logger.info(f'Wrote {path}: {matrix.n_rows}x{matrix.n_cols}, nnz={matrix.nnz}')


def write_binary(matrix: CsrMatrix, path: str) -> None:
    path = str(path)
    index_bytes = matrix.col_index_bytes
    col_dtype = '<u4' if index_bytes == 4 else '<u8'
    header = BINARY_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, index_bytes, 8,
                                1 if matrix.canonical else 0,
                                matrix.n_rows, matrix.n_cols, matrix.nnz)
    with open(path, 'wb') as f:
        f.write(header)
        matrix.row_ptr.astype('<u8').tofile(f)
        matrix.col.astype(col_dtype).tofile(f)
        matrix.val.astype('<f8').tofile(f)
    logger.info(f'Wrote binary cache {path} ({index_bytes}-byte column indices)')


def read_binary(path: str) -> CsrMatrix:
    path = str(path)
    with open(path, 'rb') as f:
        raw = f.read(BINARY_HEADER.size)
        if len(raw) < BINARY_HEADER.size:
            raise InputError(f'{path}: truncated binary header')
        magic, version, index_bytes, value_bytes, flags, n_rows, n_cols, nnz = BINARY_HEADER.unpack(raw)
        if magic != BINARY_MAGIC:
            raise InputError(f'{path}: not a binary CSR cache')
        if version != BINARY_VERSION or index_bytes not in (4, 8) or value_bytes != 8:
            raise InputError(f'{path}: unsupported cache version {version} '
                             f'(index {index_bytes} B, value {value_bytes} B)')
        row_ptr = np.fromfile(f, dtype='<u8', count=n_rows + 1).astype(INDEX_DTYPE)
        col = np.fromfile(f, dtype='<u4' if index_bytes == 4 else '<u8', count=nnz).astype(INDEX_DTYPE)
        val = np.fromfile(f, dtype='<f8', count=nnz).astype(VALUE_DTYPE)
    if row_ptr.size != n_rows + 1 or col.size != nnz or val.size != nnz:
        raise InputError(f'{path}: truncated binary payload')
    return CsrMatrix(int(n_rows), int(n_cols), row_ptr, col, val, canonical=bool(flags & 1))


def load_matrix(path: str) -> CsrMatrix:
    """Load either format; binary caches are recognised by magic bytes."""
    path = str(path)
    if not os.path.exists(path):
        raise InputError(f'{path}: no such file')
    with open(path, 'rb') as f:
        magic = f.read(len(BINARY_MAGIC))
    if magic == BINARY_MAGIC:
        return read_binary(path)
    return read_matrix_market(path)


def save_matrix(matrix: CsrMatrix, path: str) -> None:
    if str(path).endswith(BINARY_SUFFIX):
        write_binary(matrix, path)
    else:
        write_matrix_market(matrix, path)
