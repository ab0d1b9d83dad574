import numpy as np
import pytest

from magnus.errors import InputError, ParseError
from magnus.matrix_io import load_matrix, read_binary, read_matrix_market, save_matrix, write_binary, \
    write_matrix_market


def _write(tmp_path, text, name='m.mtx'):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_read_general(tmp_path):
    path = _write(tmp_path, '%%MatrixMarket matrix coordinate real general\n'
                            '% comment\n'
                            '3 4 3\n'
                            '1 1 1.5\n'
                            '3 4 -2\n'
                            '1 3 0.25\n')
    m = read_matrix_market(path)
    assert m.shape == (3, 4)
    assert m.row_ptr.tolist() == [0, 2, 2, 3]
    assert m.col.tolist() == [0, 2, 3]
    assert m.val.tolist() == [1.5, 0.25, -2.0]


def test_read_symmetric_pattern(tmp_path):
    path = _write(tmp_path, '%%MatrixMarket matrix coordinate pattern symmetric\n'
                            '3 3 2\n'
                            '2 1\n'
                            '3 3\n')
    m = read_matrix_market(path)
    assert m.to_dense().tolist() == [[0, 1, 0], [1, 0, 0], [0, 0, 1]]


def test_read_skew_symmetric(tmp_path):
    path = _write(tmp_path, '%%MatrixMarket matrix coordinate real skew-symmetric\n'
                            '2 2 1\n'
                            '2 1 3\n')
    assert read_matrix_market(path).to_dense().tolist() == [[0, -3], [3, 0]]


def test_read_sums_duplicates(tmp_path):
    path = _write(tmp_path, '%%MatrixMarket matrix coordinate integer general\n'
                            '1 2 2\n'
                            '1 2 1\n'
                            '1 2 4\n')
    m = read_matrix_market(path)
    assert m.col.tolist() == [1] and m.val.tolist() == [5.0]


@pytest.mark.parametrize('text, line', [
    ('%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n', 1),
    ('%%MatrixMarket matrix coordinate real general\n2 x 1\n1 1 1\n', 2),
    ('%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n', 3),
    ('%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n', 4),
    ('not a banner\n', 1),
])
def test_parse_errors_carry_line_numbers(tmp_path, text, line):
    path = _write(tmp_path, text)
    with pytest.raises(ParseError) as info:
        read_matrix_market(path)
    assert info.value.line_number == line


def test_matrix_market_round_trip(tmp_path, make_csr):
    a = make_csr(30, 20, 0.2, integer_values=False)
    path = str(tmp_path / 'a.mtx')
    write_matrix_market(a, path, comment='generated')
    assert read_matrix_market(path).same_as(a)


def test_binary_round_trip_and_detection(tmp_path, make_csr):
    a = make_csr(30, 20, 0.2, integer_values=False)
    path = str(tmp_path / 'a.mgcsr')
    save_matrix(a, path)
    assert read_binary(path).same_as(a)
    assert load_matrix(path).same_as(a)


def test_binary_rejects_foreign_and_truncated_files(tmp_path, make_csr):
    foreign = _write(tmp_path, 'x' * 64, 'foreign.mgcsr')
    with pytest.raises(InputError):
        read_binary(foreign)
    path = str(tmp_path / 'a.mgcsr')
    write_binary(make_csr(10, 10, 0.5), path)
    data = open(path, 'rb').read()
    with open(path, 'wb') as f:
        f.write(data[:-8])
    with pytest.raises(InputError):
        read_binary(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(InputError):
        load_matrix(str(tmp_path / 'missing.mtx'))


def test_binary_keeps_canonical_flag(tmp_path):
    from magnus.csr import CsrMatrix
    m = CsrMatrix(1, 3, np.array([0, 2]), np.array([2, 0]), np.array([1.0, 2.0]), canonical=False)
    path = str(tmp_path / 'm.mgcsr')
    write_binary(m, path)
    assert read_binary(path).canonical is False


def test_binary_layout_field_by_field(tmp_path):
    from magnus.csr import csr_from_triplets
    m = csr_from_triplets([(0, 2, 1.5), (2, 0, -4.0), (2, 1, 0.25)], 3, 3)
    path = str(tmp_path / 'm.mgcsr')
    write_binary(m, path)
    data = open(path, 'rb').read()
    assert data[:8] == b'MAGNUSCS'
    assert np.frombuffer(data, dtype='<u2', count=1, offset=8)[0] == 1
    assert (data[10], data[11]) == (4, 8)
    assert np.frombuffer(data, dtype='<u4', count=1, offset=12)[0] & 1 == 1
    assert np.frombuffer(data, dtype='<u8', count=3, offset=16).tolist() == [3, 3, 3]
    body = 40
    assert np.frombuffer(data, dtype='<u8', count=4, offset=body).tolist() == [0, 1, 1, 3]
    assert np.frombuffer(data, dtype='<u4', count=3, offset=body + 32).tolist() == [2, 0, 1]
    assert np.frombuffer(data, dtype='<f8', count=3, offset=body + 44).tolist() == [1.5, -4.0, 0.25]
    assert len(data) == body + 44 + 24
