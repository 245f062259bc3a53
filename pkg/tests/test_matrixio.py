import numpy as np
import pytest
from numpy.testing import assert_array_equal

from epquad.matrixio import read_matrix, read_matrix_with_comments, write_matrix


def test_round_trip_is_exact(tmp_path):
    M = np.random.default_rng(0).standard_normal((4, 7)) * 10.0 ** np.arange(-3, 4)
    write_matrix(tmp_path / "m.txt", M, comments=["quadop n=2"])
    back, comments = read_matrix_with_comments(tmp_path / "m.txt")
    assert_array_equal(back, M)
    assert comments == ["quadop n=2"]
    assert (tmp_path / "m.txt").read_text().splitlines()[:2] == ["# quadop n=2", "4 7"]


def test_vector_becomes_column(tmp_path):
    write_matrix(tmp_path / "v.txt", [1.0, 2.0])
    assert read_matrix(tmp_path / "v.txt").shape == (2, 1)


def test_zero_columns(tmp_path):
    write_matrix(tmp_path / "e.txt", np.zeros((3, 0)))
    assert read_matrix(tmp_path / "e.txt").shape == (3, 0)


def test_mismatched_body(tmp_path):
    (tmp_path / "b.txt").write_text("2 2\n1 2\n3\n")
    with pytest.raises(ValueError):
        read_matrix(tmp_path / "b.txt")


def test_missing_header(tmp_path):
    (tmp_path / "h.txt").write_text("# only a comment\n")
    with pytest.raises(ValueError):
        read_matrix(tmp_path / "h.txt")
