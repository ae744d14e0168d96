from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from granular.data import (
    Dataset,
    StandardizationParams,
    destandardize,
    fit_standardizer,
    load_csv,
    standardize,
    write_csv,
)
from granular.errors import DataError


def _write(tmp_path, text):
    path = tmp_path / "in.csv"
    path.write_text(text, encoding="utf-8")
    return path


def test_load_small_file_uses_row_index_ids(tmp_path):
    data = load_csv(_write(tmp_path, "a,b\n1,2\n3,4\n5,6\n"))
    assert (data.n, data.d) == (3, 2)
    assert data.ids == (0, 1, 2)
    assert data.columns == ("a", "b")
    np.testing.assert_array_equal(data.values, [[1, 2], [3, 4], [5, 6]])


def test_bad_cell_names_row_and_column(tmp_path):
    path = _write(tmp_path, "a,b\n1,2\nabc,4\n")
    with pytest.raises(DataError, match=r"row 2, column 'a'"):
        load_csv(path)


def test_eleven_columns_with_id(tmp_path):
    cols = [f"x{j}" for j in range(1, 12)]
    lines = ["emp," + ",".join(cols)]
    lines += [f"E{i}," + ",".join(str(i + j) for j in range(11)) for i in range(4)]
    data = load_csv(_write(tmp_path, "\n".join(lines) + "\n"), id_column="emp")
    assert data.d == 11
    assert data.ids == ("E0", "E1", "E2", "E3")


@pytest.mark.parametrize(
    "text, message",
    [
        ("a,b\n1,2\n1,\n", "column 'b'"),
        ("a,b\n1,nan\n", "finite"),
        ("id,a\n1,2\n1,3\n", "duplicate id"),
        ("a,b\n1\n", "expected 2"),
        ("", "empty"),
    ],
)
def test_loader_rejects(tmp_path, text, message):
    path = _write(tmp_path, text)
    with pytest.raises(DataError, match=message):
        load_csv(path, id_column="id" if text.startswith("id") else None)


def test_missing_file(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        load_csv(tmp_path / "nope.csv")


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    data = Dataset.from_array(rng.standard_normal((50, 4)) * 1e3, ids=range(10, 60))
    write_csv(data, tmp_path / "rt.csv")
    back = load_csv(tmp_path / "rt.csv", id_column="id")
    assert back.ids == data.ids
    assert back.columns == data.columns
    np.testing.assert_array_equal(back.values, data.values)


def test_dataset_is_read_only():
    data = Dataset.from_array(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        data.values[0, 0] = 1.0


def test_dataset_rejects_duplicate_ids():
    with pytest.raises(DataError):
        Dataset.from_array(np.zeros((2, 1)), ids=[1, 1])


def _column(values):
    return Dataset.from_array(np.array(values, dtype=float)[:, None])


def test_constant_column_flagged():
    params = fit_standardizer(_column([1, 1, 1]))
    assert params.mean[0] == 1.0
    assert params.std[0] == 1.0
    assert params.constant == (True,)


def test_population_std():
    params = fit_standardizer(_column([0, 2]))
    assert params.mean[0] == 1.0
    assert params.std[0] == 1.0
    assert params.constant == (False,)


def test_symmetric_column_mean_zero():
    assert fit_standardizer(_column([-3, 3])).mean[0] == 0.0


def test_needs_two_rows():
    with pytest.raises(DataError):
        fit_standardizer(_column([1.0]))


def test_standardize_examples():
    params = StandardizationParams(("a",), np.array([5.0]), np.array([2.0]))
    out = standardize(_column([5, 7]), params)
    np.testing.assert_array_equal(out.values[:, 0], [0.0, 1.0])
    back = destandardize(_column([0, 1]), params)
    np.testing.assert_array_equal(back.values[:, 0], [5.0, 7.0])


def test_dimension_mismatch():
    params = fit_standardizer(Dataset.from_array(np.arange(6.0).reshape(3, 2)))
    with pytest.raises(DataError, match="dimension mismatch"):
        standardize(_column([1, 2, 3]), params)


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 6)), elements=finite))
def test_standardize_round_trip(values):
    data = Dataset.from_array(values)
    params = fit_standardizer(data)
    back = destandardize(standardize(data, params), params)
    scale = np.maximum(np.abs(values), 1.0)
    assert np.all(np.abs(back.values - values) <= 1e-9 * scale)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 6)), elements=finite))
def test_standardized_moments(values):
    data = Dataset.from_array(values)
    params = fit_standardizer(data)
    z = standardize(data, params).values
    for j, const in enumerate(params.constant):
        if const:
            continue
        # Nearly constant columns lose relative precision; skip those.
        if values[:, j].std() < 1e-6 * max(1.0, np.abs(values[:, j]).max()):
            continue
        assert abs(z[:, j].mean()) < 1e-9
        assert abs(z[:, j].std() - 1) < 1e-9
