import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wqte import DEFAULT_GRID, Dataset, EstimatorVariant, GSpec, ObservedRecord, QuantileGrid, validate_dataset
from wqte.core import check_dataset, dumps
from wqte.errors import ConfigurationError, DataValidationError, GridError, PositivityError


def small(y=(1.0, 2.0, None, 4.0), z=(0, 1, 0, 1), r=(1, 1, 0, 0), s=(0, 0, 0, 1)):
    return Dataset(list(y), list(z), np.arange(len(y), dtype=float)[:, None], list(r), list(s))


def test_none_marks_missing_outcome():
    d = small()
    assert d.n == 4 and d.p == 1
    assert d.y_present.tolist() == [True, True, False, True]
    assert np.ma.is_masked(d.y[2])
    assert d.observed.tolist() == [True, True, False, True]
    assert validate_dataset(d) == []


def test_masked_array_input_hides_values():
    y = np.ma.MaskedArray([1.0, 99.0, 3.0], mask=[False, True, False])
    d = Dataset(y, [0, 1, 1], np.zeros((3, 1)), [1, 0, 1], [0, 0, 0])
    assert np.isnan(d.y.data[1])
    assert d.outcome_values().tolist() == [1.0, 0.0, 3.0]


def test_columns_are_read_only():
    d = small()
    with pytest.raises(ValueError):
        d.z[0] = 1


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        Dataset([1.0, 2.0], [0, 1, 1], np.zeros((2, 1)), [1, 1], [0, 0])


def test_double_sampled_record_must_be_initially_missing():
    d = small(r=(1, 1, 0, 1), s=(0, 0, 0, 1))
    assert "row 3: S=1 requires R=0" in validate_dataset(d)


def test_outcome_presence_must_match_observance():
    extra = small(y=(1.0, 2.0, 3.0, 4.0))
    assert "row 2: y must be absent when r+s=0" in validate_dataset(extra)
    lacking = small(y=(1.0, 2.0, None, None))
    assert "row 3: y must be present when r+s=1" in validate_dataset(lacking)


def test_each_arm_needs_an_observed_outcome():
    d = small(z=(1, 1, 0, 1))
    assert validate_dataset(d) == ["dataset: no observed outcome in treatment arm z=0"]
    with pytest.raises(DataValidationError) as info:
        check_dataset(d)
    assert info.value.code == "invalid-data"


def test_record_round_trip():
    d = small()
    again = Dataset.from_records(d.records)
    assert again.records == d.records
    assert d.records[2] == ObservedRecord(None, 0, (2.0,), 0, 0)


def test_take_and_replace():
    d = small()
    sub = d.take([0, 3])
    assert sub.n == 2 and sub.y.tolist() == [1.0, 4.0]
    flipped = d.replace(z=[1, 0, 1, 0])
    assert flipped.z.tolist() == [1, 0, 1, 0] and d.z.tolist() == [0, 1, 0, 1]


def test_default_grid():
    assert DEFAULT_GRID.taus == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    assert DEFAULT_GRID.index(0.3) == 2


@pytest.mark.parametrize("taus", [(), (0.0, 0.5), (0.5, 1.0), (0.4, 0.3), (0.2, 0.2)])
def test_bad_grids(taus):
    with pytest.raises(GridError):
        QuantileGrid(taus)


@given(st.lists(st.floats(0.001, 0.999), min_size=1, max_size=20, unique=True))
def test_sorted_unique_levels_make_a_grid(levels):
    grid = QuantileGrid(tuple(sorted(levels)))
    assert len(grid) == len(levels)
    assert np.all(np.diff(grid.array) > 0)


def test_g_kinds():
    e = np.array([0.2, 0.7])
    assert GSpec().evaluate(e).tolist() == [1.0, 1.0]
    assert GSpec("treated").evaluate(e).tolist() == [0.2, 0.7]
    with pytest.raises(ConfigurationError):
        GSpec("everyone")
    with pytest.raises(PositivityError):
        GSpec("treated").evaluate(np.array([0.0, 0.5]))


@pytest.mark.parametrize("tag", ["IV", "IV-ds-estimated", "DS_ESTIMATED", EstimatorVariant.DS_ESTIMATED])
def test_variant_tags(tag):
    assert EstimatorVariant.parse(tag) is EstimatorVariant.DS_ESTIMATED


def test_unknown_variant():
    with pytest.raises(ConfigurationError):
        EstimatorVariant.parse("VI")


def test_canonical_json():
    text = dumps({"b": np.arange(2), "a": np.float64(np.nan), "v": EstimatorVariant.MAR})
    assert text.endswith("\n")
    assert json.loads(text) == {"a": None, "b": [0, 1], "v": "V-mar"}
    assert text.index('"a"') < text.index('"b"')
