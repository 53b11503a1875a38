import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvebic.core import (CriteriaReport, Dataset, Family, FitResult, GroupedDataset,
                           ModelSpec, dataset_to_csv, parse_rows, read_rows,
                           validate_dataset)
from curvebic.errors import (DuplicateColumnName, EmptyGroup, MissingColumn,
                             NonFiniteValue, PreconditionError)


LINEAR_X1 = ModelSpec(Family.LINEAR, ("x1",))


def test_valid_linear_rows():
    rows = parse_rows("y,x1\n1,2\n2,3\n3,5\n4,4\n")
    data = validate_dataset(rows, LINEAR_X1)
    assert isinstance(data, Dataset)
    assert data.n == 4
    np.testing.assert_array_equal(data.column("x1"), [2, 3, 5, 4])


def test_nan_is_rejected_with_location():
    rows = parse_rows("y,x1\n1,2\n2,nan\n")
    with pytest.raises(NonFiniteValue) as exc:
        validate_dataset(rows, LINEAR_X1)
    assert exc.value.row == 1 and exc.value.column == "x1"


def test_non_numeric_is_rejected():
    with pytest.raises(NonFiniteValue):
        validate_dataset(parse_rows("y,x1\n1,abc\n"), LINEAR_X1)


def test_declared_group_without_rows():
    rows = parse_rows("y,group\n1,g1\n2,g1\n3,g2\n")
    spec = ModelSpec(Family.HIERARCHICAL_NORMAL)
    with pytest.raises(EmptyGroup) as exc:
        validate_dataset(rows, spec, group_levels=["g1", "g2", "g3"])
    assert exc.value.label == "g3"


def test_missing_and_duplicate_columns():
    with pytest.raises(MissingColumn):
        validate_dataset(parse_rows("y,x2\n1,2\n"), LINEAR_X1)
    with pytest.raises(MissingColumn):
        validate_dataset(parse_rows("y,x1\n1,2\n"), ModelSpec(Family.LMM, ("x1",)))
    with pytest.raises(DuplicateColumnName):
        parse_rows("y,x1,x1\n1,2,3\n")
    with pytest.raises(DuplicateColumnName):
        Dataset([1.0], [[1.0, 2.0]], ("a", "a"))


def test_spec_rejects_random_terms_for_fixed_families():
    with pytest.raises(PreconditionError):
        ModelSpec(Family.LINEAR, ("x",), ("x",))
    with pytest.raises(PreconditionError):
        ModelSpec(Family.GLMM_BINOMIAL, ("x",), ("x",), correlated_random=True)
    ModelSpec(Family.GLMM_BINOMIAL, ("x",), ("x",), intercept_random=True,
              correlated_random=True)


def test_family_from_string():
    assert ModelSpec("glmm-poisson").family is Family.GLMM_POISSON


def test_arrays_are_read_only():
    d = Dataset([1.0, 2.0], [[1.0], [2.0]], ("x",))
    with pytest.raises(ValueError):
        d.y[0] = 5.0


def test_fit_result_invariants():
    f = FitResult(theta_hat=[1.0, 2.0], loglik=-3.0, n_eff=5, converged=True, iterations=1,
                  family=Family.LINEAR)
    assert f.p_params == 2
    assert f.with_n_eff(10).n_eff == 10
    with pytest.raises(PreconditionError):
        FitResult(theta_hat=[1.0], loglik=-1.0, n_eff=0.5, converged=True, iterations=1,
                  family=Family.LINEAR)
    with pytest.raises(PreconditionError):
        FitResult(theta_hat=[1.0], loglik=math.nan, n_eff=2, converged=True, iterations=1,
                  family=Family.LINEAR)


def test_grouped_dataset_partition(rng):
    g = rng.integers(0, 7, size=60)
    g[:7] = np.arange(7)
    data = GroupedDataset(Dataset(rng.normal(size=60), np.empty((60, 0)), ()), g,
                          tuple(str(i) for i in range(7)))
    idx = data.group_indices()
    allrows = np.sort(np.concatenate(idx))
    np.testing.assert_array_equal(allrows, np.arange(60))
    assert sum(len(i) for i in idx) == 60
    for k, rows in enumerate(idx):
        assert np.all(data.group[rows] == k)


finite = st.floats(min_value=-1e300, max_value=1e300, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(vals=st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=15),
       grouped=st.booleans())
def test_csv_round_trip_is_bit_exact(vals, grouped):
    arr = np.array(vals)
    base = Dataset(arr[:, 0], arr[:, 1:], ("a", "b"))
    if grouped:
        g = np.arange(len(vals)) % 3
        labels = tuple(f"lev{i}" for i in range(min(3, len(vals))))
        g = g % len(labels)
        data = GroupedDataset(base, g, labels)
        spec = ModelSpec(Family.HIERARCHICAL_NORMAL, ("a", "b"))
    else:
        data = base
        spec = ModelSpec(Family.LINEAR, ("a", "b"))
    back = validate_dataset(parse_rows(dataset_to_csv(data)), spec)
    b0 = back.base if grouped else back
    np.testing.assert_array_equal(b0.y, base.y)
    np.testing.assert_array_equal(b0.X, base.X)
    assert b0.column_names == base.column_names
    if grouped:
        np.testing.assert_array_equal(back.group, data.group)
        assert back.labels == data.labels


def test_read_rows_from_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("y, x1\n1, 2\n\n3,4\n", encoding="utf-8")
    rows = read_rows(p)
    assert rows == [{"y": "1", "x1": "2"}, {"y": "3", "x1": "4"}]
    with open(p, encoding="utf-8") as fh:
        assert read_rows(fh) == rows


def test_criteria_report_lookup():
    r = CriteriaReport(aic=1, aicc=None, bic=2, caif=3, icomp=4, bic_hes=5, bic_hes_sp=6,
                       loglik=0, p_params=1, n_eff=2, log_det=3)
    assert r.value("bic") == 2 and r.value("aicc") is None
