import math
import warnings

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gtdid.config import DesignConfig
from gtdid.errors import (
    DataError,
    DegenerateCovariate,
    InconsistentGroup,
    MissingColumn,
    NegativeWeight,
    NoControlUnits,
    ParseError,
    UnknownCovariate,
)
from gtdid.panel import (
    NEVER,
    UnitRecord,
    aggregate_cells,
    binarize_covariates,
    frame_to_records,
    load_csv,
    validate_design,
    weighted_median,
)

from conftest import make_panel

SCHEMA = {"unit": "unit", "period": "period", "first_treat": "first_treat", "outcome": "outcome", "weight": "weight"}


def write(tmp_path, text, name="p.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoadCsv:
    def test_direct_mapping(self, tmp_path):
        p = write(tmp_path, "unit,period,first_treat,outcome,weight\nm1,1935,1946,0.72,130\n")
        df = load_csv(p, SCHEMA)
        row = frame_to_records(df)[0]
        assert row == UnitRecord("m1", 1935, 1946.0, 0.72, 130.0, {}, "m1")

    def test_empty_first_treat_is_never(self, tmp_path):
        p = write(tmp_path, "unit,period,first_treat,outcome,weight\nm1,1935,,0.72,130\n")
        assert math.isinf(load_csv(p, SCHEMA)["first_treat"].iloc[0])

    def test_configured_sentinel(self, tmp_path):
        p = write(tmp_path, "unit,period,first_treat,outcome\nm1,1935,1970,0.7\nm2,1935,1946,0.1\n")
        g = load_csv(p, never_sentinel="1970")["first_treat"].to_numpy()
        assert g[0] == NEVER and g[1] == 1946

    def test_negative_weight(self, tmp_path):
        p = write(tmp_path, "unit,period,first_treat,outcome,weight\nm1,1935,1946,0.72,-3\n")
        with pytest.raises(NegativeWeight):
            load_csv(p, SCHEMA)

    def test_missing_column_named(self, tmp_path):
        p = write(tmp_path, "unit,period,first_treat,y\nm1,1935,1946,0.72\n")
        with pytest.raises(MissingColumn) as exc:
            load_csv(p)
        assert exc.value.column == "outcome"

    def test_parse_error_identifies_row_and_column(self, tmp_path):
        p = write(tmp_path, "unit,period,first_treat,outcome\nm1,1935,1946,0.7\nm1,1936,1946,abc\n")
        with pytest.raises(ParseError) as exc:
            load_csv(p)
        assert (exc.value.row, exc.value.column, exc.value.value) == (2, "outcome", "abc")

    def test_defaults(self, tmp_path):
        p = write(tmp_path, "unit,period,first_treat,outcome,weight,cl\nm1,1,2,0.7,,\nm2,1,2,0.7,2,c9\n")
        df = load_csv(p, {**SCHEMA, "cluster": "cl"})
        assert df["weight"].tolist() == [1.0, 2.0]
        assert df["cluster_id"].tolist() == ["m1", "c9"]

    def test_round_trip_through_to_csv(self, tmp_path):
        ds = make_panel([("a", 1, 2, 0.5, 2.0), ("a", 2, 2, 1.5, 2.0), ("b", 1, NEVER, 1.0), ("b", 2, NEVER, 3.0)])
        ds.to_csv(tmp_path / "x.csv", never_sentinel="1970")
        back = aggregate_cells(load_csv(tmp_path / "x.csv", never_sentinel="1970"))
        np.testing.assert_array_equal(back.outcome, ds.outcome)
        np.testing.assert_array_equal(back.n, ds.n)
        np.testing.assert_array_equal(back.unit_group, ds.unit_group)


class TestAggregateCells:
    def test_arithmetic_mean(self):
        recs = [UnitRecord("m1", 1935, 1946, y) for y in (0, 1, 1)]
        ds = aggregate_cells(recs)
        assert ds.n_cells == 1
        assert abs(ds.outcome[0] - 2 / 3) < 1e-12
        assert ds.n[0] == 3

    def test_single_record_identity(self):
        ds = aggregate_cells([UnitRecord("m1", 1935, 1946, 0.72, 130)])
        cell = next(ds.cells())
        assert (cell.unit_id, cell.period, cell.group, cell.outcome_mean, cell.n) == ("m1", 1935, 1946, 0.72, 130)

    def test_inconsistent_group(self):
        recs = [UnitRecord("m1", 1935, 1946, 0.0), UnitRecord("m1", 1936, 1950, 0.0)]
        with pytest.raises(InconsistentGroup):
            aggregate_cells(recs)

    def test_unit_spanning_clusters(self):
        recs = [UnitRecord("m1", 1, 2, 0.0, cluster_id="a"), UnitRecord("m1", 2, 2, 0.0, cluster_id="b")]
        with pytest.raises(DataError):
            aggregate_cells(recs)

    def test_weighted_covariates(self):
        recs = [UnitRecord("m1", 1, 2, 0.0, 1.0, {"x": 0.0}), UnitRecord("m1", 1, 2, 1.0, 3.0, {"x": 4.0})]
        ds = aggregate_cells(recs)
        assert ds.covariates[0, 0] == pytest.approx(3.0, abs=1e-14)
        assert ds.outcome[0] == pytest.approx(0.75, abs=1e-14)

    def test_zero_weight_cell_dropped(self):
        recs = [UnitRecord("m1", 1, 2, 0.0, 0.0), UnitRecord("m1", 2, 2, 1.0, 1.0)]
        with pytest.warns(UserWarning):
            ds = aggregate_cells(recs)
        assert ds.n_cells == 1

    @given(
        st.lists(
            st.tuples(
                st.integers(0, 4),
                st.integers(0, 3),
                st.floats(-100, 100, allow_nan=False),
                st.floats(0.01, 50, allow_nan=False),
            ),
            min_size=1,
            max_size=60,
        )
    )
    def test_weight_and_outcome_sums_preserved(self, rows):
        df = pd.DataFrame(rows, columns=["u", "period", "outcome", "weight"])
        df["unit_id"] = "u" + df["u"].astype(str)
        df["first_treat"] = np.where(df["u"] % 2 == 0, NEVER, 2.0)
        df["cluster_id"] = df["unit_id"]
        ds = aggregate_cells(df[["unit_id", "period", "first_treat", "outcome", "weight", "cluster_id"]])
        assert math.isclose(ds.n.sum(), df["weight"].sum(), rel_tol=1e-12)
        # expanding cells by their weight reproduces every weighted outcome sum
        total = (df["weight"] * df["outcome"]).groupby([df["unit_id"], df["period"]]).sum()
        expanded = pd.Series(ds.n * ds.outcome, index=pd.MultiIndex.from_arrays([ds.unit_ids[ds.unit], ds.period]))
        np.testing.assert_allclose(expanded.sort_index().to_numpy(), total.sort_index().to_numpy(), atol=1e-10, rtol=1e-10)


class TestBinarize:
    def panel(self, x, n=None):
        rows = [(f"u{i}", 1, NEVER, 0.0, 1.0 if n is None else n[i]) for i in range(len(x))]
        return make_panel(rows, covariates={"x": x})

    def test_median_split(self):
        out = binarize_covariates(self.panel([1, 2, 3, 4]), ["x"])
        assert out.covariates[:, 0].tolist() == [0, 0, 1, 1]
        assert out.meta["covariate_medians"]["x"] == 2

    def test_ties_break_downward(self):
        # weighted median of {1, 2, 2, 9} is 2; values equal to it map to 0
        assert weighted_median(np.array([1, 2, 2, 9.0]), np.ones(4)) == 2
        out = binarize_covariates(self.panel([1, 2, 2, 9]), ["x"])
        assert out.covariates[:, 0].tolist() == [0, 0, 0, 1]

    def test_weighted_median_uses_weights(self):
        out = binarize_covariates(self.panel([1, 2, 3, 4], n=[10, 1, 1, 1]), ["x"])
        assert out.covariates[:, 0].tolist() == [0, 1, 1, 1]

    def test_constant_warns(self):
        with pytest.warns(DegenerateCovariate):
            out = binarize_covariates(self.panel([5, 5, 5]), ["x"])
        assert out.covariates[:, 0].tolist() == [0, 0, 0]

    def test_unknown(self):
        with pytest.raises(UnknownCovariate):
            binarize_covariates(self.panel([1, 2]), ["z"])

    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=30))
    def test_idempotent(self, x):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateCovariate)
            once = binarize_covariates(self.panel(x), ["x"])
            twice = binarize_covariates(once, ["x"])
        np.testing.assert_array_equal(once.covariates, twice.covariates)


class TestValidateDesign:
    def test_retained_with_pre_periods(self):
        rows = [("a", t, 1942, 0.0) for t in range(1930, 1947)] + [("b", t, NEVER, 0.0) for t in range(1930, 1947)]
        s = validate_design(make_panel(rows))
        assert s.retained_groups == (1942,)
        assert s.period_range == (1930, 1946)

    def test_group_at_first_period_dropped(self):
        rows = [("a", 1, 1, 0.0), ("a", 2, 1, 0.0), ("b", 1, 2, 0.0), ("b", 2, 2, 0.0), ("c", 1, NEVER, 0), ("c", 2, NEVER, 0)]
        s = validate_design(make_panel(rows))
        assert s.dropped_groups == {1.0: "no pre-period"}
        assert set(s.retained_groups) | set(s.dropped_groups) == {1.0, 2.0}

    def test_missing_base_period(self):
        rows = [("a", 1, 3, 0.0), ("a", 3, 3, 0.0), ("c", 1, NEVER, 0), ("c", 2, NEVER, 0), ("c", 3, NEVER, 0)]
        s = validate_design(make_panel(rows))
        assert s.dropped_groups == {3.0: "base period not observed"}

    def test_anticipation_moves_base_period(self):
        rows = [("a", t, 2, 0.0) for t in (1, 2, 3)] + [("c", t, NEVER, 0.0) for t in (1, 2, 3)]
        s = validate_design(make_panel(rows), DesignConfig(anticipation=1))
        assert s.retained_groups == () and 2.0 in s.dropped_groups

    def test_no_never_units(self):
        rows = [("a", 1, 2, 0.0), ("a", 2, 2, 0.0), ("b", 1, 3, 0.0), ("b", 2, 3, 0.0)]
        with pytest.raises(NoControlUnits):
            validate_design(make_panel(rows), DesignConfig(control_mode="never_treated"))
        assert validate_design(make_panel(rows), DesignConfig(control_mode="not_yet_treated")).retained_groups == (2.0,)

    @given(
        st.lists(st.sampled_from([1, 2, 3, 4, 5, 6, NEVER]), min_size=1, max_size=8),
        st.integers(0, 2),
        st.integers(0, 2**16),
    )
    def test_never_retains_group_without_base_period(self, groups, anticipation, seed):
        rng = np.random.default_rng(seed)
        rows = [(f"u{i}", t, g, 0.0) for i, g in enumerate(groups) for t in range(1, 6) if rng.random() < 0.7]
        rows += [("never", t, NEVER, 0.0) for t in range(1, 6)]
        ds = make_panel(rows)
        s = validate_design(ds, DesignConfig(anticipation=anticipation))
        for g in s.retained_groups:
            base = g - 1 - anticipation
            assert np.any(ds.period[ds.cell_group == g] == base)
        assert set(s.retained_groups) | set(s.dropped_groups) == set(ds.groups.tolist())
