import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gtdid.diagnostics import bacon_decompose, twfe_estimate, twfe_weights
from gtdid.errors import Collinear, DataError, UnbalancedPanel
from gtdid.panel import NEVER, PanelDataset

from conftest import dummy_ols, make_panel, twfe_dummy_coef


def balanced(seed, n_units=9, T=6, groups=(2, 4, NEVER), unit_weights=True):
    rng = np.random.default_rng(seed)
    g = rng.choice(np.array(groups, dtype=float), n_units)
    g[: len(groups)] = groups
    u = np.repeat(np.arange(n_units), T)
    t = np.tile(np.arange(1, T + 1), n_units)
    w = rng.uniform(0.5, 3, n_units)[u] if unit_weights else rng.uniform(0.5, 3, u.size)
    return PanelDataset.from_arrays(u, t, g[u], rng.normal(size=u.size) + 0.5 * t, w, cluster_id=u % 4)


def dummy_residual(ds, y):
    U = np.eye(ds.n_units)[ds.unit]
    P = np.eye(ds.periods.size)[ds.period_index][:, 1:]
    X = np.column_stack([U, P])
    return y - X @ dummy_ols(y, X, ds.n)


class TestTwfe:
    def test_two_by_two(self, ab_panel):
        assert twfe_estimate(ab_panel).coefficient == pytest.approx(3.0, abs=1e-12)

    @given(st.integers(0, 2**31))
    def test_matches_dummy_ols_and_sandwich(self, seed):
        ds = balanced(seed, unit_weights=False)
        res = twfe_estimate(ds)
        D = (ds.period >= ds.cell_group).astype(float)
        U = np.eye(ds.n_units)[ds.unit]
        P = np.eye(ds.periods.size)[ds.period_index][:, 1:]
        X = np.column_stack([D, U, P])
        beta = dummy_ols(ds.outcome, X, ds.n)
        assert res.coefficient == pytest.approx(beta[0], abs=1e-9)
        # full-dummy cluster sandwich; the coefficient block of (X'WX)^-1 X'W e
        e = ds.outcome - X @ beta
        bread = np.linalg.pinv(X.T @ (X * ds.n[:, None]))
        G = ds.n_clusters
        scores = np.vstack([(X[ds.cluster == c] * (ds.n * e)[ds.cluster == c, None]).sum(0) for c in range(G)])
        V = G / (G - 1) * bread @ scores.T @ scores @ bread
        assert res.clustered_se == pytest.approx(np.sqrt(V[0, 0]), rel=1e-7)

    def test_collinear(self):
        ds = make_panel([("a", 1, 1, 0.0), ("a", 2, 1, 1.0), ("b", 1, NEVER, 0.0), ("b", 2, NEVER, 1.0)])
        with pytest.raises(Collinear):
            twfe_estimate(ds)

    def test_map_solver(self):
        ds = balanced(1)
        assert twfe_estimate(ds, method="map").coefficient == pytest.approx(twfe_estimate(ds).coefficient, abs=1e-8)


class TestWeights:
    def test_single_treated_cell_positive(self, ab_panel):
        rep = twfe_weights(ab_panel)
        assert rep.treated_weights.tolist() == pytest.approx([1.0])
        assert rep.negative_share_weighted == 0

    def test_staggered_three_units(self):
        # g=2, g=3 and never over periods 1-3: two-way demeaning of D gives the
        # earliest group's final cell 1 - 2/3 - 2/3 + 1/3 = 0, so it gets no positive weight
        rows = [(u, t, g, 0.0) for u, g in [("a", 2), ("b", 3), ("c", NEVER)] for t in (1, 2, 3)]
        ds = make_panel(rows)
        rep = twfe_weights(ds)
        eps = dummy_residual(ds, (ds.period >= ds.cell_group).astype(float))
        np.testing.assert_allclose(rep.cells["resid"], eps, atol=1e-12)
        np.testing.assert_allclose(rep.cells["weight"], eps / np.sum(eps**2), atol=1e-12)
        assert rep.cells.set_index(["unit_id", "period"]).loc[("a", 3), "weight"] == pytest.approx(0, abs=1e-12)

    def test_staggered_without_never_negative(self):
        # without the never-treated unit: a3 = 1 - 2/3 - 1 + 1/2 = -1/6
        rows = [(u, t, g, 0.0) for u, g in [("a", 2), ("b", 3)] for t in (1, 2, 3)]
        ds = make_panel(rows)
        rep = twfe_weights(ds)
        eps = dummy_residual(ds, (ds.period >= ds.cell_group).astype(float))
        np.testing.assert_allclose(rep.cells["weight"], eps / np.sum(eps**2), atol=1e-12)
        cells = rep.cells.set_index(["unit_id", "period"])
        assert cells.loc[("a", 3), "resid"] == pytest.approx(-1 / 6, abs=1e-12)
        assert cells.loc[("a", 3), "weight"] < 0
        # treated residuals 1/3, -1/6, 1/6 with unit weights: one of three treated cells is negative
        assert rep.negative_share_weighted == pytest.approx(1 / 3)

    @given(st.integers(0, 2**31))
    def test_treated_weights_sum_to_one(self, seed):
        ds = balanced(seed, unit_weights=False)
        rep = twfe_weights(ds)
        assert rep.treated_weights.sum() == pytest.approx(1.0, abs=1e-8)
        assert 0 <= rep.negative_share_weighted <= 1
        # by Frisch-Waugh-Lovell the coefficient is sum(weight * outcome) over all cells
        res = twfe_estimate(ds)
        assert np.sum(rep.cells["weight"] * ds.outcome) == pytest.approx(res.coefficient, abs=1e-9)

    def test_histogram(self):
        rep = twfe_weights(balanced(2), bins=7)
        assert list(rep.histogram.columns) == ["bin", "treated_mass", "untreated_mass"]
        assert len(rep.histogram) == 7
        total = rep.histogram[["treated_mass", "untreated_mass"]].to_numpy().sum()
        assert total == pytest.approx(1.0)
        assert rep.histogram_tsv().splitlines()[0] == "bin\ttreated_mass\tuntreated_mass"


class TestBacon:
    def test_single_timing_group(self):
        ds = balanced(3, groups=(3, NEVER))
        dec = bacon_decompose(ds)
        assert len(dec.components) == 1
        c = dec.components[0]
        assert c.comparison_type == "treated_vs_never" and c.weight == pytest.approx(1.0)
        assert c.estimate == pytest.approx(twfe_estimate(ds).coefficient, abs=1e-10)

    def test_two_groups_no_never_brute_force(self):
        rows = []
        rng = np.random.default_rng(7)
        for i, g in enumerate([2, 2, 3, 3, 3]):
            for t in (1, 2, 3):
                rows.append((f"u{i}", t, g, rng.normal(), 1.0 + i))
        ds = make_panel(rows)
        dec = bacon_decompose(ds)
        kinds = {c.comparison_type: c for c in dec.components}
        assert set(kinds) == {"earlier_vs_later", "later_vs_earlier"}
        # earlier (2) vs later (3) uses periods before 3; later vs earlier uses periods from 2 on
        early = ds.select_cells(ds.period < 3)
        late = ds.select_cells(ds.period >= 2)
        assert kinds["earlier_vs_later"].estimate == pytest.approx(twfe_dummy_coef(early), abs=1e-10)
        # in the late window group 2 is always treated and acts as control for group 3
        D = ((late.cell_group == 3) & (late.period >= 3)).astype(float)
        U = np.eye(late.n_units)[late.unit]
        P = np.eye(late.periods.size)[late.period_index][:, 1:]
        b_late = dummy_ols(late.outcome, np.column_stack([D, U, P]), late.n)[0]
        assert kinds["later_vs_earlier"].estimate == pytest.approx(b_late, abs=1e-10)
        assert dec.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert dec.weighted_sum() == pytest.approx(twfe_estimate(ds).coefficient, abs=1e-10)

    def test_always_treated_pooled_with_never(self):
        ds = balanced(4, groups=(1, 3, 5, NEVER))
        dec = bacon_decompose(ds)
        assert dec.weighted_sum() == pytest.approx(dec.twfe_coefficient, abs=1e-9)
        assert dec.weights.sum() == pytest.approx(1.0, abs=1e-12)

    def test_unbalanced(self):
        ds = balanced(5)
        with pytest.raises(UnbalancedPanel):
            bacon_decompose(ds.select_cells(np.arange(ds.n_cells) != 3))

    def test_time_varying_weights(self):
        with pytest.raises(DataError):
            bacon_decompose(balanced(5, unit_weights=False))

    def test_by_type_and_json(self):
        dec = bacon_decompose(balanced(6, groups=(2, 4, NEVER)))
        bt = dec.by_type()
        assert bt["weight"].sum() == pytest.approx(1.0)
        d = json.loads(dec.to_json())
        assert d["weighted_sum"] == pytest.approx(d["twfe_coefficient"], abs=1e-9)
        assert {c["control"] for c in d["components"]} >= {"never"}
