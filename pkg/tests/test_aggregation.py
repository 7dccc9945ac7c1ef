import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gtdid.aggregation import (
    AggregationResult,
    aggregate_event,
    aggregate_group,
    aggregate_overall,
    contrast_ddd,
)
from gtdid.config import DesignConfig
from gtdid.errors import LabelMismatch, NoPostPeriods
from gtdid.gt import AttGtCell, AttGtTable, att_gt_all
from gtdid.panel import NEVER

from conftest import make_panel
from test_gt import random_panel


def synthetic_table(cells, weights, n_clusters=4, anticipation=0):
    """Table from (g, t, att) triples with zero influence, for arithmetic checks."""
    groups = list(weights)
    mass = np.tile(np.array([weights[g] for g in groups]) / n_clusters, (n_clusters, 1))
    out = []
    for g, t, att in cells:
        if att is None:
            out.append(AttGtCell.missing(g, t, "test"))
        else:
            out.append(AttGtCell(g, t, att, 0.0, 1.0, 1.0, np.zeros(n_clusters), np.arange(n_clusters)))
    return AttGtTable(cells=tuple(out), config=DesignConfig(anticipation=anticipation),
                      group_weights=dict(weights), clusters=np.arange(n_clusters), group_mass=mass)


class TestGroup:
    def test_mean_of_post_cells(self):
        table = synthetic_table([(2, 1, 9.0), (2, 2, 1.0), (2, 3, 3.0)], {2: 1.0})
        assert aggregate_group(table)[2] == 2.0

    def test_single_post_cell(self):
        table = synthetic_table([(2, 2, 1.7)], {2: 1.0})
        assert aggregate_group(table)[2] == 1.7

    def test_missing_cells_reported(self):
        table = synthetic_table([(2, 2, 1.0), (2, 3, None)], {2: 1.0})
        res = aggregate_group(table)
        assert res[2] == 1.0 and res.meta["excluded_cells"] == {"2": 1}

    def test_no_post_periods(self):
        table = synthetic_table([(2, 2, None), (3, 3, 1.0)], {2: 0.5, 3: 0.5})
        with pytest.raises(NoPostPeriods):
            aggregate_group(table)
        res = aggregate_group(table, drop_empty=True)
        assert res.labels == (3,) and res.meta["dropped_groups"] == [2]
        assert aggregate_overall(table, drop_empty=True)["overall"] == 1.0


class TestOverall:
    def test_weighted_mean(self):
        table = synthetic_table([(2, 2, 1.0), (2, 3, 3.0), (3, 3, 4.0)], {2: 0.5, 3: 0.5})
        assert aggregate_overall(table)["overall"] == 3.0

    def test_one_group(self):
        table = synthetic_table([(2, 2, 1.0), (2, 3, 2.0)], {2: 1.0})
        assert aggregate_overall(table)["overall"] == aggregate_group(table)[2]

    @given(st.integers(0, 2**31))
    def test_influence_matches_delta_method(self, seed):
        # the overall influence is the derivative of the plug-in estimator; check it by
        # recomputing the estimator under a small reweighting of one cluster
        ds = random_panel(seed, n_units=14, groups=(2, 3, 4, NEVER), weights="cell")
        table = att_gt_all(ds)
        ov = aggregate_overall(table)
        assert abs(ov.influence.sum()) < 1e-8
        h = 1e-6
        for c in range(ds.n_clusters):
            bumped = ds.n * (1 + h * (ds.cluster == c))
            ds_h = type(ds).from_arrays(ds.unit_ids[ds.unit], ds.period, ds.cell_group, ds.outcome, bumped,
                                         cluster_id=ds.cluster_ids[ds.cluster])
            moved = aggregate_overall(att_gt_all(ds_h))["overall"]
            # reweighting cluster c by (1 + h) moves the estimate by h * psi_c to first order
            assert (moved - ov["overall"]) / h == pytest.approx(ov.influence[c, 0], abs=1e-4)


class TestEvent:
    def test_renormalized_weights(self):
        table = synthetic_table([(2, 2, 1.0), (3, 3, 3.0), (3, 4, 5.0)], {2: 0.5, 3: 0.5})
        ev = aggregate_event(table, (-1, 1))
        assert ev[0] == 2.0
        assert ev[1] == 5.0  # only group 3 reaches e = 1
        assert ev.meta["event_weights"]["1"] == {"3": 1.0}

    def test_reference_period(self):
        table = synthetic_table([(3, 1, 0.3), (3, 3, 1.0)], {3: 1.0})
        ev = aggregate_event(table, (-3, 2))
        assert ev.labels == (-2, -1, 0)
        i = ev.index(-1)
        assert ev.estimate[i] == 0 and ev.se[i] == 0 and ev.reference[i]
        assert ev[-2] == 0.3

    def test_reference_moves_with_anticipation(self):
        table = synthetic_table([(4, 1, 0.3), (4, 3, 0.1), (4, 4, 1.0)], {4: 1.0}, anticipation=1)
        ev = aggregate_event(table, (-3, 0))
        assert ev.reference[ev.index(-2)] and ev[-1] == 0.1

    def test_window_must_cover_zero(self):
        table = synthetic_table([(2, 2, 1.0)], {2: 1.0})
        with pytest.raises(ValueError):
            aggregate_event(table, (1, 3))

    def test_single_group_single_post(self, ab_panel):
        table = att_gt_all(ab_panel)
        assert aggregate_overall(table)["overall"] == aggregate_group(table)[2] == aggregate_event(table)[0] == 3.0

    @given(st.integers(0, 2**31))
    def test_influence_centered(self, seed):
        ds = random_panel(seed, n_units=14, groups=(2, 3, 4, NEVER), weights="cell")
        ev = aggregate_event(att_gt_all(ds))
        np.testing.assert_allclose(ev.influence.sum(axis=0), 0, atol=1e-8)


class TestDdd:
    def result(self, est, infl, clusters, labels=("overall",)):
        infl = np.asarray(infl, float).reshape(len(clusters), len(labels))
        return AggregationResult("overall", labels, np.asarray(est, float), np.sqrt((infl**2).sum(0)), infl,
                                 np.asarray(clusters, dtype=object))

    def test_subtraction(self):
        a = self.result([-1.0], [0.1, -0.1], ["m1", "m2"])
        b = self.result([-0.7], [0.2, -0.2], ["m1", "m2"])
        d = contrast_ddd(a, b)
        assert d["overall"] == pytest.approx(-0.3, abs=1e-15)
        assert d.se[0] == pytest.approx(np.sqrt(0.1**2 * 2))

    def test_self_difference(self):
        a = self.result([-1.0], [0.1, -0.1], ["m1", "m2"])
        d = contrast_ddd(a, a)
        assert d.estimate[0] == 0 and d.se[0] == 0

    def test_one_sided_clusters_and_independent_mode(self):
        a = self.result([1.0], [0.3, -0.3], ["m1", "m2"])
        b = self.result([0.5], [0.4, -0.4], ["m2", "m3"])
        shared = contrast_ddd(a, b)
        # m1: 0.3, m2: -0.3 - 0.4, m3: 0.4
        assert shared.se[0] == pytest.approx(np.sqrt(0.09 + 0.49 + 0.16))
        indep = contrast_ddd(a, b, shared_clusters=False)
        assert indep.se[0] == pytest.approx(np.sqrt(2 * 0.09 + 2 * 0.16))
        assert indep.draw_mode == "independent" and shared.meta["draw_mode"] == "shared"

    def test_label_mismatch(self):
        a = self.result([1.0, 2.0], np.zeros(4), ["m1", "m2"], labels=(0, 1))
        b = self.result([1.0], np.zeros(2), ["m1", "m2"], labels=(0,))
        with pytest.raises(LabelMismatch):
            contrast_ddd(a, b)


def test_round_trip_dict():
    ds = random_panel(5, n_units=14, groups=(2, 3, NEVER))
    ev = aggregate_event(att_gt_all(ds))
    back = AggregationResult.from_dict(json.loads(ev.to_json(include_influence=True)))
    assert back.labels == ev.labels
    np.testing.assert_array_equal(back.estimate, ev.estimate)
    np.testing.assert_array_equal(back.influence, ev.influence)
    np.testing.assert_array_equal(back.reference, ev.reference)


def test_tsv_columns():
    table = synthetic_table([(2, 2, 1.0)], {2: 1.0})
    header = aggregate_overall(table).to_tsv().splitlines()[0].split("\t")
    assert header == ["label", "estimate", "se", "ci_low", "ci_high", "ucb_low", "ucb_high"]
