"""Aggregation of ATT(g, t) tables into per-group, overall and event-study
parameters, and triple-difference contrasts between two runs.

Influence functions are propagated linearly. Where aggregation weights are
estimated group shares, their own estimation effect is added so that the
influence of the aggregate is complete.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
import pandas as pd

from ._io import clean_json, write_tsv
from .errors import LabelMismatch, NoPostPeriods
from .gt import AttGtTable
from .panel import format_group

KINDS = ("overall", "by_group", "by_event")


@dataclass(frozen=True, eq=False)
class AggregationResult:
    """Aggregated parameters with their per-cluster influence.

    ``influence`` has shape ``(n_clusters, n_labels)``. Confidence fields are
    NaN until :func:`gtdid.inference.attach_bands` fills them.
    """

    kind: str
    labels: tuple
    estimate: np.ndarray
    se: np.ndarray
    influence: np.ndarray
    clusters: np.ndarray
    reference: np.ndarray | None = None
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None
    ucb_low: np.ndarray | None = None
    ucb_high: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        k = len(self.labels)
        if len(set(self.labels)) != k:
            raise ValueError("labels must be unique")
        if self.reference is None:
            object.__setattr__(self, "reference", np.zeros(k, dtype=bool))
        for name in ("ci_low", "ci_high", "ucb_low", "ucb_high"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, np.full(k, np.nan))

    def __len__(self):
        return len(self.labels)

    def index(self, label) -> int:
        return self.labels.index(label)

    def __getitem__(self, label) -> float:
        return float(self.estimate[self.index(label)])

    def replace(self, **changes) -> "AggregationResult":
        return replace(self, **changes)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "label": [str(x) for x in self.labels],
                "estimate": self.estimate,
                "se": self.se,
                "ci_low": self.ci_low,
                "ci_high": self.ci_high,
                "ucb_low": self.ucb_low,
                "ucb_high": self.ucb_high,
            }
        )

    def to_tsv(self, path=None, header_comment: str | None = None) -> str:
        return write_tsv(self.to_frame(), path, header_comment)

    def to_dict(self, include_influence: bool = False) -> dict[str, Any]:
        d = {
            "kind": self.kind,
            "estimates": [
                {**row, "reference": bool(ref)}
                for row, ref in zip(self.to_frame().to_dict("records"), self.reference)
            ],
            "meta": self.meta,
        }
        if include_influence:
            d["influence"] = {
                "clusters": [str(c) for c in self.clusters],
                "labels": [str(x) for x in self.labels],
                "values": self.influence.tolist(),
            }
        return d

    def to_json(self, include_influence: bool = False, **kwargs) -> str:
        return json.dumps(clean_json(self.to_dict(include_influence)), **kwargs)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AggregationResult":
        """Rebuild a result written by :meth:`to_dict` with influence."""
        rows = d["estimates"]

        def col(name):
            return np.array([np.nan if r[name] is None else r[name] for r in rows], dtype=float)

        labels = tuple(_parse_label(r["label"]) for r in rows)
        infl = d["influence"]
        return cls(
            kind=d["kind"],
            labels=labels,
            estimate=col("estimate"),
            se=col("se"),
            influence=np.array(infl["values"], dtype=float).reshape(len(infl["clusters"]), len(labels)),
            clusters=np.array(infl["clusters"], dtype=object),
            reference=np.array([r.get("reference", False) for r in rows], dtype=bool),
            ci_low=col("ci_low"),
            ci_high=col("ci_high"),
            ucb_low=col("ucb_low"),
            ucb_high=col("ucb_high"),
            meta=d.get("meta", {}),
        )


def _parse_label(s):
    try:
        return int(s)
    except (TypeError, ValueError):
        return s


@dataclass(frozen=True, eq=False)
class DddResult(AggregationResult):
    """Difference ``run_a - run_b`` of two aggregation results."""

    draw_mode: str = "shared"


def _analytic_se(influence: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(influence**2, axis=0))


def _share_influence(mass: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shares ``p_k = mass_k / sum(mass)`` and their per-cluster influence."""
    tot = mass.sum(axis=0)
    N = tot.sum()
    p = tot / N
    psi = (mass - np.outer(mass.sum(axis=1), p)) / N
    return p, psi


def _post_cells(table: AttGtTable):
    by_group = {}
    for g in table.group_weights:
        post = [c for c in table.cells if c.g == g and c.t >= g]
        est = [c for c in post if c.estimated]
        by_group[g] = (est, len(post) - len(est))
    return by_group


def aggregate_group(table: AttGtTable, *, drop_empty: bool = False) -> AggregationResult:
    """Average of the estimated post-treatment ATT(g, t) of each group.

    A group without any estimated post-treatment cell raises
    :class:`NoPostPeriods` unless ``drop_empty`` is set, in which case it is
    left out and listed under ``meta["dropped_groups"]``.
    """
    labels, est, infl, excluded, dropped = [], [], [], {}, []
    for g, (cells, n_missing) in _post_cells(table).items():
        if not cells:
            if drop_empty:
                dropped.append(int(g))
                continue
            raise NoPostPeriods(f"group {format_group(g)} has no estimated post-treatment cell")
        labels.append(int(g))
        est.append(np.mean([c.att for c in cells]))
        infl.append(np.mean([c.influence for c in cells], axis=0))
        excluded[str(int(g))] = n_missing
    if not labels:
        raise NoPostPeriods("no group has an estimated post-treatment cell")
    influence = np.column_stack(infl)
    return AggregationResult(
        kind="by_group",
        labels=tuple(labels),
        estimate=np.array(est),
        se=_analytic_se(influence),
        influence=influence,
        clusters=table.clusters,
        meta={"excluded_cells": excluded, "dropped_groups": dropped, "estimator": table.meta.get("estimator")},
    )


def aggregate_overall(
    table: AttGtTable, by_group: AggregationResult | None = None, *, drop_empty: bool = False
) -> AggregationResult:
    """Group averages combined with the group-size weights of the table.

    Shares are renormalized over the groups present in ``by_group``.
    """
    by_group = by_group or aggregate_group(table, drop_empty=drop_empty)
    cols = [list(table.group_weights).index(g) for g in by_group.labels]
    p, psi_p = _share_influence(table.group_mass[:, cols])
    theta = by_group.estimate
    estimate = float(p @ theta)
    influence = by_group.influence @ p + psi_p @ theta
    return AggregationResult(
        kind="overall",
        labels=("overall",),
        estimate=np.array([estimate]),
        se=_analytic_se(influence[:, None]),
        influence=influence[:, None],
        clusters=table.clusters,
        meta={
            "group_weights": {str(g): float(w) for g, w in zip(by_group.labels, p)},
            "excluded_cells": by_group.meta["excluded_cells"],
            "dropped_groups": by_group.meta.get("dropped_groups", []),
            "estimator": table.meta.get("estimator"),
        },
    )


def aggregate_event(table: AttGtTable, window: tuple[int, int] | None = None) -> AggregationResult:
    """Event-study aggregation.

    At each event time ``e`` the cells ``ATT(g, g + e)`` are averaged with
    group-size weights renormalized over the groups that have an estimated
    cell at ``e``. The base-period event time is emitted as a reference
    estimate fixed at zero.
    """
    lo, hi = window if window is not None else table.config.event_window
    if not lo <= 0 <= hi:
        raise ValueError(f"event window {window} must cover event time 0")
    ref_e = -1 - table.config.anticipation
    groups = list(table.group_weights)
    lookup = {(c.g, c.event_time): c for c in table.cells if c.estimated}
    n_clusters = table.clusters.size

    labels, est, infl, refs, weights = [], [], [], [], {}
    for e in range(lo, hi + 1):
        if e == ref_e:
            labels.append(e)
            est.append(0.0)
            infl.append(np.zeros(n_clusters))
            refs.append(True)
            continue
        idx = [k for k, g in enumerate(groups) if (g, e) in lookup]
        if not idx:
            continue
        cells = [lookup[(groups[k], e)] for k in idx]
        p, psi_p = _share_influence(table.group_mass[:, idx])
        atts = np.array([c.att for c in cells])
        labels.append(e)
        est.append(float(p @ atts))
        infl.append(np.column_stack([c.influence for c in cells]) @ p + psi_p @ atts)
        refs.append(False)
        weights[str(e)] = {str(int(groups[k])): float(w) for k, w in zip(idx, p)}
    influence = np.column_stack(infl)
    return AggregationResult(
        kind="by_event",
        labels=tuple(labels),
        estimate=np.array(est),
        se=_analytic_se(influence),
        influence=influence,
        clusters=table.clusters,
        reference=np.array(refs, dtype=bool),
        meta={"event_weights": weights, "window": [lo, hi], "estimator": table.meta.get("estimator")},
    )


def _align(a: AggregationResult, b: AggregationResult, shared: bool):
    if shared:
        ca = pd.Index([str(c) for c in a.clusters])
        cb = pd.Index([str(c) for c in b.clusters])
    else:
        ca = pd.Index(["a:" + str(c) for c in a.clusters])
        cb = pd.Index(["b:" + str(c) for c in b.clusters])
    union = ca.union(cb, sort=True)
    ia, ib = union.get_indexer(ca), union.get_indexer(cb)
    Ia = np.zeros((union.size, len(a.labels)))
    Ib = np.zeros((union.size, len(b.labels)))
    np.add.at(Ia, ia, a.influence)
    np.add.at(Ib, ib, b.influence)
    return union.to_numpy(dtype=object), Ia, Ib


def contrast_ddd(run_a: AggregationResult, run_b: AggregationResult, *, shared_clusters: bool = True) -> DddResult:
    """Triple difference ``run_a - run_b`` label by label.

    With ``shared_clusters`` the two runs are taken to sample the same
    clusters (e.g. women and men of the same municipalities): influence is
    differenced cluster by cluster, so a common cluster shock cancels, and
    a cluster present in one run only contributes one-sidedly. Otherwise the
    runs are treated as independent samples.
    """
    if run_a.kind != run_b.kind:
        raise LabelMismatch(f"cannot contrast {run_a.kind} with {run_b.kind}")
    if tuple(run_a.labels) != tuple(run_b.labels):
        raise LabelMismatch(f"labels differ: {run_a.labels} vs {run_b.labels}")
    clusters, Ia, Ib = _align(run_a, run_b, shared_clusters)
    influence = Ia - Ib
    return DddResult(
        kind=run_a.kind,
        labels=tuple(run_a.labels),
        estimate=run_a.estimate - run_b.estimate,
        se=_analytic_se(influence),
        influence=influence,
        clusters=clusters,
        reference=run_a.reference & run_b.reference,
        meta={"contrast": "ddd", "draw_mode": "shared" if shared_clusters else "independent"},
        draw_mode="shared" if shared_clusters else "independent",
    )
