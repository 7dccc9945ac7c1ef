"""Group-time average treatment effects ATT(g, t).

Every cell compares the change in outcomes between the base period
``b = g - 1 - anticipation`` and period ``t`` for the units first treated at
``g`` with the same change for a control set. Unit weights for a comparison
are the cell weights at period ``t``.

Each estimate carries its influence function summed within clusters, which
is what the aggregation and bootstrap modules operate on.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from ._io import clean_json, write_tsv
from .config import DesignConfig
from .errors import (
    DesignError,
    EmptyControl,
    MissingBasePeriod,
    SingularDesign,
    UnknownCovariate,
    UnsupportedPattern,
)
from .panel import DesignSummary, PanelDataset, format_group, validate_design


@dataclass(frozen=True, eq=False)
class AttGtCell:
    """One ATT(g, t) estimate.

    ``influence`` is aligned with ``clusters`` (the dataset's cluster labels)
    and sums to zero. ``se`` is the analytic cluster-robust standard error
    ``sqrt(sum(influence**2))``.
    """

    g: float
    t: int
    att: float
    se: float
    n_treated: float
    n_control: float
    influence: np.ndarray | None
    clusters: np.ndarray | None = None
    status: str = "estimated"
    reason: str = ""

    @property
    def event_time(self) -> int:
        return int(self.t - self.g)

    @property
    def estimated(self) -> bool:
        return self.status == "estimated"

    def influence_by_cluster(self) -> dict:
        if self.influence is None:
            return {}
        return {c: float(v) for c, v in zip(self.clusters.tolist(), self.influence)}

    @classmethod
    def missing(cls, g, t, reason: str) -> "AttGtCell":
        return cls(g=g, t=t, att=np.nan, se=np.nan, n_treated=0.0, n_control=0.0,
                   influence=None, status="missing", reason=reason)


@dataclass(frozen=True, eq=False)
class AttGtTable:
    cells: tuple
    config: DesignConfig
    group_weights: dict
    clusters: np.ndarray
    group_mass: np.ndarray
    summary: DesignSummary | None = None
    meta: dict = field(default_factory=dict)

    @property
    def groups(self) -> tuple:
        return tuple(self.group_weights)

    def cell(self, g, t) -> AttGtCell:
        for c in self.cells:
            if c.g == g and c.t == t:
                return c
        raise KeyError((g, t))

    def estimated(self) -> list[AttGtCell]:
        return [c for c in self.cells if c.estimated]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "g": [int(c.g) for c in self.cells],
                "t": [int(c.t) for c in self.cells],
                "event_time": [c.event_time for c in self.cells],
                "att": [c.att for c in self.cells],
                "se": [c.se for c in self.cells],
                "n_treated": [c.n_treated for c in self.cells],
                "n_control": [c.n_control for c in self.cells],
                "status": [c.status if c.estimated else f"missing({c.reason})" for c in self.cells],
            }
        )

    def to_tsv(self, path=None, header_comment: str | None = None) -> str:
        return write_tsv(self.to_frame(), path, header_comment)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "group_weights": {format_group(g): w for g, w in self.group_weights.items()},
            "design": self.summary.to_dict() if self.summary else None,
            "cells": self.to_frame().to_dict("records"),
            **self.meta,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(clean_json(self.to_dict()), **kwargs)


# ---------------------------------------------------------------------------


def _period_position(ds: PanelDataset, p) -> int | None:
    i = int(np.searchsorted(ds.periods, p))
    if i < ds.periods.size and ds.periods[i] == p:
        return i
    return None


def control_mask(ds: PanelDataset, g, t, cfg: DesignConfig) -> np.ndarray:
    """Units eligible as controls for ATT(g, t)."""
    ug = ds.unit_group
    never = ~np.isfinite(ug)
    later = np.isfinite(ug) & (ug > max(t, g) + cfg.anticipation)
    if cfg.control_mode == "never_treated":
        return never
    if cfg.control_mode == "not_yet_treated":
        return later
    return never | later


def _comparison(ds: PanelDataset, g, t, cfg: DesignConfig):
    """Units and first differences entering ATT(g, t)."""
    b = cfg.base_period(g)
    bi, ti = _period_position(ds, b), _period_position(ds, t)
    if bi is None:
        raise MissingBasePeriod(f"base period {b} of group {format_group(g)} is not observed")
    if ti is None:
        raise MissingBasePeriod(f"period {t} is not observed")
    W, Y = ds.wide["W"], ds.wide["Y"]
    both = (W[:, bi] > 0) & (W[:, ti] > 0)
    treated = both & (ds.unit_group == g)
    control = both & control_mask(ds, g, t, cfg)
    if not treated.any():
        raise MissingBasePeriod(f"no unit of group {format_group(g)} observed at both {b} and {t}")
    if not control.any():
        raise EmptyControl(f"no {cfg.control_mode} control units observed at both {b} and {t} for group {format_group(g)}")
    w = W[:, ti]
    dy = Y[:, ti] - Y[:, bi]
    return treated, control, w, dy, bi


def _check_weights(wt: float, wc: float, g, t, cfg: DesignConfig):
    if wt <= cfg.min_weight:
        raise MissingBasePeriod(f"treated weight {wt} at ({format_group(g)}, {t}) below minimum {cfg.min_weight}")
    if wc <= cfg.min_weight:
        raise EmptyControl(f"control weight {wc} at ({format_group(g)}, {t}) below minimum {cfg.min_weight}")


def _cluster_sum(ds: PanelDataset, psi_unit: np.ndarray) -> np.ndarray:
    return np.bincount(ds.unit_cluster, weights=psi_unit, minlength=ds.n_clusters)


def att_gt_unconditional(ds: PanelDataset, g, t, cfg: DesignConfig | None = None) -> AttGtCell:
    """Weighted 2x2 difference in mean changes between group ``g`` and its
    controls, from the base period to ``t``."""
    cfg = cfg or DesignConfig()
    treated, control, w, dy, _ = _comparison(ds, g, t, cfg)
    wt, wc = w[treated].sum(), w[control].sum()
    _check_weights(wt, wc, g, t, cfg)
    mt = np.dot(w[treated], dy[treated]) / wt
    mc = np.dot(w[control], dy[control]) / wc
    att = mt - mc

    psi = np.zeros(ds.n_units)
    psi[treated] = w[treated] * (dy[treated] - mt) / wt
    psi[control] = -w[control] * (dy[control] - mc) / wc
    infl = _cluster_sum(ds, psi)
    return AttGtCell(g=g, t=int(t), att=float(att), se=float(np.sqrt(np.sum(infl**2))),
                     n_treated=float(wt), n_control=float(wc), influence=infl, clusters=ds.cluster_ids)


def _covariate_columns(ds: PanelDataset, names) -> list[int]:
    idx = []
    for name in names:
        if name not in ds.covariate_names:
            raise UnknownCovariate(f"unknown covariate {name!r}")
        idx.append(ds.covariate_names.index(name))
    return idx


def att_gt_conditional(ds: PanelDataset, g, t, cfg: DesignConfig | None = None) -> AttGtCell:
    """Regression-adjusted ATT(g, t).

    A weighted linear regression of the outcome change on an intercept and
    the binary covariates (measured at the base period) is fitted on the
    controls only. The estimate is the weighted mean, over treated units, of
    the outcome change minus the regression prediction at the unit's own
    covariates. The influence function includes the estimation effect of
    the regression coefficients.
    """
    cfg = cfg or DesignConfig()
    treated, control, w, dy, bi = _comparison(ds, g, t, cfg)
    wt, wc = w[treated].sum(), w[control].sum()
    _check_weights(wt, wc, g, t, cfg)

    cols = _covariate_columns(ds, cfg.covariate_names)
    Xb = ds.wide["X"][:, bi, :][:, cols]
    used = treated | control
    if not np.all(np.isin(Xb[used], (0.0, 1.0))):
        raise ValueError("conditional estimation requires binary covariates; use binarize_covariates first")
    Z = np.column_stack([np.ones(ds.n_units), Xb])
    Zc, Zt = Z[control], Z[treated]
    sw = np.sqrt(w[control])
    if np.linalg.matrix_rank(Zc * sw[:, None]) < Z.shape[1]:
        raise SingularDesign(
            f"control design for ({format_group(g)}, {t}) is rank deficient in covariates {list(cfg.covariate_names)}"
        )
    if cfg.strict_support:
        control_patterns = {tuple(r) for r in Zc[:, 1:]}
        missing = {tuple(r) for r in Zt[:, 1:]} - control_patterns
        if missing:
            raise UnsupportedPattern(f"treated covariate patterns {sorted(missing)} absent among controls")
    beta, *_ = np.linalg.lstsq(Zc * sw[:, None], dy[control] * sw, rcond=None)

    resid_t = dy[treated] - Zt @ beta
    att = np.dot(w[treated], resid_t) / wt
    e_c = dy[control] - Zc @ beta
    M = (Zc * w[control][:, None]).T @ Zc
    zbar_t = (w[treated] @ Zt) / wt
    lever = Zc @ np.linalg.solve(M, zbar_t)

    psi = np.zeros(ds.n_units)
    psi[treated] = w[treated] * (resid_t - att) / wt
    psi[control] = -w[control] * e_c * lever
    infl = _cluster_sum(ds, psi)
    return AttGtCell(g=g, t=int(t), att=float(att), se=float(np.sqrt(np.sum(infl**2))),
                     n_treated=float(wt), n_control=float(wc), influence=infl, clusters=ds.cluster_ids)


def group_sizes(ds: PanelDataset, groups) -> tuple[dict, np.ndarray]:
    """Total cell weight of each group and its split across clusters.

    Returns the normalized weights ``{g: P(G=g | G treated)}`` and a
    ``(n_clusters, n_groups)`` mass matrix.
    """
    cell_g = ds.cell_group
    mass = np.column_stack(
        [np.bincount(ds.cluster, weights=np.where(cell_g == g, ds.n, 0.0), minlength=ds.n_clusters) for g in groups]
    ) if len(groups) else np.zeros((ds.n_clusters, 0))
    totals = mass.sum(axis=0)
    weights = {float(g): float(m / totals.sum()) for g, m in zip(groups, totals)}
    return weights, mass


def att_gt_all(
    ds: PanelDataset,
    cfg: DesignConfig | None = None,
    *,
    threads: int = 1,
    summary: DesignSummary | None = None,
) -> AttGtTable:
    """Estimate ATT(g, t) for every retained group and every observed period
    other than the group's base period.

    Pre-treatment periods are included; against the fixed base period they
    serve as placebo estimates. Cells that cannot be estimated are kept with
    ``status="missing"`` and a reason.
    """
    cfg = cfg or DesignConfig()
    summary = summary or validate_design(ds, cfg)
    estimator = att_gt_conditional if cfg.conditional else att_gt_unconditional
    if cfg.conditional:
        _covariate_columns(ds, cfg.covariate_names)

    pairs = [(g, int(t)) for g in summary.retained_groups for t in ds.periods if t != cfg.base_period(g)]

    def run(pair):
        g, t = pair
        try:
            return estimator(ds, g, t, cfg)
        except (EmptyControl, MissingBasePeriod, SingularDesign, UnsupportedPattern) as exc:
            return AttGtCell.missing(g, t, f"{type(exc).__name__}: {exc}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = tuple(pool.map(run, pairs))
    else:
        cells = tuple(map(run, pairs))
    if not any(c.estimated for c in cells):
        raise DesignError("no ATT(g,t) cell could be estimated")

    weights, mass = group_sizes(ds, summary.retained_groups)
    return AttGtTable(
        cells=cells,
        config=cfg,
        group_weights=weights,
        clusters=ds.cluster_ids,
        group_mass=mass,
        summary=summary,
        meta={"estimator": "conditional" if cfg.conditional else "unconditional"},
    )
