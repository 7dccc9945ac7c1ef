"""Two-way fixed-effects heterogeneity diagnostics.

* :func:`twfe_estimate` - the pooled TWFE coefficient on ``D_it = 1{t >= g}``
  with a cluster-robust standard error.
* :func:`twfe_weights` - the implicit weight TWFE puts on every treated cell
  (residualized treatment scaled by its weighted sum of squares) and the
  share of treated mass that receives a negative weight.
* :func:`bacon_decompose` - the Goodman-Bacon decomposition of the TWFE
  coefficient into 2x2 comparisons.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from ._io import clean_json, write_tsv
from .errors import Collinear, DataError, UnbalancedPanel
from .fe import fit_two_way
from .panel import PanelDataset

COMPARISON_TYPES = ("treated_vs_never", "earlier_vs_later", "later_vs_earlier")


@dataclass(frozen=True)
class TwfeResult:
    coefficient: float
    clustered_se: float
    n_cells: int
    n_clusters: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "coefficient": self.coefficient,
            "clustered_se": self.clustered_se,
            "n_cells": self.n_cells,
            "n_clusters": self.n_clusters,
            "se_small_sample_factor": "G/(G-1)",
        }


@dataclass(frozen=True, eq=False)
class WeightReport:
    """TWFE implicit weights.

    ``cells`` holds one row per cell with the residualized treatment and the
    cell weight ``n * resid / sum(n * resid**2)``; scaling is over all cells,
    and the treated weights sum to one.
    """

    cells: pd.DataFrame
    negative_share_weighted: float
    histogram: pd.DataFrame
    meta: dict = field(default_factory=dict)

    @property
    def treated_weights(self) -> np.ndarray:
        return self.cells.loc[self.cells["treated"], "weight"].to_numpy()

    def histogram_tsv(self, path=None, header_comment=None) -> str:
        return write_tsv(self.histogram, path, header_comment)

    def to_dict(self) -> dict[str, Any]:
        return {
            "negative_share_weighted": self.negative_share_weighted,
            "treated_weight_sum": float(self.treated_weights.sum()),
            "n_treated_cells": int(self.cells["treated"].sum()),
            "n_negative_treated_cells": int((self.cells["treated"] & (self.cells["weight"] < 0)).sum()),
            **self.meta,
        }


@dataclass(frozen=True)
class BaconComponent:
    comparison_type: str
    treated: float
    control: float
    weight: float
    estimate: float


@dataclass(frozen=True, eq=False)
class BaconDecomposition:
    components: tuple
    twfe_coefficient: float

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def estimates(self) -> np.ndarray:
        return np.array([c.estimate for c in self.components])

    def weighted_sum(self) -> float:
        return float(self.weights @ self.estimates)

    def by_type(self) -> pd.DataFrame:
        """Total weight and weight-averaged estimate per comparison type."""
        rows = []
        for kind in COMPARISON_TYPES:
            comps = [c for c in self.components if c.comparison_type == kind]
            if not comps:
                continue
            w = np.array([c.weight for c in comps])
            b = np.array([c.estimate for c in comps])
            rows.append({"comparison_type": kind, "weight": w.sum(), "estimate": float(w @ b / w.sum())})
        return pd.DataFrame(rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "comparison_type": [c.comparison_type for c in self.components],
                "treated": [_label(c.treated) for c in self.components],
                "control": [_label(c.control) for c in self.components],
                "weight": self.weights,
                "estimate": self.estimates,
            }
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "twfe_coefficient": self.twfe_coefficient,
            "weighted_sum": self.weighted_sum(),
            "components": self.to_frame().to_dict("records"),
            "by_type": self.by_type().to_dict("records"),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(clean_json(self.to_dict()), **kwargs)


def _label(g):
    return g if isinstance(g, str) else int(g)


def treatment_indicator(ds: PanelDataset) -> np.ndarray:
    return (ds.period >= ds.cell_group).astype(float)


def _check_shape(ds: PanelDataset):
    if ds.n_units < 2 or ds.periods.size < 2:
        raise Collinear("TWFE needs at least two units and two periods")


def _residualize(ds: PanelDataset, cols: np.ndarray, method: str) -> np.ndarray:
    alpha, lam = fit_two_way(cols, ds.unit, ds.period_index, ds.n, method=method)
    return cols - alpha[ds.unit] - lam[ds.period_index]


def twfe_estimate(ds: PanelDataset, *, method: str = "direct") -> TwfeResult:
    """Weighted TWFE regression of the outcome on the treatment indicator
    with unit and period fixed effects, clustered at the cluster level."""
    _check_shape(ds)
    D = treatment_indicator(ds)
    res = _residualize(ds, np.column_stack([ds.outcome, D]), method)
    y_t, d_t = res[:, 0], res[:, 1]
    sxx = np.sum(ds.n * d_t**2)
    if sxx <= 1e-12 * max(np.sum(ds.n * D**2), 1.0):
        raise Collinear("treatment indicator is absorbed by the fixed effects")
    beta = np.sum(ds.n * d_t * y_t) / sxx
    e = y_t - beta * d_t
    scores = np.bincount(ds.cluster, weights=ds.n * d_t * e, minlength=ds.n_clusters)
    G = ds.n_clusters
    var = G / (G - 1) * np.sum(scores**2) / sxx**2 if G > 1 else np.nan
    return TwfeResult(coefficient=float(beta), clustered_se=float(np.sqrt(var)), n_cells=ds.n_cells, n_clusters=G)


def twfe_weights(ds: PanelDataset, *, bins: int = 20, method: str = "direct") -> WeightReport:
    """Implicit TWFE weights from residualizing treatment on both fixed effects."""
    _check_shape(ds)
    D = treatment_indicator(ds)
    eps = _residualize(ds, D, method)
    ssr = np.sum(ds.n * eps**2)
    if ssr <= 1e-12 * max(np.sum(ds.n * D**2), 1.0):
        raise Collinear("treatment indicator is absorbed by the fixed effects")
    treated = D == 1
    per_obs = eps / ssr
    cells = pd.DataFrame(
        {
            "unit_id": ds.unit_ids[ds.unit],
            "period": ds.period,
            "group": ds.cell_group,
            "treated": treated,
            "n": ds.n,
            "resid": eps,
            "weight": ds.n * per_obs,
        }
    )
    neg_share = float(ds.n[treated & (eps < 0)].sum() / ds.n[treated].sum())

    edges = np.histogram_bin_edges(per_obs, bins=bins)
    total = ds.n.sum()
    tm, _ = np.histogram(per_obs[treated], bins=edges, weights=ds.n[treated])
    um, _ = np.histogram(per_obs[~treated], bins=edges, weights=ds.n[~treated])
    hist = pd.DataFrame({"bin": 0.5 * (edges[:-1] + edges[1:]), "treated_mass": tm / total, "untreated_mass": um / total})
    return WeightReport(
        cells=cells,
        negative_share_weighted=neg_share,
        histogram=hist,
        meta={
            "scaling": "residuals scaled by the weighted sum of squared residuals over all cells",
            "negative_share_definition": "treated mass with negative residual / total treated mass",
            "histogram_mass": "fraction of total weight",
        },
    )


def _unit_weights(ds: PanelDataset) -> np.ndarray:
    W = ds.wide["W"]
    w = W[:, 0]
    if not np.allclose(W, w[:, None], rtol=1e-12, atol=0):
        raise DataError("Bacon decomposition needs cell weights that are constant within each unit")
    return w


def bacon_decompose(ds: PanelDataset) -> BaconDecomposition:
    """Decompose the TWFE coefficient into 2x2 difference-in-differences.

    Units treated at or before the first period and units never treated
    within the panel both have a constant treatment indicator and form the
    pooled untreated comparison group. The panel must be balanced with
    time-invariant unit weights.
    """
    if not ds.is_balanced():
        raise UnbalancedPanel("Bacon decomposition requires every unit observed in every period")
    _check_shape(ds)
    w = _unit_weights(ds)
    Y = ds.wide["Y"]
    periods = ds.periods
    T = periods.size

    # effective first treated period within the window; constant-D units -> untreated pool
    eff = np.full(ds.n_units, np.nan)
    for i, g in enumerate(ds.unit_group):
        if np.isfinite(g) and periods[0] < g <= periods[-1]:
            eff[i] = periods[periods >= g][0]
    timing = np.unique(eff[np.isfinite(eff)])
    untreated = ~np.isfinite(eff)
    if timing.size == 0:
        raise Collinear("no unit switches treatment inside the panel")

    share = w / w.sum()

    def mean_path(mask):
        return (w[mask] @ Y[mask]) / w[mask].sum()

    paths = {k: mean_path(eff == k) for k in timing}
    n = {k: share[eff == k].sum() for k in timing}
    dbar = {k: np.mean(periods >= k) for k in timing}

    def span(path, sel):
        return path[sel].mean()

    comps, raw = [], []
    if untreated.any():
        yu, nu = mean_path(untreated), share[untreated].sum()
        for k in timing:
            pre, post = periods < k, periods >= k
            beta = (span(paths[k], post) - span(paths[k], pre)) - (span(yu, post) - span(yu, pre))
            nku = n[k] / (n[k] + nu)
            raw.append((n[k] + nu) ** 2 * nku * (1 - nku) * dbar[k] * (1 - dbar[k]))
            comps.append(("treated_vs_never", k, "never", beta))
    for a, k in enumerate(timing):
        for l in timing[a + 1:]:
            nkl = n[k] / (n[k] + n[l])
            pre, mid, post = periods < k, (periods >= k) & (periods < l), periods >= l
            dk, dl = dbar[k], dbar[l]
            beta_k = (span(paths[k], mid) - span(paths[k], pre)) - (span(paths[l], mid) - span(paths[l], pre))
            raw.append(((n[k] + n[l]) * (1 - dl)) ** 2 * nkl * (1 - nkl) * (dk - dl) / (1 - dl) * (1 - dk) / (1 - dl))
            comps.append(("earlier_vs_later", k, l, beta_k))
            beta_l = (span(paths[l], post) - span(paths[l], mid)) - (span(paths[k], post) - span(paths[k], mid))
            raw.append(((n[k] + n[l]) * dk) ** 2 * nkl * (1 - nkl) * (dl / dk) * (dk - dl) / dk)
            comps.append(("later_vs_earlier", l, k, beta_l))

    raw = np.array(raw)
    weights = raw / raw.sum()
    components = tuple(
        BaconComponent(comparison_type=kind, treated=float(tr), control=ctl if isinstance(ctl, str) else float(ctl),
                       weight=float(wt), estimate=float(b))
        for (kind, tr, ctl, b), wt in zip(comps, weights)
    )
    return BaconDecomposition(components=components, twfe_coefficient=twfe_estimate(ds).coefficient)
