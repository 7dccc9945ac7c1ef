"""Imputation estimator.

Unit and period effects are fitted on untreated cells only (never-treated
units and the pre-treatment cells of eventually treated units). Every
treated cell's untreated outcome is imputed as ``alpha_i + lambda_t`` and the
cell effect is ``observed - imputed``. Cell effects are averaged into
ATT(g, t) and aggregated with the same group-size weights as the group-time
estimator. Inference resamples clusters with replacement and refits.

Pre-trend placebos hold out one pre-treatment event year at a time, refit
on the remaining untreated cells and compare the held-out observations
with their imputed values.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import norm

from .aggregation import AggregationResult
from .config import DesignConfig
from .errors import DesignError, DisconnectedDesign, InsufficientPrePeriods
from .fe import fit_two_way, is_connected
from .gt import group_sizes
from .panel import PanelDataset, format_group, validate_design


@dataclass(frozen=True, eq=False)
class FittedFe:
    unit_ids: np.ndarray
    unit_effect: np.ndarray
    periods: np.ndarray
    period_effect: np.ndarray
    residual_norm: float
    n_fit_cells: int
    normalization: str = "first period effect = 0"

    @property
    def unit_effects(self) -> dict:
        return dict(zip(self.unit_ids.tolist(), self.unit_effect.tolist()))

    @property
    def period_effects(self) -> dict:
        return dict(zip(self.periods.tolist(), self.period_effect.tolist()))

    def predict(self, ds: PanelDataset) -> np.ndarray:
        """Untreated outcome imputed for every cell of ``ds`` (the fitted dataset)."""
        return self.unit_effect[ds.unit] + self.period_effect[ds.period_index]


@dataclass(frozen=True, eq=False)
class ImputationResult:
    overall: AggregationResult
    by_group: AggregationResult
    event: AggregationResult
    cells: pd.DataFrame
    fe: FittedFe
    placebos: AggregationResult | None = None
    meta: dict = field(default_factory=dict)

    @property
    def att(self) -> float:
        return float(self.overall.estimate[0])

    @property
    def se(self) -> float:
        return float(self.overall.se[0])


def untreated_mask(ds: PanelDataset, anticipation: int = 0) -> np.ndarray:
    return ds.period < ds.cell_group - anticipation


def fit_untreated_twfe(
    ds: PanelDataset,
    *,
    anticipation: int = 0,
    exclude: np.ndarray | None = None,
    method: str = "direct",
) -> FittedFe:
    """Weighted unit + period effects fitted on untreated cells.

    ``exclude`` optionally removes further cells from the fitting set.
    Raises :class:`DisconnectedDesign` unless the fitting cells identify an
    effect for every unit and every period of ``ds``.
    """
    fit = untreated_mask(ds, anticipation)
    if exclude is not None:
        fit &= ~np.asarray(exclude, dtype=bool)
    u, p = ds.unit[fit], ds.period_index[fit]
    missing_units = np.setdiff1d(np.arange(ds.n_units), u)
    if missing_units.size:
        raise DisconnectedDesign(
            f"{missing_units.size} unit(s) have no untreated cell, e.g. {ds.unit_ids[missing_units[0]]!r}"
        )
    if not is_connected(u, p, ds.n_units, ds.periods.size):
        raise DisconnectedDesign("untreated cells do not connect all units and periods")
    alpha, lam = fit_two_way(ds.outcome[fit], u, p, ds.n[fit], method=method)
    resid = ds.outcome[fit] - alpha[u] - lam[p]
    return FittedFe(
        unit_ids=ds.unit_ids,
        unit_effect=alpha,
        periods=ds.periods,
        period_effect=lam,
        residual_norm=float(np.sqrt(np.sum(ds.n[fit] * resid**2))),
        n_fit_cells=int(fit.sum()),
    )


def _imputation_groups(ds: PanelDataset, cfg: DesignConfig) -> tuple:
    # never-treated controls are not required by the imputation estimator
    return validate_design(ds, cfg.with_(control_mode="not_yet_treated")).retained_groups


def _gt_effects(ds: PanelDataset, fe: FittedFe, groups, anticipation: int) -> dict:
    """ATT(g, t) from observed minus imputed, for t >= g."""
    effect = ds.outcome - fe.predict(ds)
    cg = ds.cell_group
    out = {}
    for g in groups:
        sel = (cg == g) & (ds.period >= g)
        if not sel.any():
            continue
        sums = np.bincount(ds.period_index[sel], weights=ds.n[sel] * effect[sel], minlength=ds.periods.size)
        mass = np.bincount(ds.period_index[sel], weights=ds.n[sel], minlength=ds.periods.size)
        for ti in np.flatnonzero(mass > 0):
            out[(g, int(ds.periods[ti]))] = (sums[ti] / mass[ti], mass[ti])
    return out


def _aggregate_point(gt: dict, groups, weights: dict, window) -> dict:
    by_group = {}
    for g in groups:
        vals = [v for (gg, t), (v, _) in gt.items() if gg == g]
        if vals:
            by_group[g] = float(np.mean(vals))
    gs = list(by_group)
    p = np.array([weights[g] for g in gs])
    overall = float(p @ np.array([by_group[g] for g in gs]) / p.sum())
    event = {}
    lo, hi = window
    for e in range(max(lo, 0), hi + 1):
        contrib = [(weights[g], gt[(g, g + e)][0]) for g in groups if (g, g + e) in gt]
        if contrib:
            w = np.array([c[0] for c in contrib])
            event[e] = float(w @ np.array([c[1] for c in contrib]) / w.sum())
    return {"overall": overall, "by_group": by_group, "event": event}


def _resample(ds: PanelDataset, members: list, draw: np.ndarray) -> PanelDataset:
    idx = np.concatenate([members[c] for c in draw])
    copy = np.concatenate([np.full(members[c].size, j) for j, c in enumerate(draw)])
    return PanelDataset.from_arrays(
        unit_id=copy * ds.n_units + ds.unit[idx],
        period=ds.period[idx],
        first_treat=ds.cell_group[idx],
        outcome=ds.outcome[idx],
        n=ds.n[idx],
        cluster_id=copy,
    )


def cluster_bootstrap(ds: PanelDataset, statistic, n_boot: int, seed: int, threads: int = 1):
    """Draws of ``statistic`` on cluster-resampled datasets.

    ``statistic`` maps a dataset to a 1-d array; draws where it raises a
    design error are recorded as NaN rows. Draw ``b`` uses the stream seeded
    by ``(seed, b)``.
    """
    order = np.argsort(ds.cluster, kind="stable")
    bounds = np.searchsorted(ds.cluster[order], np.arange(ds.n_clusters + 1))
    members = [order[bounds[c]:bounds[c + 1]] for c in range(ds.n_clusters)]

    def one(b):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), b])))
        draw = rng.integers(0, ds.n_clusters, size=ds.n_clusters)
        try:
            # a draw without treated clusters yields NaN and counts as failed
            with np.errstate(invalid="ignore", divide="ignore"):
                return np.asarray(statistic(_resample(ds, members, draw)), dtype=float)
        except DesignError:
            return None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(n_boot)))
    else:
        rows = [one(b) for b in range(n_boot)]
    k = next((r.size for r in rows if r is not None), 0)
    draws = np.vstack([r if r is not None else np.full(k, np.nan) for r in rows])
    return draws


def _bootstrap_result(kind, labels, estimate, draws, alpha, meta, reference=None) -> AggregationResult:
    estimate = np.asarray(estimate, dtype=float)
    ok = ~np.isnan(draws).any(axis=1)
    d = draws[ok]
    se = d.std(axis=0, ddof=1) if d.shape[0] > 1 else np.full(estimate.size, np.nan)
    z = float(norm.ppf(1 - alpha / 2))
    active = se > 0
    if active.any() and d.shape[0] > 1:
        max_t = np.max(np.abs(d[:, active] - d[:, active].mean(axis=0)) / se[active], axis=1)
        crit = max(float(np.quantile(max_t, 1 - alpha)), z)
    else:
        crit = z
    meta = dict(meta)
    meta.update({"successful_draws": int(ok.sum()), "failed_draws": int((~ok).sum()),
                 "pointwise_critical": z, "uniform_critical": crit})
    return AggregationResult(
        kind=kind,
        labels=tuple(labels),
        estimate=estimate,
        se=se,
        influence=np.zeros((0, estimate.size)),
        clusters=np.array([], dtype=object),
        reference=reference,
        ci_low=estimate - z * se,
        ci_high=estimate + z * se,
        ucb_low=estimate - crit * se,
        ucb_high=estimate + crit * se,
        meta=meta,
    )


def impute_att(
    ds: PanelDataset,
    fe: FittedFe | None = None,
    cfg: DesignConfig | None = None,
    *,
    n_boot: int = 199,
    seed: int | None = None,
    placebos: bool = False,
    threads: int = 1,
    method: str = "direct",
) -> ImputationResult:
    """Imputation ATT with overall, per-group and event-time aggregates.

    Parameters
    ----------
    ds : PanelDataset
    fe : FittedFe, optional
        Fit from :func:`fit_untreated_twfe` on ``ds``; computed if omitted.
    cfg : DesignConfig, optional
        Supplies anticipation, the event window and bootstrap alpha/seed.
    n_boot : int
        Cluster-bootstrap replications; 0 skips inference.
    placebos : bool
        Also run :func:`pretrend_placebos`.
    """
    cfg = cfg or DesignConfig()
    seed = cfg.bootstrap.seed if seed is None else seed
    fe = fe or fit_untreated_twfe(ds, anticipation=cfg.anticipation, method=method)
    groups = _imputation_groups(ds, cfg)
    weights, _ = group_sizes(ds, groups)
    gt = _gt_effects(ds, fe, groups, cfg.anticipation)
    point = _aggregate_point(gt, groups, weights, cfg.event_window)
    g_labels = [g for g in groups if g in point["by_group"]]
    e_labels = list(point["event"])

    def statistic(b_ds):
        b_fe = fit_untreated_twfe(b_ds, anticipation=cfg.anticipation, method=method)
        b_w, _ = group_sizes(b_ds, groups)
        b_pt = _aggregate_point(_gt_effects(b_ds, b_fe, groups, cfg.anticipation), groups, b_w, cfg.event_window)
        return (
            [b_pt["overall"]]
            + [b_pt["by_group"].get(g, np.nan) for g in g_labels]
            + [b_pt["event"].get(e, np.nan) for e in e_labels]
        )

    k = 1 + len(g_labels) + len(e_labels)
    draws = cluster_bootstrap(ds, statistic, n_boot, seed, threads) if n_boot > 1 else np.full((0, k), np.nan)
    meta = {"estimator": "imputation", "se_method": "cluster bootstrap (resample clusters, refit)",
            "n_boot": n_boot, "seed": int(seed)}
    alpha = cfg.bootstrap.alpha
    overall = _bootstrap_result("overall", ["overall"], [point["overall"]], draws[:, :1], alpha,
                                {**meta, "group_weights": {format_group(g): weights[g] for g in g_labels}})
    by_group = _bootstrap_result("by_group", [int(g) for g in g_labels],
                                 [point["by_group"][g] for g in g_labels], draws[:, 1:1 + len(g_labels)], alpha, meta)
    event = _bootstrap_result("by_event", e_labels, [point["event"][e] for e in e_labels],
                              draws[:, 1 + len(g_labels):], alpha, meta)
    cells = pd.DataFrame(
        [{"g": int(g), "t": t, "event_time": int(t - g), "att": v, "n_treated": m} for (g, t), (v, m) in gt.items()]
    )
    pl = pretrend_placebos(ds, cfg, n_boot=n_boot, seed=seed, threads=threads, method=method) if placebos else None
    return ImputationResult(overall=overall, by_group=by_group, event=event, cells=cells, fe=fe, placebos=pl, meta=meta)


def _pre_period_counts(ds: PanelDataset, groups, anticipation: int) -> dict:
    untreated = untreated_mask(ds, anticipation)
    cg = ds.cell_group
    return {g: np.unique(ds.period[(cg == g) & untreated]).size for g in groups}


def _placebo_point(ds: PanelDataset, groups, events, anticipation: int, method: str) -> dict:
    weights, _ = group_sizes(ds, groups)
    cg = ds.cell_group
    out = {}
    for e in events:
        held = np.zeros(ds.n_cells, dtype=bool)
        for g in groups:
            held |= (cg == g) & (ds.period == g + e)
        if not held.any():
            continue
        fe = fit_untreated_twfe(ds, anticipation=anticipation, exclude=held, method=method)
        gap = ds.outcome - fe.predict(ds)
        contrib = []
        for g in groups:
            sel = held & (cg == g)
            if sel.any():
                contrib.append((weights[g], np.dot(ds.n[sel], gap[sel]) / ds.n[sel].sum()))
        w = np.array([c[0] for c in contrib])
        out[e] = float(w @ np.array([c[1] for c in contrib]) / w.sum())
    return out


def pretrend_placebos(
    ds: PanelDataset,
    cfg: DesignConfig | None = None,
    *,
    n_boot: int = 199,
    seed: int | None = None,
    threads: int = 1,
    method: str = "direct",
) -> AggregationResult:
    """Leave-one-pre-period-out placebo estimates for event years
    ``event_window[0] .. -1``.

    Only groups with at least two untreated periods are tested, since
    holding out their single pre-period would leave the unit effect
    unidentified.
    """
    cfg = cfg or DesignConfig()
    seed = cfg.bootstrap.seed if seed is None else seed
    groups_all = _imputation_groups(ds, cfg)
    counts = _pre_period_counts(ds, groups_all, cfg.anticipation)
    groups = tuple(g for g in groups_all if counts[g] >= 2)
    if not groups:
        raise InsufficientPrePeriods("no treated group has two or more pre-treatment periods")
    lo = min(cfg.event_window[0], -1)
    events = list(range(lo - cfg.anticipation, -cfg.anticipation))
    point = _placebo_point(ds, groups, events, cfg.anticipation, method)
    labels = list(point)

    def statistic(b_ds):
        b_pt = _placebo_point(b_ds, groups, labels, cfg.anticipation, method)
        return [b_pt.get(e, np.nan) for e in labels]

    draws = cluster_bootstrap(ds, statistic, n_boot, seed, threads) if n_boot > 1 else np.full((0, len(labels)), np.nan)
    meta = {"estimator": "imputation", "protocol": "leave-one-pre-period-out",
            "tested_groups": [int(g) for g in groups],
            "skipped_groups": [int(g) for g in groups_all if g not in groups],
            "se_method": "cluster bootstrap (resample clusters, refit)", "n_boot": n_boot, "seed": int(seed)}
    return _bootstrap_result("by_event", labels, [point[e] for e in labels], draws, cfg.bootstrap.alpha, meta)
