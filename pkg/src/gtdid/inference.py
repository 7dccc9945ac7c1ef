"""Multiplier bootstrap over per-cluster influence contributions.

Each draw multiplies every cluster's influence vector by an independent
mean-zero, unit-variance multiplier and sums over clusters, which yields a
perturbed copy of the estimation error for every label at once. Standard
errors are a robust (interquartile-range) scale of the perturbed errors;
the uniform critical value is the ``1 - alpha`` quantile of the largest
studentized perturbation across labels.

Draw ``b`` always uses the random stream seeded by ``(seed, b)``, so the
result does not depend on how draws are split across threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .aggregation import AggregationResult
from .config import BootstrapConfig
from .errors import LabelMismatch, TooFewClusters, UncenteredInfluence

_SQRT5 = np.sqrt(5.0)
MAMMEN_LOW = -(_SQRT5 - 1) / 2
MAMMEN_HIGH = (_SQRT5 + 1) / 2
MAMMEN_P_LOW = (_SQRT5 + 1) / (2 * _SQRT5)
NORMAL_IQR = norm.ppf(0.75) - norm.ppf(0.25)


@dataclass(frozen=True, eq=False)
class BandResult:
    labels: tuple
    se: np.ndarray
    pointwise_critical: float
    uniform_critical: float
    n_draws: int
    multiplier: str
    seed: int
    alpha: float
    draws_summary: dict = field(default_factory=dict)

    def metadata(self) -> dict:
        return {
            "se_method": "multiplier bootstrap, IQR/1.349 scale",
            "n_draws": self.n_draws,
            "multiplier": self.multiplier,
            "seed": self.seed,
            "alpha": self.alpha,
            "pointwise_critical": self.pointwise_critical,
            "uniform_critical": self.uniform_critical,
            **self.draws_summary,
        }


def _draw(b: int, n_clusters: int, cfg: BootstrapConfig) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(cfg.seed), b])))
    u = rng.random(n_clusters)
    if cfg.multiplier == "rademacher":
        return np.where(u < 0.5, -1.0, 1.0)
    return np.where(u < MAMMEN_P_LOW, MAMMEN_LOW, MAMMEN_HIGH)


def draw_multipliers(n_clusters: int, cfg: BootstrapConfig, threads: int = 1) -> np.ndarray:
    """Multiplier matrix of shape ``(n_draws, n_clusters)``."""
    draws = range(cfg.n_draws)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda b: _draw(b, n_clusters, cfg), draws))
    else:
        rows = [_draw(b, n_clusters, cfg) for b in draws]
    return np.vstack(rows)


def robust_scale(x: np.ndarray, axis: int = 0) -> np.ndarray:
    q75, q25 = np.quantile(x, [0.75, 0.25], axis=axis)
    return (q75 - q25) / NORMAL_IQR


def multiplier_bootstrap(
    influence,
    cfg: BootstrapConfig | None = None,
    *,
    labels=None,
    reference=None,
    threads: int = 1,
) -> BandResult:
    """Bootstrap standard errors and critical values.

    Parameters
    ----------
    influence : ndarray of shape (n_clusters, n_labels) or AggregationResult
        Centered per-cluster influence contributions.
    cfg : BootstrapConfig
    labels, reference : optional
        Label names and a mask of reference (fixed-at-zero) labels that are
        excluded from the uniform band. Taken from the result when an
        :class:`AggregationResult` is passed.
    """
    cfg = cfg or BootstrapConfig()
    if isinstance(influence, AggregationResult):
        labels = influence.labels if labels is None else labels
        reference = influence.reference if reference is None else reference
        influence = influence.influence
    psi = np.asarray(influence, dtype=float)
    if psi.ndim == 1:
        psi = psi[:, None]
    G, k = psi.shape
    labels = tuple(range(k)) if labels is None else tuple(labels)
    reference = np.zeros(k, dtype=bool) if reference is None else np.asarray(reference, dtype=bool)
    if G < 2:
        raise TooFewClusters(f"multiplier bootstrap needs at least 2 clusters, got {G}")
    drift = np.abs(psi.sum(axis=0))
    if np.any(drift > 1e-6 * np.maximum(1.0, np.abs(psi).sum(axis=0))):
        raise UncenteredInfluence(f"influence contributions do not sum to zero (max |sum| = {drift.max():.3g})")

    V = draw_multipliers(G, cfg, threads)
    pert = V @ psi
    se = robust_scale(pert, axis=0)
    z = float(norm.ppf(1 - cfg.alpha / 2))

    scale = np.abs(psi).sum(axis=0)
    active = (~reference) & (se > 1e-12 * np.maximum(scale, 1e-300))
    if active.any():
        max_t = np.max(np.abs(pert[:, active]) / se[active], axis=1)
        crit = float(np.quantile(max_t, 1 - cfg.alpha))
        summary = {"max_t_median": float(np.median(max_t)), "raw_uniform_critical": crit}
    else:
        crit = z
        summary = {}
    se = np.where(reference, 0.0, se)
    return BandResult(
        labels=labels,
        se=se,
        pointwise_critical=z,
        uniform_critical=max(crit, z),
        n_draws=cfg.n_draws,
        multiplier=cfg.multiplier,
        seed=int(cfg.seed),
        alpha=cfg.alpha,
        draws_summary=summary,
    )


def attach_bands(agg: AggregationResult, band: BandResult) -> AggregationResult:
    """Fill bootstrap standard errors, pointwise intervals and uniform bands."""
    if tuple(agg.labels) != tuple(band.labels):
        raise LabelMismatch(f"band labels {band.labels} do not match {agg.labels}")
    se = np.asarray(band.se, dtype=float)
    est = agg.estimate
    meta = dict(agg.meta)
    meta["bootstrap"] = band.metadata()
    meta["analytic_se"] = agg.se.tolist()
    return agg.replace(
        se=se,
        ci_low=est - band.pointwise_critical * se,
        ci_high=est + band.pointwise_critical * se,
        ucb_low=est - band.uniform_critical * se,
        ucb_high=est + band.uniform_critical * se,
        meta=meta,
    )


def bootstrap_bands(agg: AggregationResult, cfg: BootstrapConfig | None = None, threads: int = 1) -> AggregationResult:
    """:func:`multiplier_bootstrap` followed by :func:`attach_bands`."""
    return attach_bands(agg, multiplier_bootstrap(agg, cfg, threads=threads))
