"""Synthetic staggered-adoption panels with known ATT(g, t).

Outcomes follow

    Y_it = a_i + l_t + tau(g_i, t) * 1{t >= g_i} + v_it + c_{c(i), t} + e_it

where ``a_i`` are unit effects, ``l_t`` period effects, ``tau`` the effect
model, ``v_it`` an optional parallel-trends violation, ``c`` optional
cluster-by-period shocks and ``e`` iid noise. The truth table is computed
from the effect model alone, never from simulated data.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import InvalidSpec
from .gt import group_sizes
from .panel import NEVER, PanelDataset, format_group, is_never

EFFECT_KINDS = ("none", "homogeneous", "dynamic", "group_varying")
VIOLATION_KINDS = ("none", "covariate_linked", "treated_linear")
WEIGHT_KINDS = ("constant", "uniform_unit", "uniform_cell")


def _group_key(g) -> float:
    if isinstance(g, str):
        if g.strip().lower() in ("never", "inf", ""):
            return NEVER
        return float(g)
    return NEVER if g is None else float(g)


@dataclass(frozen=True)
class EffectModel:
    """``none``: 0. ``homogeneous``: delta. ``dynamic``: delta + slope * e.
    ``group_varying``: by_group[g] for every post period."""

    kind: str = "none"
    delta: float = 0.0
    slope: float = 0.0
    by_group: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EFFECT_KINDS:
            raise InvalidSpec(f"effect kind must be one of {EFFECT_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "by_group", {_group_key(k): float(v) for k, v in dict(self.by_group).items()})

    def att(self, g: float, t: int) -> float:
        if t < g:
            return 0.0
        if self.kind == "homogeneous":
            return self.delta
        if self.kind == "dynamic":
            return self.delta + self.slope * (t - g)
        if self.kind == "group_varying":
            if g not in self.by_group:
                raise InvalidSpec(f"group_varying effect missing group {format_group(g)}")
            return self.by_group[g]
        return 0.0


@dataclass(frozen=True)
class TrendViolation:
    """``covariate_linked``: units with ``covariate == 1`` gain ``coef`` per
    period. ``treated_linear``: eventually treated units gain ``coef`` per
    period."""

    kind: str = "none"
    coef: float = 0.0
    covariate: str | None = None

    def __post_init__(self):
        if self.kind not in VIOLATION_KINDS:
            raise InvalidSpec(f"trend violation must be one of {VIOLATION_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class DgpSpec:
    n_units: int = 200
    periods: tuple = (1, 10)
    group_shares: Mapping = field(default_factory=lambda: {4: 0.25, 6: 0.25, 8: 0.25, NEVER: 0.25})
    unit_effect_sd: float = 1.0
    period_effect_profile: Any = 0.0
    noise_sd: float = 1.0
    effect_model: EffectModel = field(default_factory=EffectModel)
    trend_violation: TrendViolation = field(default_factory=TrendViolation)
    covariates: Mapping = field(default_factory=dict)
    n_clusters: int | None = None
    cluster_shock_sd: float = 0.0
    group_level_coef: float = 0.0
    weight_model: Mapping = field(default_factory=lambda: {"kind": "constant", "value": 1.0})

    def __post_init__(self):
        if isinstance(self.effect_model, Mapping):
            object.__setattr__(self, "effect_model", EffectModel(**self.effect_model))
        if isinstance(self.trend_violation, Mapping):
            object.__setattr__(self, "trend_violation", TrendViolation(**self.trend_violation))
        shares = {_group_key(k): float(v) for k, v in dict(self.group_shares).items()}
        object.__setattr__(self, "group_shares", shares)
        object.__setattr__(self, "periods", tuple(int(p) for p in self.periods))
        covs = {}
        for name, prev in dict(self.covariates).items():
            covs[name] = {_group_key(k): float(v) for k, v in prev.items()} if isinstance(prev, Mapping) else float(prev)
        object.__setattr__(self, "covariates", covs)
        self.validate()

    @property
    def period_values(self) -> np.ndarray:
        return np.arange(self.periods[0], self.periods[1] + 1)

    def validate(self):
        if self.n_units < 1:
            raise InvalidSpec("n_units must be positive")
        if len(self.periods) != 2 or self.periods[1] < self.periods[0]:
            raise InvalidSpec("periods must be (first, last) with first <= last")
        if any(s < 0 for s in self.group_shares.values()) or not math.isclose(sum(self.group_shares.values()), 1.0, abs_tol=1e-9):
            raise InvalidSpec("group shares must be nonnegative and sum to 1")
        if self.noise_sd < 0 or self.unit_effect_sd < 0 or self.cluster_shock_sd < 0:
            raise InvalidSpec("standard deviations must be nonnegative")
        prof = self.period_effect_profile
        if not np.isscalar(prof) and len(prof) != self.period_values.size:
            raise InvalidSpec("period_effect_profile must be a slope or one value per period")
        if self.n_clusters is not None and not 1 <= self.n_clusters <= self.n_units:
            raise InvalidSpec("n_clusters must lie in [1, n_units]")
        tv = self.trend_violation
        if tv.kind == "covariate_linked" and tv.covariate not in self.covariates:
            raise InvalidSpec(f"trend violation covariate {tv.covariate!r} is not generated")
        if self.weight_model.get("kind", "constant") not in WEIGHT_KINDS:
            raise InvalidSpec(f"weight model kind must be one of {WEIGHT_KINDS}")
        for p in self.covariates.values():
            vals = p.values() if isinstance(p, dict) else [p]
            if any(not 0 <= v <= 1 for v in vals):
                raise InvalidSpec("covariate prevalences must lie in [0, 1]")
        if self.effect_model.kind == "group_varying":
            for g in self.treated_groups:
                self.effect_model.att(g, int(g))

    @property
    def treated_groups(self) -> list[float]:
        return sorted(g for g, s in self.group_shares.items() if not is_never(g) and s > 0)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["group_shares"] = {format_group(g): s for g, s in self.group_shares.items()}
        d["effect_model"]["by_group"] = {format_group(g): v for g, v in self.effect_model.by_group.items()}
        d["covariates"] = {
            k: ({format_group(g): v for g, v in p.items()} if isinstance(p, dict) else p)
            for k, p in self.covariates.items()
        }
        d["periods"] = list(self.periods)
        prof = self.period_effect_profile
        d["period_effect_profile"] = prof if np.isscalar(prof) else list(prof)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "DgpSpec":
        try:
            return cls(**dict(d))
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "DgpSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise InvalidSpec(f"invalid JSON: {exc}") from exc


@dataclass(frozen=True, eq=False)
class TruthTable:
    """True ATT(g, t) for every treated group and period."""

    effect_model: EffectModel
    groups: tuple
    periods: tuple
    implied: dict = field(default_factory=dict)

    def att(self, g, t) -> float:
        return self.effect_model.att(float(g), int(t))

    def table(self) -> dict:
        return {(g, t): self.att(g, t) for g in self.groups for t in self.periods}

    def to_dict(self) -> dict[str, Any]:
        return {
            "att_gt": [
                {"g": int(g), "t": int(t), "event_time": int(t - g), "att": self.att(g, t)}
                for g in self.groups for t in self.periods
            ],
            **self.implied,
        }


def true_aggregates(truth: TruthTable, group_weights: Mapping, event_window=None) -> dict[str, Any]:
    """Apply the per-group, overall and event-time aggregation formulas to the
    true ATT surface.

    ``group_weights`` maps each group to its size share; groups absent from
    it are ignored. Post periods run up to the last period of the truth
    table.
    """
    last = max(truth.periods)
    periods = [t for t in truth.periods]
    groups = [g for g in truth.groups if g in group_weights]
    by_group = {}
    for g in groups:
        post = [t for t in periods if g <= t <= last]
        if post:
            by_group[g] = float(np.mean([truth.att(g, t) for t in post]))
    w = np.array([group_weights[g] for g in by_group])
    overall = float(w @ np.array(list(by_group.values())) / w.sum()) if by_group else float("nan")
    if event_window is None:
        event_window = (int(min(periods) - max(groups, default=0)), int(last - min(groups, default=0)))
    by_event = {}
    for e in range(int(event_window[0]), int(event_window[1]) + 1):
        contrib = [(group_weights[g], truth.att(g, g + e)) for g in groups if int(g + e) in periods]
        if contrib:
            ww = np.array([c[0] for c in contrib])
            by_event[e] = float(ww @ np.array([c[1] for c in contrib]) / ww.sum())
    return {"overall": overall, "by_group": by_group, "by_event": by_event}


def _allocate(n: int, shares: Mapping) -> dict:
    keys = list(shares)
    raw = np.array([shares[k] for k in keys]) * n
    counts = np.floor(raw).astype(int)
    rest = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rest]] += 1
    return dict(zip(keys, counts))


def generate(spec: DgpSpec, seed: int = 0) -> tuple[PanelDataset, TruthTable]:
    """Draw a balanced panel from ``spec``; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    periods = spec.period_values
    T, N = periods.size, spec.n_units

    counts = _allocate(N, spec.group_shares)
    labels = np.concatenate([np.full(c, g) for g, c in counts.items()])
    g_unit = labels[rng.permutation(N)]

    alpha = rng.normal(0.0, spec.unit_effect_sd, N)
    if spec.group_level_coef:
        alpha += spec.group_level_coef * np.where(np.isfinite(g_unit), g_unit - periods[0], 0.0)
    prof = spec.period_effect_profile
    lam = prof * (periods - periods[0]) if np.isscalar(prof) else np.asarray(prof, dtype=float)

    X = {}
    for name, prev in spec.covariates.items():
        p = np.array([prev.get(g, 0.0) for g in g_unit]) if isinstance(prev, dict) else np.full(N, prev)
        X[name] = (rng.random(N) < p).astype(float)

    n_clusters = spec.n_clusters or N
    cluster = rng.permutation(N) % n_clusters

    u = np.repeat(np.arange(N), T)
    t = np.tile(periods, N)
    g = g_unit[u]
    eff = np.array([spec.effect_model.att(gg, tt) for gg, tt in zip(g, t)]) if spec.effect_model.kind != "none" else np.zeros(u.size)

    tv = spec.trend_violation
    viol = np.zeros(u.size)
    if tv.kind == "covariate_linked":
        viol = tv.coef * X[tv.covariate][u] * (t - periods[0])
    elif tv.kind == "treated_linear":
        viol = tv.coef * np.isfinite(g) * (t - periods[0])

    shocks = rng.normal(0.0, spec.cluster_shock_sd, (n_clusters, T)) if spec.cluster_shock_sd > 0 else np.zeros((n_clusters, T))
    noise = rng.normal(0.0, spec.noise_sd, u.size) if spec.noise_sd > 0 else np.zeros(u.size)
    y = alpha[u] + lam[t - periods[0]] + eff + viol + shocks[cluster[u], t - periods[0]] + noise

    wm = dict(spec.weight_model)
    kind = wm.get("kind", "constant")
    if kind == "constant":
        n = np.full(u.size, float(wm.get("value", 1.0)))
    elif kind == "uniform_unit":
        n = rng.uniform(wm.get("low", 1.0), wm.get("high", 2.0), N)[u]
    else:
        n = rng.uniform(wm.get("low", 1.0), wm.get("high", 2.0), u.size)

    width = len(str(N - 1))
    ds = PanelDataset.from_arrays(
        unit_id=np.array([f"u{i:0{width}d}" for i in range(N)])[u],
        period=t,
        first_treat=g,
        outcome=y,
        n=n,
        covariates={k: v[u] for k, v in X.items()},
        cluster_id=np.array([f"c{c:0{width}d}" for c in range(n_clusters)])[cluster[u]],
        meta={"dgp_seed": int(seed)},
    )
    groups = tuple(gg for gg in spec.treated_groups if gg in set(g_unit.tolist()))
    truth = TruthTable(effect_model=spec.effect_model, groups=groups, periods=tuple(int(p) for p in periods))
    estimable = [gg for gg in groups if periods[0] <= gg - 1 and gg <= periods[-1]]
    if estimable:
        weights, _ = group_sizes(ds, estimable)
        agg = true_aggregates(truth, weights)
        implied = {
            "overall": agg["overall"],
            "by_group": {format_group(k): v for k, v in agg["by_group"].items()},
            "by_event": {str(k): v for k, v in agg["by_event"].items()},
            "group_weights": {format_group(k): v for k, v in weights.items()},
        }
        truth = TruthTable(effect_model=truth.effect_model, groups=groups, periods=truth.periods, implied=implied)
    return ds, truth
