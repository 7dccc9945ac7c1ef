"""Panel data containers: loading, cell aggregation, covariate binarization and
design validation.

All estimators consume a :class:`PanelDataset`, an immutable collection of
``(unit, period)`` cells holding a weighted mean outcome and the total weight
``n`` of the records that fall into the cell.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Hashable, Iterable, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

from .config import DesignConfig
from .errors import (
    DataError,
    DegenerateCovariate,
    InconsistentGroup,
    MissingColumn,
    NegativeWeight,
    NoControlUnits,
    ParseError,
    UnknownCovariate,
)

#: First-treatment value of never-treated units. Compares greater than every
#: period, so ``t >= NEVER`` is always false.
NEVER: float = math.inf

DEFAULT_SCHEMA = {
    "unit": "unit",
    "period": "period",
    "first_treat": "first_treat",
    "outcome": "outcome",
    "weight": None,
    "cluster": None,
    "covariates": (),
}

RECORD_COLUMNS = ["unit_id", "period", "first_treat", "outcome", "weight", "cluster_id"]


def is_never(g) -> bool:
    return g is None or (isinstance(g, float) and math.isinf(g))


def format_group(g) -> str:
    return "never" if is_never(g) else str(int(g))


@dataclass(frozen=True)
class UnitRecord:
    """One input row: an individual (or pre-aggregated) observation."""

    unit_id: Hashable
    period: int
    first_treat: float
    outcome: float
    weight: float = 1.0
    covariates: Mapping[str, float] = field(default_factory=dict)
    cluster_id: Hashable = None

    def __post_init__(self):
        if self.first_treat is None:
            object.__setattr__(self, "first_treat", NEVER)
        if self.cluster_id is None:
            object.__setattr__(self, "cluster_id", self.unit_id)
        if not self.weight >= 0:
            raise NegativeWeight(f"negative weight {self.weight} for unit {self.unit_id!r}")
        if not math.isfinite(self.period):
            raise DataError("period must be finite")


@dataclass(frozen=True)
class PanelCell:
    unit_id: Hashable
    period: int
    group: float
    outcome_mean: float
    n: float
    covariates: Mapping[str, float]


@dataclass(frozen=True)
class DesignSummary:
    retained_groups: tuple
    dropped_groups: dict
    n_never_treated_units: int
    n_cells: int
    period_range: tuple

    def to_dict(self) -> dict[str, Any]:
        return {
            "retained_groups": [int(g) for g in self.retained_groups],
            "dropped_groups": {format_group(g): r for g, r in self.dropped_groups.items()},
            "n_never_treated_units": self.n_never_treated_units,
            "n_cells": self.n_cells,
            "period_range": [int(p) for p in self.period_range],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Immutable ``(unit, period)`` cell panel.

    Cell-level arrays (``unit``, ``period``, ``outcome``, ``n``, ``covariates``)
    are aligned and sorted by unit then period. Unit-level arrays
    (``unit_ids``, ``unit_group``, ``unit_cluster``) are indexed by the integer
    unit codes stored in ``unit``.
    """

    unit_ids: np.ndarray
    unit_group: np.ndarray
    unit_cluster: np.ndarray
    cluster_ids: np.ndarray
    unit: np.ndarray
    period: np.ndarray
    outcome: np.ndarray
    n: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("unit", "period", "outcome", "n"):
            arr = getattr(self, name)
            arr.setflags(write=False)
        if self.covariates.ndim != 2 or self.covariates.shape[0] != self.unit.shape[0]:
            raise DataError("covariates must be a (cells, k) array")
        key = self.unit.astype(np.int64) * (int(np.ptp(self.period)) + 1 if self.period.size else 1) + (
            self.period - (self.period.min() if self.period.size else 0)
        )
        if np.unique(key).size != key.size:
            raise DataError("duplicate (unit, period) cells")

    # -- construction ------------------------------------------------------

    @classmethod
    def from_arrays(
        cls,
        unit_id: Sequence,
        period: Sequence,
        first_treat: Sequence,
        outcome: Sequence,
        n: Sequence | None = None,
        covariates: Mapping[str, Sequence] | None = None,
        cluster_id: Sequence | None = None,
        meta: dict | None = None,
    ) -> "PanelDataset":
        """Build a dataset from cell-level arrays (one entry per cell)."""
        unit_id = np.asarray(unit_id)
        codes, uniques = pd.factorize(unit_id, sort=True)
        n_units = len(uniques)
        period = np.asarray(period, dtype=np.int64)
        g = np.asarray(first_treat, dtype=float)
        outcome = np.asarray(outcome, dtype=float)
        n = np.ones(len(codes)) if n is None else np.asarray(n, dtype=float)
        if np.any(n < 0):
            raise NegativeWeight("cell weights must be nonnegative")
        cluster_id = unit_id if cluster_id is None else np.asarray(cluster_id)

        unit_group = np.full(n_units, np.nan)
        unit_group[codes] = g
        if np.any(unit_group[codes] != g):
            bad = uniques[codes[unit_group[codes] != g][0]]
            raise InconsistentGroup(f"unit {bad!r} carries more than one first_treat value")
        ccodes, cuniques = pd.factorize(cluster_id, sort=True)
        unit_cluster = np.full(n_units, -1, dtype=np.int64)
        unit_cluster[codes] = ccodes
        if np.any(unit_cluster[codes] != ccodes):
            bad = uniques[codes[unit_cluster[codes] != ccodes][0]]
            raise DataError(f"unit {bad!r} belongs to more than one cluster")

        names = tuple(covariates) if covariates else ()
        X = (
            np.column_stack([np.asarray(covariates[k], dtype=float) for k in names])
            if names
            else np.empty((len(codes), 0))
        )
        order = np.lexsort((period, codes))
        return cls(
            unit_ids=np.asarray(uniques),
            unit_group=unit_group,
            unit_cluster=unit_cluster,
            cluster_ids=np.asarray(cuniques),
            unit=codes[order].astype(np.int64),
            period=period[order],
            outcome=outcome[order],
            n=n[order],
            covariates=X[order],
            covariate_names=names,
            meta=dict(meta or {}),
        )

    # -- basic properties --------------------------------------------------

    @property
    def n_cells(self) -> int:
        return int(self.unit.size)

    @property
    def n_units(self) -> int:
        return int(self.unit_ids.size)

    @property
    def n_clusters(self) -> int:
        return int(self.cluster_ids.size)

    @cached_property
    def periods(self) -> np.ndarray:
        return np.unique(self.period)

    @cached_property
    def groups(self) -> np.ndarray:
        """Sorted distinct finite treatment groups (never-treated excluded)."""
        g = np.unique(self.unit_group)
        return g[np.isfinite(g)]

    @property
    def cell_group(self) -> np.ndarray:
        return self.unit_group[self.unit]

    @property
    def cluster(self) -> np.ndarray:
        """Cluster code of every cell."""
        return self.unit_cluster[self.unit]

    @cached_property
    def period_index(self) -> np.ndarray:
        return np.searchsorted(self.periods, self.period)

    @cached_property
    def wide(self) -> dict[str, np.ndarray]:
        """Unit-by-period arrays: outcome ``Y`` (NaN when unobserved), weight
        ``W`` (0 when unobserved) and covariates ``X`` (units, periods, k)."""
        N, T, K = self.n_units, self.periods.size, len(self.covariate_names)
        Y = np.full((N, T), np.nan)
        W = np.zeros((N, T))
        X = np.full((N, T, K), np.nan)
        Y[self.unit, self.period_index] = self.outcome
        W[self.unit, self.period_index] = self.n
        X[self.unit, self.period_index] = self.covariates
        for a in (Y, W, X):
            a.setflags(write=False)
        return {"Y": Y, "W": W, "X": X}

    def is_balanced(self) -> bool:
        return self.n_cells == self.n_units * self.periods.size

    # -- derived datasets --------------------------------------------------

    def _replace(self, **changes) -> "PanelDataset":
        fields = {
            k: getattr(self, k)
            for k in (
                "unit_ids", "unit_group", "unit_cluster", "cluster_ids", "unit", "period",
                "outcome", "n", "covariates", "covariate_names", "meta",
            )
        }
        fields.update(changes)
        return PanelDataset(**fields)

    def with_outcome(self, outcome: np.ndarray) -> "PanelDataset":
        return self._replace(outcome=np.asarray(outcome, dtype=float).copy())

    def with_covariates(self, covariates: np.ndarray, names: Sequence[str], meta: dict | None = None):
        return self._replace(
            covariates=np.asarray(covariates, dtype=float),
            covariate_names=tuple(names),
            meta=dict(self.meta if meta is None else meta),
        )

    def select_cells(self, mask: np.ndarray) -> "PanelDataset":
        """Keep the cells where ``mask`` is true, dropping units left without
        cells and re-indexing unit and cluster codes."""
        mask = np.asarray(mask, dtype=bool)
        return PanelDataset.from_arrays(
            unit_id=self.unit_ids[self.unit[mask]],
            period=self.period[mask],
            first_treat=self.unit_group[self.unit[mask]],
            outcome=self.outcome[mask],
            n=self.n[mask],
            covariates={k: self.covariates[mask, j] for j, k in enumerate(self.covariate_names)},
            cluster_id=self.cluster_ids[self.cluster[mask]],
            meta=self.meta,
        )

    def select_units(self, unit_mask: np.ndarray) -> "PanelDataset":
        return self.select_cells(np.asarray(unit_mask, dtype=bool)[self.unit])

    # -- export ------------------------------------------------------------

    def cells(self) -> Iterator[PanelCell]:
        for i in range(self.n_cells):
            u = self.unit[i]
            yield PanelCell(
                unit_id=self.unit_ids[u],
                period=int(self.period[i]),
                group=float(self.unit_group[u]),
                outcome_mean=float(self.outcome[i]),
                n=float(self.n[i]),
                covariates={k: float(self.covariates[i, j]) for j, k in enumerate(self.covariate_names)},
            )

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(
            {
                "unit_id": self.unit_ids[self.unit],
                "period": self.period,
                "first_treat": self.unit_group[self.unit],
                "outcome": self.outcome,
                "weight": self.n,
                "cluster_id": self.cluster_ids[self.cluster],
            }
        )
        for j, k in enumerate(self.covariate_names):
            df[k] = self.covariates[:, j]
        return df

    def to_csv(self, path, never_sentinel: str = "") -> None:
        """Write cells in the panel CSV schema accepted by :func:`load_csv`."""
        df = self.to_frame().rename(columns={"unit_id": "unit", "cluster_id": "cluster"})
        df["first_treat"] = [never_sentinel if is_never(g) else str(int(g)) for g in df["first_treat"]]
        df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _parse_numeric(series: pd.Series, column: str, allow_empty: bool = False) -> np.ndarray:
    stripped = series.str.strip()
    values = pd.to_numeric(stripped, errors="coerce")
    bad = values.isna() & ~(allow_empty & (stripped == ""))
    if bad.any():
        pos = int(np.flatnonzero(bad.to_numpy())[0])
        # row numbers are 1-based data rows; the header is row 0
        raise ParseError(pos + 1, column, series.iloc[pos])
    return values.to_numpy(dtype=float)


def load_csv(
    path: str | Path,
    schema: Mapping[str, Any] | None = None,
    never_sentinel: str | Iterable[str] = "",
) -> pd.DataFrame:
    """Read a panel CSV into a record frame.

    Parameters
    ----------
    path : path-like
        UTF-8 CSV with a header row.
    schema : mapping, optional
        Maps the logical fields ``unit``, ``period``, ``first_treat``,
        ``outcome`` and optionally ``weight``, ``cluster`` and ``covariates``
        (a list of column names) to CSV column names. When ``weight`` or
        ``cluster`` is not mapped, columns literally named ``weight`` and
        ``cluster`` are used if present.
    never_sentinel : str or iterable of str
        ``first_treat`` values that mark never-treated units, in addition to
        the empty string.

    Returns
    -------
    pandas.DataFrame
        One row per CSV row with columns ``unit_id, period, first_treat,
        outcome, weight, cluster_id`` followed by the covariates.
        Never-treated rows carry ``first_treat == NEVER``.
    """
    cols = dict(DEFAULT_SCHEMA)
    cols.update(schema or {})
    sentinels = {never_sentinel} if isinstance(never_sentinel, str) else set(never_sentinel)
    sentinels.add("")

    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    raw.columns = [c.strip() for c in raw.columns]
    for key in ("weight", "cluster"):
        if not cols.get(key) and key in raw.columns:
            cols[key] = key
    required = [cols["unit"], cols["period"], cols["first_treat"], cols["outcome"]]
    optional = [c for c in (cols.get("weight"), cols.get("cluster")) if c]
    covs = list(cols.get("covariates") or ())
    for c in required + optional + covs:
        if c not in raw.columns:
            raise MissingColumn(c)

    out = pd.DataFrame({"unit_id": raw[cols["unit"]].str.strip()})
    period = _parse_numeric(raw[cols["period"]], cols["period"])
    if np.any(period != np.round(period)):
        pos = int(np.flatnonzero(period != np.round(period))[0])
        raise ParseError(pos + 1, cols["period"], raw[cols["period"]].iloc[pos])
    out["period"] = period.astype(np.int64)

    ft = raw[cols["first_treat"]].str.strip()
    never = ft.isin(sentinels)
    g = np.full(len(ft), NEVER)
    if (~never).any():
        g[~never.to_numpy()] = _parse_numeric(ft[~never], cols["first_treat"])
    out["first_treat"] = g
    out["outcome"] = _parse_numeric(raw[cols["outcome"]], cols["outcome"])

    if cols.get("weight"):
        w = _parse_numeric(raw[cols["weight"]], cols["weight"], allow_empty=True)
        w = np.where(np.isnan(w), 1.0, w)
        if np.any(w < 0):
            pos = int(np.flatnonzero(w < 0)[0])
            raise NegativeWeight(f"negative weight {w[pos]} at row {pos + 1}")
        out["weight"] = w
    else:
        out["weight"] = 1.0
    if cols.get("cluster"):
        cl = raw[cols["cluster"]].str.strip()
        out["cluster_id"] = cl.where(cl != "", out["unit_id"])
    else:
        out["cluster_id"] = out["unit_id"]
    for c in covs:
        out[c] = _parse_numeric(raw[c], c)
    return out


def records_to_frame(records: Iterable[UnitRecord]) -> pd.DataFrame:
    rows = []
    for r in records:
        row = {
            "unit_id": r.unit_id,
            "period": r.period,
            "first_treat": NEVER if r.first_treat is None else float(r.first_treat),
            "outcome": r.outcome,
            "weight": r.weight,
            "cluster_id": r.cluster_id,
        }
        row.update(r.covariates)
        rows.append(row)
    return pd.DataFrame(rows)


def frame_to_records(df: pd.DataFrame) -> list[UnitRecord]:
    covs = [c for c in df.columns if c not in RECORD_COLUMNS]
    return [
        UnitRecord(
            unit_id=row["unit_id"],
            period=int(row["period"]),
            first_treat=float(row["first_treat"]),
            outcome=float(row["outcome"]),
            weight=float(row["weight"]),
            covariates={c: float(row[c]) for c in covs},
            cluster_id=row["cluster_id"],
        )
        for row in df.to_dict("records")
    ]


# ---------------------------------------------------------------------------
# Aggregation to cells
# ---------------------------------------------------------------------------


def aggregate_cells(records: pd.DataFrame | Iterable[UnitRecord]) -> PanelDataset:
    """Collapse records into weighted ``(unit, period)`` cells.

    Outcome and covariates are weighted means within the cell; the cell
    weight is the sum of record weights. Cells whose records all have zero
    weight carry no information and are dropped with a warning.
    """
    df = records if isinstance(records, pd.DataFrame) else records_to_frame(records)
    if len(df) == 0:
        raise DataError("no records to aggregate")
    for c in RECORD_COLUMNS:
        if c not in df.columns:
            raise MissingColumn(c)
    if (df["weight"] < 0).any():
        raise NegativeWeight("record weights must be nonnegative")
    covs = [c for c in df.columns if c not in RECORD_COLUMNS]

    per_unit = df.groupby("unit_id", sort=False)
    n_groups = per_unit["first_treat"].nunique()
    if (n_groups > 1).any():
        raise InconsistentGroup(f"unit {n_groups[n_groups > 1].index[0]!r} carries more than one first_treat value")
    if (per_unit["cluster_id"].nunique() > 1).any():
        bad = per_unit["cluster_id"].nunique()
        raise DataError(f"unit {bad[bad > 1].index[0]!r} belongs to more than one cluster")

    w = df["weight"].to_numpy(dtype=float)
    work = pd.DataFrame({"unit_id": df["unit_id"], "period": df["period"], "w": w})
    work["wy"] = w * df["outcome"].to_numpy(dtype=float)
    for c in covs:
        work["wx_" + c] = w * df[c].to_numpy(dtype=float)
    sums = work.groupby(["unit_id", "period"], sort=True).sum()
    firsts = df.groupby(["unit_id", "period"], sort=True)[["first_treat", "cluster_id"]].first()

    zero = sums["w"].to_numpy() <= 0
    if zero.any():
        warnings.warn(f"dropping {int(zero.sum())} cells with zero total weight", stacklevel=2)
        sums, firsts = sums[~zero], firsts[~zero]
    n = sums["w"].to_numpy()
    idx = sums.index
    return PanelDataset.from_arrays(
        unit_id=idx.get_level_values(0).to_numpy(),
        period=idx.get_level_values(1).to_numpy(),
        first_treat=firsts["first_treat"].to_numpy(dtype=float),
        outcome=sums["wy"].to_numpy() / n,
        n=n,
        covariates={c: sums["wx_" + c].to_numpy() / n for c in covs},
        cluster_id=firsts["cluster_id"].to_numpy(),
    )


# ---------------------------------------------------------------------------
# Covariates
# ---------------------------------------------------------------------------


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Lower weighted median: the smallest value whose cumulative weight
    reaches half of the total."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    half = 0.5 * cum[-1]
    k = int(np.searchsorted(cum, half * (1 - 1e-12), side="left"))
    return float(values[order][min(k, len(values) - 1)])


def binarize_covariates(ds: PanelDataset, names: Sequence[str]) -> PanelDataset:
    """Replace each named covariate by an above-median indicator.

    The median is the ``n``-weighted median over cells; a value equal to the
    median maps to 0. Covariates that are already 0/1 indicators are kept
    as they are. Medians are stored under ``meta["covariate_medians"]``.
    """
    X = ds.covariates.copy()
    medians = dict(ds.meta.get("covariate_medians", {}))
    for name in names:
        if name not in ds.covariate_names:
            raise UnknownCovariate(f"unknown covariate {name!r}")
        j = ds.covariate_names.index(name)
        col = X[:, j]
        med = weighted_median(col, ds.n)
        medians[name] = med
        if not np.all(np.isin(col, (0.0, 1.0))):
            X[:, j] = (col > med).astype(float)
        if np.unique(X[:, j]).size < 2:
            warnings.warn(f"covariate {name!r} has no variation after binarization", DegenerateCovariate, stacklevel=2)
    meta = dict(ds.meta)
    meta["covariate_medians"] = medians
    return ds.with_covariates(X, ds.covariate_names, meta)


# ---------------------------------------------------------------------------
# Design validation
# ---------------------------------------------------------------------------


def validate_design(ds: PanelDataset, cfg: DesignConfig | None = None) -> DesignSummary:
    """Decide which treatment groups can be estimated.

    A group is retained when its base period ``g - 1 - anticipation`` is
    observed for at least one of its units and it has at least one observed
    period ``t >= g``.
    """
    cfg = cfg or DesignConfig()
    periods = ds.periods
    retained, dropped = [], {}
    for g in ds.groups:
        b = cfg.base_period(g)
        in_g = ds.unit_group[ds.unit] == g
        observed = ds.period[in_g]
        if not np.any(observed <= b):
            dropped[g] = "no pre-period"
        elif not np.any(observed == b):
            dropped[g] = "base period not observed"
        elif not np.any(periods >= g):
            dropped[g] = "no post-period"
        else:
            retained.append(g)
    n_never = int(np.sum(~np.isfinite(ds.unit_group)))
    if cfg.control_mode == "never_treated" and n_never == 0:
        raise NoControlUnits("control mode never_treated requires never-treated units, found none")
    return DesignSummary(
        retained_groups=tuple(float(g) for g in retained),
        dropped_groups={float(g): r for g, r in dropped.items()},
        n_never_treated_units=n_never,
        n_cells=ds.n_cells,
        period_range=(int(periods.min()), int(periods.max())),
    )
