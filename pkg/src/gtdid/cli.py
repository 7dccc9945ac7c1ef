"""Command-line front end.

Every command reads one JSON config; flags override individual fields.
Result files start with a ``# manifest_sha256=...`` comment (TSV) or carry a
``manifest_sha256`` key (JSON). The hash covers the effective config, the
input checksums and the software version, so two runs with the same hash
write byte-identical result files whatever ``--threads`` is.

Exit codes: 0 success, 2 config error, 3 data error, 4 estimation failure,
5 incompatible runs (contrast).
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import scipy

from . import __version__
from ._io import clean_json, write_tsv
from .aggregation import AggregationResult, aggregate_event, aggregate_group, aggregate_overall, contrast_ddd
from .config import BootstrapConfig, DesignConfig, normalize_control_mode
from .dgp import DgpSpec, generate
from .diagnostics import bacon_decompose, twfe_estimate, twfe_weights
from .errors import DataError, DIDError, InvalidSpec, LabelMismatch
from .gt import att_gt_all
from .imputation import impute_att, pretrend_placebos
from .inference import bootstrap_bands
from .panel import aggregate_cells, binarize_covariates, load_csv, validate_design

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION, EXIT_INCOMPATIBLE = 0, 2, 3, 4, 5

DEFAULTS: dict[str, Any] = {
    "data": {"path": None, "schema": {}, "never_sentinel": ""},
    "design": {
        "control_mode": "never_treated",
        "anticipation": 0,
        "conditional": False,
        "covariate_names": [],
        "binarize": True,
        "event_window": [-5, 5],
        "strict_support": False,
        "min_weight": 0.0,
    },
    "bootstrap": {"n_draws": 999, "multiplier": "mammen", "seed": 0, "alpha": 0.05},
    "imputation": {"n_boot": 199, "placebos": True},
    "diagnostics": {"bins": 20},
    "output": {"dir": "out"},
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def _read_json(path: Path, what: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{what} {path} is not valid JSON: {exc}") from None


def load_config(path: str | None, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then command-line overrides."""
    raw = _read_json(Path(path), "config") if path else {}
    if not isinstance(raw, dict):
        raise CliError(EXIT_CONFIG, "config must be a JSON object")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown config section(s): {sorted(unknown)}")
    cfg = _merge(DEFAULTS, raw)
    if cfg["data"]["path"] and path:
        cfg["data"]["path"] = str((Path(path).parent / cfg["data"]["path"]).resolve())
    if getattr(args, "control", None):
        cfg["design"]["control_mode"] = args.control
    if getattr(args, "conditional", False):
        cfg["design"]["conditional"] = True
    if getattr(args, "draws", None) is not None:
        cfg["bootstrap"]["n_draws"] = args.draws
        cfg["imputation"]["n_boot"] = args.draws
    if getattr(args, "seed", None) is not None:
        cfg["bootstrap"]["seed"] = args.seed
    if getattr(args, "out", None):
        cfg["output"]["dir"] = args.out
    try:
        cfg["design"]["control_mode"] = normalize_control_mode(cfg["design"]["control_mode"])
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"design.control_mode: {exc}") from None
    return cfg


def design_config(cfg: dict) -> DesignConfig:
    d = {k: v for k, v in cfg["design"].items() if k != "binarize"}
    try:
        return DesignConfig(**d, bootstrap=BootstrapConfig(**cfg["bootstrap"]))
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"design/bootstrap: {exc}") from None


# ---------------------------------------------------------------------------
# run bookkeeping
# ---------------------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects timings and outputs and writes the manifest."""

    def __init__(self, command: str, cfg: dict, inputs: dict[str, Path], threads: int):
        self.command = command
        self.cfg = cfg
        self.threads = threads
        self.out = Path(cfg["output"]["dir"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs = {k: _sha256_file(p) for k, p in inputs.items()}
        self.timings: dict[str, float] = {}
        self.files: list[str] = []
        echo = {"command": command, "config": cfg, "inputs": self.inputs, "version": __version__}
        echo["config"] = {**cfg, "output": {}}
        self.hash = hashlib.sha256(json.dumps(clean_json(echo), sort_keys=True).encode()).hexdigest()

    @property
    def header(self) -> str:
        return f"manifest_sha256={self.hash}"

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        yield
        self.timings[name] = time.perf_counter() - t0

    def tsv(self, name: str, df: pd.DataFrame):
        write_tsv(df, self.out / name, self.header)
        self.files.append(name)

    def json(self, name: str, obj: Any):
        text = json.dumps(clean_json({"manifest_sha256": self.hash, **obj}), indent=2, sort_keys=False)
        (self.out / name).write_text(text + "\n", encoding="utf-8")
        self.files.append(name)

    def finish(self):
        manifest = {
            "manifest_sha256": self.hash,
            "command": self.command,
            "config": self.cfg,
            "inputs": self.inputs,
            "seed": self.cfg.get("bootstrap", {}).get("seed"),
            "software": {"gtdid": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "pandas": pd.__version__, "python": sys.version.split()[0]},
            "threads": self.threads,
            "timings_seconds": self.timings,
            "outputs": {f: _sha256_file(self.out / f) for f in self.files},
        }
        (self.out / "manifest.json").write_text(json.dumps(clean_json(manifest), indent=2) + "\n", encoding="utf-8")


def _load_panel(cfg: dict):
    data = cfg["data"]
    if not data.get("path"):
        raise CliError(EXIT_CONFIG, "data.path is required")
    path = Path(data["path"])
    if not path.exists():
        raise CliError(EXIT_DATA, f"data file not found: {path}")
    schema = dict(data.get("schema") or {})
    covs = list(cfg["design"]["covariate_names"])
    if covs and not schema.get("covariates"):
        schema["covariates"] = covs
    ds = aggregate_cells(load_csv(path, schema, data.get("never_sentinel", "")))
    if cfg["design"]["conditional"] and covs and cfg["design"].get("binarize", True):
        ds = binarize_covariates(ds, covs)
    return ds, path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    cfg = load_config(args.config, args)
    dcfg = design_config(cfg)
    ds, path = _load_panel(cfg)
    run = Run("estimate", cfg, {"data": path}, args.threads)
    with run.stage("validate"):
        summary = validate_design(ds, dcfg)
    with run.stage("att_gt"):
        table = att_gt_all(ds, dcfg, threads=args.threads, summary=summary)
    with run.stage("aggregate"):
        group = aggregate_group(table, drop_empty=True)
        overall = aggregate_overall(table, group)
        event = aggregate_event(table)
    with run.stage("bootstrap"):
        results = {k: bootstrap_bands(a, dcfg.bootstrap, threads=args.threads)
                   for k, a in (("overall", overall), ("group", group), ("event", event))}
    run.tsv("att_gt.tsv", table.to_frame())
    run.json("att_gt.json", table.to_dict())
    for k, a in results.items():
        run.tsv(f"{k}.tsv", a.to_frame())
    run.json("aggregates.json", {k: a.to_dict(include_influence=True) for k, a in results.items()})
    run.json("design_summary.json", summary.to_dict())
    run.finish()
    print(f"overall ATT {results['overall'].estimate[0]:.6g} (se {results['overall'].se[0]:.3g}); wrote {run.out}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = load_config(args.config, args)
    ds, path = _load_panel(cfg)
    run = Run("diagnose", cfg, {"data": path}, args.threads)
    with run.stage("twfe"):
        twfe = twfe_estimate(ds)
        report = twfe_weights(ds, bins=int(cfg["diagnostics"]["bins"]))
    with run.stage("bacon"):
        try:
            bacon = bacon_decompose(ds).to_dict()
        except DataError as exc:
            bacon = {"skipped": f"{type(exc).__name__}: {exc}"}
            print(f"warning: Bacon decomposition skipped ({exc})", file=sys.stderr)
    run.json("twfe.json", {**twfe.to_dict(), "weights": report.to_dict()})
    run.tsv("twfe_weights.tsv", report.cells)
    run.tsv("weight_histogram.tsv", report.histogram)
    run.json("bacon.json", bacon)
    run.finish()
    print(f"TWFE {twfe.coefficient:.6g} (se {twfe.clustered_se:.3g}); negative share {report.negative_share_weighted:.3f}")
    return EXIT_OK


def cmd_impute(args) -> int:
    cfg = load_config(args.config, args)
    dcfg = design_config(cfg)
    ds, path = _load_panel(cfg)
    run = Run("impute", cfg, {"data": path}, args.threads)
    icfg = cfg["imputation"]
    with run.stage("impute"):
        res = impute_att(ds, cfg=dcfg, n_boot=int(icfg["n_boot"]), seed=dcfg.bootstrap.seed, threads=args.threads)
    placebo = None
    if icfg.get("placebos", True):
        with run.stage("placebos"):
            try:
                placebo = pretrend_placebos(ds, dcfg, n_boot=int(icfg["n_boot"]), seed=dcfg.bootstrap.seed,
                                            threads=args.threads)
            except DIDError as exc:
                print(f"warning: placebos skipped ({exc})", file=sys.stderr)
    run.tsv("imputation_overall.tsv", res.overall.to_frame())
    run.tsv("imputation_group.tsv", res.by_group.to_frame())
    run.tsv("imputation_event.tsv", res.event.to_frame())
    run.tsv("imputation_cells.tsv", res.cells)
    out = {k: getattr(res, k).to_dict() for k in ("overall", "by_group", "event")}
    if placebo is not None:
        run.tsv("placebos.tsv", placebo.to_frame())
        out["placebos"] = placebo.to_dict()
    out["fixed_effects"] = {"normalization": res.fe.normalization, "residual_norm": res.fe.residual_norm,
                            "n_fit_cells": res.fe.n_fit_cells, "period_effects": res.fe.period_effects}
    run.json("imputation.json", {"estimator": "imputation", **out})
    run.finish()
    print(f"imputation ATT {res.att:.6g} (se {res.se:.3g}); wrote {run.out}")
    return EXIT_OK


_KIND_FILES = {"overall": "overall", "by_group": "group", "by_event": "event"}


def _load_run(run_dir: str) -> dict[str, AggregationResult]:
    path = Path(run_dir) / "aggregates.json"
    if not path.exists():
        raise CliError(EXIT_INCOMPATIBLE, f"{run_dir} has no aggregates.json influence store")
    d = _read_json(path, "influence store")
    try:
        return {k: AggregationResult.from_dict(d[k]) for k in ("overall", "group", "event")}
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_INCOMPATIBLE, f"{path} is not a complete influence store: {exc}") from None


def cmd_contrast(args) -> int:
    cfg = load_config(args.config, args)
    boot = design_config(cfg).bootstrap
    a, b = _load_run(args.run_a), _load_run(args.run_b)
    for k in a:
        ea, eb = a[k].meta.get("window"), b[k].meta.get("window")
        if ea != eb:
            raise CliError(EXIT_INCOMPATIBLE, f"event windows differ: {ea} vs {eb}")
    inputs = {"run_a": Path(args.run_a) / "aggregates.json", "run_b": Path(args.run_b) / "aggregates.json"}
    run = Run("contrast", cfg, inputs, args.threads)
    out = {}
    with run.stage("contrast"):
        for k in ("overall", "group", "event"):
            try:
                ddd = contrast_ddd(a[k], b[k], shared_clusters=not args.independent)
            except LabelMismatch as exc:
                raise CliError(EXIT_INCOMPATIBLE, f"{k}: {exc}") from None
            ddd = bootstrap_bands(ddd, boot, threads=args.threads)
            run.tsv(f"ddd_{k}.tsv", ddd.to_frame())
            out[k] = ddd.to_dict()
    run.json("ddd.json", out)
    run.finish()
    print(f"DDD overall {out['overall']['estimates'][0]['estimate']:.6g}; wrote {run.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec_path = Path(args.config)
    raw = _read_json(spec_path, "spec")
    try:
        spec = DgpSpec.from_dict(raw)
    except (InvalidSpec, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"invalid spec: {exc}") from None
    seed = 0 if args.seed is None else args.seed
    cfg = {"spec": spec.to_dict(), "seed": seed, "output": {"dir": args.out or "sim"}}
    run = Run("simulate", cfg, {"spec": spec_path}, args.threads)
    with run.stage("generate"):
        ds, truth = generate(spec, seed)
    ds.to_csv(run.out / "panel.csv", never_sentinel=args.never_sentinel)
    run.files.append("panel.csv")
    run.json("truth.json", truth.to_dict())
    run.finish()
    print(f"simulated {ds.n_units} units x {ds.periods.size} periods; wrote {run.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gtdid", description="Staggered-adoption difference-in-differences.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON config file")
        sp.add_argument("--seed", type=int, help="bootstrap / simulation seed")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        sp.add_argument("--out", help="output directory")

    def design(sp):
        sp.add_argument("--control", choices=["never", "notyet", "both"], help="control group")
        sp.add_argument("--conditional", action="store_true", help="regression adjustment on covariates")
        sp.add_argument("--draws", type=int, help="bootstrap draws")

    for name, fn, helptext in (
        ("estimate", cmd_estimate, "group-time ATT, aggregates and bands"),
        ("diagnose", cmd_diagnose, "TWFE coefficient, implicit weights, Bacon decomposition"),
        ("impute", cmd_impute, "imputation estimator and pre-trend placebos"),
    ):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        design(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("contrast", help="triple difference between two estimate runs")
    sp.add_argument("run_a")
    sp.add_argument("run_b")
    sp.add_argument("--independent", action="store_true", help="treat the runs as independent samples")
    common(sp, config_required=False)
    sp.add_argument("--draws", type=int, help="bootstrap draws")
    sp.set_defaults(func=cmd_contrast)

    sp = sub.add_parser("simulate", help="generate a synthetic panel and its truth table")
    common(sp)
    sp.add_argument("--never-sentinel", default="", help="first_treat string written for never-treated units")
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InvalidSpec as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DIDError as exc:
        print(f"estimation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
