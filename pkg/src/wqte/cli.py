"""Command-line front end.

Commands
--------
``estimate``  point estimates with pointwise intervals
``band``      gradient-bootstrap uniform band (variants III and IV)
``simulate``  run a simulation scenario and write the report
``oracle``    Monte Carlo true effects for a scenario
``validate``  check a CSV dataset and report positivity diagnostics

Results go to ``--output`` as JSON plus a sibling CSV; without ``--output``
the JSON is printed.  Errors are printed to stderr as a JSON object and the
process exits with status 1.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .core import DEFAULT_GRID, Dataset, EstimatorVariant, GSpec, QuantileGrid, dumps, validate_dataset
from .errors import ConfigurationError, DataValidationError, IngestError, MappingError, ParameterError, WqteError
from .estimator import NuisanceConfig, estimate_wqte, fit_nuisances
from .models import LogisticDesign, LogisticModel, Stratifier, positivity_diagnostics
from .simulation import SimScenario, oracle_qte, run_experiment
from .variance import asymptotic_inference, band_inference, gradient_bootstrap, pairs_bootstrap, percentile_inference

COMMANDS = ("estimate", "band", "simulate", "oracle", "validate")
STOCHASTIC = ("band", "simulate", "oracle")
CORE_COLUMNS = ("y", "z", "r", "s")


# ---------------------------------------------------------------- ingestion


def _parse_mapping(text: Optional[str]) -> dict:
    if not text:
        return {}
    out = {}
    for item in text.split(","):
        if "=" not in item:
            raise MappingError(f"--map entries look like canonical=header, got {item!r}")
        canon, header = (part.strip() for part in item.split("=", 1))
        if canon not in CORE_COLUMNS and not _is_covariate(canon):
            raise MappingError(f"unknown canonical column {canon!r}; use y, z, r, s or x1..xp", column=canon)
        out[canon] = header
    return out


def _is_covariate(name: str) -> bool:
    return name.startswith("x") and name[1:].isdigit() and int(name[1:]) >= 1


def _indicator(cell: str, row: int, column: str) -> int:
    try:
        v = float(cell)
    except ValueError:
        raise IngestError(f"row {row}, column {column}: malformed number {cell!r}", row=row, column=column) from None
    if v not in (0.0, 1.0):
        raise IngestError(f"row {row}, column {column}: expected 0 or 1, got {cell!r}", row=row, column=column)
    return int(v)


def _number(cell: str, row: int, column: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise IngestError(f"row {row}, column {column}: malformed number {cell!r}", row=row, column=column) from None
    if not math.isfinite(v):
        raise IngestError(f"row {row}, column {column}: value must be finite, got {cell!r}", row=row, column=column)
    return v


def ingest_csv(path, mapping: Optional[dict] = None) -> Dataset:
    """Read a CSV with header ``y,z,r,s,x1..xp`` into a validated :class:`Dataset`.

    ``mapping`` renames canonical columns to the file's headers, e.g.
    ``{"y": "bmi_change", "z": "procedure"}``.  An empty ``y`` cell marks a
    missing outcome and must occur exactly when ``r + s = 0``.  Row numbers
    in errors count data rows from 1.
    """
    mapping = dict(mapping or {})
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError("empty file: header row missing") from None
        rows = list(reader)
    reverse = {}
    for canon, name in mapping.items():
        if name not in header:
            raise MappingError(f"mapped column {name!r} (for {canon}) is not in the header", column=name)
        reverse[name] = canon
    canon_of = {}
    for j, name in enumerate(header):
        if name in reverse:
            canon = reverse[name]
        elif name in mapping:
            raise MappingError(f"column {name!r} clashes with the mapping {name}={mapping[name]}", column=name)
        else:
            canon = name
        if canon not in CORE_COLUMNS and not _is_covariate(canon):
            raise MappingError(f"unknown column {name!r}", column=name)
        if canon in canon_of.values():
            raise MappingError(f"column {canon} appears twice", column=name)
        canon_of[j] = canon
    present = set(canon_of.values())
    for need in CORE_COLUMNS:
        if need not in present:
            raise MappingError(f"required column {need!r} is missing", column=need)
    cov = sorted((c for c in present if _is_covariate(c)), key=lambda c: int(c[1:]))
    if [int(c[1:]) for c in cov] != list(range(1, len(cov) + 1)):
        raise MappingError(f"covariate columns must be x1..xp without gaps, got {cov}")
    col = {c: j for j, c in canon_of.items()}
    y, z, r, s, x = [], [], [], [], []
    for i, cells in enumerate(rows, start=1):
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != len(header):
            raise IngestError(f"row {i}: expected {len(header)} cells, got {len(cells)}", row=i)
        zi = _indicator(cells[col["z"]].strip(), i, header[col["z"]])
        ri = _indicator(cells[col["r"]].strip(), i, header[col["r"]])
        si = _indicator(cells[col["s"]].strip(), i, header[col["s"]])
        ycell = cells[col["y"]].strip()
        if ri + si == 0 and ycell:
            raise IngestError(f"row {i}: y is present but r+s=0", row=i, column=header[col["y"]])
        if ri + si >= 1 and not ycell:
            raise IngestError(f"row {i}: y is empty but r+s={ri + si}", row=i, column=header[col["y"]])
        y.append(_number(ycell, i, header[col["y"]]) if ycell else None)
        z.append(zi)
        r.append(ri)
        s.append(si)
        x.append([_number(cells[col[c]].strip(), i, header[col[c]]) for c in cov])
    if not y:
        raise IngestError("no data rows")
    names = [header[col[c]] for c in cov]
    d = Dataset(y, z, np.array(x, dtype=float).reshape(len(y), len(cov)), r, s, column_names=names)
    violations = validate_dataset(d)
    if violations:
        raise DataValidationError(violations)
    return d


def write_csv(d: Dataset, path) -> None:
    """Write ``d`` in the canonical ``y,z,r,s,x1..xp`` layout (round-trips exactly)."""
    y = d.outcome_values()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "z", "r", "s"] + [f"x{j + 1}" for j in range(d.p)])
        for i in range(d.n):
            ycell = repr(float(y[i])) if d.y_present[i] else ""
            w.writerow([ycell, int(d.z[i]), int(d.r[i]), int(d.s[i])] + [repr(float(v)) for v in d.x[i]])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


# ------------------------------------------------------------------ config


def parse_taus(text: Optional[str]) -> QuantileGrid:
    """``"0.1,0.5,0.9"`` or ``"start:stop:step"``; ``None`` gives the default grid."""
    if text is None:
        return DEFAULT_GRID
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            return QuantileGrid.arange(start, stop, step)
        return QuantileGrid(tuple(float(v) for v in text.split(",") if v.strip()))
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse --taus {text!r}: {exc}") from None


def _parse_floats(text: Optional[str], flag: str):
    if text is None:
        return None
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(f"{flag} expects comma-separated numbers, got {text!r}") from None


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings of one CLI invocation."""

    command: str
    input: Optional[str] = None
    output: Optional[str] = None
    variant: str = "IV"
    g: str = "population"
    grid: QuantileGrid = DEFAULT_GRID
    B: int = 200
    alpha: float = 0.05
    seed: Optional[int] = None
    threads: int = 1
    scenario: dict = field(default_factory=dict)
    true_e: Optional[tuple] = None
    mapping: dict = field(default_factory=dict)
    se: Optional[str] = None
    eta_design: str = "logistic"
    strata: tuple = ()
    allow_census: bool = False
    covariates: Optional[tuple] = None
    bandwidth: str = "silverman"
    draws: Optional[int] = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigurationError(f"unknown command {self.command!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError("alpha must lie in (0, 1)")
        if self.B < 2:
            raise ParameterError("B must be at least 2")
        if self.threads < 1:
            raise ParameterError("threads must be at least 1")
        if self.command in ("estimate", "band", "validate") and not self.input:
            raise ConfigurationError(f"{self.command} needs --input")
        if self.seed is None and (self.command in STOCHASTIC or self.resolved_se() == "pairs"):
            if not (self.command == "simulate" and "seed" in self.scenario):
                raise ConfigurationError(f"{self.command} is stochastic and needs --seed")
        EstimatorVariant.parse(self.variant)
        GSpec(self.g)
        if self.eta_design not in ("logistic", "saturated"):
            raise ConfigurationError("eta design must be 'logistic' or 'saturated'")

    def resolved_se(self) -> Optional[str]:
        if self.command != "estimate":
            return None
        if self.se:
            return self.se
        return "asymptotic" if EstimatorVariant.parse(self.variant).uses_double_sampling else "pairs"

    def describe(self) -> dict:
        out = {
            "command": self.command,
            "variant": EstimatorVariant.parse(self.variant).value,
            "g": self.g,
            "taus": list(self.grid.taus),
            "alpha": self.alpha,
            "seed": self.seed,
        }
        if self.command in ("estimate", "band", "validate"):
            out.update(
                input=self.input,
                map=self.mapping,
                true_e=None if self.true_e is None else list(self.true_e),
                eta_design=self.eta_design,
                strata=[list(c) for c in self.strata],
                allow_census=self.allow_census,
                covariates=None if self.covariates is None else list(self.covariates),
            )
        if self.command == "estimate":
            out.update(se=self.resolved_se(), bandwidth=self.bandwidth, B=self.B)
        if self.command == "band":
            out["B"] = self.B
        if self.command in ("simulate", "oracle"):
            out["scenario"] = self.scenario
            out["draws"] = self.draws
        return out


def _resolve_columns(names, d: Dataset) -> tuple:
    idx = []
    for name in names:
        if name in d.column_names:
            idx.append(d.column_names.index(name))
        elif _is_covariate(name) and int(name[1:]) <= d.p:
            idx.append(int(name[1:]) - 1)
        else:
            raise MappingError(f"unknown covariate {name!r}", column=name)
    return tuple(idx)


def nuisance_config(cfg: RunConfig, d: Dataset) -> NuisanceConfig:
    cov = None if cfg.covariates is None else _resolve_columns(cfg.covariates, d)
    strat = None
    if cfg.strata:
        cols = _resolve_columns([c for c, _ in cfg.strata], d)
        strat = Stratifier(tuple((j, float(t)) for j, (_, t) in zip(cols, cfg.strata)))
    if cfg.eta_design == "saturated" and strat is None:
        strat = Stratifier(())
    return NuisanceConfig(
        propensity_design=LogisticDesign(False, cov),
        eta_design=cfg.eta_design,
        eta_logistic_design=LogisticDesign(True, cov),
        stratifier=strat,
        allow_census=cfg.allow_census,
        observance_design=LogisticDesign(True, cov),
    )


def known_propensity(cfg: RunConfig, d: Dataset):
    if cfg.true_e is None:
        return None
    design = LogisticDesign(False, None if cfg.covariates is None else _resolve_columns(cfg.covariates, d))
    k = design.matrix(d).shape[1]
    if len(cfg.true_e) != k:
        raise ConfigurationError(f"--true-e needs {k} coefficients (intercept first), got {len(cfg.true_e)}")
    return LogisticModel.known(cfg.true_e, design)


def load_scenario(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read scenario file {path!r}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError("scenario file must hold a JSON object")
    return data


def build_config(args: argparse.Namespace) -> RunConfig:
    scenario = load_scenario(getattr(args, "scenario", None))
    for key in ("n", "replications", "rho"):
        v = getattr(args, key, None)
        if v is not None:
            scenario[key] = v
    if getattr(args, "preset", None):
        scenario["preset"] = args.preset
    strata = ()
    if getattr(args, "strata", None):
        pairs = []
        for item in args.strata.split(","):
            name, _, thr = item.partition(":")
            try:
                pairs.append((name.strip(), float(thr)))
            except ValueError:
                raise ConfigurationError(f"--strata entries look like column:threshold, got {item!r}") from None
        strata = tuple(pairs)
    covs = getattr(args, "covariates", None)
    return RunConfig(
        command=args.command,
        input=getattr(args, "input", None),
        output=args.output,
        variant=getattr(args, "variant", "IV"),
        g=getattr(args, "g", "population"),
        grid=parse_taus(args.taus),
        B=args.B,
        alpha=args.alpha,
        seed=args.seed,
        threads=args.threads,
        scenario=scenario,
        true_e=_parse_floats(getattr(args, "true_e", None), "--true-e"),
        mapping=_parse_mapping(getattr(args, "map", None)),
        se=getattr(args, "se", None),
        eta_design=getattr(args, "eta_design", "logistic"),
        strata=strata,
        allow_census=getattr(args, "allow_census", False),
        covariates=None if not covs else tuple(c.strip() for c in covs.split(",")),
        bandwidth=getattr(args, "bandwidth", "silverman"),
        draws=getattr(args, "draws", None),
    )


# ----------------------------------------------------------------- commands


def _provenance(cfg: RunConfig, digest: Optional[str]) -> dict:
    return {
        "tool": {"name": "wqte", "version": __version__},
        "config": cfg.describe(),
        "seed": cfg.seed,
        "input_sha256": digest,
    }


def _table(rows: list, columns: list, prov: dict) -> str:
    buf = io.StringIO()
    buf.write("# " + json.dumps(prov, sort_keys=True, separators=(",", ":")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow(["" if row.get(c) is None else _cell(row.get(c)) for c in columns])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(v)
    return v


def _load(cfg: RunConfig):
    if not Path(cfg.input).is_file():
        raise IngestError(f"input file {cfg.input!r} does not exist")
    d = ingest_csv(cfg.input, cfg.mapping)
    return d, file_digest(cfg.input)


def cmd_estimate(cfg: RunConfig):
    d, digest = _load(cfg)
    ncfg = nuisance_config(cfg, d)
    true_e = known_propensity(cfg, d)
    fit = estimate_wqte(d, cfg.variant, GSpec(cfg.g), grid=cfg.grid, config=ncfg, true_e=true_e)
    se_kind = cfg.resolved_se()
    inf = None
    if se_kind == "asymptotic":
        bw = cfg.bandwidth if cfg.bandwidth == "silverman" else float(cfg.bandwidth)
        inf = asymptotic_inference(fit, cfg.alpha, bandwidth=bw)
    elif se_kind == "pairs":
        reps = pairs_bootstrap(d, fit=fit, B=cfg.B, seed=cfg.seed, config=ncfg, true_e=true_e)
        inf = percentile_inference(reps, cfg.alpha)
    rows = []
    for k, tau in enumerate(cfg.grid.taus):
        row = {"tau": tau, "beta0": float(fit.beta0[k]), "beta": float(fit.beta[k])}
        if inf is not None:
            row.update(se=float(inf.se[k]), ci_lower=float(inf.ci_lower[k]), ci_upper=float(inf.ci_upper[k]))
        rows.append(row)
    prov = _provenance(cfg, digest)
    result = {**prov, "n": d.n, "method": None if inf is None else inf.method, "results": rows}
    return result, rows, ["tau", "beta0", "beta", "se", "ci_lower", "ci_upper"]


def cmd_band(cfg: RunConfig):
    d, digest = _load(cfg)
    ncfg = nuisance_config(cfg, d)
    true_e = known_propensity(cfg, d)
    fit = estimate_wqte(d, cfg.variant, GSpec(cfg.g), grid=cfg.grid, config=ncfg, true_e=true_e)
    reps = gradient_bootstrap(d, fit=fit, B=cfg.B, seed=cfg.seed, config=ncfg, true_e=true_e)
    inf = band_inference(reps, cfg.alpha)
    rows = [
        {
            "tau": tau,
            "beta0": float(fit.beta0[k]),
            "beta": float(fit.beta[k]),
            "se": float(inf.se[k]),
            "ci_lower": float(inf.ci_lower[k]),
            "ci_upper": float(inf.ci_upper[k]),
            "band_lower": float(inf.band_lower[k]),
            "band_upper": float(inf.band_upper[k]),
        }
        for k, tau in enumerate(cfg.grid.taus)
    ]
    prov = _provenance(cfg, digest)
    result = {
        **prov,
        "n": d.n,
        "method": inf.method,
        "critical_value": inf.critical_value,
        "redraws": inf.redraws,
        "rejects_no_effect": inf.rejects_no_effect(),
        "results": rows,
    }
    return result, rows, ["tau", "beta0", "beta", "se", "ci_lower", "ci_upper", "band_lower", "band_upper"]


def _scenario(cfg: RunConfig, **extra) -> SimScenario:
    data = dict(cfg.scenario)
    if cfg.seed is not None:
        data["seed"] = cfg.seed
    data.setdefault("grid", list(cfg.grid.taus))
    data.setdefault("g", cfg.g)
    data.setdefault("alpha", cfg.alpha)
    data.setdefault("B", cfg.B)
    data.update(extra)
    try:
        return SimScenario.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid scenario: {exc}") from None


def cmd_simulate(cfg: RunConfig):
    sc = _scenario(cfg)
    oracle = oracle_qte(sc, M=cfg.draws or sc.oracle_draws, seed=sc.seed)
    report = run_experiment(sc, threads=cfg.threads, oracle=oracle)
    prov = _provenance(cfg, None)
    body = report.to_dict()
    rows = []
    for name, block in body["estimators"].items():
        for k, tau in enumerate(body["taus"]):
            rows.append(
                {
                    "estimator": name,
                    "tau": tau,
                    "relative_bias_x100": block["relative_bias_x100"][k],
                    "empirical_se": block["empirical_se"][k],
                }
            )
    for name, block in body["inference"].items():
        for row in rows:
            if row["estimator"] == name:
                k = body["taus"].index(row["tau"])
                row.update(
                    mean_asymptotic_se=block["mean_asymptotic_se"][k],
                    asymptotic_coverage=block["asymptotic_coverage"][k],
                    mean_pairs_bootstrap_se=block["mean_pairs_bootstrap_se"][k],
                    pairs_bootstrap_coverage=block["pairs_bootstrap_coverage"][k],
                    uniform_band_coverage=block["uniform_band_coverage"],
                )
    cols = [
        "estimator",
        "tau",
        "relative_bias_x100",
        "empirical_se",
        "mean_asymptotic_se",
        "asymptotic_coverage",
        "mean_pairs_bootstrap_se",
        "pairs_bootstrap_coverage",
        "uniform_band_coverage",
    ]
    prov["config"]["scenario"] = sc.to_dict()
    return {**prov, "report": body}, rows, cols


def cmd_oracle(cfg: RunConfig):
    sc = _scenario(cfg)
    o = oracle_qte(sc, M=cfg.draws or sc.oracle_draws, seed=sc.seed)
    rows = [
        {"tau": tau, "beta0": float(o.beta0[k]), "q1": float(o.q1[k]), "beta": float(o.beta[k])}
        for k, tau in enumerate(o.grid.taus)
    ]
    prov = _provenance(cfg, None)
    prov["config"]["scenario"] = sc.to_dict()
    return {**prov, "oracle": o.as_dict(), "results": rows}, rows, ["tau", "beta0", "q1", "beta"]


def cmd_validate(cfg: RunConfig):
    """Ingest, then report per-model positivity; invalid data is an error."""
    d, digest = _load(cfg)
    ncfg = nuisance_config(cfg, d)
    variant = EstimatorVariant.parse(cfg.variant)
    report = {
        "n": d.n,
        "p": d.p,
        "covariates": list(d.column_names),
        "counts": {
            "treated": int(d.z.sum()),
            "observed_initially": int(d.r.sum()),
            "double_sampled": int(d.s.sum()),
            "missing": int(np.sum((d.r == 0) & (d.s == 0))),
        },
        "violations": [],
        "positivity": [],
        "nuisance_errors": [],
    }
    try:
        nuis = fit_nuisances(d, variant, ncfg, true_e=known_propensity(cfg, d))
        for model in (nuis.e, nuis.eta, nuis.pi):
            if model is not None:
                report["positivity"].append(positivity_diagnostics(model, d).as_dict())
    except WqteError as exc:
        report["nuisance_errors"].append({"type": type(exc).__name__, "message": str(exc)})
    rows = [
        {"target": p["target"], "checked": p["checked"], "below": p["below"], "above": p["above"], "min": p["min"], "max": p["max"]}
        for p in report["positivity"]
    ]
    prov = _provenance(cfg, digest)
    return {**prov, "valid": not report["nuisance_errors"], "report": report}, rows, ["target", "checked", "below", "above", "min", "max"]


HANDLERS = {
    "estimate": cmd_estimate,
    "band": cmd_band,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "validate": cmd_validate,
}


def run(cfg: RunConfig) -> tuple:
    """Execute ``cfg`` and write its artifacts. Returns ``(exit status, result)``."""
    result, rows, columns = HANDLERS[cfg.command](cfg)
    text = dumps(result)
    if cfg.output:
        out = Path(cfg.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        json_path = out if out.suffix == ".json" else out.with_name(out.name + ".json")
        json_path.write_text(text)
        csv_path = json_path.with_suffix(".csv")
        prov = {k: result[k] for k in ("tool", "config", "seed", "input_sha256")}
        csv_path.write_text(_table(rows, columns, prov))
    else:
        sys.stdout.write(text)
    return (1 if result.get("valid") is False else 0), result


def error_object(exc: BaseException) -> dict:
    err = {"type": type(exc).__name__, "code": getattr(exc, "code", "error"), "message": str(exc)}
    for attr in ("row", "column", "violations"):
        if getattr(exc, attr, None) is not None:
            err[attr] = getattr(exc, attr)
    return {"error": err}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", help="result path; JSON is written there and CSV next to it")
    common.add_argument("--taus", help="comma list or start:stop:step (default 0.1:0.9:0.1)")
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument("--seed", type=int)
    common.add_argument("--B", type=int, default=200, help="bootstrap replicates")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--g", choices=("population", "treated"), default="population")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", required=True, help="CSV with header y,z,r,s,x1..xp")
    data.add_argument("--map", help="renames such as y=bmi,z=procedure,x1=age")
    data.add_argument("--variant", default="IV", help="I, II, III, IV or V")
    data.add_argument("--true-e", dest="true_e", help="known propensity coefficients, intercept first (variant III)")
    data.add_argument("--eta-design", dest="eta_design", choices=("logistic", "saturated"), default="logistic")
    data.add_argument("--strata", help="dichotomized covariates for the saturated design, e.g. x1:0.5,x2:1")
    data.add_argument("--allow-census", dest="allow_census", action="store_true")
    data.add_argument("--covariates", help="covariates entering the nuisance models (default all)")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--scenario", help="JSON scenario file")
    sim.add_argument("--preset", choices=("homogeneous", "heterogeneous"))
    sim.add_argument("--n", type=int)
    sim.add_argument("--rho", type=float)
    sim.add_argument("--draws", type=int, help="oracle Monte Carlo draws")

    p = argparse.ArgumentParser(prog="wqte", description="Weighted quantile treatment effects with double sampling.")
    p.add_argument("--version", action="version", version=f"wqte {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    est = sub.add_parser("estimate", parents=[common, data], help="point estimates and pointwise intervals")
    est.add_argument("--se", choices=("asymptotic", "pairs", "none"))
    est.add_argument("--bandwidth", default="silverman")
    sub.add_parser("band", parents=[common, data], help="uniform band by gradient bootstrap")
    s = sub.add_parser("simulate", parents=[common, sim], help="run a simulation scenario")
    s.add_argument("--replications", type=int)
    sub.add_parser("oracle", parents=[common, sim], help="Monte Carlo true effects")
    sub.add_parser("validate", parents=[common, data], help="validate a dataset")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cfg = build_config(args)
            status, _ = run(cfg)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return status
    except (WqteError, OSError) as exc:
        sys.stderr.write(dumps(error_object(exc)))
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
