"""Finite-sample study of the double-sampling IPW-WQTE estimators.

Data generation::

    X1 ~ U(0, 1), X2 ~ U(0, 2)
    Z | X ~ Bernoulli(expit(0.5 - 0.5 X1 - 0.5 X2))
    Y = 1 + Z + X1 + X2 + (1 + rho Z) eps,   eps ~ Pareto(shape, scale)

Outcomes are then made missing not at random through ``pr(R=1 | Y)`` and a
stratified simple random sample of the missing units is double-sampled
within the eight ``(Z, X1 >= 0.5, X2 >= 1)`` cells.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from . import __version__
from .core import DEFAULT_GRID, Dataset, EstimatorVariant, GSpec, QuantileGrid, to_jsonable
from .errors import DomainError, StratumShortfallWarning, WqteError
from .estimator import NuisanceConfig, estimate_wqte
from .models import LogisticDesign, LogisticModel, Stratifier
from .variance import (
    asymptotic_inference,
    band_inference,
    gradient_bootstrap,
    pairs_bootstrap,
    percentile_inference,
)

PROPENSITY_COEF = (0.5, -0.5, -0.5)
STRATIFIER = Stratifier(cutpoints=((0, 0.5), (1, 1.0)))
MISSINGNESS = ("homogeneous", "heterogeneous")
VARIANTS = tuple(EstimatorVariant)
DS_VARIANTS = (EstimatorVariant.DS_KNOWN_E, EstimatorVariant.DS_ESTIMATED)

# stream tags for per-replicate generators
_GENERATE, _MISSING, _DOUBLE, _BOOT = 0, 1, 2, 3


@dataclass(frozen=True)
class SimScenario:
    """Generative and analysis settings for one simulation scenario.

    ``strata_sizes`` fixes the number double-sampled in each of the eight
    strata (ordered by stratum code ``4 z + 2 [x1 >= .5] + [x2 >= 1]``).
    When it is ``None`` each stratum samples ``ds_fraction`` of its eligible
    records (rounded, at least one and, where possible, not all).
    """

    n: int = 2000
    rho: float = 0.0
    pareto_shape: float = 5.0
    pareto_scale: float = 1.0
    pareto_shifted: bool = False
    missingness: str = "homogeneous"
    strata_sizes: Optional[tuple] = None
    ds_fraction: float = 0.22
    grid: QuantileGrid = DEFAULT_GRID
    replications: int = 500
    seed: int = 20240601
    B: int = 200
    alpha: float = 0.05
    g: str = "population"
    pairs_bootstrap: bool = True
    bands: bool = True
    oracle_draws: int = 10_000_000

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("n must be positive")
        if not self.pareto_shape > 2:
            raise ValueError("pareto_shape must exceed 2")
        if not self.pareto_scale > 0:
            raise ValueError("pareto_scale must be positive")
        if self.missingness not in MISSINGNESS:
            raise ValueError(f"missingness must be one of {MISSINGNESS}")
        if self.strata_sizes is not None:
            sizes = tuple(int(v) for v in self.strata_sizes)
            if len(sizes) != 8 or any(v < 0 for v in sizes):
                raise ValueError("strata_sizes needs 8 nonnegative integers")
            object.__setattr__(self, "strata_sizes", sizes)
        if not 0.0 < self.ds_fraction < 1.0:
            raise ValueError("ds_fraction must lie in (0, 1)")
        if not isinstance(self.grid, QuantileGrid):
            object.__setattr__(self, "grid", QuantileGrid(tuple(self.grid)))
        GSpec(self.g)

    @classmethod
    def homogeneous(cls, **kw) -> "SimScenario":
        return cls(**{"rho": 0.0, "missingness": "homogeneous", **kw})

    @classmethod
    def heterogeneous(cls, **kw) -> "SimScenario":
        return cls(**{"rho": 1.5, "missingness": "heterogeneous", **kw})

    @classmethod
    def paper_scale(cls, which="homogeneous", **kw) -> "SimScenario":
        """The long-running configuration: 10,000 datasets of 10,000 units."""
        base = cls.homogeneous if which == "homogeneous" else cls.heterogeneous
        return base(**{"n": 10_000, "replications": 10_000, **kw})

    def to_dict(self) -> dict:
        out = asdict(self)
        out["grid"] = list(self.grid.taus)
        out["strata_sizes"] = None if self.strata_sizes is None else list(self.strata_sizes)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SimScenario":
        data = dict(data)
        preset = data.pop("preset", None)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
        if "grid" in data and not isinstance(data["grid"], QuantileGrid):
            g = data["grid"]
            if isinstance(g, dict):
                data["grid"] = QuantileGrid.arange(g["start"], g["stop"], g["step"])
            else:
                data["grid"] = QuantileGrid(tuple(g))
        if preset == "heterogeneous":
            return cls.heterogeneous(**data)
        if preset in (None, "homogeneous"):
            return cls.homogeneous(**data) if preset else cls(**data)
        raise ValueError(f"unknown preset {preset!r}")


def replicate_rng(scenario: SimScenario, replicate_index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(scenario.seed), int(replicate_index), int(stream)])


def pareto_errors(rng: np.random.Generator, size, shape: float, scale: float, shifted: bool) -> np.ndarray:
    """Pareto draws by inversion, ``scale * U^(-1/shape)``; ``shifted`` moves the minimum to 0."""
    eps = scale * rng.random(size) ** (-1.0 / shape)
    return eps - scale if shifted else eps


def true_propensity(x: np.ndarray) -> np.ndarray:
    b0, b1, b2 = PROPENSITY_COEF
    return expit(b0 + b1 * x[:, 0] + b2 * x[:, 1])


def true_propensity_model() -> LogisticModel:
    """The generating propensity score as a known logistic model (for variant III)."""
    return LogisticModel.known(PROPENSITY_COEF, LogisticDesign(include_z=False))


def outcome(z, x, eps, rho):
    return 1.0 + z + x[:, 0] + x[:, 1] + (1.0 + rho * z) * eps


def generate_complete(scenario: SimScenario, replicate_index: int = 0) -> Dataset:
    """Draw one complete dataset (every outcome observed, ``r = 1``)."""
    rng = replicate_rng(scenario, replicate_index, _GENERATE)
    n = scenario.n
    x = np.column_stack([rng.uniform(0.0, 1.0, n), rng.uniform(0.0, 2.0, n)])
    z = (rng.random(n) < true_propensity(x)).astype(np.int64)
    eps = pareto_errors(rng, n, scenario.pareto_shape, scenario.pareto_scale, scenario.pareto_shifted)
    y = outcome(z, x, eps, scenario.rho)
    return Dataset(y, z, x, np.ones(n, dtype=np.int64), np.zeros(n, dtype=np.int64))


def observance_probability(y, missingness: str) -> np.ndarray:
    """``pr(R=1 | Y)`` for the two missingness mechanisms."""
    y = np.asarray(y, dtype=float)
    if missingness == "homogeneous":
        return expit(1.0 + 4.3 * y - y**2)
    if np.any(y < 0):
        raise DomainError("the heterogeneous observance model needs y >= 0 (it uses y ** 1.8)")
    return expit(1.0 + 3.8 * y - y**1.8)


def impose_missingness(d: Dataset, scenario: SimScenario, replicate_index: int = 0, rng=None) -> Dataset:
    """Draw ``R ~ Bernoulli(pi(Y))`` and mask the outcomes with ``R = 0``."""
    rng = rng or replicate_rng(scenario, replicate_index, _MISSING)
    y = d.outcome_values()
    pi = observance_probability(y, scenario.missingness)
    r = (rng.random(d.n) < pi).astype(np.int64)
    return d.replace(y=np.ma.MaskedArray(y, mask=r == 0), r=r, s=np.zeros(d.n, dtype=np.int64))


def proportional_sizes(eligible, fraction: float) -> np.ndarray:
    """Per-stratum sample sizes ``round(fraction * eligible)`` kept inside ``[1, eligible - 1]``.

    A stratum with a single eligible record is sampled completely.
    """
    m = np.asarray(eligible, dtype=np.int64)
    size = np.rint(fraction * m).astype(np.int64)
    size = np.clip(size, 1, np.maximum(m - 1, 1))
    return np.where(m == 0, 0, size)


@dataclass(frozen=True)
class DoubleSamplingLog:
    requested: tuple
    eligible: tuple
    selected: tuple
    shortfall: tuple

    @property
    def total(self) -> int:
        return int(sum(self.selected))


def double_sample_stratified(
    d: Dataset,
    strata_sizes,
    rng: np.random.Generator,
    y_complete,
    stratifier: Stratifier = STRATIFIER,
    fraction: Optional[float] = None,
):
    """Select a simple random sample without replacement of ``r = 0`` records per stratum.

    Selected records get ``s = 1`` and their outcome revealed from
    ``y_complete``.  A stratum with fewer eligible records than requested is
    taken whole and the shortfall is reported (and warned about).

    Returns
    -------
    (Dataset, DoubleSamplingLog)
    """
    codes = stratifier.codes(d)
    elig_mask = d.r == 0
    eligible = np.bincount(codes[elig_mask], minlength=stratifier.size)
    if strata_sizes is None:
        requested = proportional_sizes(eligible, fraction)
    else:
        requested = np.asarray(strata_sizes, dtype=np.int64)
    s = np.zeros(d.n, dtype=np.int64)
    selected = np.zeros(stratifier.size, dtype=np.int64)
    for c in range(stratifier.size):
        pool = np.flatnonzero(elig_mask & (codes == c))
        k = int(min(requested[c], pool.size))
        if k:
            s[rng.choice(pool, size=k, replace=False)] = 1
        selected[c] = k
    shortfall = np.maximum(requested - eligible, 0)
    if np.any(shortfall > 0):
        warnings.warn(
            f"double-sampling shortfall per stratum: {shortfall.tolist()}", StratumShortfallWarning, stacklevel=2
        )
    y_complete = np.asarray(y_complete, dtype=float)
    present = (d.r == 1) | (s == 1)
    out = d.replace(y=np.ma.MaskedArray(y_complete, mask=~present), s=s)
    log = DoubleSamplingLog(
        tuple(int(v) for v in requested),
        tuple(int(v) for v in eligible),
        tuple(int(v) for v in selected),
        tuple(int(v) for v in shortfall),
    )
    return out, log


@dataclass(frozen=True)
class SimDraw:
    """One simulated replicate at every stage of the design."""

    complete: Dataset
    missing: Dataset
    observed: Dataset
    log: DoubleSamplingLog


def draw_replicate(scenario: SimScenario, replicate_index: int) -> SimDraw:
    complete = generate_complete(scenario, replicate_index)
    missing = impose_missingness(complete, scenario, replicate_index)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", StratumShortfallWarning)
        observed, log = double_sample_stratified(
            missing,
            scenario.strata_sizes,
            replicate_rng(scenario, replicate_index, _DOUBLE),
            complete.outcome_values(),
            fraction=scenario.ds_fraction,
        )
    return SimDraw(complete, missing, observed, log)


@dataclass(frozen=True, eq=False)
class OracleQTE:
    grid: QuantileGrid
    beta0: np.ndarray
    beta: np.ndarray
    draws: int
    seed: int
    g: str

    @property
    def q1(self):
        return self.beta0 + self.beta

    def as_dict(self) -> dict:
        return {
            "taus": list(self.grid.taus),
            "beta0": self.beta0,
            "beta": self.beta,
            "q1": self.q1,
            "draws": self.draws,
            "seed": self.seed,
            "g": self.g,
        }


def _weighted_quantiles_sorted(values, weights, taus):
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cum = np.cumsum(w)
    k = np.searchsorted(cum, np.asarray(taus) * cum[-1], side="left")
    return v[np.minimum(k, v.size - 1)]


def oracle_qte(scenario: SimScenario, grid: Optional[QuantileGrid] = None, M: Optional[int] = None, seed: int = 0, g: Optional[str] = None) -> OracleQTE:
    """Monte Carlo truth: quantiles of simulated potential outcomes ``Y(0)``, ``Y(1)``.

    Both potential outcomes share covariates and error draw, so with
    ``rho = 0`` the effect is exactly 1 at every level.
    """
    grid = grid or scenario.grid
    M = int(M or scenario.oracle_draws)
    g = g or scenario.g
    rng = np.random.default_rng([int(seed), 7919])
    x = np.column_stack([rng.uniform(0.0, 1.0, M), rng.uniform(0.0, 2.0, M)])
    eps = pareto_errors(rng, M, scenario.pareto_shape, scenario.pareto_scale, scenario.pareto_shifted)
    y0 = outcome(np.zeros(M), x, eps, scenario.rho)
    y1 = outcome(np.ones(M), x, eps, scenario.rho)
    taus = grid.array
    if g == "population":
        w = np.ones(M)
    else:
        w = true_propensity(x)
    del x, eps
    q0 = _weighted_quantiles_sorted(y0, w, taus)
    q1 = _weighted_quantiles_sorted(y1, w, taus)
    return OracleQTE(grid, q0, q1 - q0, M, seed, g)


def _nuisance_config() -> NuisanceConfig:
    return NuisanceConfig(eta_design="saturated", stratifier=STRATIFIER, allow_census=True)


def _run_replicate(args):
    scenario, index, truth = args
    K = len(scenario.grid)
    g = GSpec(scenario.g)
    cfg = _nuisance_config()
    draw = draw_replicate(scenario, index)
    rec = {
        "index": index,
        "estimate": np.full((5, K), np.nan),
        "failed": np.zeros(5, dtype=bool),
        "errors": [],
        "asy_se": np.full((2, K), np.nan),
        "asy_cover": np.full((2, K), np.nan),
        "pairs_se": np.full((2, K), np.nan),
        "pairs_cover": np.full((2, K), np.nan),
        "grad_se": np.full((2, K), np.nan),
        "band_cover": np.full(2, np.nan),
        "missing_rate": float(np.mean(draw.observed.r == 0)),
        "ds_fraction": draw.log.total / max(1, int(np.sum(draw.observed.r == 0))),
    }
    true_e = true_propensity_model()
    boot_seed = int(np.random.default_rng([scenario.seed, index, _BOOT]).integers(2**31))
    for j, variant in enumerate(VARIANTS):
        data = draw.complete if variant is EstimatorVariant.FULL else draw.observed
        try:
            fit = estimate_wqte(data, variant, g, grid=scenario.grid, config=cfg, true_e=true_e)
        except WqteError as exc:
            rec["failed"][j] = True
            rec["errors"].append(f"{variant.short}: {type(exc).__name__}: {exc}")
            continue
        rec["estimate"][j] = fit.beta
        if variant not in DS_VARIANTS:
            continue
        m = DS_VARIANTS.index(variant)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                inf = asymptotic_inference(fit, scenario.alpha)
            rec["asy_se"][m] = inf.se
            rec["asy_cover"][m] = inf.covers(truth)
        except WqteError as exc:
            rec["errors"].append(f"{variant.short} asymptotic: {type(exc).__name__}: {exc}")
        if scenario.pairs_bootstrap:
            try:
                reps = pairs_bootstrap(data, fit=fit, B=scenario.B, seed=boot_seed, config=cfg, true_e=true_e)
                inf = percentile_inference(reps, scenario.alpha)
                rec["pairs_se"][m] = inf.se
                rec["pairs_cover"][m] = inf.covers(truth)
            except WqteError as exc:
                rec["errors"].append(f"{variant.short} pairs: {type(exc).__name__}: {exc}")
        if scenario.bands:
            try:
                reps = gradient_bootstrap(data, fit=fit, B=scenario.B, seed=boot_seed, config=cfg, true_e=true_e)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    inf = band_inference(reps, scenario.alpha)
                rec["grad_se"][m] = inf.se
                rec["band_cover"][m] = float(inf.band_covers(truth))
            except WqteError as exc:
                rec["errors"].append(f"{variant.short} band: {type(exc).__name__}: {exc}")
    return rec


@dataclass(frozen=True, eq=False)
class SimReport:
    """Aggregated bias and coverage metrics over the replicates of one scenario.

    Per-estimator arrays have shape (5, K) in variant order I..V; the
    inference arrays have shape (2, K) for variants III and IV.
    """

    scenario: SimScenario
    oracle: OracleQTE
    replications: int
    relative_bias: np.ndarray
    empirical_se: np.ndarray
    failures: np.ndarray
    mean_asymptotic_se: np.ndarray
    asymptotic_coverage: np.ndarray
    mean_pairs_se: np.ndarray
    pairs_coverage: np.ndarray
    mean_gradient_se: np.ndarray
    band_coverage: np.ndarray
    inference_failures: int
    missing_rate: float
    ds_fraction: float
    errors: tuple = ()
    timing: float = field(default=0.0, compare=False)

    def to_dict(self, include_timing: bool = False) -> dict:
        taus = list(self.scenario.grid.taus)
        names = [v.value for v in VARIANTS]
        ds = [v.value for v in DS_VARIANTS]
        out = {
            "tool": {"name": "wqte", "version": __version__},
            "scenario": self.scenario.to_dict(),
            "oracle": self.oracle.as_dict(),
            "replications": self.replications,
            "taus": taus,
            "missing_rate": self.missing_rate,
            "double_sampled_fraction_of_missing": self.ds_fraction,
            "estimators": {
                names[j]: {
                    "relative_bias_x100": self.relative_bias[j],
                    "empirical_se": self.empirical_se[j],
                    "failures": int(self.failures[j]),
                }
                for j in range(len(names))
            },
            "inference": {
                ds[m]: {
                    "mean_asymptotic_se": self.mean_asymptotic_se[m],
                    "asymptotic_coverage": self.asymptotic_coverage[m],
                    "mean_pairs_bootstrap_se": self.mean_pairs_se[m],
                    "pairs_bootstrap_coverage": self.pairs_coverage[m],
                    "mean_gradient_bootstrap_se": self.mean_gradient_se[m],
                    "uniform_band_coverage": self.band_coverage[m],
                }
                for m in range(len(ds))
            },
            "inference_failures": self.inference_failures,
            "errors": list(self.errors),
        }
        if include_timing:
            out["timing_seconds"] = self.timing
        return to_jsonable(out)


def _nanmean(a, axis=0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(a, axis=axis)


def _nanstd(a, axis=0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanstd(a, axis=axis, ddof=1)


def aggregate(scenario: SimScenario, oracle: OracleQTE, records: list, timing: float = 0.0) -> SimReport:
    records = sorted(records, key=lambda r: r["index"])
    est = np.stack([r["estimate"] for r in records])  # (R, 5, K)
    truth = oracle.beta
    rel = 100.0 * (_nanmean(est) - truth[None, :]) / truth[None, :]
    errors = tuple(f"replicate {r['index']}: {e}" for r in records for e in r["errors"])
    return SimReport(
        scenario=scenario,
        oracle=oracle,
        replications=len(records),
        relative_bias=rel,
        empirical_se=_nanstd(est),
        failures=np.sum([r["failed"] for r in records], axis=0),
        mean_asymptotic_se=_nanmean(np.stack([r["asy_se"] for r in records])),
        asymptotic_coverage=_nanmean(np.stack([r["asy_cover"] for r in records])),
        mean_pairs_se=_nanmean(np.stack([r["pairs_se"] for r in records])),
        pairs_coverage=_nanmean(np.stack([r["pairs_cover"] for r in records])),
        mean_gradient_se=_nanmean(np.stack([r["grad_se"] for r in records])),
        band_coverage=_nanmean(np.stack([r["band_cover"] for r in records])),
        inference_failures=sum(len(r["errors"]) for r in records) - int(np.sum([r["failed"] for r in records])),
        missing_rate=float(np.mean([r["missing_rate"] for r in records])),
        ds_fraction=float(np.mean([r["ds_fraction"] for r in records])),
        errors=errors,
        timing=timing,
    )


def run_experiment(scenario: SimScenario, threads: int = 1, oracle: Optional[OracleQTE] = None, progress=None) -> SimReport:
    """Run every replicate of ``scenario`` and aggregate against the oracle truth.

    Replicates are independent and seeded by ``(scenario.seed, index)``, so
    the report does not depend on ``threads``.
    """
    start = time.perf_counter()
    if oracle is None:
        oracle = oracle_qte(scenario, seed=scenario.seed)
    truth = oracle.beta
    jobs = [(scenario, i, truth) for i in range(scenario.replications)]
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = []
            for rec in pool.map(_run_replicate, jobs, chunksize=max(1, len(jobs) // (4 * threads))):
                records.append(rec)
                if progress:
                    progress(len(records), len(jobs))
    else:
        records = []
        for job in jobs:
            records.append(_run_replicate(job))
            if progress:
                progress(len(records), len(jobs))
    return aggregate(scenario, oracle, records, timing=time.perf_counter() - start)
