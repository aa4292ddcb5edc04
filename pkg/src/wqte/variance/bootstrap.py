"""Pairs bootstrap and gradient bootstrap for the IPW-WQTE estimator.

A with-replacement resample is represented by its multiplicity vector
(how often each original record was drawn).  Every estimator in this package
is a sum over records, so refitting on the resample equals refitting on the
original records with those counts as frequency weights.  This lets all
replicates share one sort of the outcomes.

Each replicate ``b`` draws from its own generator seeded by
``(seed, stream, b)``; a degenerate replicate is redrawn from the same
generator.  Results therefore depend only on ``(data, seed, B)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from ..core import DEFAULT_GRID, Dataset, EstimatorVariant, GSpec, QuantileGrid, check_dataset
from ..errors import ConfigurationError, DegenerateResampleError, ParameterError
from ..estimator import (
    ArmScan,
    NuisanceConfig,
    Nuisances,
    WqteFit,
    estimate_wqte,
    inverse_propensity_weight,
)
from ..models import (
    LogisticModel,
    StratumModel,
    clip_probability,
    fit_logistic_batch,
    stratum_counts,
)
from .result import InferenceResult

PAIRS_STREAM = 0
GRADIENT_STREAM = 1
CHUNK = 64


def replicate_rng(seed: int, stream: int, b: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream), int(b)])


def draw_counts(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)


def gradient_multipliers(u: np.ndarray, taus) -> np.ndarray:
    """``xi = tau - 1{U <= tau}`` for uniforms ``u``; mean 0, variance ``tau (1 - tau)``."""
    taus = np.asarray(taus, dtype=float)
    return taus - (np.asarray(u)[..., None] <= taus).astype(float)


class _Refitter:
    """Refit a variant's nuisance models under many frequency-weight vectors at once."""

    def __init__(self, d: Dataset, variant: EstimatorVariant, g: GSpec, config: NuisanceConfig, nuisances: Nuisances):
        self.d = d
        self.variant = variant
        self.g = g
        self.config = config
        self.nuisances = nuisances
        self.obs = d.observed
        self.ds = (d.s == 1) & (d.r == 0)
        e = nuisances.e
        # known models (variant III's propensity included) stay fixed
        self.refit_e = variant is not EstimatorVariant.DS_KNOWN_E and getattr(e, "estimated", True)
        if self.refit_e:
            self.Xe = e.design.matrix(d)
            self.e_start = e.coefficients
        else:
            self.e_fixed = e.predict(d)
        self.eta = nuisances.eta if variant.uses_double_sampling else None
        if self.eta is not None and isinstance(self.eta, LogisticModel):
            self.Xeta = self.eta.design.matrix(d)
        if self.eta is not None and isinstance(self.eta, StratumModel):
            self.codes = self.eta.stratifier.codes(d)
        self.pi = nuisances.pi if variant is EstimatorVariant.MAR else None
        if self.pi is not None and getattr(self.pi, "estimated", True):
            self.Xpi = self.pi.design.matrix(d)

    def omega(self, counts: np.ndarray, need_all: bool):
        """Weights on the ORIGINAL records from nuisances refitted under ``counts``.

        ``need_all`` demands valid probabilities for every record that carries
        an outcome (gradient bootstrap); otherwise only for records drawn at
        least once (pairs bootstrap).  Returns ``(omega, ok)``.
        """
        d, cfg = self.d, self.config
        B = counts.shape[0]
        ok = np.ones(B, dtype=bool)
        if self.refit_e:
            coef, good = fit_logistic_batch(self.Xe, d.z, counts, self.e_start, cfg.score_tol, cfg.max_iter)
            ok &= good
            e = clip_probability(expit(coef @ self.Xe.T))
        else:
            e = np.broadcast_to(self.e_fixed, (B, d.n))
        gval = np.ones_like(e) if self.g.kind == "population" else e
        w_g = inverse_propensity_weight(gval, e, d.z)
        needed = np.broadcast_to(self.obs, (B, d.n)) if need_all else (counts > 0) & self.obs

        r = d.r.astype(float)
        if self.variant in (EstimatorVariant.FULL, EstimatorVariant.COMPLETE_CASE):
            factor = np.broadcast_to(r, (B, d.n))
        elif self.variant is EstimatorVariant.MAR and not getattr(self.pi, "estimated", True):
            factor = r / np.broadcast_to(self.pi.predict(d), (B, d.n))
        elif self.variant is EstimatorVariant.MAR:
            coef, good = fit_logistic_batch(self.Xpi, d.r, counts, self.pi.coefficients, cfg.score_tol, cfg.max_iter)
            ok &= good
            pi = clip_probability(expit(coef @ self.Xpi.T))
            factor = r / pi
        elif self.eta is None or not np.any(self.ds):
            factor = np.broadcast_to(r, (B, d.n))
        else:
            if isinstance(self.eta, StratumModel):
                if not self.eta.estimated:
                    eta = np.broadcast_to(self.eta.predict(d), (B, d.n))
                else:
                    sel, elig = stratum_counts(self.eta.stratifier, d, counts)
                    with np.errstate(invalid="ignore", divide="ignore"):
                        prop = np.where(elig > 0, sel / np.where(elig > 0, elig, 1.0), np.nan)
                    # a stratum without positivity only matters if a record below needs its eta
                    bad = (prop <= 0) | ((prop >= 1) & (not self.eta.allow_census))
                    prop = np.where(bad, np.nan, prop)
                    eta = prop[:, self.codes]
                    eta = np.where(eta >= 1.0, 1.0, clip_probability(eta))
            elif not getattr(self.eta, "estimated", True):
                eta = np.broadcast_to(self.eta.predict(d), (B, d.n))
            else:
                elig = counts * (d.r == 0)
                coef, good = fit_logistic_batch(self.Xeta, d.s, elig, self.eta.coefficients, cfg.score_tol, cfg.max_iter)
                ok &= good
                eta = clip_probability(expit(coef @ self.Xeta.T))
            need_eta = needed & self.ds
            ok &= ~np.any(need_eta & ~np.isfinite(eta), axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                factor = r + np.where(need_eta, 1.0 / np.where(need_eta, eta, 1.0), 0.0)
        omega = np.where(self.obs, factor * w_g, 0.0)
        omega = np.where(needed | ~self.obs, omega, 0.0)
        ok &= np.all(np.isfinite(omega), axis=1)
        return omega, ok


@dataclass(frozen=True, eq=False)
class BootstrapReplicates:
    """Replicate estimates, shape (B, K) each."""

    method: str
    grid: QuantileGrid
    estimate: np.ndarray
    beta0_estimate: np.ndarray
    beta: np.ndarray
    beta0: np.ndarray
    seed: int
    redraws: int

    @property
    def B(self) -> int:
        return self.beta.shape[0]

    @property
    def se(self) -> np.ndarray:
        return self.beta.std(axis=0, ddof=1)


def _prepare(d, variant, g, grid, config, true_e, fit):
    variant = EstimatorVariant.parse(variant)
    if fit is None:
        fit = estimate_wqte(d, variant, g, grid=grid, config=config, true_e=true_e)
    else:
        variant, g, grid = fit.variant, fit.g, fit.grid
    return fit, variant, g, grid


def _run_chunks(B, seed, stream, compute, max_redraws):
    """Drive per-replicate generators through ``compute`` until every replicate is valid."""
    if B < 2:
        raise ParameterError("B must be at least 2")
    results = [None] * B
    redraws = 0
    for lo in range(0, B, CHUNK):
        idx = list(range(lo, min(B, lo + CHUNK)))
        rngs = {b: replicate_rng(seed, stream, b) for b in idx}
        pending = idx
        while pending:
            out, ok = compute([rngs[b] for b in pending])
            nxt = []
            for j, b in enumerate(pending):
                if ok[j]:
                    results[b] = tuple(o[j] for o in out)
                else:
                    nxt.append(b)
            redraws += len(nxt)
            if redraws > max_redraws:
                raise DegenerateResampleError(
                    f"more than {max_redraws} degenerate bootstrap replicates; "
                    "the data cannot support resampling (empty arm, one-class labels or positivity failure)"
                )
            pending = nxt
    return [np.array([r[k] for r in results]) for k in range(len(results[0]))], redraws


def pairs_bootstrap(
    d: Dataset,
    variant="IV",
    g: GSpec = GSpec(),
    grid: QuantileGrid = DEFAULT_GRID,
    B: int = 200,
    seed: int = 0,
    config: NuisanceConfig = NuisanceConfig(),
    true_e=None,
    fit: Optional[WqteFit] = None,
) -> BootstrapReplicates:
    """Nonparametric bootstrap: resample records, refit every nuisance and the WQTE.

    Replicates whose resample has an empty arm or one-class nuisance labels
    (or violates double-sampling positivity) are redrawn, up to ``100 * B``
    redraws in total.
    """
    check_dataset(d)
    fit, variant, g, grid = _prepare(d, variant, g, grid, config, true_e, fit)
    refit = _Refitter(d, variant, g, config, fit.nuisances)
    scans = [ArmScan.build(d, 0), ArmScan.build(d, 1)]
    taus = grid.array

    def compute(rngs):
        counts = np.stack([draw_counts(rng, d.n) for rng in rngs])
        om, ok = refit.omega(counts, need_all=False)
        w = om * counts
        thetas = []
        for scan in scans:
            tot = w[:, scan.index].sum(axis=1)
            ok &= tot > 0
            vals, _, valid = scan.quantiles(w, tot[:, None] * taus[None, :])
            ok &= valid.all(axis=1)
            thetas.append(vals)
        return (thetas[0], thetas[1] - thetas[0]), ok

    (b0, b), redraws = _run_chunks(B, seed, PAIRS_STREAM, compute, 100 * B)
    return BootstrapReplicates("pairs-bootstrap", grid, fit.beta.copy(), fit.beta0.copy(), b, b0, seed, redraws)


def tilted_quantiles(scan: ArmScan, omega: np.ndarray, xi: np.ndarray, taus):
    """Solve the gradient-perturbed problem for one arm.

    With tilt ``c(tau) = sum_{arm} omega_i xi_i(tau)`` the subgradient
    condition becomes ``cumulative omega >= tau * W_arm + c(tau)``.

    Parameters
    ----------
    omega : ndarray (B, n)
    xi : ndarray (B, n, K)
    """
    taus = np.asarray(taus, dtype=float)
    w_arm = omega[:, scan.index]
    tot = w_arm.sum(axis=1)
    tilt = np.einsum("bn,bnk->bk", w_arm, xi[:, scan.index, :])
    target = tot[:, None] * taus[None, :] + tilt
    vals, _, valid = scan.quantiles(omega, target)
    return vals, valid & (target > 0) & (target < tot[:, None])


def gradient_bootstrap(
    d: Dataset,
    variant="IV",
    g: GSpec = GSpec(),
    grid: QuantileGrid = DEFAULT_GRID,
    B: int = 200,
    seed: int = 0,
    config: NuisanceConfig = NuisanceConfig(),
    true_e=None,
    fit: Optional[WqteFit] = None,
) -> BootstrapReplicates:
    """Gradient bootstrap replicates of the WQTE process.

    Per replicate: nuisance parameters are refitted on a with-replacement
    resample; fresh ``U_i ~ Uniform(0, 1)`` are drawn for the original
    records; the original data, weighted by the refitted nuisances, are then
    solved under the linear tilt ``xi_i = tau - 1{U_i <= tau}``.  A tilted
    target mass outside ``(0, arm total)`` flags the replicate for redraw.
    """
    check_dataset(d)
    fit, variant, g, grid = _prepare(d, variant, g, grid, config, true_e, fit)
    if variant not in (EstimatorVariant.DS_KNOWN_E, EstimatorVariant.DS_ESTIMATED):
        raise ConfigurationError("the gradient bootstrap is defined for variants III and IV")
    refit = _Refitter(d, variant, g, config, fit.nuisances)
    scans = [ArmScan.build(d, 0), ArmScan.build(d, 1)]
    taus = grid.array

    def compute(rngs):
        counts, us = [], []
        for rng in rngs:
            counts.append(draw_counts(rng, d.n))
            us.append(rng.random(d.n))
        counts, u = np.stack(counts), np.stack(us)
        om, ok = refit.omega(counts, need_all=True)
        xi = gradient_multipliers(u, taus)
        thetas = []
        for scan in scans:
            vals, valid = tilted_quantiles(scan, om, xi, taus)
            ok &= valid.all(axis=1)
            thetas.append(vals)
        return (thetas[0], thetas[1] - thetas[0]), ok

    (b0, b), redraws = _run_chunks(B, seed, GRADIENT_STREAM, compute, 100 * B)
    return BootstrapReplicates("gradient-bootstrap", grid, fit.beta.copy(), fit.beta0.copy(), b, b0, seed, redraws)


def percentile_inference(reps: BootstrapReplicates, alpha: float = 0.05) -> InferenceResult:
    """Replicate standard deviations and percentile intervals."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError("alpha must lie in (0, 1)")
    lo, hi = np.quantile(reps.beta, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    return InferenceResult(
        grid=reps.grid,
        estimate=reps.estimate,
        se=reps.se,
        ci_lower=lo,
        ci_upper=hi,
        method=reps.method,
        alpha=alpha,
        replicates=reps.B,
        seed=reps.seed,
        redraws=reps.redraws,
    )
