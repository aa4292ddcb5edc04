"""IPW estimation of weighted quantile treatment effects.

For a binary treatment the weighted estimating equation

    P_n( omega * (1, Z)' * [1{Y < b0 + b Z} - tau] ) = 0

separates by arm after the change of variables ``theta0 = b0``,
``theta1 = b0 + b``: each ``theta_z`` is an omega-weighted tau-quantile of the
observed outcomes in arm ``z``.  This module computes those quantiles exactly;
the five estimator variants differ only in the unit weights ``omega``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    DEFAULT_GRID,
    Dataset,
    EstimatorVariant,
    GSpec,
    QuantileGrid,
    check_dataset,
)
from .errors import ConfigurationError, EmptyArmError, ParameterError, PositivityError
from .models import (
    MAX_ITER,
    SCORE_TOL,
    LogisticDesign,
    Stratifier,
    clip_probability,
    fit_double_sampling,
    fit_mar_observance,
    fit_propensity,
)

# mass comparisons absorb this much relative rounding so that e.g. 0.3 * 10
# still reaches a cumulative weight of exactly 3
MASS_RTOL = 1e-12


@dataclass(frozen=True)
class NuisanceConfig:
    """How nuisance models are specified and fitted (reused by the bootstrap)."""

    propensity_design: LogisticDesign = LogisticDesign(include_z=False)
    eta_design: str = "logistic"
    eta_logistic_design: LogisticDesign = LogisticDesign(include_z=True)
    stratifier: Optional[Stratifier] = None
    allow_census: bool = False
    observance_design: LogisticDesign = LogisticDesign(include_z=True)
    score_tol: float = SCORE_TOL
    max_iter: int = MAX_ITER

    def describe(self) -> dict:
        return {
            "propensity_design": self.propensity_design.describe(),
            "eta_design": self.eta_design,
            "eta_logistic_design": self.eta_logistic_design.describe(),
            "strata_cutpoints": None if self.stratifier is None else [list(c) for c in self.stratifier.cutpoints],
            "allow_census": self.allow_census,
            "observance_design": self.observance_design.describe(),
            "score_tol": self.score_tol,
            "max_iter": self.max_iter,
        }


@dataclass(frozen=True)
class Nuisances:
    """Fitted or known nuisance models; unused slots are ``None``."""

    e: object = None
    eta: object = None
    pi: object = None


def fit_nuisances(d: Dataset, variant, config: NuisanceConfig = NuisanceConfig(), true_e=None) -> Nuisances:
    """Fit the nuisance models a variant needs.

    Variant III uses ``true_e`` as the propensity score and never fits one.
    The double-sampling model is skipped when no outcome is missing, since
    it then enters no weight.
    """
    variant = EstimatorVariant.parse(variant)
    if variant is EstimatorVariant.DS_KNOWN_E:
        if true_e is None:
            raise ConfigurationError("variant III requires the true propensity score (true_e)")
        e = true_e
    else:
        e = fit_propensity(d, config.score_tol, config.max_iter, design=config.propensity_design)
    eta = pi = None
    if variant.uses_double_sampling and np.any(d.r == 0):
        eta = fit_double_sampling(
            d,
            design=config.eta_design,
            score_tol=config.score_tol,
            max_iter=config.max_iter,
            logistic_design=config.eta_logistic_design,
            stratifier=config.stratifier,
            allow_census=config.allow_census,
        )
    if variant is EstimatorVariant.MAR:
        pi = fit_mar_observance(d, config.score_tol, config.max_iter, design=config.observance_design)
    return Nuisances(e=e, eta=eta, pi=pi)


@dataclass(frozen=True, eq=False)
class UnitWeights:
    """Per-record weights ``omega = observance_factor * W^g`` and their ingredients."""

    omega: np.ndarray
    g_value: np.ndarray
    e_value: np.ndarray
    eta_or_pi_value: Optional[np.ndarray]
    observance_factor: np.ndarray
    w_g: np.ndarray

    def scaled(self, c: float) -> "UnitWeights":
        return UnitWeights(
            self.omega * c, self.g_value, self.e_value, self.eta_or_pi_value, self.observance_factor * c, self.w_g
        )


def _raw_and_clipped(model, d):
    raw = np.asarray(model.predict_raw(d), dtype=float)
    return raw, clip_probability(raw)


def inverse_propensity_weight(g: np.ndarray, e: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``W^g = g z / e + g (1 - z) / (1 - e)``."""
    return g * z / e + g * (1 - z) / (1.0 - e)


def observance_factor(variant, d: Dataset, eta_or_pi: Optional[np.ndarray]) -> np.ndarray:
    variant = EstimatorVariant.parse(variant)
    r = d.r.astype(float)
    if variant in (EstimatorVariant.FULL, EstimatorVariant.COMPLETE_CASE):
        return r
    if variant is EstimatorVariant.MAR:
        return np.where(d.r == 1, 1.0 / eta_or_pi, 0.0)
    ds = (d.s == 1) & (d.r == 0)
    if not np.any(ds):
        return r
    return r + np.where(ds, 1.0 / np.where(ds, eta_or_pi, 1.0), 0.0)


def compute_weights(d: Dataset, variant, g: GSpec, e_model, eta_or_pi_model=None) -> UnitWeights:
    """Unit weights for one estimator variant.

    Raises
    ------
    ConfigurationError
        A nuisance model required by the variant is missing.
    PositivityError
        A probability the weights divide by is exactly 0 or 1 before
        clipping (or undefined for a record that needs it).
    """
    variant = EstimatorVariant.parse(variant)
    if e_model is None:
        raise ConfigurationError(f"variant {variant.short} needs a propensity model")
    e_raw, e = _raw_and_clipped(e_model, d)
    if np.any(~np.isfinite(e_raw)) or np.any((e_raw <= 0.0) | (e_raw >= 1.0)):
        raise PositivityError("propensity score is exactly 0 or 1 (or undefined) for some record")
    gv = g.evaluate(e)
    w_g = inverse_propensity_weight(gv, e, d.z)

    second = None
    if variant.uses_double_sampling:
        need = (d.s == 1) & (d.r == 0)
        if np.any(need):
            if eta_or_pi_model is None:
                raise ConfigurationError(f"variant {variant.short} needs a double-sampling model")
            raw, second = _raw_and_clipped(eta_or_pi_model, d)
            bad = need & ~(np.isfinite(raw) & (raw > 0.0) & (raw < 1.0))
            if getattr(eta_or_pi_model, "allow_census", False):
                bad &= ~(raw == 1.0)
                second = np.where(raw == 1.0, 1.0, second)
            if np.any(bad):
                raise PositivityError("double-sampling probability is 0, 1 or undefined for a double-sampled record")
    elif variant is EstimatorVariant.MAR:
        if eta_or_pi_model is None:
            raise ConfigurationError("variant V needs an observance model")
        raw, second = _raw_and_clipped(eta_or_pi_model, d)
        need = d.r == 1
        if np.any(need & ~(np.isfinite(raw) & (raw > 0.0) & (raw < 1.0))):
            raise PositivityError("observance probability is 0, 1 or undefined for an observed record")
    obs = observance_factor(variant, d, second)
    omega = obs * w_g
    omega[~d.observed] = 0.0
    return UnitWeights(omega=omega, g_value=gv, e_value=e, eta_or_pi_value=second, observance_factor=obs, w_g=w_g)


def weighted_quantile(values, weights, target_mass: float) -> float:
    """Smallest value ``v`` with ``sum(weights[values <= v]) >= target_mass``.

    Tied values are pooled before the cumulative scan, so the result does not
    depend on record order.

    >>> weighted_quantile([1, 2, 3], [1, 1, 1], 1.5)
    2.0
    >>> weighted_quantile([1, 2, 3], [1, 1, 1], 1.0)
    1.0
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape or values.ndim != 1:
        raise ValueError("values and weights must be 1-D arrays of equal length")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    total = float(weights.sum())
    if not total > 0:
        raise EmptyArmError("all weights are zero")
    if not (0.0 < target_mass <= total * (1 + MASS_RTOL)):
        raise ParameterError(f"target mass {target_mass} outside (0, {total}]")
    uniq, inv = np.unique(values, return_inverse=True)
    pooled = np.bincount(inv, weights=weights, minlength=uniq.size)
    cum = np.cumsum(pooled)
    k = int(np.searchsorted(cum, target_mass - MASS_RTOL * total, side="left"))
    return float(uniq[min(k, uniq.size - 1)])


@dataclass(frozen=True, eq=False)
class ArmScan:
    """Sorted distinct outcomes of one arm and the record-to-value mapping.

    Lets many weight vectors (bootstrap replicates) share one sort.
    """

    index: np.ndarray  # records of this arm with an observed outcome
    values: np.ndarray  # distinct sorted outcomes
    order: np.ndarray  # permutation of ``index`` sorting the outcomes
    starts: np.ndarray  # first position of each distinct value in sorted order

    @classmethod
    def build(cls, d: Dataset, arm: int) -> "ArmScan":
        index = np.flatnonzero(d.observed & (d.z == arm))
        y = d.outcome_values()[index]
        order = np.argsort(y, kind="stable")
        ys = y[order]
        if ys.size:
            starts = np.flatnonzero(np.r_[True, ys[1:] != ys[:-1]])
        else:
            starts = np.zeros(0, dtype=np.int64)
        return cls(index=index, values=ys[starts], order=order, starts=starts)

    def pooled(self, omega: np.ndarray) -> np.ndarray:
        """Pool weights at tied values; ``omega`` has shape (..., n) over all records."""
        w = np.asarray(omega)[..., self.index][..., self.order]
        if self.starts.size == 0:
            return w[..., :0]
        return np.add.reduceat(w, self.starts, axis=-1)

    def quantiles(self, omega: np.ndarray, targets: np.ndarray):
        """Left-continuous weighted quantiles.

        ``omega`` has shape (B, n) and ``targets`` shape (B, K) or (K,).
        Returns values (B, K), the index of the solution among distinct values,
        and a validity mask (target inside ``(0, arm total]``).
        """
        pooled = self.pooled(np.atleast_2d(omega))
        cum = np.cumsum(pooled, axis=-1)
        total = cum[:, -1:] if cum.shape[-1] else np.zeros((cum.shape[0], 1))
        targets = np.broadcast_to(np.atleast_2d(targets), (cum.shape[0], np.atleast_2d(targets).shape[-1]))
        thresh = targets - MASS_RTOL * total
        # first distinct value whose cumulative weight reaches the target
        k = np.sum(cum[:, None, :] < thresh[:, :, None], axis=-1)
        valid = (targets > 0) & (targets <= total * (1 + MASS_RTOL)) & (total > 0)
        k = np.minimum(k, max(self.values.size - 1, 0))
        vals = self.values[k] if self.values.size else np.full(k.shape, np.nan)
        return vals, k, valid


@dataclass(frozen=True, eq=False)
class WqteFit:
    """Point estimates on a quantile grid plus what is needed to audit them.

    ``residuals[k]`` holds the per-arm estimating-equation values at the
    solution, ``sum_{arm z} omega (1{y < theta_z} - tau) / sum(omega)`` for
    ``z = 0, 1`` (the equation written in ``(theta0, theta1)`` coordinates).
    """

    grid: QuantileGrid
    beta0: np.ndarray
    beta: np.ndarray
    residuals: np.ndarray
    weights: UnitWeights
    variant: EstimatorVariant
    g: GSpec
    nuisances: Nuisances
    data: Dataset = field(repr=False)
    # solved (theta0, theta1) per tau; beta0 + beta can be one ulp off theta1
    quantiles: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def q1(self) -> np.ndarray:
        """Estimated quantiles of the weighted treated counterfactual distribution."""
        if self.quantiles is not None:
            return self.quantiles[:, 1]
        return self.beta0 + self.beta

    def as_rows(self) -> list:
        return [
            {"tau": t, "beta0": float(b0), "beta": float(b)}
            for t, b0, b in zip(self.grid.taus, self.beta0, self.beta)
        ]


def residual_at(d: Dataset, omega: np.ndarray, tau: float, beta0: float, beta: float) -> np.ndarray:
    """Per-arm estimating-equation values at arbitrary ``(beta0, beta)``, scaled by total omega."""
    return _arm_residuals(d, omega, tau, beta0, beta0 + beta)


def _arm_residuals(d, omega, tau, theta0, theta1):
    y = d.outcome_values()
    obs = d.observed
    total = float(omega.sum())
    out = np.empty(2)
    for arm, theta in ((0, theta0), (1, theta1)):
        m = obs & (d.z == arm)
        out[arm] = np.sum(omega[m] * ((y[m] < theta).astype(float) - tau)) / total
    return out


def estimating_equation_residual(fit: WqteFit, tau: float) -> np.ndarray:
    """Evaluate the empirical estimating function at the fitted solution for ``tau``."""
    k = fit.grid.index(tau)
    return _arm_residuals(fit.data, fit.weights.omega, fit.grid.taus[k], fit.beta0[k], fit.q1[k])


def solve_arms(d: Dataset, omega: np.ndarray, grid: QuantileGrid):
    """Per-arm weighted quantiles for every tau in ``grid``; returns (theta0, theta1)."""
    taus = grid.array
    out = []
    for arm in (0, 1):
        scan = ArmScan.build(d, arm)
        w_arm = omega[scan.index]
        total = float(w_arm.sum())
        if not total > 0:
            raise EmptyArmError(f"treatment arm z={arm} has zero total weight")
        vals, _, _ = scan.quantiles(omega[None, :], (taus * total)[None, :])
        out.append(vals[0])
    return out[0], out[1]


def estimate_wqte(
    d: Dataset,
    variant="IV",
    g: GSpec = GSpec(),
    nuisances: Optional[Nuisances] = None,
    grid: QuantileGrid = DEFAULT_GRID,
    config: NuisanceConfig = NuisanceConfig(),
    true_e=None,
) -> WqteFit:
    """Estimate ``beta0(tau) = Q_{Y(0)}(tau)`` and the WQTE ``beta(tau)`` on a grid.

    Parameters
    ----------
    d : Dataset
        Observed data; validated first.
    variant : EstimatorVariant or tag
        ``I`` full data, ``II`` complete case, ``III`` double sampling with
        known propensity, ``IV`` double sampling with estimated propensity,
        ``V`` MAR observance weighting.
    g : GSpec
        Target population weight.
    nuisances : Nuisances, optional
        Pre-fitted models; fitted from ``d`` with ``config`` when omitted.
    true_e : model, optional
        Known propensity score for variant III.
    """
    variant = EstimatorVariant.parse(variant)
    check_dataset(d)
    if not isinstance(grid, QuantileGrid):
        grid = QuantileGrid(tuple(grid))
    if variant is EstimatorVariant.FULL and np.any(d.r != 1):
        raise ConfigurationError("variant I needs the full data (r=1 for every record)")
    if nuisances is None:
        nuisances = fit_nuisances(d, variant, config, true_e=true_e)
    second = nuisances.pi if variant is EstimatorVariant.MAR else nuisances.eta
    weights = compute_weights(d, variant, g, nuisances.e, second)
    theta0, theta1 = solve_arms(d, weights.omega, grid)
    fit = WqteFit(
        grid=grid,
        beta0=theta0,
        beta=theta1 - theta0,
        residuals=np.zeros((len(grid), 2)),
        weights=weights,
        variant=variant,
        g=g,
        nuisances=nuisances,
        data=d,
        quantiles=np.column_stack([theta0, theta1]),
    )
    res = np.array([_arm_residuals(d, weights.omega, t, a, b) for t, a, b in zip(grid.taus, theta0, theta1)])
    object.__setattr__(fit, "residuals", res)
    return fit


def residual_bound(fit: WqteFit) -> np.ndarray:
    """Largest single weight in each arm divided by total weight."""
    om = fit.weights.omega
    d = fit.data
    total = om.sum()
    return np.array([om[(d.z == arm) & d.observed].max() / total for arm in (0, 1)])
