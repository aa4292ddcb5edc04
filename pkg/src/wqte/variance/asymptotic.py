"""Plug-in asymptotic variance of the IPW-WQTE estimator.

The estimator admits the linear representation

    sqrt(n) (beta_hat - beta) = e2' Sigma^{-1} G_n(psi) + o_p(1),
    psi = Vk3 Vk1^{-1} phi_kappa + Vg3 Vg2^{-1} phi_gamma - phi_beta,

where ``Sigma = [[D1 + D0, D1], [D1, D1]]`` collects the g-weighted
counterfactual densities at the true quantiles, ``phi_kappa`` and
``phi_gamma`` are the logistic scores of the double-sampling and propensity
models, and ``Vk3``/``Vg3`` are derivatives of the mean estimating function
with respect to those nuisance parameters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import stats

from ..core import EstimatorVariant
from ..errors import ConfigurationError, ParameterError, SingularityError, UnstableDensityWarning
from ..estimator import WqteFit, weighted_quantile
from .result import InferenceResult

MIN_EFFECTIVE = 10


def effective_size(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.sum(w**2))


def silverman_bandwidth(values, weights) -> float:
    """Silverman's rule of thumb on weighted observations.

    ``0.9 * min(sd, IQR / 1.34) * n_eff ** (-1/5)`` with weighted moments,
    weighted quartiles and Kish's effective sample size.
    """
    y = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    keep = w > 0
    y, w = y[keep], w[keep]
    tot = w.sum()
    mu = np.sum(w * y) / tot
    sd = np.sqrt(np.sum(w * (y - mu) ** 2) / tot)
    iqr = weighted_quantile(y, w, 0.75 * tot) - weighted_quantile(y, w, 0.25 * tot)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return float(0.9 * spread * effective_size(w) ** (-0.2))


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Weighted densities ``D0(tau)``, ``D1(tau)`` at the fitted arm quantiles."""

    d0: np.ndarray
    d1: np.ndarray
    bandwidth: tuple
    effective_n: tuple
    warnings: tuple = ()


def estimate_densities(fit: WqteFit, bandwidth: Union[float, str] = "silverman") -> DensityEstimate:
    """Estimate ``D_z(tau) = E[g(X) f_{Y(z)|X}(theta_z(tau))]`` for both arms.

    The omega-weighted Gaussian kernel density of the observed outcomes in arm
    ``z`` is evaluated at the arm's fitted quantile and divided by ``n``, which
    puts it on the scale of the population expectation.
    """
    d = fit.data
    omega = fit.weights.omega
    y = d.outcome_values()
    n = d.n
    thetas = (fit.beta0, fit.q1)
    out, hs, neffs, notes = [], [], [], []
    for arm in (0, 1):
        m = d.observed & (d.z == arm) & (omega > 0)
        ya, wa = y[m], omega[m]
        neff = effective_size(wa)
        if isinstance(bandwidth, str):
            if bandwidth.lower() != "silverman":
                raise ParameterError(f"unknown bandwidth rule {bandwidth!r}")
            h = silverman_bandwidth(ya, wa)
        else:
            h = float(bandwidth)
        if not h > 0:
            raise ParameterError(f"bandwidth must be positive, got {h}")
        if neff < MIN_EFFECTIVE:
            msg = f"arm z={arm}: only {neff:.1f} effective observations; density estimate is unstable"
            notes.append(msg)
            warnings.warn(msg, UnstableDensityWarning, stacklevel=2)
        u = (thetas[arm][:, None] - ya[None, :]) / h
        dens = (stats.norm.pdf(u) * wa[None, :]).sum(axis=1) / (n * h)
        out.append(dens)
        hs.append(h)
        neffs.append(neff)
    return DensityEstimate(out[0], out[1], tuple(hs), tuple(neffs), tuple(notes))


def sigma_matrix(d0: float, d1: float) -> np.ndarray:
    return np.array([[d1 + d0, d1], [d1, d1]])


def sigma_inv_e2(d0, d1) -> np.ndarray:
    """``Sigma^{-1} e2`` in closed form: ``(-1/D0, 1/D0 + 1/D1)``."""
    d0 = np.asarray(d0, dtype=float)
    d1 = np.asarray(d1, dtype=float)
    return np.stack([-1.0 / d0, 1.0 / d0 + 1.0 / d1], axis=-1)


@dataclass(frozen=True, eq=False)
class AsymptoticPieces:
    D0: np.ndarray
    D1: np.ndarray
    Sigma: np.ndarray  # (K, 2, 2)
    V_k1: Optional[np.ndarray]
    V_g2: Optional[np.ndarray]
    V_k3: Optional[np.ndarray]  # (K, 2, k_kappa)
    V_g3: Optional[np.ndarray]  # (K, 2, k_gamma)
    psi_cov: np.ndarray  # (K, 2, 2)


@dataclass(frozen=True, eq=False)
class AsymptoticVariance:
    variance: np.ndarray
    pieces: AsymptoticPieces
    densities: DensityEstimate

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.variance)


def _propensity_weight_gradient(fit: WqteFit, Xg: np.ndarray) -> np.ndarray:
    """d W^g / d gamma per record, shape (n, k)."""
    e = fit.weights.e_value
    z = fit.data.z
    if fit.g.kind == "population":
        coef = -z * (1.0 - e) / e + (1 - z) * e / (1.0 - e)
    else:
        # g = e: W = z + (1 - z) e / (1 - e)
        coef = (1 - z) * e / (1.0 - e)
    return coef[:, None] * Xg


def asymptotic_variance(
    fit: WqteFit,
    densities: Optional[DensityEstimate] = None,
    bandwidth: Union[float, str] = "silverman",
    include_propensity_terms: bool = True,
) -> AsymptoticVariance:
    """Per-tau asymptotic variance of ``beta_hat(tau)``: ``e2' S^-1 cov(psi) S^-1 e2 / n``.

    Variant III treats the propensity score as known, so its correction
    term is absent; with ``include_propensity_terms=False`` variant IV is
    computed the same way.  A double-sampling model supplied as known
    likewise contributes no correction.

    Raises
    ------
    ConfigurationError
        For variants other than III and IV.
    SingularityError
        When a density estimate is (numerically) zero, making ``Sigma``
        singular; use a bootstrap instead.
    """
    variant = fit.variant
    if variant not in (EstimatorVariant.DS_KNOWN_E, EstimatorVariant.DS_ESTIMATED):
        raise ConfigurationError("asymptotic variance is implemented for variants III and IV")
    if densities is None:
        densities = estimate_densities(fit, bandwidth)
    D0, D1 = densities.d0, densities.d1
    if np.any(~np.isfinite(D0)) or np.any(~np.isfinite(D1)) or np.any(D0 <= 1e-12) or np.any(D1 <= 1e-12):
        raise SingularityError("a density estimate is ~0 so Sigma is singular; use a bootstrap variance instead")

    d = fit.data
    n = d.n
    taus = fit.grid.array
    y = d.outcome_values()
    z = d.z.astype(float)
    r = d.r.astype(float)
    s = d.s.astype(float)
    obs = d.observed
    omega = fit.weights.omega
    theta = np.where(d.z[:, None] == 1, fit.q1[None, :], fit.beta0[None, :])  # (n, K)
    resid = np.where(obs[:, None], (y[:, None] < theta).astype(float) - taus[None, :], 0.0)  # (n, K)
    zvec = np.stack([np.ones(n), z], axis=1)  # (n, 2)
    phi_beta = omega[:, None, None] * zvec[:, None, :] * resid[:, :, None]  # (n, K, 2)
    psi = -phi_beta

    V_k1 = V_k3 = V_g2 = V_g3 = None
    eta_model = fit.nuisances.eta
    if eta_model is not None and getattr(eta_model, "estimated", True) and np.any(s == 1):
        Xk = eta_model.score_features(d)
        if Xk.shape[1]:
            eta = np.where(r == 0, fit.weights.eta_or_pi_value if fit.weights.eta_or_pi_value is not None else 0.5, 0.5)
            eta = np.where(np.isfinite(eta), eta, 0.5)
            pk = (1 - r) * eta * (1 - eta)
            phi_k = ((1 - r) * (s - eta))[:, None] * Xk
            V_k1 = -(Xk * pk[:, None]).T @ Xk / n
            domega = (-fit.weights.w_g * s * (1 - r) * (1 - eta) / eta)[:, None] * Xk  # (n, k)
            domega[~obs] = 0.0
            # (K, 2, k): mean over records of (1, z)' * resid * d omega / d kappa
            V_k3 = np.einsum("nk,na,nj->kaj", resid, zvec, domega) / n
            lin = phi_k @ np.linalg.inv(V_k1).T  # rows V_k1^{-1} phi_k
            psi = psi + np.einsum("kaj,nj->nka", V_k3, lin)

    e_model = fit.nuisances.e
    if (
        variant is EstimatorVariant.DS_ESTIMATED
        and include_propensity_terms
        and getattr(e_model, "estimated", True)
    ):
        Xg = e_model.score_features(d)
        e = fit.weights.e_value
        phi_g = (z - e)[:, None] * Xg
        V_g2 = -(Xg * (e * (1 - e))[:, None]).T @ Xg / n
        domega = fit.weights.observance_factor[:, None] * _propensity_weight_gradient(fit, Xg)
        domega[~obs] = 0.0
        V_g3 = np.einsum("nk,na,nj->kaj", resid, zvec, domega) / n
        lin = phi_g @ np.linalg.inv(V_g2).T
        psi = psi + np.einsum("kaj,nj->nka", V_g3, lin)

    centered = psi - psi.mean(axis=0, keepdims=True)
    psi_cov = np.einsum("nka,nkb->kab", centered, centered) / n
    a = sigma_inv_e2(D0, D1)  # (K, 2)
    var = np.einsum("ka,kab,kb->k", a, psi_cov, a) / n
    Sigma = np.stack([sigma_matrix(a0, a1) for a0, a1 in zip(D0, D1)])
    pieces = AsymptoticPieces(D0, D1, Sigma, V_k1, V_g2, V_k3, V_g3, psi_cov)
    return AsymptoticVariance(var, pieces, densities)


def asymptotic_inference(fit: WqteFit, alpha: float = 0.05, bandwidth="silverman", **kwargs) -> InferenceResult:
    """Wald intervals ``beta_hat +/- z_{1-alpha/2} se`` from the asymptotic variance."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError("alpha must lie in (0, 1)")
    av = asymptotic_variance(fit, bandwidth=bandwidth, **kwargs)
    zq = stats.norm.ppf(1.0 - alpha / 2.0)
    se = av.se
    return InferenceResult(
        grid=fit.grid,
        estimate=fit.beta.copy(),
        se=se,
        ci_lower=fit.beta - zq * se,
        ci_upper=fit.beta + zq * se,
        method="asymptotic",
        alpha=alpha,
    )
