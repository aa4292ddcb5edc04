from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateBandError, FewReplicatesWarning, ParameterError
from .bootstrap import BootstrapReplicates
from .result import InferenceResult

MIN_REPLICATES = 50


@dataclass(frozen=True, eq=False)
class UniformBand:
    lower: np.ndarray
    upper: np.ndarray
    critical_value: float
    scale: np.ndarray
    pointwise_critical: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray


def uniform_band(estimate, replicates, alpha: float = 0.05) -> UniformBand:
    """Studentized sup-t band over the quantile grid.

    With ``s(tau)`` the replicate standard deviation and
    ``t_b = max_tau |beta*_b(tau) - beta(tau)| / s(tau)``, the band is
    ``beta(tau) +/- c s(tau)`` where ``c`` is the ``1 - alpha`` empirical
    quantile of ``t_b``.  The matching pointwise intervals use the per-tau
    quantile of the same studentized deviations, so they always sit inside
    the band.

    Parameters
    ----------
    estimate : array_like (K,) or WqteFit
    replicates : array_like (B, K) or BootstrapReplicates
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterError("alpha must lie in (0, 1)")
    est = np.asarray(getattr(estimate, "beta", estimate), dtype=float)
    reps = np.asarray(getattr(replicates, "beta", replicates), dtype=float)
    if reps.ndim != 2 or reps.shape[1] != est.shape[0]:
        raise ValueError(f"replicates must have shape (B, {est.shape[0]}), got {reps.shape}")
    if reps.shape[0] < MIN_REPLICATES:
        warnings.warn(
            f"only {reps.shape[0]} bootstrap replicates; at least {MIN_REPLICATES} are recommended for a band",
            FewReplicatesWarning,
            stacklevel=2,
        )
    scale = reps.std(axis=0, ddof=1)
    if np.any(~(scale > 0)):
        raise DegenerateBandError("replicate standard deviation is zero at some quantile level")
    dev = np.abs(reps - est[None, :]) / scale[None, :]
    # inverted-CDF quantiles are order statistics, so the sup quantile dominates each pointwise one
    c = float(np.quantile(dev.max(axis=1), 1.0 - alpha, method="inverted_cdf"))
    c_tau = np.quantile(dev, 1.0 - alpha, axis=0, method="inverted_cdf")
    return UniformBand(
        lower=est - c * scale,
        upper=est + c * scale,
        critical_value=c,
        scale=scale,
        pointwise_critical=c_tau,
        ci_lower=est - c_tau * scale,
        ci_upper=est + c_tau * scale,
    )


def band_inference(reps: BootstrapReplicates, alpha: float = 0.05) -> InferenceResult:
    """Pointwise studentized intervals and the uniform band from one replicate set."""
    band = uniform_band(reps.estimate, reps.beta, alpha)
    return InferenceResult(
        grid=reps.grid,
        estimate=reps.estimate,
        se=band.scale,
        ci_lower=band.ci_lower,
        ci_upper=band.ci_upper,
        method=reps.method,
        alpha=alpha,
        band_lower=band.lower,
        band_upper=band.upper,
        critical_value=band.critical_value,
        replicates=reps.B,
        seed=reps.seed,
        redraws=reps.redraws,
    )
