"""Pointwise and uniform inference for WQTE estimates."""

from .asymptotic import (
    AsymptoticPieces,
    AsymptoticVariance,
    DensityEstimate,
    asymptotic_inference,
    asymptotic_variance,
    estimate_densities,
    sigma_inv_e2,
    sigma_matrix,
    silverman_bandwidth,
)
from .bands import UniformBand, band_inference, uniform_band
from .bootstrap import (
    BootstrapReplicates,
    gradient_bootstrap,
    gradient_multipliers,
    pairs_bootstrap,
    percentile_inference,
    tilted_quantiles,
)
from .result import InferenceResult

__all__ = [
    "AsymptoticPieces",
    "AsymptoticVariance",
    "BootstrapReplicates",
    "DensityEstimate",
    "InferenceResult",
    "UniformBand",
    "asymptotic_inference",
    "asymptotic_variance",
    "band_inference",
    "estimate_densities",
    "gradient_bootstrap",
    "gradient_multipliers",
    "pairs_bootstrap",
    "percentile_inference",
    "sigma_inv_e2",
    "sigma_matrix",
    "silverman_bandwidth",
    "tilted_quantiles",
    "uniform_band",
]
