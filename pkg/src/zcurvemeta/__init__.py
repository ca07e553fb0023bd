"""Z-curve diagnostics for Bayesian model-averaged meta-analysis.

Fits random-effects, selection and PET/PEESE models to effect sizes,
averages them by marginal likelihood, compares posterior predictive z
densities with the observed z histogram, removes estimated publication
bias, and reports discovery and missing-study statistics.
"""

__version__ = "0.1.0"

from ._jit import backend
from .evidence import default_model_space, fit_space, load_model_space
from .ingest import read_table, observed_discovery_rate
from .mcmc import SamplerConfig, sample_posterior
from .model import (
    Bias,
    Dataset,
    ModelSpace,
    ModelSpec,
    Prior,
    Study,
    ValidationError,
    WeightFunction,
)
from .predictive import (
    DrawTable,
    GridConfig,
    bias_metrics,
    edr,
    extrapolated_z_density,
    fdr_from_edr,
    fitted_z_density,
    n_missing,
    pointwise_band,
)
from .simulate import SimConfig, simulate_studies

__all__ = [
    "Bias",
    "Dataset",
    "DrawTable",
    "GridConfig",
    "ModelSpace",
    "ModelSpec",
    "Prior",
    "SamplerConfig",
    "SimConfig",
    "Study",
    "ValidationError",
    "WeightFunction",
    "backend",
    "bias_metrics",
    "default_model_space",
    "edr",
    "extrapolated_z_density",
    "fdr_from_edr",
    "fit_space",
    "fitted_z_density",
    "load_model_space",
    "n_missing",
    "observed_discovery_rate",
    "pointwise_band",
    "read_table",
    "sample_posterior",
    "simulate_studies",
]
