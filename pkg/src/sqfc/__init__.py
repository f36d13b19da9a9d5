"""Robust functional-coefficient regression on spatial lattices.

Local-linear M-estimation (quantile, Huber-type and least squares) of
coefficient curves beta(u), with cross-validated bandwidths, kernel
detrending, plug-in confidence bands and a simulation harness.
"""

__version__ = "0.1.0"

from . import _backend as backend
from .bandwidth import CvConfig, CvReport, cv_score, select_bandwidth
from .dataset import SpatialDataset, augment_neighbors, from_arrays, load_csv, write_csv
from .detrend import TrendModel, detrend, detrend_dataset, estimate_trend
from .errors import DataError, NumericalError, SqfcError, UsageError
from .inference import (
    BandResult,
    Conditional,
    Independent,
    VarianceMode,
    bands,
    density_at,
    design_moment,
    quantile_bands,
    residual_density_zero,
    robust_bands,
)
from .kernels import KernelSpec, TrendKernelSpec, boundary_matrices, moments
from .localfit import (
    CoefficientCurve,
    FitConfig,
    LocalFitResult,
    default_grid,
    fit_at,
    fit_curve,
    predict,
)
from .loss import HuberType, LossSpec, Quantile, Squared
from .simulate import DgpConfig, McConfig, McReport, generate, run_mc

__all__ = [
    "BandResult", "CoefficientCurve", "Conditional", "CvConfig", "CvReport", "DataError",
    "DgpConfig", "FitConfig", "HuberType", "Independent", "KernelSpec", "LocalFitResult",
    "LossSpec", "McConfig", "McReport", "NumericalError", "Quantile", "SpatialDataset",
    "SqfcError", "Squared", "TrendKernelSpec", "TrendModel", "UsageError", "VarianceMode",
    "augment_neighbors", "backend", "bands", "boundary_matrices", "cv_score", "default_grid",
    "density_at", "design_moment", "detrend", "detrend_dataset", "estimate_trend", "fit_at",
    "fit_curve", "from_arrays", "generate", "load_csv", "moments", "predict",
    "quantile_bands", "residual_density_zero", "robust_bands", "run_mc", "select_bandwidth",
    "write_csv",
]
