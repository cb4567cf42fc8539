"""Scale and shape diagnostics for neural-network weight matrices.

Truncated power-law fits of layer spectra, norm-based quality metrics,
SVD smoothing / clipping transforms, and subgroup correlation analysis with
Simpson's-paradox detection.
"""

__version__ = "0.1.0"

from .analysis import (
    CorrelationReport,
    ModelRecord,
    SimpsonDetector,
    SimpsonVerdict,
    classify_correlation,
    detect_simpson,
    kendall_tau,
    linear_fit,
    subgroup_report,
)
from .metrics import (
    METRIC_NAMES,
    LayerMetrics,
    ModelMetrics,
    ModelMetricsTransformer,
    layer_metrics,
    model_metrics,
)
from .model_store import (
    LayerSpec,
    ModelBundle,
    WeightMatrix,
    extract_matrices,
    load_model,
    read_array_file,
    write_array_file,
    write_model,
)
from .net_eval import BundleClassifier, Dataset, accuracy, forward
from .plfit import TPLFit, TPLFitter, fit_alpha_mle, fit_tpl, ks_distance, tpl_cdf
from .spectra import ESD, esd, frobenius_norm_sq, shatten_norm_sum, spectral_norm_sq
from .transforms import SVDSmoother, WeightClipper, clip_extremes, svd_smooth, transform_model
