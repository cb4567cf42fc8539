"""Per-matrix spectral quantities and their per-model averages."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import EmptyModelError, TooFewTailPointsError
from .model_store import ModelBundle, WeightMatrix, extract_matrices
from .plfit import MIN_TAIL, TPLFit, fit_tpl
from .spectra import esd, frobenius_norm_sq, shatten_norm_sum

__all__ = [
    "METRIC_NAMES",
    "LayerMetrics",
    "ModelMetrics",
    "layer_metrics",
    "model_metrics",
    "aggregate_layer_metrics",
    "ModelMetricsTransformer",
]

METRIC_NAMES = (
    "alpha_avg",
    "quality_of_alpha_fit",
    "log_spectral_norm",
    "log_frobenius_norm",
    "alpha_hat",
    "log_alpha_shatten_norm",
    "distance_from_init",
)

SKIP_TOO_SMALL = "too_small"
SKIP_TOO_FEW_TAIL = "too_few_tail_points"


@dataclass
class LayerMetrics:
    layer: str
    slice_index: int
    lambda_max: float
    log10_spectral: float | None
    log10_frobenius: float | None
    alpha: float | None = None
    d_ks: float | None = None
    log10_alpha_shatten: float | None = None
    skipped: str | None = None
    fit: TPLFit | None = field(default=None, repr=False)

    @property
    def fitted(self) -> bool:
        return self.alpha is not None

    def to_json(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "fit"}
        out["warnings"] = sorted(self.fit.warnings) if self.fit else []
        out["notes"] = list(self.fit.notes) if self.fit else []
        if self.fit:
            out["x_min"] = self.fit.x_min
            out["n_tail"] = self.fit.n_tail
        return out


@dataclass
class ModelMetrics:
    model_id: str
    alpha_avg: float | None
    quality_of_alpha_fit: float | None
    log_spectral_norm: float | None
    log_frobenius_norm: float | None
    alpha_hat: float | None
    log_alpha_shatten_norm: float | None
    distance_from_init: float | None
    n_matrices_used: int
    n_matrices_skipped: int

    def to_json(self) -> dict:
        return asdict(self)

    def as_vector(self) -> np.ndarray:
        return np.array([np.nan if getattr(self, m) is None else getattr(self, m)
                         for m in METRIC_NAMES], dtype=np.float64)


def _log10(x: float) -> float | None:
    return math.log10(x) if x > 0 else None


def layer_metrics(W: WeightMatrix, min_tail: int = MIN_TAIL) -> LayerMetrics:
    """Norms always; TPL exponent, KS distance and alpha-Shatten norm when the
    matrix is large enough and has at least ``min_tail`` positive eigenvalues.
    """
    if not isinstance(W, WeightMatrix):
        W = WeightMatrix("", 0, W)
    e = esd(W)
    lam_max = e.lambda_max
    out = LayerMetrics(
        layer=W.owner_layer,
        slice_index=W.slice_index,
        lambda_max=lam_max,
        log10_spectral=_log10(lam_max),
        log10_frobenius=_log10(frobenius_norm_sq(e)),
    )
    if W.too_small:
        out.skipped = SKIP_TOO_SMALL
        return out
    try:
        fit = fit_tpl(e, min_tail=min_tail)
    except TooFewTailPointsError:
        out.skipped = SKIP_TOO_FEW_TAIL
        return out
    out.fit = fit
    out.alpha = fit.alpha
    out.d_ks = fit.d_ks
    out.log10_alpha_shatten = _log10(shatten_norm_sum(e, fit.alpha))
    return out


def _mean(values) -> float | None:
    values = list(values)
    if not values:
        return None
    return math.fsum(values) / len(values)


def aggregate_layer_metrics(model_id: str, layers: list[LayerMetrics],
                            init_distances: list[float] | None = None) -> ModelMetrics:
    """Layer averages over a list of per-matrix results.

    Fitted matrices feed the alpha-based averages; every matrix with a
    positive spectral norm feeds the norm averages.
    """
    if not layers:
        raise EmptyModelError(f"model {model_id!r}: no matrices")
    fitted = [m for m in layers if m.fitted]
    normed = [m for m in layers if m.log10_spectral is not None]
    if len(normed) < len(layers):
        warnings.warn(f"model {model_id!r}: {len(layers) - len(normed)} zero matrices "
                      "excluded from log-norm averages", RuntimeWarning, stacklevel=2)
    if not normed:
        raise EmptyModelError(f"model {model_id!r}: every matrix is identically zero")
    # a fitted matrix always has lambda_max > 0, so alpha_hat is well defined
    return ModelMetrics(
        model_id=model_id,
        alpha_avg=_mean(m.alpha for m in fitted),
        quality_of_alpha_fit=_mean(m.d_ks for m in fitted),
        log_spectral_norm=_mean(m.log10_spectral for m in normed),
        log_frobenius_norm=_mean(m.log10_frobenius for m in normed),
        alpha_hat=_mean(m.alpha * m.log10_spectral for m in fitted),
        log_alpha_shatten_norm=_mean(m.log10_alpha_shatten for m in fitted
                                     if m.log10_alpha_shatten is not None),
        distance_from_init=_mean(init_distances) if init_distances is not None else None,
        n_matrices_used=len(fitted),
        n_matrices_skipped=len(layers) - len(fitted),
    )


def model_layer_metrics(bundle: ModelBundle, min_tail: int = MIN_TAIL) -> list[LayerMetrics]:
    return [layer_metrics(W, min_tail=min_tail)
            for layer in bundle.layers for W in extract_matrices(layer)]


def _init_distances(bundle: ModelBundle) -> list[float] | None:
    if not bundle.has_init:
        return None
    out = []
    for layer in bundle.layers:
        diff = np.asarray(layer.weights) - np.asarray(layer.init_weights)
        mats = diff.reshape((-1,) + layer.matrix_shape)
        out.extend(float(np.linalg.norm(m)) for m in mats)
    return out


def model_metrics(bundle: ModelBundle, min_tail: int = MIN_TAIL,
                  return_layers: bool = False):
    """Per-model averages of every weight-only quality metric.

    Each extracted matrix (every conv slice) counts once. ``distance_from_init``
    is present only when every layer carries initial weights.

    Returns ``ModelMetrics``, or ``(ModelMetrics, list[LayerMetrics])`` with
    ``return_layers=True``.
    """
    layers = model_layer_metrics(bundle, min_tail=min_tail)
    result = aggregate_layer_metrics(bundle.model_id, layers, _init_distances(bundle))
    return (result, layers) if return_layers else result


class ModelMetricsTransformer(TransformerMixin, BaseEstimator):
    """Map a sequence of :class:`ModelBundle` (or model directories) to a
    feature matrix with one column per quality metric.

    Missing metrics (e.g. no initial weights) come out as NaN, so the output
    feeds straight into imputers and regressors.
    """

    def __init__(self, min_tail=MIN_TAIL, metrics=METRIC_NAMES):
        self.min_tail = min_tail
        self.metrics = metrics

    def fit(self, X, y=None):
        unknown = set(self.metrics) - set(METRIC_NAMES)
        if unknown:
            raise ValueError(f"unknown metrics: {sorted(unknown)}")
        self.n_features_out_ = len(self.metrics)
        return self

    def transform(self, X):
        from .model_store import load_model

        rows = []
        for item in X:
            bundle = item if isinstance(item, ModelBundle) else load_model(item)
            mm = model_metrics(bundle, min_tail=self.min_tail)
            rows.append([np.nan if getattr(mm, m) is None else getattr(mm, m)
                         for m in self.metrics])
        return np.array(rows, dtype=np.float64).reshape(len(rows), len(self.metrics))

    def get_feature_names_out(self, input_features=None):
        return np.array(list(self.metrics), dtype=object)
