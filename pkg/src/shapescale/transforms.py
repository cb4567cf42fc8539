"""Data-dependent weight transforms: low-rank SVD smoothing and quantile clipping."""

from __future__ import annotations

import copy
import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DomainError, NumericError
from .model_store import ModelBundle, WeightMatrix, assemble_matrices, extract_matrices

__all__ = [
    "TRANSFORMS",
    "smoothing_rank",
    "svd_smooth",
    "clip_extremes",
    "transform_model",
    "SVDSmoother",
    "WeightClipper",
]

TRANSFORMS = {
    "svd10": {"keep_frac": 0.10},
    "svd20": {"keep_frac": 0.20},
    "clip": {"lo_q": 0.005, "hi_q": 0.995},
}


def _unwrap(W):
    if isinstance(W, WeightMatrix):
        return W.values, W.with_values
    arr = np.asarray(W, dtype=np.float64)
    if arr.ndim != 2:
        raise DomainError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr, lambda v: v


def smoothing_rank(keep_frac: float, shape) -> int:
    """``ceil(keep_frac * min(N, M))``, never below 1."""
    if not 0.0 < keep_frac <= 1.0:
        raise DomainError(f"keep_frac must lie in (0, 1], got {keep_frac}")
    r = min(shape)
    # guard against 0.1 * 30 = 3.0000000000000004 rounding up to 4
    return max(1, min(r, math.ceil(round(keep_frac * r, 9))))


def svd_smooth(W, keep_frac: float):
    """Best rank-k approximation of ``W`` with ``k = ceil(keep_frac * min(N, M))``.

    Returns the same type as given (``WeightMatrix`` or ndarray). When ``k`` is
    the full rank the input values are returned unchanged (copied).
    """
    values, wrap = _unwrap(W)
    k = smoothing_rank(keep_frac, values.shape)
    if k == min(values.shape):
        return wrap(values.copy())
    try:
        U, s, Vt = np.linalg.svd(values, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}") from exc
    return wrap((U[:, :k] * s[:k]) @ Vt[:k])


def clip_extremes(W, lo_q: float = 0.005, hi_q: float = 0.995):
    """Clamp every element into ``[Q(lo_q), Q(hi_q)]``.

    ``Q`` is the matrix's own elementwise quantile with linear interpolation
    between order statistics. Elements already inside the range are untouched.
    """
    if not 0.0 <= lo_q < hi_q <= 1.0:
        raise DomainError(f"need 0 <= lo_q < hi_q <= 1, got ({lo_q}, {hi_q})")
    values, wrap = _unwrap(W)
    lo, hi = np.quantile(values, [lo_q, hi_q], method="linear")
    return wrap(np.clip(values, lo, hi))


def _apply(name: str, params: dict):
    if name in ("svd10", "svd20", "svd"):
        keep = params.get("keep_frac", TRANSFORMS.get(name, {}).get("keep_frac"))
        if keep is None:
            raise DomainError("transform 'svd' needs a keep_frac parameter")
        return lambda W: svd_smooth(W, keep)
    if name == "clip":
        lo = params.get("lo_q", TRANSFORMS["clip"]["lo_q"])
        hi = params.get("hi_q", TRANSFORMS["clip"]["hi_q"])
        return lambda W: clip_extremes(W, lo, hi)
    raise DomainError(f"unknown transform {name!r} (choose from svd10, svd20, svd, clip)")


def transform_model(bundle: ModelBundle, transform: str, params: dict | None = None) -> ModelBundle:
    """Apply a transform to every weight matrix of a model.

    Conv layers are transformed slice by slice and reassembled. Initial weights
    and biases are carried over; recorded accuracies are cleared because they
    no longer describe the transformed weights.
    """
    fn = _apply(transform, params or {})
    out = copy.copy(bundle)
    out.hyperparams = dict(bundle.hyperparams)
    out.train_acc = None
    out.test_acc = None
    out.layers = []
    for layer in bundle.layers:
        new = copy.copy(layer)
        new.weights = assemble_matrices(layer, [fn(W) for W in extract_matrices(layer)])
        out.layers.append(new)
    return out


class SVDSmoother(TransformerMixin, BaseEstimator):
    """Replace a weight matrix by its top-k singular triplets.

    ``fit`` records the rank for the matrix shape; ``transform`` applies it.
    """

    def __init__(self, keep_frac=0.2):
        self.keep_frac = keep_frac

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        self.rank_ = smoothing_rank(self.keep_frac, X.shape)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        return svd_smooth(np.asarray(X, dtype=np.float64), self.keep_frac)


class WeightClipper(TransformerMixin, BaseEstimator):
    """Clamp weights into quantile bounds learned at ``fit`` time.

    ``fit_transform(W)`` equals :func:`clip_extremes`; ``transform`` on a
    later matrix reuses the fitted bounds, which makes it idempotent.
    """

    def __init__(self, lo_q=0.005, hi_q=0.995):
        self.lo_q = lo_q
        self.hi_q = hi_q

    def fit(self, X, y=None):
        if not 0.0 <= self.lo_q < self.hi_q <= 1.0:
            raise DomainError(f"need 0 <= lo_q < hi_q <= 1, got ({self.lo_q}, {self.hi_q})")
        X = np.asarray(X, dtype=np.float64)
        self.lower_, self.upper_ = np.quantile(X, [self.lo_q, self.hi_q], method="linear")
        self.n_features_in_ = X.shape[1] if X.ndim == 2 else 1
        return self

    def transform(self, X):
        return np.clip(np.asarray(X, dtype=np.float64), self.lower_, self.upper_)
