"""Dense forward pass and accuracy for re-evaluating transformed models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ShapeError, UnsupportedTopologyError
from .model_store import ModelBundle, load_model, read_array_file, read_label_file

__all__ = ["Dataset", "load_dataset", "forward", "predict_scores", "accuracy", "BundleClassifier"]


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if len(self.inputs) == 0:
            raise ShapeError("dataset is empty")
        if len(self.labels) != len(self.inputs):
            raise ShapeError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.labels.min() < 0:
            raise ShapeError("labels must be non-negative class indices")


def load_dataset(inputs_path, labels_path) -> Dataset:
    return Dataset(read_array_file(inputs_path), read_label_file(labels_path))


def _check_topology(bundle: ModelBundle):
    if not bundle.layers:
        raise ShapeError(f"model {bundle.model_id!r} has no layers")
    width = None
    last = len(bundle.layers) - 1
    for i, layer in enumerate(bundle.layers):
        if layer.kind != "dense":
            raise UnsupportedTopologyError(
                f"layer {layer.name!r} is {layer.kind}; only dense layers can be evaluated")
        n_in, n_out = layer.shape
        if width is not None and n_in != width:
            raise ShapeError(f"layer {layer.name!r} expects width {n_in}, previous layer gives {width}")
        if layer.activation == "softmax" and i != last:
            raise ShapeError(f"softmax allowed on the final layer only (found on {layer.name!r})")
        width = n_out


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def predict_scores(bundle: ModelBundle, X) -> np.ndarray:
    """Class scores for each row of ``X``: ``y <- act(W^T y + b)`` layer by layer."""
    _check_topology(bundle)
    y = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if y.shape[1] != bundle.layers[0].shape[0]:
        raise ShapeError(f"inputs have width {y.shape[1]}, first layer expects "
                         f"{bundle.layers[0].shape[0]}")
    for layer in bundle.layers:
        y = y @ layer.weights
        if layer.bias is not None:
            y = y + layer.bias
        if layer.activation == "relu":
            y = np.maximum(y, 0.0)
        elif layer.activation == "softmax":
            y = _softmax(y)
    return y


def forward(bundle: ModelBundle, x) -> np.ndarray:
    """Forward pass for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("forward takes one input vector; use predict_scores for batches")
    return predict_scores(bundle, x[None, :])[0]


def accuracy(bundle: ModelBundle, data: Dataset) -> float:
    """Fraction of rows whose argmax score (lowest index on ties) equals the label."""
    scores = predict_scores(bundle, data.inputs)
    if data.labels.max() >= scores.shape[1]:
        raise ShapeError(f"label {data.labels.max()} out of range for {scores.shape[1]} outputs")
    return float(np.mean(np.argmax(scores, axis=1) == data.labels))


class BundleClassifier(ClassifierMixin, BaseEstimator):
    """Scikit-learn classifier view of a stored dense model.

    Nothing is learned: ``fit`` loads the model (if given a path) and records
    the class labels, so the model can be scored with sklearn utilities.
    """

    def __init__(self, model=None):
        self.model = model

    def fit(self, X=None, y=None):
        bundle = self.model if isinstance(self.model, ModelBundle) else load_model(self.model)
        _check_topology(bundle)
        self.bundle_ = bundle
        self.classes_ = np.arange(bundle.layers[-1].shape[1])
        self.n_features_in_ = bundle.layers[0].shape[0]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "bundle_")
        return predict_scores(self.bundle_, check_array(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
