import sys

import numpy as np
import pytest

from shapescale.model_store import LayerSpec, ModelBundle


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def dense_layer(name, W, activation=None, bias=None, init=None):
    spec = LayerSpec(name=name, kind="dense", shape=W.shape, weight_file=f"{name}.npy",
                     activation=activation)
    spec.weights = np.asarray(W, dtype=np.float64)
    if bias is not None:
        spec.bias = np.asarray(bias, dtype=np.float64)
        spec.bias_file = f"{name}_bias.npy"
    if init is not None:
        spec.init_weights = np.asarray(init, dtype=np.float64)
        spec.init_file = f"{name}_init.npy"
    return spec


def bundle_of(*layers, model_id="m", **kw):
    return ModelBundle(model_id=model_id, layers=list(layers), **kw)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
