"""On-disk model container: NPY array files, manifest.json, matrix extraction.

A model lives in one directory::

    model_dir/
        manifest.json
        fc1.npy          # weights, shape [N, M] or [k, k, N, M]
        fc1_init.npy     # optional initial weights (same shape)
        fc1_bias.npy     # optional bias, shape [M]

Only the NPY v1.0 layout is read and written; the parser is small enough that
we keep it here rather than going through ``numpy.lib.format`` so that every
malformed input maps onto one of our own error classes.
"""

from __future__ import annotations

import ast
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .exceptions import (
    DataError,
    FormatError,
    LoadError,
    UnsupportedFormatError,
    WriteError,
)

__all__ = [
    "MIN_ANALYZABLE_DIM",
    "LayerSpec",
    "ModelBundle",
    "WeightMatrix",
    "read_array_file",
    "write_array_file",
    "read_label_file",
    "load_model",
    "write_model",
    "extract_matrices",
    "assemble_matrices",
    "resolve_corpus",
]

NPY_MAGIC = b"\x93NUMPY"
_FLOAT_DESCR = {"<f4": np.float32, "<f8": np.float64}
_INT_DESCR = {"<i4": np.int32, "<i8": np.int64}
_HEADER_ALIGN = 64

#: Matrices whose smaller side is below this are loadable but never PL-fitted.
MIN_ANALYZABLE_DIM = 10

LAYER_KINDS = ("dense", "conv2d")
ACTIVATIONS = ("relu", "identity", "softmax")


# ---------------------------------------------------------------------------
# NPY v1.0
# ---------------------------------------------------------------------------

def _parse_npy_header(raw: bytes, path) -> tuple[str, bool, tuple[int, ...], int]:
    if len(raw) < 10 or raw[:6] != NPY_MAGIC:
        raise FormatError(f"{path}: not an NPY file (bad magic string)")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise UnsupportedFormatError(
            f"{path}: NPY version {major}.{minor} not supported (need 1.0)")
    (hlen,) = struct.unpack("<H", raw[8:10])
    end = 10 + hlen
    if len(raw) < end:
        raise FormatError(f"{path}: truncated NPY header")
    try:
        header = ast.literal_eval(raw[10:end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: unparsable NPY header") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"{path}: NPY header must hold exactly descr/fortran_order/shape")
    descr, fortran, shape = header["descr"], header["fortran_order"], header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise FormatError(f"{path}: invalid shape {shape!r} in NPY header")
    if not isinstance(fortran, bool):
        raise FormatError(f"{path}: fortran_order must be a bool")
    if fortran:
        raise UnsupportedFormatError(f"{path}: Fortran-ordered arrays are not supported")
    if not isinstance(descr, str):
        raise UnsupportedFormatError(f"{path}: structured dtype {descr!r} not supported")
    return descr, fortran, shape, end


def _read_npy(path, allowed: dict[str, type]) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise LoadError(f"{path}: no such array file") from exc
    except OSError as exc:
        raise LoadError(f"{path}: {exc.strerror}") from exc
    descr, _, shape, offset = _parse_npy_header(raw, path)
    if descr not in allowed:
        raise UnsupportedFormatError(
            f"{path}: dtype {descr!r} not supported (expected one of {sorted(allowed)})")
    dtype = np.dtype(allowed[descr]).newbyteorder("<")
    count = int(np.prod(shape, dtype=np.int64))
    payload = raw[offset:]
    if len(payload) != count * dtype.itemsize:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes, header implies {count * dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype, count=count).reshape(shape)


def read_array_file(path) -> np.ndarray:
    """Read a float32/float64 C-order NPY v1.0 file into a float64 array.

    Raises
    ------
    FormatError
        Bad magic, header or payload size.
    UnsupportedFormatError
        Fortran order, other NPY versions, non-float dtypes.
    DataError
        NaN or infinite entry; ``exc.index`` holds its multi-index.
    """
    arr = _read_npy(path, _FLOAT_DESCR).astype(np.float64)
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise DataError(f"{path}: non-finite value {arr[idx]} at index {idx}", index=idx)
    return arr


def read_label_file(path) -> np.ndarray:
    """Read an int32/int64 NPY v1.0 label vector as int64."""
    return _read_npy(path, _INT_DESCR).astype(np.int64)


def write_array_file(path, array) -> None:
    """Write ``array`` as NPY v1.0, C order, little endian.

    Floating arrays are stored as ``<f8``; integer arrays as ``<i8``.
    """
    arr = np.asarray(array)
    if arr.dtype.kind == "f":
        arr = np.ascontiguousarray(arr, dtype="<f8")
    elif arr.dtype.kind in "iu":
        arr = np.ascontiguousarray(arr, dtype="<i8")
    else:
        raise UnsupportedFormatError(f"cannot store dtype {arr.dtype} in an array file")
    shape = repr(tuple(int(d) for d in arr.shape))
    header = f"{{'descr': '{arr.dtype.str}', 'fortran_order': False, 'shape': {shape}, }}"
    # magic(6) + version(2) + length(2) + header + '\n' padded to the alignment
    pad = -(10 + len(header) + 1) % _HEADER_ALIGN
    header = (header + " " * pad + "\n").encode("latin1")
    try:
        with open(path, "wb") as fh:
            fh.write(NPY_MAGIC + bytes([1, 0]) + struct.pack("<H", len(header)))
            fh.write(header)
            fh.write(arr.tobytes(order="C"))
    except OSError as exc:
        raise WriteError(f"{path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass
class LayerSpec:
    """One layer entry of a manifest, plus its tensors once loaded."""

    name: str
    kind: str
    shape: tuple[int, ...]
    weight_file: str
    init_file: str | None = None
    bias_file: str | None = None
    activation: str | None = None
    weights: np.ndarray | None = field(default=None, repr=False, compare=False)
    init_weights: np.ndarray | None = field(default=None, repr=False, compare=False)
    bias: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        if self.kind not in LAYER_KINDS:
            raise LoadError(f"layer {self.name!r}: unknown kind {self.kind!r}")
        want = 2 if self.kind == "dense" else 4
        if len(self.shape) != want:
            raise LoadError(
                f"layer {self.name!r}: {self.kind} shape needs {want} dims, got {list(self.shape)}")
        if any(d < 1 for d in self.shape):
            raise LoadError(f"layer {self.name!r}: non-positive dimension in {list(self.shape)}")
        if self.activation is not None and self.activation not in ACTIVATIONS:
            raise LoadError(f"layer {self.name!r}: unknown activation {self.activation!r}")

    @property
    def matrix_shape(self) -> tuple[int, int]:
        return self.shape[-2], self.shape[-1]

    @property
    def n_matrices(self) -> int:
        return 1 if self.kind == "dense" else self.shape[0] * self.shape[1]

    @property
    def too_small(self) -> bool:
        return min(self.matrix_shape) < MIN_ANALYZABLE_DIM

    def to_json(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "shape": list(self.shape),
            "weight_file": self.weight_file,
            "init_file": self.init_file,
            "bias_file": self.bias_file,
            "activation": self.activation,
        }


@dataclass
class ModelBundle:
    model_id: str
    group: str = ""
    subgroup: str = ""
    hyperparams: dict[str, Any] = field(default_factory=dict)
    train_acc: float | None = None
    test_acc: float | None = None
    layers: list[LayerSpec] = field(default_factory=list)

    def __post_init__(self):
        if not self.model_id:
            raise LoadError("model_id must be a non-empty string")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise LoadError(f"model {self.model_id!r}: duplicate layer names")
        for key in ("train_acc", "test_acc"):
            value = getattr(self, key)
            if value is not None and not 0.0 <= value <= 1.0:
                raise LoadError(f"model {self.model_id!r}: {key}={value} outside [0, 1]")
        for key in ("L", "depth"):
            if key in self.hyperparams and self.hyperparams[key] != len(self.layers):
                raise LoadError(
                    f"model {self.model_id!r}: hyperparam {key}={self.hyperparams[key]} "
                    f"but manifest lists {len(self.layers)} layers")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def has_init(self) -> bool:
        return bool(self.layers) and all(layer.init_file for layer in self.layers)

    def to_json(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "group": self.group,
            "subgroup": self.subgroup,
            "hyperparams": dict(self.hyperparams),
            "train_acc": self.train_acc,
            "test_acc": self.test_acc,
            "layers": [layer.to_json() for layer in self.layers],
        }


@dataclass
class WeightMatrix:
    """A single 2-D matrix taken from a layer (whole dense layer or a conv slice)."""

    owner_layer: str
    slice_index: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"{self.ident}: weight matrix must be 2-D, got ndim={values.ndim}")
        bad = ~np.isfinite(values)
        if bad.any():
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise DataError(f"{self.ident}: non-finite entry at {idx}", index=idx)
        self.values = values

    @property
    def ident(self) -> str:
        return f"{self.owner_layer}[{self.slice_index}]"

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def too_small(self) -> bool:
        return min(self.values.shape) < MIN_ANALYZABLE_DIM

    def with_values(self, values) -> "WeightMatrix":
        return WeightMatrix(self.owner_layer, self.slice_index, values)


# ---------------------------------------------------------------------------
# Matrix extraction
# ---------------------------------------------------------------------------

def extract_matrices(layer: LayerSpec, tensor=None) -> list[WeightMatrix]:
    """Split a layer tensor into analyzable 2-D matrices.

    Dense ``[N, M]`` gives one matrix. Conv2D ``[k, k, N, M]`` gives ``k*k``
    matrices ``T[i, j]`` of shape ``N x M``, ``slice_index = i*k + j``.
    """
    tensor = layer.weights if tensor is None else tensor
    if tensor is None:
        raise LoadError(f"layer {layer.name!r}: weights not loaded")
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.shape != layer.shape:
        raise LoadError(
            f"layer {layer.name!r}: tensor shape {tensor.shape} does not match {layer.shape}")
    if layer.kind == "dense":
        return [WeightMatrix(layer.name, 0, tensor)]
    kh, kw = layer.shape[:2]
    return [WeightMatrix(layer.name, i * kw + j, tensor[i, j])
            for i in range(kh) for j in range(kw)]


def assemble_matrices(layer: LayerSpec, matrices: Sequence) -> np.ndarray:
    """Inverse of :func:`extract_matrices`: rebuild the layer tensor."""
    mats = [m.values if isinstance(m, WeightMatrix) else np.asarray(m) for m in matrices]
    if len(mats) != layer.n_matrices:
        raise LoadError(
            f"layer {layer.name!r}: expected {layer.n_matrices} matrices, got {len(mats)}")
    if layer.kind == "dense":
        return np.array(mats[0], dtype=np.float64)
    return np.stack(mats).reshape(layer.shape)


# ---------------------------------------------------------------------------
# Model directories
# ---------------------------------------------------------------------------

def _load_tensor(root: Path, rel: str, expect_shape, what: str, layer: str) -> np.ndarray:
    path = root / rel
    if not path.is_file():
        raise LoadError(f"layer {layer!r}: {what} file {rel!r} not found under {root}")
    arr = read_array_file(path)
    if expect_shape is not None and arr.shape != tuple(expect_shape):
        raise LoadError(
            f"layer {layer!r}: {what} file {rel!r} has shape {arr.shape}, "
            f"manifest says {tuple(expect_shape)}")
    return arr


def load_model(directory) -> ModelBundle:
    """Load ``manifest.json`` and every referenced array from ``directory``."""
    root = Path(directory)
    manifest = root / "manifest.json"
    if not manifest.is_file():
        raise LoadError(f"{root}: missing manifest.json")
    try:
        meta = json.loads(manifest.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LoadError(f"{manifest}: invalid JSON ({exc})") from exc
    try:
        layers = []
        for entry in meta["layers"]:
            spec = LayerSpec(
                name=entry["name"],
                kind=entry["kind"],
                shape=entry["shape"],
                weight_file=entry["weight_file"],
                init_file=entry.get("init_file"),
                bias_file=entry.get("bias_file"),
                activation=entry.get("activation"),
            )
            spec.weights = _load_tensor(root, spec.weight_file, spec.shape, "weight", spec.name)
            if spec.init_file:
                spec.init_weights = _load_tensor(root, spec.init_file, spec.shape, "init", spec.name)
            if spec.bias_file:
                spec.bias = _load_tensor(
                    root, spec.bias_file, (spec.shape[-1],), "bias", spec.name)
            layers.append(spec)
        return ModelBundle(
            model_id=meta["model_id"],
            group=meta.get("group", ""),
            subgroup=meta.get("subgroup", ""),
            hyperparams=dict(meta.get("hyperparams") or {}),
            train_acc=meta.get("train_acc"),
            test_acc=meta.get("test_acc"),
            layers=layers,
        )
    except KeyError as exc:
        raise LoadError(f"{manifest}: missing required field {exc.args[0]!r}") from exc
    except TypeError as exc:
        raise LoadError(f"{manifest}: malformed manifest ({exc})") from exc


def _safe_stem(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def write_model(bundle: ModelBundle, directory) -> None:
    """Persist ``bundle`` under ``directory`` (created if needed).

    Tensors are always written as float64, so ``load_model`` returns
    bit-identical arrays. File names are regenerated from layer names.
    """
    root = Path(directory)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise WriteError(f"{root}: {exc.strerror or exc}") from exc
    layers_json = []
    for layer in bundle.layers:
        if layer.weights is None:
            raise WriteError(f"layer {layer.name!r}: no weights to write")
        stem = _safe_stem(layer.name)
        entry = layer.to_json()
        entry["weight_file"] = f"{stem}.npy"
        write_array_file(root / entry["weight_file"], layer.weights)
        entry["init_file"] = None
        if layer.init_weights is not None:
            entry["init_file"] = f"{stem}_init.npy"
            write_array_file(root / entry["init_file"], layer.init_weights)
        entry["bias_file"] = None
        if layer.bias is not None:
            entry["bias_file"] = f"{stem}_bias.npy"
            write_array_file(root / entry["bias_file"], layer.bias)
        layers_json.append(entry)
    meta = bundle.to_json()
    meta["layers"] = layers_json
    try:
        (root / "manifest.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise WriteError(f"{root}: {exc.strerror or exc}") from exc


def resolve_corpus(path) -> list[Path]:
    """Model directories named by a corpus file or found under a directory.

    A corpus file is a JSON array of paths, relative paths resolved against the
    file's own directory. A directory is scanned recursively for manifests.
    """
    path = Path(path)
    if path.is_dir():
        dirs = sorted({p.parent for p in path.rglob("manifest.json")})
    elif path.is_file():
        try:
            entries = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise LoadError(f"{path}: invalid corpus JSON ({exc})") from exc
        if not isinstance(entries, list) or not all(isinstance(e, str) for e in entries):
            raise LoadError(f"{path}: corpus file must be a JSON array of paths")
        dirs = [(path.parent / e) if not os.path.isabs(e) else Path(e) for e in entries]
    else:
        raise LoadError(f"{path}: corpus path does not exist")
    if not dirs:
        raise LoadError(f"{path}: no models found")
    return dirs


def iter_models(paths: Iterable) -> Iterable[ModelBundle]:
    for p in paths:
        yield load_model(p)
