"""Synthetic oracles: TPL samples, matrices with planted spectra, planted
Simpson's-paradox corpora, and small model directories for end-to-end runs.

Randomness comes from SplitMix64 in counter mode: draw ``i`` of stream ``s``
under seed ``k`` is ``mix64(key(k, s) + (i + 1) * GAMMA)``, so every value is
reproducible bit for bit on any platform and in any language.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import ModelRecord
from .exceptions import DomainError
from .model_store import LayerSpec, ModelBundle, WeightMatrix, write_model
from .net_eval import Dataset, predict_scores

__all__ = [
    "SplitMix64",
    "inverse_tpl_cdf",
    "sample_tpl",
    "tpl_quantiles",
    "matrix_with_esd",
    "synth_simpson",
    "synth_homogeneous",
    "planted_model",
    "separable_mlp",
    "write_corpus",
]

_MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
_STREAM_SALT = 0xD1B54A32D192ED03


def _mix64_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter-based SplitMix64 stream.

    ``key = mix64(seed ^ mix64(stream * SALT))``; the ``i``-th raw output is
    ``mix64(key + (i + 1) * GAMMA)`` (mod 2**64). Uniforms use the top 53 bits.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.key = _mix64_int(self.seed ^ _mix64_int(self.stream * _STREAM_SALT))
        self.counter = 0

    def raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.key) + idx * np.uint64(GAMMA))

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def normal(self, n: int) -> np.ndarray:
        """Box-Muller standard normals (consumes ``2 * ceil(n / 2)`` draws)."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u[m:]
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]


# ---------------------------------------------------------------------------
# Truncated power law
# ---------------------------------------------------------------------------

def _check_tpl(alpha, x_min, x_max):
    if not alpha > 1:
        raise DomainError(f"alpha must be > 1, got {alpha}")
    if not 0 < x_min < x_max:
        raise DomainError(f"need 0 < x_min < x_max, got ({x_min}, {x_max})")


def inverse_tpl_cdf(u, alpha, x_min, x_max):
    """``[x_min^(1-a) + u (x_max^(1-a) - x_min^(1-a))]^(1/(1-a))``."""
    _check_tpl(alpha, x_min, x_max)
    u = np.asarray(u, dtype=np.float64)
    b = 1.0 - alpha
    span = math.log(x_max / x_min)
    x = x_min * np.exp(np.log1p(u * math.expm1(b * span)) / b)
    x = np.clip(x, x_min, x_max)
    return float(x) if x.ndim == 0 else x


def sample_tpl(alpha, x_min, x_max, n, seed, stream=0) -> np.ndarray:
    """``n`` inverse-CDF samples from TPL(alpha, x_min, x_max)."""
    if n < 1:
        raise DomainError("n must be >= 1")
    return inverse_tpl_cdf(SplitMix64(seed, stream).uniform(n), alpha, x_min, x_max)


def tpl_quantiles(alpha, x_min, x_max, n) -> np.ndarray:
    """The ``(i - 0.5) / n`` quantiles: a noise-free stand-in for a sample."""
    return inverse_tpl_cdf((np.arange(n) + 0.5) / n, alpha, x_min, x_max)


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------

def _orthonormal(rows, cols, rng: SplitMix64) -> np.ndarray:
    G = rng.normal(rows * cols).reshape(rows, cols)
    Q, R = np.linalg.qr(G)
    return Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))


def matrix_with_esd(eigs: Sequence[float], N: int, M: int, seed: int,
                    name: str = "synthetic", stream: int = 0) -> WeightMatrix:
    """``W = U diag(sqrt(eigs)) V^T`` with seeded random orthonormal ``U, V``."""
    eigs = np.asarray(eigs, dtype=np.float64)
    r = min(N, M)
    if eigs.shape != (r,):
        raise DomainError(f"need exactly min(N, M) = {r} eigenvalues, got {eigs.size}")
    if np.any(eigs < 0) or not np.isfinite(eigs).all():
        raise DomainError("eigenvalues must be finite and non-negative")
    rng = SplitMix64(seed, stream)
    U = _orthonormal(N, r, rng)
    V = _orthonormal(M, r, rng)
    return WeightMatrix(name, 0, (U * np.sqrt(eigs)) @ V.T)


# ---------------------------------------------------------------------------
# Records with planted trends
# ---------------------------------------------------------------------------

def _group_centers(n_groups, between_offset):
    if np.ndim(between_offset) == 0:
        step = float(between_offset)
        return [(step * g, step * g) for g in range(n_groups)]
    centers = [tuple(map(float, c)) for c in between_offset]
    if len(centers) != n_groups:
        raise DomainError(f"{len(centers)} group centers for {n_groups} groups")
    return centers


def synth_simpson(n_groups=4, n_per_group=18, within_slope=-1.0, between_offset=2.0,
                  noise=0.05, seed=0, spread=0.5, metric="alpha_avg",
                  target="test_acc") -> list[ModelRecord]:
    """Records whose within-group trend opposes the trend of the group centers.

    Group ``g`` has center ``(m_g, t_g)``; a scalar ``between_offset`` puts
    centers at ``(g * offset, g * offset)``, a sequence gives them explicitly.
    Inside a group ``x = m_g + spread * u`` with ``u ~ U[-1, 1]`` and
    ``y = t_g + within_slope * (x - m_g) + noise * z``.
    """
    if n_groups < 1 or n_per_group < 3:
        raise DomainError("need n_groups >= 1 and n_per_group >= 3")
    rng = SplitMix64(seed, stream=1)
    records = []
    for g, (mc, tc) in enumerate(_group_centers(n_groups, between_offset)):
        u = 2.0 * rng.uniform(n_per_group) - 1.0
        z = rng.normal(n_per_group)
        x = mc + spread * u
        y = tc + within_slope * (x - mc) + noise * z
        for i in range(n_per_group):
            rec = ModelRecord(model_id=f"g{g}_{i:03d}", subgroup=f"g{g}", metrics={metric: float(x[i])})
            if target in ("train_acc", "test_acc"):
                setattr(rec, target, float(y[i]))
            else:
                rec.metrics[target] = float(y[i])
            records.append(rec)
    return records


def synth_homogeneous(n_groups=4, n_per_group=18, slope=-1.0, step=2.0, noise=0.05,
                      seed=0, spread=0.5, **kw) -> list[ModelRecord]:
    """Groups lying along one common trend: no reversal to find."""
    centers = [(step * g, slope * step * g) for g in range(n_groups)]
    return synth_simpson(n_groups, n_per_group, within_slope=slope, between_offset=centers,
                         noise=noise, seed=seed, spread=spread, **kw)


# ---------------------------------------------------------------------------
# Model directories
# ---------------------------------------------------------------------------

def planted_model(model_id: str, alphas: Sequence[float], dims: Sequence[int], seed: int,
                  x_min=1.0, x_max=100.0, with_init=True, subgroup="", group="synthetic",
                  hyperparams=None, train_acc=None, test_acc=None,
                  conv_layers: Sequence[int] = ()) -> ModelBundle:
    """Model whose layer ``l`` (``dims[l] x dims[l+1]``) has TPL(alphas[l]) quantile
    eigenvalues. Layers listed in ``conv_layers`` become 1x1 Conv2D.
    """
    if len(dims) != len(alphas) + 1:
        raise DomainError("need len(dims) == len(alphas) + 1")
    layers = []
    for l, a in enumerate(alphas):
        N, M = dims[l], dims[l + 1]
        eigs = tpl_quantiles(a, x_min, x_max, min(N, M))
        W = matrix_with_esd(eigs, N, M, seed, name=f"layer{l}", stream=2 * l).values
        kind = "conv2d" if l in conv_layers else "dense"
        shape = (N, M) if kind == "dense" else (1, 1, N, M)
        spec = LayerSpec(name=f"layer{l}", kind=kind, shape=shape, weight_file=f"layer{l}.npy",
                         activation="relu" if l < len(alphas) - 1 else "identity")
        spec.weights = W.reshape(shape)
        if with_init:
            noise = SplitMix64(seed, 2 * l + 1).normal(N * M).reshape(shape)
            spec.init_weights = noise * math.sqrt(x_max / max(N, M))
            spec.init_file = f"layer{l}_init.npy"
        layers.append(spec)
    hp = {"L": len(layers)}
    hp.update(hyperparams or {})
    return ModelBundle(model_id=model_id, group=group, subgroup=subgroup, hyperparams=hp,
                       train_acc=train_acc, test_acc=test_acc, layers=layers)


def separable_mlp(seed=0, dims=(32, 64, 64, 10), n_samples=400, rank_frac=0.2,
                  noise=0.0, model_id="mlp"):
    """A ReLU MLP plus a training set it classifies perfectly.

    Each weight matrix has rank ``ceil(rank_frac * min dim)`` plus optional
    full-rank ``noise``; labels are the model's own argmax, so the baseline
    accuracy is exactly 1.

    Returns ``(bundle, Dataset)``.
    """
    rng = SplitMix64(seed, stream=100)
    layers = []
    for l in range(len(dims) - 1):
        N, M = dims[l], dims[l + 1]
        k = max(1, math.ceil(rank_frac * min(N, M)))
        A = rng.normal(N * k).reshape(N, k)
        B = rng.normal(k * M).reshape(k, M)
        W = A @ B / math.sqrt(N * k)
        if noise:
            W = W + noise * rng.normal(N * M).reshape(N, M) / math.sqrt(N)
        last = l == len(dims) - 2
        spec = LayerSpec(name=f"fc{l}", kind="dense", shape=(N, M), weight_file=f"fc{l}.npy",
                         bias_file=f"fc{l}_bias.npy", activation="identity" if last else "relu")
        spec.weights = W
        spec.bias = 0.1 * rng.normal(M)
        layers.append(spec)
    bundle = ModelBundle(model_id=model_id, group="mlp", subgroup="mlp",
                         hyperparams={"L": len(layers)}, layers=layers)
    X = rng.normal(n_samples * dims[0]).reshape(n_samples, dims[0])
    labels = np.argmax(predict_scores(bundle, X), axis=1)
    bundle.train_acc = 1.0
    return bundle, Dataset(X, labels)


def write_corpus(out_dir, kind="simpson", n_groups=4, n_per_group=18, seed=0,
                 dims=(64, 64, 64), noise=0.05) -> Path:
    """Write a directory of planted models plus ``corpus.json``.

    ``kind="simpson"``: every model's layers share a planted exponent equal to a
    :func:`synth_simpson` metric value, and ``test_acc`` is an affine image of
    the record's target, so the corpus carries the planted reversal in
    ``alpha_avg`` vs ``test_acc``. ``kind="homogeneous"`` uses a common trend.
    Depth grows with the subgroup index (subgroup = fixed-depth family).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    # alpha in ~[2, 2 + 2*(n_groups-1)*0.5 + 1]; targets mapped into (0, 1)
    if kind == "simpson":
        records = synth_simpson(n_groups, n_per_group, within_slope=-1.0, between_offset=0.5,
                                noise=noise, seed=seed, spread=0.2)
    elif kind == "homogeneous":
        records = synth_homogeneous(n_groups, n_per_group, slope=-1.0, step=0.5,
                                    noise=noise, seed=seed, spread=0.2)
    else:
        raise DomainError(f"unknown corpus kind {kind!r}")
    ys = np.array([r.test_acc for r in records])
    lo, hi = ys.min(), ys.max()
    paths = []
    for i, rec in enumerate(records):
        g = int(rec.subgroup[1:])
        alpha = 2.0 + rec.metrics["alpha_avg"]
        depth = 2 + g
        layer_dims = [dims[l % len(dims)] for l in range(depth + 1)]
        acc = 0.55 + 0.4 * (rec.test_acc - lo) / (hi - lo if hi > lo else 1.0)
        bundle = planted_model(
            rec.model_id, [alpha] * depth, layer_dims, seed=seed * 100003 + i,
            x_max=10.0 * (1 + g), subgroup=rec.subgroup,
            hyperparams={"planted_alpha": alpha}, test_acc=float(acc),
            train_acc=float(min(1.0, acc + 0.04)))
        write_model(bundle, out / rec.model_id)
        paths.append(rec.model_id)
    corpus = out / "corpus.json"
    corpus.write_text(json.dumps(paths, indent=2) + "\n", encoding="utf-8")
    return corpus
