"""Empirical spectral density of ``X = W^T W`` and the norms built on it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DomainError, NumericError
from .model_store import WeightMatrix

__all__ = [
    "ZERO_CUTOFF",
    "ESD",
    "esd",
    "spectral_norm_sq",
    "frobenius_norm_sq",
    "shatten_norm_sum",
]

#: Eigenvalues below ``ZERO_CUTOFF * lambda_max`` are treated as exact zeros.
ZERO_CUTOFF = 1e-12


@dataclass(frozen=True)
class ESD:
    """Ascending eigenvalues of ``W^T W`` for one matrix."""

    eigenvalues: np.ndarray = field(repr=False)
    source: tuple[str, int] = ("", 0)

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    @property
    def lambda_max(self) -> float:
        if self.n == 0:
            raise DomainError("empty spectrum has no maximum")
        return float(self.eigenvalues[-1])

    @property
    def positive(self) -> np.ndarray:
        """Strictly positive eigenvalues (ascending)."""
        return self.eigenvalues[self.eigenvalues > 0]

    def scaled(self, c2: float) -> "ESD":
        return ESD(self.eigenvalues * c2, self.source)


def _clamped(ev: np.ndarray) -> np.ndarray:
    ev = np.sort(np.asarray(ev, dtype=np.float64))
    if len(ev) and ev[-1] > 0:
        ev[ev < ZERO_CUTOFF * ev[-1]] = 0.0
    else:
        ev[:] = 0.0
    return ev


def esd(W) -> ESD:
    """Squared singular values of ``W``, ascending.

    ``W`` may be a :class:`WeightMatrix` or a 2-D array. The SVD of ``W`` is
    used instead of an eigensolve of ``W^T W`` so that the condition number
    is not squared.
    """
    if isinstance(W, WeightMatrix):
        values, source = W.values, (W.owner_layer, W.slice_index)
    else:
        values, source = np.asarray(W, dtype=np.float64), ("", 0)
        if values.ndim != 2:
            raise DomainError(f"expected a 2-D matrix, got ndim={values.ndim}")
        if not np.isfinite(values).all():
            raise DomainError("matrix contains non-finite entries")
    try:
        sv = np.linalg.svd(values, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed for matrix {source[0]}[{source[1]}]: {exc}") from exc
    return ESD(_clamped(sv * sv), source)


def _as_esd(e) -> ESD:
    if isinstance(e, ESD):
        return e
    return ESD(_clamped(e))


def spectral_norm_sq(e) -> float:
    """``lambda_max = ||W||_2^2``."""
    return _as_esd(e).lambda_max


def frobenius_norm_sq(e) -> float:
    """``||W||_F^2 = sum(lambda)``."""
    e = _as_esd(e)
    if e.n == 0:
        raise DomainError("empty spectrum")
    return float(np.sum(e.eigenvalues))


def shatten_norm_sum(e, a: float) -> float:
    """``sum(lambda_i ** a)`` over strictly positive eigenvalues.

    With ``a`` equal to a fitted PL exponent this is ``||W||_{2a}^{2a}``.
    """
    a = float(a)
    if not np.isfinite(a) or a <= 0:
        raise DomainError(f"Shatten exponent must be finite and > 0, got {a}")
    e = _as_esd(e)
    if e.n == 0:
        raise DomainError("empty spectrum")
    pos = e.positive
    return float(np.sum(np.power(pos, a))) if len(pos) else 0.0
