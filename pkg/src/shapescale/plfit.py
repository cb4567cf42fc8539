"""Truncated power-law (TPL) fits of eigenvalue spectra.

The density is ``rho(x) = C * x**(-alpha)`` on ``[x_min, x_max]``. ``x_max`` is
pinned to the largest eigenvalue; ``x_min`` is chosen from the observed
eigenvalues by minimising the Kolmogorov-Smirnov distance, and ``alpha`` is the
maximum-likelihood exponent for each candidate ``x_min``.

All likelihood and CDF evaluations go through the scale-free quantities
``log(x / x_min)`` and ``log(x_max / x_min)``, which makes the fitted exponent
independent of a global rescaling of the spectrum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DomainError, TooFewTailPointsError
from .spectra import ESD, esd as _esd

__all__ = [
    "ALPHA_MIN",
    "ALPHA_MAX",
    "ALPHA_TOL",
    "MIN_TAIL",
    "TPLFit",
    "tpl_cdf",
    "tpl_loglik",
    "fit_alpha_mle",
    "ks_distance",
    "fit_tpl",
    "TPLFitter",
]

ALPHA_MIN = 1.01
ALPHA_MAX = 12.0
ALPHA_TOL = 1e-4
MIN_TAIL = 10
#: Fitted exponents above this get a quality note (very short / truncated tails).
ALPHA_NOTE_THRESHOLD = 6.0
_LOG_BRANCH = 1e-6
# relative width below which [x_min, x_max] is treated as a single point
_DEGENERATE_RTOL = 1e-9

TOO_FEW_TAIL_POINTS = "too_few_tail_points"
ALPHA_AT_SEARCH_BOUND = "alpha_at_search_bound"
DEGENERATE_TAIL = "degenerate_tail"

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class TPLFit:
    alpha: float
    x_min: float
    x_max: float
    d_ks: float
    n_tail: int
    scan: np.ndarray = field(repr=False)  # rows of (x_min, alpha, d_ks)
    warnings: frozenset = frozenset()
    notes: tuple = ()

    def scan_rows(self) -> list[tuple[float, float, float]]:
        return [tuple(float(v) for v in row) for row in self.scan]

    def write_scan_csv(self, path) -> None:
        """KS distance as a function of the ``x_min`` candidate."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x_min", "alpha", "d_ks"])
            for row in self.scan:
                writer.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# CDF and likelihood
# ---------------------------------------------------------------------------

def _check_support(x_min, x_max):
    if not (np.isfinite(x_min) and np.isfinite(x_max)):
        raise DomainError("x_min and x_max must be finite")
    if x_min <= 0:
        raise DomainError(f"x_min must be > 0, got {x_min}")
    if x_max <= x_min:
        raise DomainError(f"need x_min < x_max, got [{x_min}, {x_max}]")


def _cdf_scalefree(log_r, alpha, log_span):
    """CDF given ``log(x/x_min)`` and ``log(x_max/x_min)``."""
    b = 1.0 - alpha
    if abs(b) < _LOG_BRANCH:
        return log_r / log_span
    return np.expm1(b * log_r) / np.expm1(b * log_span)


def tpl_cdf(x, alpha, x_min, x_max):
    """CDF of the truncated power law on ``[x_min, x_max]``.

    ``F(x) = (x**(1-a) - x_min**(1-a)) / (x_max**(1-a) - x_min**(1-a))``,
    switching to ``log(x/x_min) / log(x_max/x_min)`` when ``|a - 1| < 1e-6``.
    Accepts a scalar or an array for ``x``.
    """
    _check_support(x_min, x_max)
    if not alpha > 0:
        raise DomainError(f"alpha must be > 0, got {alpha}")
    xs = np.asarray(x, dtype=np.float64)
    if np.any(xs < x_min) or np.any(xs > x_max) or not np.isfinite(xs).all():
        raise DomainError(f"x outside the support [{x_min}, {x_max}]")
    out = _cdf_scalefree(np.log(xs / x_min), float(alpha), math.log(x_max / x_min))
    out = np.clip(out, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def _norm_term(alpha, log_span):
    """``log(C * x_min**alpha)``: log of the normaliser in units of x_min.

    Vectorised over ``alpha`` and ``log_span``.
    """
    b = 1.0 - np.asarray(alpha, dtype=np.float64)
    log_span = np.asarray(log_span, dtype=np.float64)
    small = np.abs(b) < _LOG_BRANCH
    bs = np.where(small, 1.0, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        regular = np.log(bs / np.expm1(bs * log_span))
    return np.where(small, -np.log(log_span), regular)


def _loglik(alpha, n, sum_log_r, log_span):
    # up to the alpha-independent constant -n*log(x_min)
    return n * _norm_term(alpha, log_span) - alpha * sum_log_r


def tpl_loglik(tail, alpha, x_min, x_max) -> float:
    """Log-likelihood of ``tail`` under TPL(alpha, x_min, x_max)."""
    tail = _check_tail(tail, x_min, x_max)
    n = len(tail)
    val = _loglik(float(alpha), n, float(np.sum(np.log(tail / x_min))),
                  math.log(x_max / x_min))
    return float(val) - n * math.log(x_min)


def _golden_max(f, lo, hi, tol):
    """Vectorised golden-section maximisation over brackets ``[lo, hi]``.

    ``f`` maps an array of abscissae (one per problem) to objective values.
    """
    a = np.array(lo, dtype=np.float64)
    b = np.array(hi, dtype=np.float64)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    width = float(np.max(b - a))
    n_iter = max(0, math.ceil(math.log(tol / width) / math.log(_INVPHI))) if width > tol else 0
    for _ in range(n_iter):
        left = fc > fd  # maximum lies in [a, d]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = np.where(left, b - _INVPHI * (b - a), d)
        d_new = np.where(left, c, a + _INVPHI * (b - a))
        f_new = f(np.where(left, c_new, d_new))
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
        c, d = c_new, d_new
    return 0.5 * (a + b)


def _mle_batch(n, sum_log_r, log_span, lo=ALPHA_MIN, hi=ALPHA_MAX, tol=ALPHA_TOL):
    """MLE exponents for many (n, sum log r, log span) problems at once.

    Returns ``(alpha, at_bound)`` arrays.
    """
    n = np.asarray(n, dtype=np.float64)
    sum_log_r = np.asarray(sum_log_r, dtype=np.float64)
    log_span = np.asarray(log_span, dtype=np.float64)

    def f(a):
        return _loglik(a, n, sum_log_r, log_span)

    ones = np.ones_like(n)
    alpha = _golden_max(f, lo * ones, hi * ones, tol)
    f_mid = f(alpha)
    f_lo, f_hi = f(lo * ones), f(hi * ones)
    alpha = np.where(f_lo >= f_mid, lo, alpha)
    alpha = np.where((f_hi >= f_mid) & (f_hi > f_lo), hi, alpha)
    at_bound = (alpha - lo < tol) | (hi - alpha < tol)
    return alpha, at_bound


def _check_tail(tail, x_min, x_max):
    _check_support(x_min, x_max)
    tail = np.asarray(tail, dtype=np.float64)
    if tail.ndim != 1 or len(tail) == 0:
        raise DomainError("tail must be a non-empty 1-D sequence")
    if np.any(tail < x_min) or np.any(tail > x_max) or not np.isfinite(tail).all():
        raise DomainError(f"tail contains values outside [{x_min}, {x_max}]")
    return tail


def fit_alpha_mle(tail, x_min, x_max):
    """Maximum-likelihood TPL exponent for a fixed support.

    Golden-section search on ``[1.01, 12]`` to absolute tolerance ``1e-4``.

    Returns
    -------
    alpha : float
    warning : str or None
        ``"alpha_at_search_bound"`` when the optimum sits on a bound.
    """
    tail = _check_tail(tail, x_min, x_max)
    alpha, at_bound = _mle_batch(
        [len(tail)], [np.sum(np.log(tail / x_min))], [math.log(x_max / x_min)])
    return float(alpha[0]), (ALPHA_AT_SEARCH_BOUND if at_bound[0] else None)


def _ks_sorted(log_r, alpha, log_span):
    n = len(log_r)
    F = np.clip(_cdf_scalefree(log_r, alpha, log_span), 0.0, 1.0)
    i = np.arange(1, n + 1, dtype=np.float64)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_distance(tail, alpha, x_min, x_max) -> float:
    """Exact two-sided KS statistic between the empirical CDF of ``tail``
    and ``tpl_cdf(., alpha, x_min, x_max)``."""
    tail = np.sort(_check_tail(tail, x_min, x_max))
    if not alpha > 0:
        raise DomainError(f"alpha must be > 0, got {alpha}")
    return _ks_sorted(np.log(tail / x_min), float(alpha), math.log(x_max / x_min))


# ---------------------------------------------------------------------------
# x_min scan
# ---------------------------------------------------------------------------

def _positive_eigs(e):
    if isinstance(e, ESD):
        return e.positive
    ev = np.sort(np.asarray(e, dtype=np.float64).ravel())
    if not np.isfinite(ev).all():
        raise DomainError("eigenvalues must be finite")
    return ev[ev > 0]


def fit_tpl(e, min_tail: int = MIN_TAIL) -> TPLFit:
    """Fit a TPL to a spectrum, selecting ``x_min`` by minimal KS distance.

    Every distinct positive eigenvalue whose tail holds at least ``min_tail``
    points is a candidate. Ties in KS distance go to the smaller ``x_min``.

    Parameters
    ----------
    e : ESD or array-like
        The spectrum. Non-positive values are ignored.
    min_tail : int
        Smallest admissible tail.

    Raises
    ------
    TooFewTailPointsError
        Fewer than ``min_tail`` positive eigenvalues.
    """
    if min_tail < 1:
        raise DomainError("min_tail must be >= 1")
    pos = _positive_eigs(e)
    if len(pos) < min_tail:
        raise TooFewTailPointsError(
            f"{len(pos)} positive eigenvalues, need at least {min_tail}")
    x_max = float(pos[-1])
    log_rel = np.log(pos / x_max)  # <= 0, exact under power-of-two rescaling

    _, first = np.unique(pos, return_index=True)
    n_tail = len(pos) - first
    first = first[n_tail >= min_tail]
    n_tail = len(pos) - first
    log_span = -log_rel[first]
    regular = log_span > _DEGENERATE_RTOL
    first, n_tail, log_span = first[regular], n_tail[regular], log_span[regular]

    if len(first) == 0:
        # whole admissible tail collapses onto x_max
        x_min = float(pos[-min_tail])
        scan = np.array([[x_min, ALPHA_MAX, 0.0]])
        return TPLFit(ALPHA_MAX, x_min, x_max, 0.0, int(np.sum(pos >= x_min)), scan,
                      frozenset({DEGENERATE_TAIL, ALPHA_AT_SEARCH_BOUND}),
                      ("degenerate spectrum: tail has (numerically) a single value",))

    suffix = np.cumsum(log_rel[::-1])[::-1]
    sum_log_r = suffix[first] + n_tail * log_span  # sum of log(x / x_min) over tail
    alphas, at_bound = _mle_batch(n_tail, sum_log_r, log_span)
    d = np.empty(len(first))
    for k, (j, a, span) in enumerate(zip(first, alphas, log_span)):
        d[k] = _ks_sorted(log_rel[j:] + span, float(a), float(span))

    best = int(np.argmin(d))
    warnings = set()
    if at_bound[best]:
        warnings.add(ALPHA_AT_SEARCH_BOUND)
    notes = []
    alpha = float(alphas[best])
    if alpha > ALPHA_NOTE_THRESHOLD:
        notes.append(f"alpha={alpha:.3f} > {ALPHA_NOTE_THRESHOLD:g}: tail may be truncated "
                     "or too short for a reliable power-law fit")
    scan = np.column_stack([pos[first], alphas, d])
    return TPLFit(
        alpha=alpha,
        x_min=float(pos[first[best]]),
        x_max=x_max,
        d_ks=float(d[best]),
        n_tail=int(n_tail[best]),
        scan=scan,
        warnings=frozenset(warnings),
        notes=tuple(notes),
    )


class TPLFitter(BaseEstimator):
    """Estimator wrapper around :func:`fit_tpl`.

    ``fit`` accepts a 1-D spectrum or a 2-D weight matrix (whose ESD is used).

    Attributes
    ----------
    alpha_, x_min_, x_max_, d_ks_, n_tail_ : fitted values
    scan_ : ndarray of shape (n_candidates, 3)
        ``(x_min, alpha, d_ks)`` per candidate.
    fit_ : TPLFit
    """

    def __init__(self, min_tail=MIN_TAIL):
        self.min_tail = min_tail

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        spectrum = _esd(X) if X.ndim == 2 else X
        result = fit_tpl(spectrum, min_tail=self.min_tail)
        self.fit_ = result
        self.alpha_ = result.alpha
        self.x_min_ = result.x_min
        self.x_max_ = result.x_max
        self.d_ks_ = result.d_ks
        self.n_tail_ = result.n_tail
        self.scan_ = result.scan
        self.warnings_ = result.warnings
        return self

    def cdf(self, x):
        check_is_fitted(self, "alpha_")
        return tpl_cdf(x, self.alpha_, self.x_min_, self.x_max_)

    def score(self, X, y=None):
        """Negative KS distance of ``X``'s tail against the fitted law."""
        check_is_fitted(self, "alpha_")
        X = np.asarray(X, dtype=np.float64)
        spectrum = _esd(X).eigenvalues if X.ndim == 2 else X
        tail = spectrum[(spectrum >= self.x_min_) & (spectrum <= self.x_max_)]
        return -ks_distance(tail, self.alpha_, self.x_min_, self.x_max_)
