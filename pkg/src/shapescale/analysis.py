"""Corpus statistics: linear fits, Kendall tau-b, correlation labels,
subgroup reports and Simpson's-paradox detection.
"""

from __future__ import annotations

import csv
import math
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import DegenerateFitError, EmptyCorpusError, InsufficientDataError

__all__ = [
    "ModelRecord",
    "LinearFit",
    "GroupStats",
    "SimpsonVerdict",
    "CorrelationReport",
    "linear_fit",
    "kendall_tau",
    "classify_correlation",
    "subgroup_report",
    "detect_simpson",
    "SimpsonDetector",
]

STRONG, MODEST, WEAK, NONE = "Strong", "Modest", "Weak", "None"
TAU_NONE = 0.05
R2_STRONG = 0.6
R2_MODEST = 0.25


@dataclass
class ModelRecord:
    model_id: str
    subgroup: str
    metrics: dict = field(default_factory=dict)
    train_acc: float | None = None
    test_acc: float | None = None

    def value(self, name: str):
        if name in ("train_acc", "test_acc"):
            v = getattr(self, name)
        else:
            v = self.metrics.get(name)
        if v is None or not math.isfinite(v):
            return None
        return float(v)


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r2: float
    rmse: float


def linear_fit(x, y) -> LinearFit:
    """Ordinary least squares ``y ~ slope * x + intercept``.

    ``r2`` is the squared Pearson correlation (0 when ``y`` is constant),
    ``rmse`` the root mean squared residual.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and of equal length")
    n = len(x)
    if n < 3:
        raise InsufficientDataError(f"linear fit needs at least 3 points, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateFitError("all x values are equal")
    syy = float(dy @ dy)
    sxy = float(dx @ dy)
    slope = sxy / sxx
    intercept = float(y.mean() - slope * x.mean())
    r2 = 0.0 if syy == 0.0 else min(1.0, sxy * sxy / (sxx * syy))
    resid = y - (slope * x + intercept)
    rmse = math.sqrt(float(resid @ resid) / n)
    return LinearFit(slope, intercept, r2, rmse)


def kendall_tau(x, y) -> float:
    """Kendall tau-b with tie correction.

    ``(C - D) / sqrt((n0 - n1) * (n0 - n2))`` where ``n1``, ``n2`` count pairs
    tied in x and in y. Defined as 0 (with a warning) if either variable is
    constant.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D and of equal length")
    n = len(x)
    if n < 2:
        raise InsufficientDataError(f"Kendall tau needs at least 2 points, got {n}")
    iu = np.triu_indices(n, 1)
    sx = np.sign(x[:, None] - x[None, :])[iu].astype(np.int64)
    sy = np.sign(y[:, None] - y[None, :])[iu].astype(np.int64)
    s = int(np.sum(sx * sy))  # C - D
    n0 = n * (n - 1) // 2
    n1 = int(np.sum(sx == 0))
    n2 = int(np.sum(sy == 0))
    denom = (n0 - n1) * (n0 - n2)
    if denom == 0:
        warnings.warn("Kendall tau undefined for a constant variable; returning 0",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    return max(-1.0, min(1.0, s / math.sqrt(denom)))


def classify_correlation(r2: float, tau: float) -> str:
    """Label a (R^2, tau) pair as Strong / Modest / Weak / None.

    Rank correlation decides whether there is any relationship at all
    (``|tau| < 0.05`` is None); R^2 then grades it.
    """
    if abs(tau) < TAU_NONE:
        return NONE
    if r2 >= R2_STRONG:
        return STRONG
    if r2 >= R2_MODEST:
        return MODEST
    return WEAK


@dataclass
class GroupStats:
    n: int
    r2: float | None = None
    rmse: float | None = None
    tau: float | None = None
    slope: float | None = None
    intercept: float | None = None
    label: str | None = None

    @classmethod
    def compute(cls, x, y) -> "GroupStats":
        n = len(x)
        if n < 3 or np.ptp(x) == 0:
            return cls(n=n)
        fit = linear_fit(x, y)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            tau = kendall_tau(x, y)
        return cls(n=n, r2=fit.r2, rmse=fit.rmse, tau=tau, slope=fit.slope,
                   intercept=fit.intercept, label=classify_correlation(fit.r2, tau))


@dataclass
class SimpsonVerdict:
    flagged: bool
    aggregate_sign: int
    subgroup_signs: dict = field(default_factory=dict)
    evidence: list = field(default_factory=list)
    strength: float = 0.1


@dataclass
class CorrelationReport:
    metric: str
    target: str
    per_subgroup: dict
    aggregate: GroupStats
    simpson: SimpsonVerdict | None = None
    # (model_id, subgroup, x, y) rows actually used, sorted by model_id
    points: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "metric": self.metric,
            "target": self.target,
            "per_subgroup": {k: asdict(v) for k, v in self.per_subgroup.items()},
            "aggregate": asdict(self.aggregate),
            "simpson": asdict(self.simpson) if self.simpson else None,
        }

    def write_csvs(self, directory) -> list[Path]:
        """One ``<metric>,<target>`` CSV per subgroup for scatter plots."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        by_group = defaultdict(list)
        for model_id, group, x, y in self.points:
            by_group[group].append((model_id, x, y))
        paths = []
        for group in sorted(by_group):
            path = directory / f"subgroup_{_safe(group)}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["model_id", self.metric, self.target])
                for model_id, x, y in by_group[group]:
                    w.writerow([model_id, repr(x), repr(y)])
            paths.append(path)
        return paths


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name) or "_"


def _sign(v: float | None) -> int:
    if v is None or v == 0:
        return 0
    return 1 if v > 0 else -1


def subgroup_report(records: Iterable[ModelRecord], metric: str, target: str,
                    strength: float = 0.1) -> CorrelationReport:
    """Fit ``target`` against ``metric`` per subgroup and over all records.

    Records missing either value are dropped. Subgroups with fewer than three
    usable points (or a constant metric) are reported with ``n`` only. The
    Simpson verdict is attached using ``strength``.
    """
    rows = []
    for rec in sorted(records, key=lambda r: (r.model_id, r.subgroup)):
        x, y = rec.value(metric), rec.value(target)
        if x is not None and y is not None:
            rows.append((rec.model_id, rec.subgroup, x, y))
    if not rows:
        raise EmptyCorpusError(f"no record has both {metric!r} and {target!r}")
    grouped = defaultdict(lambda: ([], []))
    for _, g, x, y in rows:
        grouped[g][0].append(x)
        grouped[g][1].append(y)
    per_subgroup = {g: GroupStats.compute(np.array(xs), np.array(ys))
                    for g, (xs, ys) in sorted(grouped.items())}
    xs = np.array([r[2] for r in rows])
    ys = np.array([r[3] for r in rows])
    report = CorrelationReport(metric, target, per_subgroup, GroupStats.compute(xs, ys),
                               points=rows)
    report.simpson = detect_simpson(report, strength)
    return report


def detect_simpson(report: CorrelationReport, strength: float = 0.1) -> SimpsonVerdict:
    """Trend-reversal test on Kendall tau.

    Flagged when at least two subgroups have ``|tau| >= strength``, all of
    them share one sign, and the aggregate tau has the opposite sign with
    ``|tau| >= strength``.
    """
    signs = {g: _sign(s.tau) for g, s in report.per_subgroup.items() if s.tau is not None}
    evidence = sorted(g for g, s in report.per_subgroup.items()
                      if s.tau is not None and abs(s.tau) >= strength)
    agg_tau = report.aggregate.tau
    agg_sign = _sign(agg_tau)
    ev_signs = {signs[g] for g in evidence}
    flagged = (
        len(evidence) >= 2
        and len(ev_signs) == 1
        and agg_tau is not None
        and abs(agg_tau) >= strength
        and ev_signs == {-agg_sign}
    )
    return SimpsonVerdict(flagged=flagged, aggregate_sign=agg_sign, subgroup_signs=signs,
                          evidence=evidence, strength=strength)


def records_from_columns(metric_values, targets, groups, metric="metric",
                         target="target", ids=None) -> list[ModelRecord]:
    n = len(metric_values)
    ids = ids if ids is not None else [f"r{i:06d}" for i in range(n)]
    out = []
    for i in range(n):
        rec = ModelRecord(str(ids[i]), str(groups[i]), {metric: float(metric_values[i])})
        if target in ("train_acc", "test_acc"):
            setattr(rec, target, float(targets[i]))
        else:
            rec.metrics[target] = float(targets[i])
        out.append(rec)
    return out


class SimpsonDetector(BaseEstimator):
    """Estimator front end for :func:`subgroup_report`.

    ``fit(X, y, groups)`` takes the metric column ``X`` (1-D or one column),
    the target ``y`` and a subgroup label per row.

    Attributes
    ----------
    report_ : CorrelationReport
    flagged_ : bool
    """

    def __init__(self, strength=0.1):
        self.strength = strength

    def fit(self, X, y, groups):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            if X.shape[1] != 1:
                raise ValueError("SimpsonDetector takes a single metric column")
            X = X[:, 0]
        y = np.asarray(y, dtype=np.float64).ravel()
        groups = np.asarray(groups).ravel()
        if not (len(X) == len(y) == len(groups)):
            raise ValueError("X, y and groups must have equal length")
        self.report_ = subgroup_report(records_from_columns(X, y, groups), "metric",
                                       "target", strength=self.strength)
        self.verdict_ = self.report_.simpson
        self.flagged_ = self.verdict_.flagged
        self.n_features_in_ = 1
        return self
