"""Evaluation metrics for heavily imbalanced binary problems.

A sample is predicted positive iff ``score >= threshold``. Curves are swept
over every distinct score value, from the highest to the lowest.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError

# two-sided 95 % t quantiles for df = 1..30, rounded to five decimals
T95 = {
    1: 12.7062, 2: 4.30265, 3: 3.18245, 4: 2.77645, 5: 2.57058, 6: 2.44691,
    7: 2.36462, 8: 2.306, 9: 2.26216, 10: 2.22814, 11: 2.20099, 12: 2.17881,
    13: 2.16037, 14: 2.14479, 15: 2.13145, 16: 2.11991, 17: 2.10982,
    18: 2.10092, 19: 2.09302, 20: 2.08596, 21: 2.07961, 22: 2.07387,
    23: 2.06866, 24: 2.0639, 25: 2.05954, 26: 2.05553, 27: 2.05183,
    28: 2.04841, 29: 2.04523, 30: 2.04227,
}

GRID_POINTS = 101


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def P(self):
        return self.tp + self.fn

    @property
    def N(self):
        return self.fp + self.tn


@dataclass
class CurveData:
    x: np.ndarray
    y: np.ndarray
    thresholds: np.ndarray

    @property
    def points(self):
        return list(zip(self.x.tolist(), self.y.tolist()))


@dataclass
class CIReport:
    mean: float
    std: float
    n: int
    half_width: float
    multiplier: float

    def format(self, decimals=2):
        return f"{self.mean:.{decimals}f} ± {self.half_width:.{decimals}f}"


@dataclass
class MetricReport:
    f1: float
    f1_threshold: float
    auc_pr: float
    auc_roc: float
    roc: CurveData = field(repr=False)
    pr: CurveData = field(repr=False)

    def to_dict(self):
        return {"f1": self.f1, "f1_threshold": self.f1_threshold,
                "auc_pr": self.auc_pr, "auc_roc": self.auc_roc}


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size == 0:
        raise ConfigError("empty score list")
    if scores.shape != labels.shape:
        raise ConfigError(f"{scores.size} scores but {labels.size} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise ConfigError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def _check_both(scores, labels):
    scores, labels = _check(scores, labels)
    if labels.min() == labels.max():
        raise ConfigError("both classes must be present")
    return scores, labels


def confusion_at(scores, labels, threshold) -> ConfusionCounts:
    scores, labels = _check(scores, labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    tn = int(np.sum(~pred & (labels == 0)))
    return ConfusionCounts(tp, fp, fn, tn)


def precision(c: ConfusionCounts) -> float:
    # zero predicted positives counts as precision 0
    return c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0


def recall(c: ConfusionCounts) -> float:
    if c.P == 0:
        raise ConfigError("recall is undefined without positive samples")
    return c.tp / c.P


def fpr(c: ConfusionCounts) -> float:
    if c.N == 0:
        raise ConfigError("FPR is undefined without negative samples")
    return c.fp / c.N


def f1(c: ConfusionCounts) -> float:
    p, r = precision(c), recall(c)
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def _sweep(scores, labels):
    """Cumulative (threshold, TP, FP) at every distinct score, descending."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of each run of equal scores
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    return s[last], tp[last], fp[last]


def best_f1(scores, labels) -> tuple[float, float]:
    """F1-maximising threshold over all distinct scores.

    Ties go to the largest threshold.
    """
    scores, labels = _check_both(scores, labels)
    thr, tp, fp = _sweep(scores, labels)
    P = int(labels.sum())
    tp = tp.astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
    rec = tp / P
    with np.errstate(invalid="ignore"):
        f = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    i = int(np.argmax(f))  # first max = largest threshold
    return float(thr[i]), float(f[i])


def roc_curve(scores, labels) -> CurveData:
    scores, labels = _check_both(scores, labels)
    thr, tp, fp = _sweep(scores, labels)
    P = labels.sum()
    N = labels.size - P
    x = np.r_[0.0, fp / N]
    y = np.r_[0.0, tp / P]
    return CurveData(x, y, np.r_[np.inf, thr])


def auc_roc(curve: CurveData) -> float:
    return float(np.trapezoid(curve.y, curve.x))


def pr_curve(scores, labels) -> CurveData:
    scores, labels = _check_both(scores, labels)
    thr, tp, fp = _sweep(scores, labels)
    P = labels.sum()
    return CurveData(tp / P, tp / (tp + fp), thr)


def auc_pr(curve: CurveData) -> float:
    """Step-wise average precision: sum of (R_i - R_{i-1}) * P_i, R_0 = 0."""
    r = np.r_[0.0, curve.x]
    return float(np.sum(np.diff(r) * curve.y))


def evaluate(scores, labels) -> MetricReport:
    thr, best = best_f1(scores, labels)
    roc = roc_curve(scores, labels)
    pr = pr_curve(scores, labels)
    return MetricReport(best, thr, auc_pr(pr), auc_roc(roc), roc, pr)


def t_multiplier(n: int) -> float:
    df = n - 1
    if df in T95:
        return T95[df]
    return float(stats.t.ppf(0.975, df))


def confidence_interval(values) -> CIReport:
    """Mean with a two-sided 95 % t interval, using the n-1 sample std."""
    v = np.asarray(values, dtype=np.float64)
    n = v.size
    if n < 2:
        raise ConfigError(f"confidence interval needs n >= 2, got {n}")
    mu = float(v.mean())
    sd = float(v.std(ddof=1))
    t = t_multiplier(n)
    return CIReport(mu, sd, n, t * sd / math.sqrt(n), t)


# -- curve averaging ---------------------------------------------------------

def _prepare(curve: CurveData):
    x = np.asarray(curve.x, dtype=np.float64)
    y = np.asarray(curve.y, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    x, y = x[order], y[order]
    # several points at one x: keep the upper one
    ux, inv = np.unique(x, return_inverse=True)
    uy = np.full(ux.shape, -np.inf)
    np.maximum.at(uy, inv, y)
    if ux[0] > 0:
        ux, uy = np.r_[0.0, ux], np.r_[uy[0], uy]
    if ux[0] < 0 or ux[-1] < 1 - 1e-12 or ux[-1] > 1 + 1e-12:
        raise ConfigError("curve does not cover x in [0, 1]")
    return ux, uy


def average_curves(curves, grid_points=GRID_POINTS):
    """Vertical averaging on an even grid over [0, 1].

    Returns ``(grid, mean, std)`` with the sample std across curves.
    """
    if len(curves) < 2:
        raise ConfigError("averaging needs at least two curves")
    grid = np.linspace(0.0, 1.0, grid_points)
    ys = np.stack([np.interp(grid, *_prepare(c)) for c in curves])
    return grid, ys.mean(axis=0), ys.std(axis=0, ddof=1)


def write_curve_csv(path, grid, mean, std):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y_mean", "y_std"])
        for row in zip(grid, mean, std):
            w.writerow([f"{v:.10g}" for v in row])
