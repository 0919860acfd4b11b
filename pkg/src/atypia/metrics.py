"""Prevalence-robust evaluation: tie-corrected AUROC, thresholded confusion
metrics, balanced accuracy, fold aggregation and probability ensembling.

Metric values are computed as fractions in [0, 1]; reports expose them as
percentages. Rendering is fixed at two decimals with half-up rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError

__all__ = [
    "ScoredSet",
    "Confusion",
    "MetricsReport",
    "FoldSummary",
    "auroc",
    "confusion_at",
    "balanced_accuracy",
    "aggregate_folds",
    "ensemble_average",
    "select_submission",
    "format_percent",
    "format_fraction",
]


def format_percent(value: float) -> str:
    """Render a percent-valued number at two decimals, rounding halves up."""
    return str(Decimal(float(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def format_fraction(value: float) -> str:
    """Render a fraction in [0, 1] as a percent string at two decimals.

    Rounding happens on the fraction itself (at four decimal places,
    half-up) before scaling, so the rendered value reflects the number
    actually computed rather than a separately rounded ``value * 100``.
    """
    quantized = Decimal(float(value)).quantize(Decimal("0.0001"), rounding=ROUND_HALF_UP)
    return str((quantized * 100).quantize(Decimal("0.01")))


@dataclass(frozen=True, eq=False)
class ScoredSet:
    """Parallel probabilities and binary labels for one evaluation."""

    probabilities: np.ndarray
    labels: np.ndarray

    def __init__(self, probabilities, labels) -> None:
        probs = np.asarray(probabilities, dtype=np.float64)
        labs = np.asarray(labels, dtype=np.int64)
        if probs.ndim != 1 or labs.ndim != 1 or probs.shape != labs.shape:
            raise ValidationError("probabilities and labels must be equal-length 1-d sequences")
        if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
            raise ValidationError("probabilities must lie in [0, 1]")
        if not np.isin(labs, (0, 1)).all():
            raise ValidationError("labels must be 0 or 1")
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "labels", labs)

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def n_pos(self) -> int:
        return int((self.labels == 1).sum())

    @property
    def n_neg(self) -> int:
        return int((self.labels == 0).sum())


def auroc(scored: ScoredSet) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic, ties counted half.

    Rank-based O(n log n) form; exactly equal to brute-force enumeration
    over all (positive, negative) pairs, including heavy ties.
    """
    n_pos, n_neg = scored.n_pos, scored.n_neg
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUROC undefined: need at least one sample of each class")
    ranks = rankdata(scored.probabilities, method="average")
    u = ranks[scored.labels == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


class Confusion(NamedTuple):
    tp: int
    fp: int
    tn: int
    fn: int
    sensitivity: Optional[float]
    specificity: Optional[float]
    accuracy: float


def confusion_at(scored: ScoredSet, threshold: float) -> Confusion:
    """Confusion counts and rates predicting positive iff probability >= threshold.

    When a class is absent its rate is None rather than a silent zero.
    """
    if len(scored) == 0:
        raise ValidationError("confusion undefined on an empty set")
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {threshold}")
    predicted = scored.probabilities >= threshold
    actual = scored.labels == 1
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    tn = int((~predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    sensitivity = tp / (tp + fn) if (tp + fn) else None
    specificity = tn / (tn + fp) if (tn + fp) else None
    accuracy = (tp + tn) / len(scored)
    return Confusion(tp, fp, tn, fn, sensitivity, specificity, accuracy)


def balanced_accuracy(sensitivity: float, specificity: float) -> float:
    """Arithmetic mean of sensitivity and specificity (same units in, same out)."""
    if sensitivity is None or specificity is None:
        raise ValidationError("balanced accuracy undefined: a class rate is undefined")
    return (sensitivity + specificity) / 2


@dataclass(frozen=True)
class MetricsReport:
    """One evaluation's metric bundle, all values as percentages.

    The decision threshold behind sensitivity/specificity is part of the
    report; there is no implicit operating point.
    """

    auroc: float
    accuracy: float
    sensitivity: float
    specificity: float
    balanced_accuracy: float
    threshold: float

    def __post_init__(self) -> None:
        for name in ("auroc", "accuracy", "sensitivity", "specificity", "balanced_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValidationError(f"{name} must lie in [0, 100], got {v}")
        expected = (self.sensitivity + self.specificity) / 2
        if not math.isclose(self.balanced_accuracy, expected, rel_tol=0.0, abs_tol=1e-9):
            raise ValidationError("balanced_accuracy must equal (sensitivity + specificity) / 2")

    @classmethod
    def from_scored(cls, scored: ScoredSet, threshold: float) -> "MetricsReport":
        area = auroc(scored)
        conf = confusion_at(scored, threshold)
        if conf.sensitivity is None or conf.specificity is None:
            raise ValidationError("both classes required for a full metrics report")
        sens = conf.sensitivity * 100
        spec = conf.specificity * 100
        return cls(
            auroc=area * 100,
            accuracy=conf.accuracy * 100,
            sensitivity=sens,
            specificity=spec,
            balanced_accuracy=balanced_accuracy(sens, spec),
            threshold=threshold,
        )

    def to_flat(self) -> dict:
        return {
            "auroc": self.auroc,
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "balanced_accuracy": self.balanced_accuracy,
            "threshold": self.threshold,
        }


@dataclass(frozen=True)
class FoldSummary:
    """Per-fold values with their mean and standard deviation."""

    values: tuple
    mean: float
    sd: float
    population: bool = True

    def __post_init__(self) -> None:
        if not self.values:
            raise ValidationError("fold summary needs at least one value")
        m = sum(self.values) / len(self.values)
        divisor = len(self.values) if self.population else max(len(self.values) - 1, 1)
        s = math.sqrt(sum((v - m) ** 2 for v in self.values) / divisor)
        if not (math.isclose(self.mean, m, abs_tol=1e-9) and math.isclose(self.sd, s, abs_tol=1e-9)):
            raise ValidationError("stored mean/sd do not match the fold values")

    @property
    def k(self) -> int:
        return len(self.values)

    def render(self) -> str:
        return f"{format_percent(self.mean)} ± {format_percent(self.sd)}"


def aggregate_folds(values: Sequence[float], population: bool = True) -> FoldSummary:
    """Mean and standard deviation across folds.

    The default population (divisor-k) deviation is the convention the
    reported tables use; pass ``population=False`` for the sample form.
    """
    vals = tuple(float(v) for v in values)
    if not vals:
        raise ValidationError("cannot aggregate zero fold values")
    divisor = len(vals) if population else len(vals) - 1
    if divisor < 1:
        raise ValidationError("sample standard deviation needs at least two values")
    mean = sum(vals) / len(vals)
    sd = math.sqrt(sum((v - mean) ** 2 for v in vals) / divisor)
    return FoldSummary(values=vals, mean=mean, sd=sd, population=population)


def ensemble_average(prob_lists: Sequence[Sequence[float]]) -> np.ndarray:
    """Element-wise arithmetic mean of m parallel probability lists."""
    if len(prob_lists) == 0:
        raise ValidationError("ensemble needs at least one probability list")
    arrays = [np.asarray(p, dtype=np.float64) for p in prob_lists]
    n = arrays[0].shape
    if any(a.shape != n for a in arrays):
        raise ValidationError("probability lists must have equal lengths")
    return np.mean(arrays, axis=0)


def select_submission(candidates: Sequence[tuple]) -> str:
    """Pick the candidate name with the highest AUROC.

    Ties fall back to balanced accuracy, then to the lexicographically
    smallest name, so selection is deterministic.
    """
    if not candidates:
        raise ValidationError("no candidates to select from")
    def key(item):
        name, report = item
        return (-report.auroc, -report.balanced_accuracy, name)
    return min(candidates, key=key)[0]
