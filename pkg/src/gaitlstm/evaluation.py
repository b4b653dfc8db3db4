"""Confusion-matrix metrics and whole-recording prediction by probability pooling.

PD is the positive class. Ratios whose denominator is zero are reported as
``None`` ("undefined") instead of being coerced to 0 or 1.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Cohort, Segment, stack_segments
from .errors import InvalidInputError, ShapeError
from .model import LstmClassifier, predict_proba

CSV_HEADER = "level,tp,fp,tn,fn,precision,sensitivity,specificity,accuracy"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass(frozen=True)
class EvalReport:
    counts: ConfusionCounts
    level: str = "segment"

    @property
    def precision(self) -> float | None:
        return _ratio(self.counts.tp, self.counts.tp + self.counts.fp)

    @property
    def sensitivity(self) -> float | None:
        return _ratio(self.counts.tp, self.counts.tp + self.counts.fn)

    @property
    def specificity(self) -> float | None:
        return _ratio(self.counts.tn, self.counts.tn + self.counts.fp)

    @property
    def accuracy(self) -> float | None:
        return _ratio(self.counts.tp + self.counts.tn, self.counts.total)

    def metrics(self) -> dict[str, float | None]:
        return {
            "precision": self.precision,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "accuracy": self.accuracy,
        }

    def to_text(self) -> str:
        c = self.counts
        lines = [f"level={self.level}", f"tp={c.tp}", f"fp={c.fp}", f"tn={c.tn}", f"fn={c.fn}"]
        lines += [f"{k}={_fmt(v)}" for k, v in self.metrics().items()]
        return "\n".join(lines) + "\n"

    def csv_row(self) -> str:
        c = self.counts
        vals = [self.level, c.tp, c.fp, c.tn, c.fn, *(_fmt(v) for v in self.metrics().values())]
        return ",".join(str(v) for v in vals)


def _fmt(v: float | None) -> str:
    return "undefined" if v is None else repr(float(v))


def compute_metrics(predictions: Sequence[int], truths: Sequence[int], level: str = "segment") -> EvalReport:
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(truths, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ShapeError(f"predictions {pred.shape} and truths {true.shape} must be equal-length 1-D")
    if pred.size == 0:
        raise InvalidInputError("cannot compute metrics on zero items")
    pos = int(Cohort.PD)
    tp = int(np.sum((pred == pos) & (true == pos)))
    fp = int(np.sum((pred == pos) & (true != pos)))
    tn = int(np.sum((pred != pos) & (true != pos)))
    fn = int(np.sum((pred != pos) & (true == pos)))
    return EvalReport(ConfusionCounts(tp, fp, tn, fn), level)


def pool_probabilities(probs) -> np.ndarray:
    """Mean of per-segment distributions.

    ``math.fsum`` makes each column sum exactly rounded, hence independent of
    segment order.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise InvalidInputError(f"need at least one probability vector, got shape {probs.shape}")
    n = probs.shape[0]
    return np.array([math.fsum(probs[:, k]) / n for k in range(probs.shape[1])])


def decide(pooled: np.ndarray) -> Cohort:
    # np.argmax returns the first maximum, so exact ties go to Control
    return Cohort(int(np.argmax(pooled)))


def predict_subject(model: LstmClassifier, segments: Sequence[Segment]) -> tuple[Cohort, np.ndarray]:
    """Classify one recording from all its segments by averaging their softmax outputs."""
    if not segments:
        raise InvalidInputError("no segments to classify (recording shorter than one window?)")
    xs = np.stack([s.features for s in segments])
    pooled = pool_probabilities(predict_proba(model, xs))
    return decide(pooled), pooled


def group_by_recording(segments: Sequence[Segment]) -> "OrderedDict[str, list[Segment]]":
    groups: OrderedDict[str, list[Segment]] = OrderedDict()
    for s in segments:
        groups.setdefault(s.recording_id or s.source_subject, []).append(s)
    return groups


def evaluate_segments(model: LstmClassifier, segments: Sequence[Segment], probs=None) -> EvalReport:
    xs, ys = stack_segments(segments)
    if probs is None:
        probs = predict_proba(model, xs)
    return compute_metrics(np.argmax(probs, axis=1), ys, "segment")


def evaluate_subjects(model: LstmClassifier, segments: Sequence[Segment], probs=None) -> EvalReport:
    """Recording-level metrics: each recording's segments are pooled into one decision.

    ``probs`` may carry precomputed per-segment probabilities aligned with
    ``segments`` to avoid a second forward pass.
    """
    if probs is None:
        xs, _ = stack_segments(segments)
        probs = predict_proba(model, xs)
    probs = np.asarray(probs)
    index = {id(s): k for k, s in enumerate(segments)}
    preds, truths = [], []
    for segs in group_by_recording(segments).values():
        pooled = pool_probabilities(probs[[index[id(s)] for s in segs]])
        preds.append(int(decide(pooled)))
        truths.append(int(segs[0].label))
    return compute_metrics(preds, truths, "subject")
