"""Workload classification from cluster- and node-level telemetry.

Features are computed from a trace, a nearest-centroid model is fitted on
per-feature standardized vectors, and predictions are reconciled against
what the customer declared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping, Optional, Sequence

import numpy as np

from . import serial
from .accounting import ComputeEstimate
from .telemetry import WORKLOAD_CLASSES, TelemetryTrace, power_inverse

MODEL_FORMAT = "nearest-centroid/1"
UNKNOWN = "unknown"
OUTCOMES = ("match", "mismatch", "follow_up")

MISMATCH_CONFIDENCE = 0.9
FOLLOW_UP_CONFIDENCE = 0.5
OPS_SLACK = 1.1
MIN_EXAMPLES_PER_CLASS = 10


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    util_mean: float
    util_cv: float
    external_io_ratio: float
    inter_node_comm_periodicity: float
    precision_mix_entropy: float
    power_cv: float
    scale_accel_count: int

    def as_array(self) -> np.ndarray:
        return np.array([float(getattr(self, f.name)) for f in fields(self)])

    @classmethod
    def from_array(cls, arr) -> "FeatureVector":
        vals = [float(x) for x in arr]
        vals[-1] = int(round(vals[-1]))
        return cls(*vals)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def zero(cls) -> "FeatureVector":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)


FEATURE_NAMES = tuple(f.name for f in fields(FeatureVector))


def _cv(x: np.ndarray) -> float:
    m = float(x.mean())
    return float(x.std()) / m if m > 0 else 0.0


def periodicity_score(series: np.ndarray) -> float:
    """Largest autocorrelation of the differenced series at lags >= 2.

    Differencing removes slow trends (e.g. diurnal load) so that only
    repeating bursts score highly.  Result is clipped to [0, 1].
    """
    d = np.diff(np.asarray(series, dtype=float))
    if d.size < 4:
        return 0.0
    d = d - d.mean()
    denom = float(np.dot(d, d))
    if denom <= 0.0:
        return 0.0
    best = 0.0
    for lag in range(2, d.size // 2 + 1):
        r = float(np.dot(d[:-lag], d[lag:])) / denom
        best = max(best, r)
    return min(max(best, 0.0), 1.0)


def extract_features(trace: TelemetryTrace) -> FeatureVector:
    """Summarize a trace as a :class:`FeatureVector`.

    Without accelerator counters, utilization falls back to the inverse
    power model and the precision entropy is reported as 0.
    """
    if len(trace) == 0:
        return FeatureVector.zero()
    accel = trace.cluster.node.accelerator
    n_acc = trace.cluster.node.accel_count

    if trace.accel_util is not None:
        util = trace.accel_util
    else:
        trace.require("power_watts")
        util = power_inverse(accel, trace.power_watts / n_acc)

    ext = inter = intra = 0.0
    if trace.external_io_bytes is not None:
        ext = float(trace.external_io_bytes.sum())
    if trace.inter_node_bytes is not None:
        inter = float(trace.inter_node_bytes.sum())
    if trace.intra_node_bytes is not None:
        intra = float(trace.intra_node_bytes.sum())
    total_bytes = ext + inter + intra
    ext_ratio = ext / total_bytes if total_bytes > 0 else 0.0

    periodicity = 0.0
    if trace.inter_node_bytes is not None:
        periodicity = periodicity_score(trace.inter_node_bytes.sum(axis=1))

    entropy = 0.0
    if trace.ops_by_precision is not None:
        totals = np.array([float(v.sum()) for v in trace.ops_by_precision.values()])
        s = totals.sum()
        if s > 0:
            p = totals[totals > 0] / s
            entropy = float(-(p * np.log(p)).sum())

    power_cv = _cv(trace.power_watts) if trace.power_watts is not None else 0.0

    return FeatureVector(
        util_mean=float(util.mean()),
        util_cv=_cv(util),
        external_io_ratio=ext_ratio,
        inter_node_comm_periodicity=periodicity,
        precision_mix_entropy=entropy,
        power_cv=power_cv,
        scale_accel_count=trace.cluster.accel_count,
    )


@dataclass(frozen=True)
class ClassifierModel:
    """Nearest-centroid model over standardized features."""

    classes: tuple[str, ...]
    mean: tuple[float, ...]
    scale: tuple[float, ...]
    centroids: tuple[tuple[float, ...], ...]
    seed: int

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - np.asarray(self.mean)) / np.asarray(self.scale)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "seed": self.seed,
            "features": list(FEATURE_NAMES),
            "classes": list(self.classes),
            "mean": list(self.mean),
            "scale": list(self.scale),
            "centroids": [list(c) for c in self.centroids],
        }

    def dumps(self) -> str:
        return serial.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping) -> "ClassifierModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        if list(d["features"]) != list(FEATURE_NAMES):
            raise ValueError("model was fitted on a different feature set")
        return cls(
            classes=tuple(d["classes"]),
            mean=tuple(float(x) for x in d["mean"]),
            scale=tuple(float(x) for x in d["scale"]),
            centroids=tuple(tuple(float(x) for x in c) for c in d["centroids"]),
            seed=int(d["seed"]),
        )

    @classmethod
    def loads(cls, text: str) -> "ClassifierModel":
        return cls.from_dict(serial.loads(text))


def fit_classifier(
    labeled: Sequence[tuple[FeatureVector, str]], seed: int = 0
) -> ClassifierModel:
    """Fit a nearest-centroid classifier.

    Needs at least two classes with ``MIN_EXAMPLES_PER_CLASS`` examples
    each.  The fit has no random component; ``seed`` is recorded for
    provenance only.
    """
    by_class: dict[str, list[np.ndarray]] = {}
    for fv, label in labeled:
        if label not in WORKLOAD_CLASSES:
            raise ValueError(f"unknown class label {label!r}")
        by_class.setdefault(label, []).append(fv.as_array())
    if len(by_class) < 2:
        raise InsufficientData("need at least two classes")
    short = [c for c, xs in by_class.items() if len(xs) < MIN_EXAMPLES_PER_CLASS]
    if short:
        raise InsufficientData(f"fewer than {MIN_EXAMPLES_PER_CLASS} examples for {sorted(short)}")

    classes = tuple(c for c in WORKLOAD_CLASSES if c in by_class)
    X = np.vstack([x for c in classes for x in by_class[c]])
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    centroids = tuple(
        tuple(float(v) for v in ((np.vstack(by_class[c]) - mean) / scale).mean(axis=0)) for c in classes
    )
    return ClassifierModel(
        classes=classes,
        mean=tuple(float(v) for v in mean),
        scale=tuple(float(v) for v in scale),
        centroids=centroids,
        seed=int(seed),
    )


@dataclass(frozen=True)
class ClassificationResult:
    label_scores: Mapping[str, float]
    top_label: str
    confidence: float
    features: FeatureVector

    def to_dict(self) -> dict:
        return {
            "top_label": self.top_label,
            "confidence": float(self.confidence),
            "label_scores": {k: float(v) for k, v in self.label_scores.items()},
            "features": self.features.to_dict(),
        }


def classify_workload(features: FeatureVector, model: ClassifierModel) -> ClassificationResult:
    """Score ``features`` against each class centroid.

    Scores are a softmax over ``-d**2 / 2`` (``d`` the standardized
    distance to each centroid).  A zero-scale vector (empty trace) is
    labelled ``unknown`` with uniform scores and confidence 0.
    """
    k = len(model.classes)
    if features.scale_accel_count == 0:
        return ClassificationResult({c: 1.0 / k for c in model.classes}, UNKNOWN, 0.0, features)
    z = model.standardize(features.as_array())
    d2 = ((np.asarray(model.centroids) - z) ** 2).sum(axis=1)
    logits = -0.5 * d2
    logits -= logits.max()
    w = np.exp(logits)
    p = w / w.sum()
    best = int(np.argmax(p))
    scores = {c: float(p[i]) for i, c in enumerate(model.classes)}
    return ClassificationResult(scores, model.classes[best], float(p[best]), features)


@dataclass(frozen=True)
class Declaration:
    customer_id: str
    declared_class: str
    declared_max_ops: float
    t: float = 0.0

    def __post_init__(self):
        if self.declared_class not in WORKLOAD_CLASSES:
            raise ValueError(f"unknown class {self.declared_class!r}")
        if self.declared_max_ops < 0:
            raise ValueError("declared_max_ops must be >= 0")

    def to_dict(self) -> dict:
        return {
            "customer_id": self.customer_id,
            "declared_class": self.declared_class,
            "declared_max_ops": float(self.declared_max_ops),
            "t": float(self.t),
        }


def reconcile(
    declaration: Declaration,
    result: ClassificationResult,
    estimate: Optional[ComputeEstimate],
    mismatch_confidence: float = MISMATCH_CONFIDENCE,
    follow_up_confidence: float = FOLLOW_UP_CONFIDENCE,
    ops_slack: float = OPS_SLACK,
) -> str:
    """Compare a declaration with the observed workload: match, mismatch or follow_up."""
    if estimate is not None and estimate.ops_point > declaration.declared_max_ops * ops_slack:
        return "mismatch"
    if result.top_label != declaration.declared_class and result.confidence >= mismatch_confidence:
        return "mismatch"
    if result.confidence < follow_up_confidence:
        return "follow_up"
    return "match"


def labeled_corpus(
    classes: Sequence[str], per_class: int, seed: int, obfuscation: str = "none"
) -> list[tuple[FeatureVector, str]]:
    """Features of freshly generated desk-scale traces, labelled by class.

    Trace seeds are ``seed * 100_000 + i`` so corpora built from distinct
    seeds never share a trace.
    """
    from .telemetry import sample_trace

    out = []
    for c in classes:
        for i in range(per_class):
            tr = sample_trace(c, seed * 100_000 + i, obfuscation)
            out.append((extract_features(tr), c))
    return out


def accuracy(model: ClassifierModel, labeled: Sequence[tuple[FeatureVector, str]]) -> float:
    if not labeled:
        return math.nan
    hits = sum(classify_workload(fv, model).top_label == c for fv, c in labeled)
    return hits / len(labeled)
