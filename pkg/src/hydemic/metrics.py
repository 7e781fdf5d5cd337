"""Classification metrics: confusion matrix, multiclass MCC, TPR, prediction
confidence and density-normalized confidence histograms."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError

FD_FALLBACK_WIDTH = 1.0
FD_MAX_WIDTH = 5.0
MAX_BINS = 1000


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())


def confusion_matrix(true_labels, pred_labels, n_classes) -> ConfusionMatrix:
    t = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    p = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    if t.shape != p.shape:
        raise ValueError(f"{t.size} true labels but {p.size} predictions")
    if t.size and (min(t.min(), p.min()) < 0 or max(t.max(), p.max()) >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    counts = np.bincount(t * n_classes + p, minlength=n_classes * n_classes)
    return ConfusionMatrix(counts.reshape(n_classes, n_classes))


def mcc_multiclass(m: ConfusionMatrix) -> float:
    """Multiclass Matthews correlation coefficient (covariance form).

    Returns 0 when either marginal is concentrated on a single class.
    """
    counts = m.counts if isinstance(m, ConfusionMatrix) else np.asarray(m)
    s = int(counts.sum())
    if s <= 0:
        raise ValueError("confusion matrix is empty")
    c = int(np.trace(counts))
    t = [int(v) for v in counts.sum(axis=1)]
    p = [int(v) for v in counts.sum(axis=0)]
    num = c * s - sum(pk * tk for pk, tk in zip(p, t))
    a = s * s - sum(pk * pk for pk in p)
    b = s * s - sum(tk * tk for tk in t)
    if a == 0 or b == 0:
        return 0.0
    den_sq = a * b
    root = math.isqrt(den_sq)
    if root * root == den_sq:
        return num / root
    return num / math.sqrt(den_sq)


def tpr(true_labels, pred_labels) -> float:
    """Micro-averaged true positive rate (fraction of exact matches)."""
    t = np.asarray(true_labels).reshape(-1)
    p = np.asarray(pred_labels).reshape(-1)
    if t.size == 0:
        raise ValueError("no samples")
    if t.shape != p.shape:
        raise ValueError("label arrays differ in length")
    return float(np.count_nonzero(t == p)) / t.size


def prediction_confidence(probabilities) -> np.ndarray:
    """Percent confidence (100 x largest probability) per row."""
    probs = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6) or np.any(probs < 0):
        raise ValueError("each row must be a probability vector")
    return 100.0 * probs.max(axis=1)


def iqr(values) -> float:
    q75, q25 = np.percentile(np.asarray(values, dtype=np.float64), [75, 25])
    return float(q75 - q25)


def fd_bin_width(values, max_width=FD_MAX_WIDTH, fallback=FD_FALLBACK_WIDTH) -> float:
    """Freedman-Diaconis width ``2 * IQR * n**(-1/3)``, capped at ``max_width``.

    A zero IQR falls back to ``fallback``.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size < 2:
        raise ValueError("Freedman-Diaconis needs at least two values")
    spread = iqr(v)
    if spread == 0.0:
        return fallback
    return min(2.0 * spread * v.size ** (-1.0 / 3.0), max_width)


@dataclass(frozen=True)
class ConfidenceRecord:
    pixel_index: int
    confidence_percent: float
    true_class: int
    pred_class: int

    @property
    def correct(self):
        return self.true_class == self.pred_class


@dataclass(frozen=True, eq=False)
class DensityHistogram:
    bin_edges: np.ndarray
    densities: np.ndarray
    group: str
    n: int

    def area(self) -> float:
        return float(np.sum(self.densities * np.diff(self.bin_edges)))


def density_histogram(values, group="all") -> DensityHistogram:
    """Uniform-width bins covering ``[min, max]``, densities ``N_i / (N * width)``.

    The Freedman-Diaconis width is widened if it would need more than
    ``MAX_BINS`` bins (a tiny IQR with far outliers).
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        return DensityHistogram(np.zeros(0), np.zeros(0), group, 0)
    h = fd_bin_width(v) if v.size >= 2 else FD_FALLBACK_WIDTH
    lo, hi = float(v.min()), float(v.max())
    if (hi - lo) / h > MAX_BINS:
        h = (hi - lo) / MAX_BINS
    n_bins = max(1, math.ceil((hi - lo) / h))
    edges = lo + h * np.arange(n_bins + 1)
    if edges[-1] < hi:
        edges = np.append(edges, edges[-1] + h)
    counts, _ = np.histogram(v, bins=edges)  # right-open bins, last bin closed
    densities = counts / (v.size * np.diff(edges))
    return DensityHistogram(edges, densities, group, int(v.size))


def confidence_histogram(records, group) -> DensityHistogram:
    if group not in ("correct", "incorrect"):
        raise ValueError("group must be 'correct' or 'incorrect'")
    want = group == "correct"
    values = [r.confidence_percent for r in records if r.correct == want]
    return density_histogram(values, group)


def confidence_records(classes, confidence, truth):
    c = np.asarray(classes).reshape(-1)
    conf = np.asarray(confidence, dtype=np.float64).reshape(-1)
    t = np.asarray(truth).reshape(-1)
    return [ConfidenceRecord(i, float(conf[i]), int(t[i]), int(c[i])) for i in range(c.size)]


def _mean(x):
    return float(np.mean(x)) if len(x) else None


def _median(x):
    return float(np.median(x)) if len(x) else None


@dataclass(eq=False)
class EvaluationReport:
    confusion: ConfusionMatrix
    mcc: float
    tpr: float
    n_correct: int
    n_incorrect: int
    mean_confidence: float
    median_confidence: float
    mean_confidence_correct: float | None
    mean_confidence_incorrect: float | None
    hist_correct: DensityHistogram
    hist_incorrect: DensityHistogram
    records: list = field(default_factory=list, repr=False)
    class_names: tuple | None = None

    def to_dict(self):
        def hist(hg):
            return {"n": hg.n, "bin_edges": hg.bin_edges.tolist(), "densities": hg.densities.tolist()}

        d = {
            "mcc": self.mcc,
            "tpr": self.tpr,
            "n_pixels": self.n_correct + self.n_incorrect,
            "n_correct": self.n_correct,
            "n_incorrect": self.n_incorrect,
            "mean_confidence": self.mean_confidence,
            "median_confidence": self.median_confidence,
            "mean_confidence_correct": self.mean_confidence_correct,
            "mean_confidence_incorrect": self.mean_confidence_incorrect,
            "confusion_matrix": self.confusion.counts.tolist(),
            "histograms": {"correct": hist(self.hist_correct), "incorrect": hist(self.hist_incorrect)},
        }
        if self.class_names is not None:
            d["class_names"] = list(self.class_names)
        return d

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")

    def write_csvs(self, directory):
        """Plot-ready companions: per-pixel confidences and both histograms."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "confidence_scatter.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pixel_index", "confidence", "correct", "true_class", "pred_class"])
            for r in self.records:
                w.writerow([r.pixel_index, repr(r.confidence_percent), int(r.correct),
                            r.true_class, r.pred_class])
        for hg in (self.hist_correct, self.hist_incorrect):
            with open(out / f"hist_{hg.group}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["left_edge", "right_edge", "density"])
                for i in range(hg.densities.size):
                    w.writerow([repr(float(hg.bin_edges[i])), repr(float(hg.bin_edges[i + 1])),
                                repr(float(hg.densities[i]))])


def evaluation_report(mineral_map, truth, n_classes=None, class_names=None) -> EvaluationReport:
    """Bundle every metric for a predicted map against its truth grid."""
    classes = np.asarray(mineral_map.classes)
    truth = np.asarray(truth)
    if classes.shape != truth.shape:
        raise DimensionError(f"map shape {classes.shape} != truth shape {truth.shape}")
    if n_classes is None:
        n_classes = len(class_names) if class_names is not None else \
            int(max(classes.max(), truth.max())) + 1
    cm = confusion_matrix(truth, classes, n_classes)
    conf = np.asarray(mineral_map.confidence, dtype=np.float64).reshape(-1)
    correct = classes.reshape(-1) == truth.reshape(-1)
    records = confidence_records(classes, conf, truth)
    return EvaluationReport(
        confusion=cm,
        mcc=mcc_multiclass(cm),
        tpr=tpr(truth, classes),
        n_correct=int(correct.sum()),
        n_incorrect=int((~correct).sum()),
        mean_confidence=_mean(conf),
        median_confidence=_median(conf),
        mean_confidence_correct=_mean(conf[correct]),
        mean_confidence_incorrect=_mean(conf[~correct]),
        hist_correct=confidence_histogram(records, "correct"),
        hist_incorrect=confidence_histogram(records, "incorrect"),
        records=records,
        class_names=tuple(class_names) if class_names is not None else None,
    )


def boundary_mask(truth, radius=2) -> np.ndarray:
    """Pixels with a differently-labelled pixel within Chebyshev distance ``radius``."""
    t = np.asarray(truth)
    h, w = t.shape
    near = np.zeros((h, w), dtype=bool)
    padded = np.pad(t, radius, mode="edge")
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = padded[radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            near |= shifted != t
    return near
