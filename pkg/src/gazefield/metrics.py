"""Evaluation metrics: AUC, Dist, MDist, Ang, MAng, accumulative curves.

Distances live in normalized image coordinates (image is 1 x 1), angles in
degrees. AUC follows the fixation-cell protocol: heatmap values are
classifier scores, cells containing any ground-truth annotation are the
positives, and the ROC area is the rank statistic with ties counting 1/2.

Samples where the predicted point (or the mean annotation) coincides with
the head position have no defined angle; they are excluded from angular
means and counted in the report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .field import NormalizedPoint
from .heatmap import decode_argmax

DEFAULT_THRESHOLDS = tuple(np.round(np.linspace(0.0, 0.5, 51), 6))


@dataclass
class GroundTruthSet:
    """One or more annotated gaze points plus the head position."""
    annotations: np.ndarray  # (k, 2), normalized
    head: np.ndarray         # (2,), normalized

    def __post_init__(self):
        self.annotations = np.atleast_2d(np.asarray(self.annotations, dtype=np.float64))
        self.head = np.asarray(self.head, dtype=np.float64)
        if self.annotations.shape[0] < 1 or self.annotations.shape[1] != 2:
            raise ValueError(f"need at least one (x, y) annotation, got shape {self.annotations.shape}")
        if np.any(self.annotations < 0.0) or np.any(self.annotations > 1.0):
            raise ValueError("annotations must lie inside [0,1]^2")

    @property
    def mean_point(self) -> np.ndarray:
        return self.annotations.mean(axis=0)


def _as_xy(p) -> np.ndarray:
    if isinstance(p, NormalizedPoint):
        return p.as_array()
    return np.asarray(p, dtype=np.float64)


def dist(pred, gts: GroundTruthSet) -> float:
    """Euclidean distance to the mean of the annotations."""
    return float(np.linalg.norm(_as_xy(pred) - gts.mean_point))


def mdist(pred, gts: GroundTruthSet) -> float:
    """Minimum Euclidean distance over the annotations."""
    return float(np.min(np.linalg.norm(gts.annotations - _as_xy(pred)[None, :], axis=1)))


def _angle_deg(u: np.ndarray, v: np.ndarray) -> float | None:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return None
    cos = float(np.dot(u, v) / (nu * nv))
    return math.degrees(math.acos(min(1.0, max(-1.0, cos))))


def ang(pred, gts: GroundTruthSet) -> float | None:
    """Angle between head->pred and head->mean(annotations), or None if degenerate."""
    p = _as_xy(pred)
    return _angle_deg(p - gts.head, gts.mean_point - gts.head)


def mang(pred, gts: GroundTruthSet) -> float | None:
    """Minimum angle between head->pred and head->annotation over annotations."""
    p = _as_xy(pred)
    u = p - gts.head
    angles = [_angle_deg(u, a - gts.head) for a in gts.annotations]
    angles = [a for a in angles if a is not None]
    return min(angles) if angles else None


def gt_cells(gts: GroundTruthSet, width: int, height: int) -> set[tuple[int, int]]:
    """(row, col) cells containing at least one annotation."""
    cells = set()
    for x, y in gts.annotations:
        c = min(int(x * width), width - 1)
        r = min(int(y * height), height - 1)
        cells.add((r, c))
    return cells


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[j + 1] == s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(pred_heatmap: np.ndarray, gts: GroundTruthSet) -> float:
    """ROC area with GT-containing cells as positives, ties contributing 1/2."""
    h, w = pred_heatmap.shape
    positives = gt_cells(gts, w, h)
    n_pos = len(positives)
    n_neg = h * w - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: all cells positive or all negative")
    scores = pred_heatmap.reshape(-1)
    ranks = _average_ranks(scores)
    pos_idx = [r * w + c for r, c in positives]
    rank_sum = float(ranks[pos_idx].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def accumulative_curve(dists, thresholds) -> list[tuple[float, float]]:
    """Fraction of samples with dist <= t, for each threshold t (ascending)."""
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    d = np.asarray(list(dists), dtype=np.float64)
    if d.size == 0:
        return [(float(t), 0.0) for t in thresholds]
    return [(float(t), float(np.mean(d <= t))) for t in thresholds]


# ---------------------------------------------------------------------------
# report assembly
# ---------------------------------------------------------------------------


@dataclass
class SampleMetrics:
    index: int
    auc: float
    dist: float
    mdist: float
    ang_degrees: float | None
    mang_degrees: float | None


@dataclass
class MetricReport:
    samples: list[SampleMetrics]
    curve: list[tuple[float, float]]
    ang_excluded: int = 0
    mang_excluded: int = 0
    aggregate: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.samples)


def _mean_or_none(values) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate_heatmaps(heatmaps, gt_sets, thresholds=DEFAULT_THRESHOLDS) -> MetricReport:
    """Score predicted heatmaps against annotations, in sample order."""
    samples = []
    for i, (hm, gts) in enumerate(zip(heatmaps, gt_sets)):
        pred = decode_argmax(hm)
        samples.append(SampleMetrics(
            index=i,
            auc=auc(hm, gts),
            dist=dist(pred, gts),
            mdist=mdist(pred, gts),
            ang_degrees=ang(pred, gts),
            mang_degrees=mang(pred, gts),
        ))
    curve = accumulative_curve([s.dist for s in samples], thresholds)
    report = MetricReport(
        samples=samples,
        curve=curve,
        ang_excluded=sum(1 for s in samples if s.ang_degrees is None),
        mang_excluded=sum(1 for s in samples if s.mang_degrees is None),
    )
    report.aggregate = {
        "n_samples": report.n_samples,
        "auc": _mean_or_none(s.auc for s in samples),
        "dist": _mean_or_none(s.dist for s in samples),
        "mdist": _mean_or_none(s.mdist for s in samples),
        "ang_degrees": _mean_or_none(s.ang_degrees for s in samples),
        "mang_degrees": _mean_or_none(s.mang_degrees for s in samples),
        "ang_excluded": report.ang_excluded,
        "mang_excluded": report.mang_excluded,
    }
    return report


def write_per_sample_csv(report: MetricReport, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("index,auc,dist,mdist,ang_degrees,mang_degrees\n")
        for s in report.samples:
            a = "" if s.ang_degrees is None else repr(s.ang_degrees)
            m = "" if s.mang_degrees is None else repr(s.mang_degrees)
            fh.write(f"{s.index},{s.auc!r},{s.dist!r},{s.mdist!r},{a},{m}\n")


def write_curve_csv(report: MetricReport, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("threshold,fraction\n")
        for t, frac in report.curve:
            fh.write(f"{t!r},{frac!r}\n")


def write_aggregate_json(report: MetricReport, path: str) -> None:
    doc = dict(report.aggregate)
    doc["curve"] = [[t, f] for t, f in report.curve]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
