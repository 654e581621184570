"""Binary segmentation metrics: overlap scores from confusion counts, and Hausdorff distance."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ShapeMismatch


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class MetricsReport:
    dice: float
    jaccard: float
    precision: float
    recall: float
    specificity: float
    f1: float
    hausdorff: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _binary(a) -> np.ndarray:
    return np.asarray(a) > 0


def confusion(pred, gt) -> ConfusionCounts:
    p, g = _binary(pred), _binary(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"pred {p.shape} vs gt {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num: int, den: int, both_empty: bool) -> float:
    # 0/0 scores 1 only when prediction and truth are both empty of the class
    if den == 0:
        return 1.0 if both_empty else 0.0
    return num / den


def scalar_metrics(c: ConfusionCounts) -> MetricsReport:
    fg_empty = c.tp + c.fp + c.fn == 0
    bg_empty = c.tn + c.fp + c.fn == 0
    dice = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, fg_empty)
    jac = _ratio(c.tp, c.tp + c.fp + c.fn, fg_empty)
    prec = _ratio(c.tp, c.tp + c.fp, fg_empty)
    rec = _ratio(c.tp, c.tp + c.fn, fg_empty)
    spec = _ratio(c.tn, c.tn + c.fp, bg_empty)
    f1 = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    return MetricsReport(dice, jac, prec, rec, spec, f1)


def _directed_sq(a: np.ndarray, b: np.ndarray) -> int:
    # exact integer squared distances; the tree only picks the neighbour
    _, j = cKDTree(b).query(a, k=1)
    d = a - b[j]
    return int(np.max(np.sum(d * d, axis=1)))


def hausdorff(pred, gt, percentile: float | None = None) -> float | None:
    """Symmetric Hausdorff distance between foreground pixel sets, in pixels.

    Returns None when either mask is empty.  ``percentile`` switches to the
    percentile of the pooled directed distances (off by default).
    """
    p, g = _binary(pred), _binary(gt)
    if p.shape != g.shape:
        raise ShapeMismatch(f"pred {p.shape} vs gt {g.shape}")
    a, b = np.argwhere(p), np.argwhere(g)
    if len(a) == 0 or len(b) == 0:
        return None
    if percentile is not None:
        da, _ = cKDTree(b).query(a, k=1)
        db, _ = cKDTree(a).query(b, k=1)
        return float(max(np.percentile(da, percentile), np.percentile(db, percentile)))
    return math.sqrt(max(_directed_sq(a, b), _directed_sq(b, a)))


def evaluate(preds, gts) -> dict:
    """Per-image metrics averaged over images; undefined Hausdorff cases are excluded and counted."""
    keys = ("dice", "jaccard", "precision", "recall", "specificity", "f1")
    sums = dict.fromkeys(keys, 0.0)
    hd, n_undef = [], 0
    n = 0
    for p, g in zip(preds, gts):
        r = scalar_metrics(confusion(p, g))
        for k in keys:
            sums[k] += getattr(r, k)
        h = hausdorff(p, g)
        if h is None:
            n_undef += 1
        else:
            hd.append(h)
        n += 1
    out = {k: (sums[k] / n if n else None) for k in keys}
    out["hausdorff"] = float(np.mean(hd)) if hd else None
    out["n_images"] = n
    out["n_hausdorff_undefined"] = n_undef
    return {k: out[k] for k in ("dice", "hausdorff", "jaccard", "precision", "recall",
                                "specificity", "f1", "n_images", "n_hausdorff_undefined")}
