"""Dense-pose AP / AR over point-similarity thresholds 0.50:0.05:0.95."""

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
# COCO area ranges (in pixels) for a 640-pixel image side, scaled to the scene.
COCO_SIDE = 640.0
MEDIUM_LO, LARGE_LO = 32.0, 96.0


def gaussian_uv_similarity(kappa):
    """exp(-d^2 / (2 kappa^2)) on the UV distance when parts agree, 0 otherwise."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")

    def sim(pred_part, pred_u, pred_v, part, u, v):
        d2 = (pred_u - u) ** 2 + (pred_v - v) ** 2
        return np.where(pred_part == part, np.exp(-d2 / (2 * kappa**2)), 0.0)

    return sim


@dataclass(frozen=True)
class GpsConfig:
    kappa: Optional[float] = None
    similarity: Optional[Callable] = None

    def kernel(self):
        if self.similarity is not None:
            return self.similarity
        if self.kappa is None:
            raise ValueError("GpsConfig needs kappa or a similarity function")
        return gaussian_uv_similarity(self.kappa)


@dataclass
class ScoredInstance:
    """One predicted person: IUV summary maps (already cut by its mask) and a score."""

    score: float
    part: np.ndarray
    u: np.ndarray
    v: np.ndarray
    area: Optional[float] = None

    def __post_init__(self):
        if self.area is None:
            self.area = float(np.count_nonzero(self.part))


@dataclass
class GtInstance:
    points: list
    area: float


@dataclass
class EvalResult:
    ap: float = 0.0
    ap50: float = 0.0
    ap75: float = 0.0
    ap_m: float = 0.0
    ap_l: float = 0.0
    ar: float = 0.0
    ar50: float = 0.0
    ar75: float = 0.0
    ar_m: float = 0.0
    ar_l: float = 0.0
    per_threshold: list = field(default_factory=list, repr=False)

    def to_json(self):
        d = asdict(self)
        d.pop("per_threshold")
        return json.dumps(d, indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "ap", "recall", "tp", "fp", "n_gt"])
        for row in self.per_threshold:
            w.writerow([f"{row['threshold']:.2f}", row["ap"], row["recall"], row["tp"], row["fp"], row["n_gt"]])
        return buf.getvalue()


def instance_gps(pred, gt_points, cfg):
    """Mean point similarity of a predicted (part, u, v) summary at the GT points."""
    if len(gt_points) == 0:
        raise ValueError("empty point list")
    part, u, v = pred
    ys = np.array([p.y for p in gt_points])
    xs = np.array([p.x for p in gt_points])
    sim = cfg.kernel()(
        part[ys, xs], u[ys, xs], v[ys, xs],
        np.array([p.part for p in gt_points]),
        np.array([p.u for p in gt_points]),
        np.array([p.v for p in gt_points]),
    )
    return float(np.mean(sim))


def gps_matrix(preds, gts, cfg):
    out = np.zeros((len(preds), len(gts)))
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            out[i, j] = instance_gps((p.part, p.u, p.v), g.points, cfg)
    return out


def score_order(scores):
    # descending score, ties by prediction index
    return np.lexsort((np.arange(len(scores)), -np.asarray(scores, dtype=np.float64)))


def greedy_match(gps, scores, threshold, gt_ignore=None):
    """Score-ordered greedy matching.

    Each prediction takes the unmatched GT with the highest similarity (lowest
    index on ties) provided it reaches ``threshold``; non-ignored GTs are
    preferred over ignored ones. Returns the matched GT index per prediction
    (-1 when unmatched).
    """
    n_pred, n_gt = gps.shape
    ignore = np.zeros(n_gt, bool) if gt_ignore is None else np.asarray(gt_ignore, bool)
    taken = np.zeros(n_gt, bool)
    match = np.full(n_pred, -1)
    for i in score_order(scores):
        best, best_key = -1, None
        for j in range(n_gt):
            if taken[j] or gps[i, j] < threshold:
                continue
            key = (not ignore[j], gps[i, j])
            if best_key is None or key > best_key:
                best, best_key = j, key
        if best >= 0:
            taken[best] = True
            match[i] = best
    return match


def average_precision(tp, n_gt):
    """All-point interpolated area under the precision/recall curve.

    ``tp`` is the TP/FP flag sequence of the retained predictions in score order.
    """
    if n_gt == 0 or len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=np.float64)
    ctp = np.cumsum(tp)
    recall = ctp / n_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


def _sweep(gps, scores, pred_area, gt_area, area_range):
    lo, hi = area_range
    gt_ignore = (gt_area < lo) | (gt_area >= hi)
    out_range = (pred_area < lo) | (pred_area >= hi)
    n_gt = int(np.count_nonzero(~gt_ignore))
    order = score_order(scores)
    rows = []
    for thr in THRESHOLDS:
        match = greedy_match(gps, scores, thr, gt_ignore)
        flags = []
        for i in order:
            if match[i] >= 0:
                if not gt_ignore[match[i]]:
                    flags.append(1)
            elif not out_range[i]:
                flags.append(0)
        tp = int(sum(flags))
        rows.append({
            "threshold": float(thr),
            "ap": average_precision(flags, n_gt),
            "recall": tp / n_gt if n_gt else 0.0,
            "tp": tp,
            "fp": len(flags) - tp,
            "n_gt": n_gt,
        })
    return rows


def area_ranges(base_res):
    s = (max(base_res) if np.ndim(base_res) else base_res) / COCO_SIDE
    m, l = (MEDIUM_LO * s) ** 2, (LARGE_LO * s) ** 2
    return {"all": (0.0, np.inf), "m": (m, l), "l": (l, np.inf)}


def evaluate_gps(gps, scores, pred_area, gt_area, base_res):
    """AP/AR summary from a precomputed prediction x GT similarity matrix."""
    gps = np.asarray(gps, dtype=np.float64).reshape(len(scores), len(gt_area))
    pred_area = np.asarray(pred_area, dtype=np.float64)
    gt_area = np.asarray(gt_area, dtype=np.float64)
    res = EvalResult()
    for name, rng in area_ranges(base_res).items():
        rows = _sweep(gps, scores, pred_area, gt_area, rng)
        ap = float(np.mean([r["ap"] for r in rows]))
        ar = float(np.mean([r["recall"] for r in rows]))
        if name == "all":
            res.ap, res.ar = ap, ar
            res.ap50, res.ar50 = rows[0]["ap"], rows[0]["recall"]
            res.ap75, res.ar75 = rows[5]["ap"], rows[5]["recall"]
            res.per_threshold = rows
        else:
            setattr(res, f"ap_{name}", ap)
            setattr(res, f"ar_{name}", ar)
    return res


def evaluate(preds, gts, cfg, base_res):
    """Dense-pose AP/AR of scored predictions against annotated GT instances."""
    gps = gps_matrix(preds, gts, cfg)
    return evaluate_gps(
        gps,
        [p.score for p in preds],
        [p.area for p in preds],
        [g.area for g in gts],
        base_res,
    )
