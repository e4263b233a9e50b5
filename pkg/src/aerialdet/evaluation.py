"""COCO-style average precision over fused detections.

AP is the mean, over categories and IoU thresholds, of 101-point
interpolated precision. Matching is greedy by descending score within each
(image, category): a detection claims the unmatched ground-truth box it
overlaps most, provided the IoU clears the threshold. Ignore-flagged
ground truth (ignore regions, ignore-flagged categories) absorbs
detections without making them true or false positives; for those the
overlap is measured as intersection over detection area, so a small
detection inside a large ignore region is shielded even though its
symmetric IoU would be tiny.

Results are independent of detection input order: score ties are broken by
the lexicographic bbox key.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import IGNORE_REGION, Detection, ImageRecord, LabelTree, ObjectAnnotation
from .geometry import intersection_area, iou


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
    recall_points: int = 101
    per_image_cap: int = 500

    def __post_init__(self) -> None:
        if not self.iou_thresholds:
            raise ValueError("need at least one IoU threshold")
        if list(self.iou_thresholds) != sorted(set(self.iou_thresholds)):
            raise ValueError("iou_thresholds must be strictly increasing")
        if not all(0.0 < t < 1.0 for t in self.iou_thresholds):
            raise ValueError("iou_thresholds must lie in (0, 1)")
        if self.recall_points < 1 or self.per_image_cap < 1:
            raise ValueError("recall_points and per_image_cap must be positive")


def _det_key(det: Detection):
    b = det.bbox
    return (-det.score, b.x, b.y, b.w, b.h)


@dataclass
class MatchResult:
    """Greedy matching outcome for one (image, category, threshold).

    Entries are in descending-score order: (score, bbox key, kind) with kind
    one of "tp", "fp", "ignored". matched_gt holds the ground-truth index a
    tp claimed (input-list index), None otherwise.
    """

    kinds: list[str]
    scores: list[float]
    keys: list[tuple]
    matched_gt: list[int | None]
    n_gt: int


def match_detections(
    dets: list[Detection], gts: list[ObjectAnnotation], iou_thresh: float
) -> MatchResult:
    """Match one image's detections of one category against its ground truth.

    gts may mix real boxes and ignore-flagged ones; only the former count
    toward n_gt, may each be claimed once, and produce tps. Ignored ground
    truth absorbs any number of detections (intersection / detection area
    >= iou_thresh) and marks them "ignored".
    """
    real = [i for i, g in enumerate(gts) if not g.ignore]
    ignored = [i for i, g in enumerate(gts) if g.ignore]
    claimed: set[int] = set()
    result = MatchResult([], [], [], [], n_gt=len(real))

    for det in sorted(dets, key=_det_key):
        best_gt, best_iou = None, -1.0
        for gi in real:
            if gi in claimed:
                continue
            overlap = iou(det.bbox, gts[gi].bbox)
            if overlap >= iou_thresh and overlap > best_iou:
                best_gt, best_iou = gi, overlap
        if best_gt is not None:
            claimed.add(best_gt)
            kind, match = "tp", best_gt
        else:
            shielded = any(
                intersection_area(det.bbox, gts[gi].bbox) / det.bbox.area >= iou_thresh
                for gi in ignored
            )
            kind, match = ("ignored", None) if shielded else ("fp", None)
        result.kinds.append(kind)
        result.scores.append(det.score)
        result.keys.append(_det_key(det))
        result.matched_gt.append(match)
    return result


def average_precision(matches: list[MatchResult], cfg: EvalConfig) -> float | None:
    """Interpolated AP from matches pooled across the dataset.

    None when the category has no ground truth anywhere (undefined,
    excluded from means). Detections flagged "ignored" never enter the
    precision-recall curve.
    """
    n_gt = sum(m.n_gt for m in matches)
    if n_gt == 0:
        return None
    entries = sorted(
        (
            (m.keys[i], m.kinds[i])
            for m in matches
            for i in range(len(m.kinds))
            if m.kinds[i] != "ignored"
        ),
        key=lambda e: e[0],
    )
    if not entries:
        return 0.0
    tp = np.array([k == "tp" for _, k in entries], dtype=np.float64)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    # interpolated precision: best achievable at this recall or beyond
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    sample_at = np.linspace(0.0, 1.0, cfg.recall_points)
    idx = np.searchsorted(recall, sample_at, side="left")
    sampled = np.where(idx < len(interp), interp[np.minimum(idx, len(interp) - 1)], 0.0)
    return float(sampled.mean())


def _cap_per_image(dets: list[Detection], cap: int) -> list[Detection]:
    if len(dets) <= cap:
        return dets
    return sorted(dets, key=_det_key)[:cap]


def _gts_for_category(
    anns: tuple[ObjectAnnotation, ...] | list[ObjectAnnotation], category: int
) -> list[ObjectAnnotation]:
    # Real boxes of this category, plus everything that can shield a
    # detection of this category: same-category ignore-flagged boxes and
    # class-agnostic ignore regions.
    return [
        a
        for a in anns
        if a.category == category or (a.ignore and a.category == IGNORE_REGION)
    ]


def category_ap(
    dets_by_image: dict[str, list[Detection]],
    records: list[ImageRecord],
    category: int,
    iou_thresh: float,
    cfg: EvalConfig,
) -> float | None:
    """AP of one category at one IoU threshold over the whole dataset."""
    matches = []
    for rec in records:
        dets = [
            d
            for d in _cap_per_image(dets_by_image.get(rec.image_id, []), cfg.per_image_cap)
            if d.category == category
        ]
        gts = _gts_for_category(rec.annotations, category)
        matches.append(match_detections(dets, gts, iou_thresh))
    return average_precision(matches, cfg)


def ap_summary(
    dets_by_image: dict[str, list[Detection]],
    records: list[ImageRecord],
    tree: LabelTree,
    cfg: EvalConfig | None = None,
) -> dict:
    """AP / AP50 / AP75 plus a per-category table.

    AP averages over every configured threshold and every category with
    ground truth; AP50 and AP75 are computed at fixed thresholds 0.5 and
    0.75 whether or not those appear in the configured list. Raises when
    the dataset has no usable ground truth at all.
    """
    cfg = cfg or EvalConfig()
    present = sorted(
        {a.category for r in records for a in r.annotations if not a.ignore}
    )
    if not present:
        raise ValueError("no non-ignored ground truth to evaluate against")

    per_cat_curves: dict[int, list[float]] = {}
    for cat in present:
        aps = [category_ap(dets_by_image, records, cat, t, cfg) for t in cfg.iou_thresholds]
        per_cat_curves[cat] = [a for a in aps if a is not None]

    def fixed(thresh: float) -> float:
        vals = [category_ap(dets_by_image, records, c, thresh, cfg) for c in present]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals))

    per_category = {
        tree.name(cat): float(np.mean(curve)) for cat, curve in per_cat_curves.items()
    }
    overall = float(np.mean([np.mean(curve) for curve in per_cat_curves.values()]))
    return {
        "AP": overall,
        "AP50": fixed(0.5),
        "AP75": fixed(0.75),
        "per_category": per_category,
    }
