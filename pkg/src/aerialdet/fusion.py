"""From dense predictions to boxes, and from per-chip boxes to one result set.

Peak extraction replaces NMS on the heatmap itself: a cell counts as a
detection candidate iff it is the maximum of its in-channel 3x3
neighborhood (the maxpool trick). Decoded chip-local boxes are translated
into global coordinates, boxes of objects cut apart by chip boundaries are
re-joined, duplicates across overlapping chips and the whole-image pass
are suppressed per class, and the survivors are capped at a fixed budget
per image.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter

from .dataset import Detection, LabelTree
from .geometry import BBox, ImageDims, clamp_box, iou, union_box


@dataclass(frozen=True)
class ChipOrigin:
    """Where a chip sits inside its parent image."""

    image_id: str
    offset: tuple[float, float]  # chip top-left in global pixels
    dims: ImageDims  # chip extent

    @property
    def window(self) -> BBox:
        return BBox(self.offset[0], self.offset[1], self.dims.width, self.dims.height)


@dataclass(frozen=True)
class FuseConfig:
    peaks_per_chip: int = 100
    max_detections: int = 500
    nms_iou: float = 0.5
    boundary_delta: float = 2.0  # px tolerance for "touches the chip edge"
    boundary_overlap: float = 0.5  # min shared fraction of the shorter projection

    def __post_init__(self) -> None:
        if self.peaks_per_chip < 1 or self.max_detections < 1:
            raise ValueError("peak/detection budgets must be positive")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError(f"nms_iou must be in (0, 1), got {self.nms_iou}")
        if self.boundary_delta < 0:
            raise ValueError("boundary_delta must be >= 0")
        if not 0.0 < self.boundary_overlap <= 1.0:
            raise ValueError("boundary_overlap must be in (0, 1]")


@dataclass(frozen=True)
class Peak:
    cell: tuple[int, int]  # (col, row)
    channel: int
    score: float


def extract_peaks(heatmap_hat: np.ndarray, k: int) -> list[Peak]:
    """Top-k in-channel 3x3 local maxima, by score then row-major scan order.

    Edge cells compare against their in-bounds neighborhood only. Plateaus
    qualify every cell, so ties resolve by (channel, row, col).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    grid = np.asarray(heatmap_hat, dtype=np.float64)
    # constant -inf padding makes border comparisons in-bounds-only
    neighborhood = maximum_filter(grid, size=(3, 3, 1), mode="constant", cval=-np.inf)
    rows, cols, chans = np.nonzero(grid >= neighborhood)
    scores = grid[rows, cols, chans]
    order = np.lexsort((cols, rows, chans, -scores))[:k]
    return [
        Peak((int(cols[i]), int(rows[i])), int(chans[i]), float(scores[i]))
        for i in order
    ]


def decode_boxes(
    peaks: list[Peak],
    size_map: np.ndarray,
    offset_map: np.ndarray,
    down_ratio: int,
    tree: LabelTree,
) -> list[Detection]:
    """Turn peaks into boxes using dense size/offset maps sampled at each cell.

    Peaks on parent-class channels are dropped: the extra channels exist
    for training supervision, only base classes are ever emitted. Peaks
    whose sampled size is non-positive are discarded. Boxes may protrude
    past the image; fusion clamps them.
    """
    dets = []
    for peak in peaks:
        if not tree.is_base(peak.channel):
            continue
        col, row = peak.cell
        w, h = (float(v) for v in size_map[row, col])
        if w <= 0 or h <= 0:
            continue
        ox, oy = (float(v) for v in offset_map[row, col])
        cx = (col + ox) * down_ratio
        cy = (row + oy) * down_ratio
        dets.append(
            Detection(BBox(cx - w / 2, cy - h / 2, w, h), peak.channel, min(peak.score, 1.0))
        )
    return dets


def decode_chip(
    heatmap_hat: np.ndarray,
    size_map: np.ndarray,
    offset_map: np.ndarray,
    down_ratio: int,
    tree: LabelTree,
    cfg: FuseConfig,
) -> list[Detection]:
    """Full dense-to-boxes step for one chip, under the per-chip peak budget."""
    peaks = extract_peaks(heatmap_hat, cfg.peaks_per_chip)
    return decode_boxes(peaks, size_map, offset_map, down_ratio, tree)


def chip_to_global(
    dets: list[Detection], origin: ChipOrigin, image_dims: ImageDims
) -> list[Detection]:
    """Translate chip-local detections into parent-image coordinates.

    Boxes are clamped to the parent image; boxes left with zero area drop.
    """
    dx, dy = origin.offset
    out = []
    for det in dets:
        moved = BBox(det.bbox.x + dx, det.bbox.y + dy, det.bbox.w, det.bbox.h)
        clipped = clamp_box(moved, image_dims)
        if clipped is not None:
            out.append(Detection(clipped, det.category, det.score))
    return out


def _det_sort_key(det: Detection):
    # Score first; area breaks exact ties so a whole box outranks a fragment
    # of itself, then coordinates for full determinism.
    b = det.bbox
    return (-det.score, -b.area, b.x, b.y, b.w, b.h, det.category)


def nms(dets: list[Detection], iou_thresh: float) -> list[Detection]:
    """Per-class greedy suppression; kept same-class pairs have IoU <= thresh."""
    kept: list[Detection] = []
    kept_by_class: dict[int, list[BBox]] = {}
    for det in sorted(dets, key=_det_sort_key):
        boxes = kept_by_class.setdefault(det.category, [])
        if all(iou(det.bbox, b) <= iou_thresh for b in boxes):
            boxes.append(det.bbox)
            kept.append(det)
    return kept


@dataclass(frozen=True)
class BoundaryEdge:
    """One chip edge as a global segment: vertical (x fixed) or horizontal."""

    orientation: str  # "v" | "h"
    position: float  # the fixed coordinate
    lo: float  # segment extent along the edge
    hi: float

    def __post_init__(self) -> None:
        if self.orientation not in ("v", "h"):
            raise ValueError(f"orientation must be 'v' or 'h', got {self.orientation!r}")
        if self.hi <= self.lo:
            raise ValueError("edge segment must have positive extent")


def chip_boundary_edges(origins: list[ChipOrigin]) -> list[BoundaryEdge]:
    """All four edges of every chip window."""
    edges = []
    for o in origins:
        win = o.window
        edges.append(BoundaryEdge("v", win.x, win.y, win.y2))
        edges.append(BoundaryEdge("v", win.x2, win.y, win.y2))
        edges.append(BoundaryEdge("h", win.y, win.x, win.x2))
        edges.append(BoundaryEdge("h", win.y2, win.x, win.x2))
    return edges


def _edge_contact(box: BBox, edge: BoundaryEdge, delta: float) -> tuple[frozenset, bool]:
    # Returns (sides this box can partner on, whether it is a cut fragment).
    # A fragment ends within delta of the edge; a box crossing the edge can
    # partner a fragment from either side but is not itself a fragment.
    if edge.orientation == "v":
        lo_edge, hi_edge, center = box.x, box.x2, box.cx
        span_lo, span_hi = box.y, box.y2
    else:
        lo_edge, hi_edge, center = box.y, box.y2, box.cy
        span_lo, span_hi = box.x, box.x2
    if min(span_hi, edge.hi) <= max(span_lo, edge.lo):
        return frozenset(), False  # projection misses the edge segment entirely
    e = edge.position
    frag_low = abs(hi_edge - e) <= delta and center <= e
    frag_high = abs(lo_edge - e) <= delta and center >= e
    crossing = lo_edge < e - delta and hi_edge > e + delta
    sides = set()
    if frag_low or crossing:
        sides.add("low")
    if frag_high or crossing:
        sides.add("high")
    return frozenset(sides), frag_low or frag_high


def _projection_overlap(a: BBox, b: BBox, edge: BoundaryEdge) -> float:
    if edge.orientation == "v":
        lo = max(a.y, b.y)
        hi = min(a.y2, b.y2)
        shorter = min(a.h, b.h)
    else:
        lo = max(a.x, b.x)
        hi = min(a.x2, b.x2)
        shorter = min(a.w, b.w)
    return max(hi - lo, 0.0) / shorter


def merge_split_boxes(
    dets: list[Detection], chip_edges: list[BoundaryEdge], cfg: FuseConfig
) -> list[Detection]:
    """Re-join same-class boxes of an object cut apart at a chip edge.

    A pair merges into its union box (score = max) when one of the two is a
    fragment ending within boundary_delta of an edge, the other sits on (or
    extends across to) the opposite side of that edge, and their
    projections onto the edge share at least boundary_overlap of the
    shorter projection. Boxes that merely cross an edge were not cut there,
    so two crossing boxes never merge with each other. Merging repeats
    until no pair qualifies, collapsing chains of fragments.
    """
    pool = sorted(dets, key=_det_sort_key)
    merged = True
    while merged:
        merged = False
        for edge in chip_edges:
            # contacts at this edge are sparse; compute them once per pass
            contacts = [
                (i, *_edge_contact(pool[i].bbox, edge, cfg.boundary_delta))
                for i in range(len(pool))
            ]
            touching = [(i, s, f) for i, s, f in contacts if s]
            for ai in range(len(touching)):
                i, sides_a, frag_a = touching[ai]
                for bi in range(ai + 1, len(touching)):
                    j, sides_b, frag_b = touching[bi]
                    a, b = pool[i], pool[j]
                    if a.category != b.category or not (frag_a or frag_b):
                        continue
                    opposed = ("low" in sides_a and "high" in sides_b) or (
                        "high" in sides_a and "low" in sides_b
                    )
                    if not opposed:
                        continue
                    if _projection_overlap(a.bbox, b.bbox, edge) < cfg.boundary_overlap:
                        continue
                    joined = Detection(
                        union_box(a.bbox, b.bbox), a.category, max(a.score, b.score)
                    )
                    pool.pop(j)
                    pool[i] = joined
                    merged = True
                    break
                if merged:
                    break
            if merged:
                break
    return pool


def fuse(
    chip_results: list[tuple[ChipOrigin, list[Detection]]],
    global_results: list[Detection],
    cfg: FuseConfig,
    image_dims: ImageDims,
) -> list[Detection]:
    """Combine chip-local and whole-image detections into the final set.

    Chip detections are mapped to global coordinates; everything is clamped
    into the image; boundary-split fragments are merged; per-class NMS
    removes duplicates across sources; the highest-scoring max_detections
    survive.
    """
    pooled: list[Detection] = []
    for origin, dets in chip_results:
        pooled.extend(chip_to_global(dets, origin, image_dims))
    for det in global_results:
        clipped = clamp_box(det.bbox, image_dims)
        if clipped is not None:
            pooled.append(Detection(clipped, det.category, det.score))

    edges = chip_boundary_edges([origin for origin, _ in chip_results])
    pooled = merge_split_boxes(pooled, edges, cfg)
    pooled = nms(pooled, cfg.nms_iou)
    pooled.sort(key=_det_sort_key)
    return pooled[: cfg.max_detections]


def detections_to_json(dets: list[Detection]) -> list[dict]:
    """Per-image wire format: [{bbox: [x, y, w, h], category, score}]."""
    return [
        {"bbox": list(d.bbox.as_xywh()), "category": d.category, "score": d.score}
        for d in dets
    ]


def detections_from_json(doc: list[dict]) -> list[Detection]:
    return [
        Detection(BBox(*(float(v) for v in d["bbox"])), int(d["category"]), float(d["score"]))
        for d in doc
    ]


def save_detections(
    dets_by_image: dict[str, list[Detection]],
    path: str | os.PathLike,
    *,
    metadata: dict | None = None,
) -> None:
    """Write a dataset-level detections file: image id -> per-image list."""
    doc: dict = {"images": {iid: detections_to_json(d) for iid, d in dets_by_image.items()}}
    if metadata:
        doc["config"] = metadata
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_detections(path: str | os.PathLike) -> dict[str, list[Detection]]:
    with open(path) as fh:
        doc = json.load(fh)
    images = doc["images"] if isinstance(doc, dict) and "images" in doc else doc
    return {str(iid): detections_from_json(items) for iid, items in images.items()}
