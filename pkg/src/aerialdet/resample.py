"""Mask-guided copy-paste augmentation for under-represented categories.

Rare-category object crops are collected into a pool, then pasted into
training images at positions a segmentation mask marks as plausible (e.g.
road surface). A paste is accepted only when its footprint is almost
entirely on allowed mask cells, it does not overlap existing objects or
earlier pastes, and its size matches the objects already in the scene.
Planning is separated from pixel compositing so plans can be generated,
inspected, and replayed deterministically.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from statistics import median

import numpy as np

from .dataset import ImageRecord, LabelTree, ObjectAnnotation
from .geometry import BBox, ImageDims, iou


@dataclass(frozen=True)
class MrmConfig:
    pastes_per_image: int = 5
    mask_coverage: float = 0.95  # min fraction of footprint cells on allowed mask
    overlap_cap: float = 0.1  # max IoU with existing boxes / earlier pastes
    scale_jitter: float = 0.25  # pasted size within +-25% of the reference size
    retry_factor: int = 100  # candidate budget = retry_factor * pastes_per_image
    rare_categories: tuple[int, ...] | None = None  # explicit pool list; None = below-median rule

    def __post_init__(self) -> None:
        if self.pastes_per_image < 1:
            raise ValueError("pastes_per_image must be >= 1")
        if not 0.0 < self.mask_coverage <= 1.0:
            raise ValueError("mask_coverage must be in (0, 1]")
        if not 0.0 <= self.overlap_cap < 1.0:
            raise ValueError("overlap_cap must be in [0, 1)")
        if not 0.0 <= self.scale_jitter < 1.0:
            raise ValueError("scale_jitter must be in [0, 1)")
        if self.retry_factor < 1:
            raise ValueError("retry_factor must be >= 1")


@dataclass
class MaskRaster:
    """Binary paste-allowed grid matching the image extent."""

    grid: np.ndarray  # (H, W) of {0, 1}
    dims: ImageDims

    def __post_init__(self) -> None:
        h, w = self.grid.shape
        if (w, h) != (int(self.dims.width), int(self.dims.height)):
            raise ValueError(
                f"mask grid {w}x{h} does not match image {self.dims.width:g}x{self.dims.height:g}"
            )

    @staticmethod
    def full(dims: ImageDims, allowed: bool = True) -> "MaskRaster":
        shape = (int(dims.height), int(dims.width))
        return MaskRaster(np.full(shape, 1 if allowed else 0, dtype=np.uint8), dims)

    @staticmethod
    def from_annotations(record: ImageRecord, pad: float = 0.0) -> "MaskRaster":
        """Allow-grid rasterized from the record's own boxes (ground-truth add-on mask)."""
        mask = MaskRaster.full(record.dims, allowed=False)
        for ann in record.annotations:
            b = ann.bbox
            x0 = max(int(b.x - pad), 0)
            y0 = max(int(b.y - pad), 0)
            x1 = min(int(np.ceil(b.x2 + pad)), mask.grid.shape[1])
            y1 = min(int(np.ceil(b.y2 + pad)), mask.grid.shape[0])
            mask.grid[y0:y1, x0:x1] = 1
        return mask


def load_mask(path: str | os.PathLike, dims: ImageDims | None = None) -> MaskRaster:
    """Read a PNG or PGM mask; any nonzero pixel means paste-allowed."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    grid = (arr != 0).astype(np.uint8)
    h, w = grid.shape
    return MaskRaster(grid, dims or ImageDims(float(w), float(h)))


def save_mask(mask: MaskRaster, path: str | os.PathLike) -> None:
    from PIL import Image

    Image.fromarray((mask.grid * 255).astype(np.uint8), mode="L").save(path)


@dataclass
class PoolEntry:
    """One croppable object: source reference plus optional pixels."""

    crop_id: str
    category: int
    dims: tuple[float, float]  # (w, h) pixels
    source_image: str | None = None
    source_bbox: tuple[float, float, float, float] | None = None
    pixels: np.ndarray | None = None  # (h, w, 3) uint8
    alpha: np.ndarray | None = None  # (h, w) bool footprint
    pixels_file: str | None = None  # optional PNG to lazy-load pixels from

    def __post_init__(self) -> None:
        if self.dims[0] <= 0 or self.dims[1] <= 0:
            raise ValueError(f"pool entry {self.crop_id}: non-positive dims")

    @property
    def side(self) -> float:
        """Geometric-mean side, the scalar size measure used for scale matching."""
        return float(np.sqrt(self.dims[0] * self.dims[1]))


@dataclass
class PastePlan:
    """Accepted placements for one image; may be shorter than requested."""

    image_id: str
    pastes: list[tuple[str, BBox, float]] = field(default_factory=list)  # (crop_id, position, scale)
    requested: int = 0

    @property
    def shortfall(self) -> int:
        return self.requested - len(self.pastes)


def category_counts(records: list[ImageRecord]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for rec in records:
        for ann in rec.annotations:
            if not ann.ignore:
                counts[ann.category] = counts.get(ann.category, 0) + 1
    return counts


def rare_from_counts(counts: dict[int, int]) -> set[int]:
    """Default rarity rule: categories with strictly below-median instance counts."""
    if not counts:
        return set()
    cut = median(counts.values())
    return {cat for cat, n in counts.items() if n < cut}


def rare_categories(records: list[ImageRecord], cfg: MrmConfig) -> set[int]:
    """Categories eligible for the pool: explicit list, or the below-median rule."""
    if cfg.rare_categories is not None:
        return set(cfg.rare_categories)
    return rare_from_counts(category_counts(records))


def build_object_pool(
    records: list[ImageRecord], tree: LabelTree, cfg: MrmConfig | None = None
) -> list[PoolEntry]:
    """Collect crops of rare categories; deterministic given dataset + rule."""
    cfg = cfg or MrmConfig()
    if not records:
        warnings.warn("building object pool from an empty dataset")
        return []
    rare = rare_categories(records, cfg)
    pool = []
    for rec in records:
        for idx, ann in enumerate(rec.annotations):
            if ann.ignore or ann.category not in rare:
                continue
            pool.append(
                PoolEntry(
                    crop_id=f"{rec.image_id}:{idx}",
                    category=ann.category,
                    dims=(ann.bbox.w, ann.bbox.h),
                    source_image=rec.image_id,
                    source_bbox=ann.bbox.as_xywh(),
                )
            )
    return pool


def _footprint_allowed_fraction(mask: MaskRaster, box: BBox) -> float:
    x0 = int(np.floor(box.x))
    y0 = int(np.floor(box.y))
    x1 = min(int(np.ceil(box.x2)), mask.grid.shape[1])
    y1 = min(int(np.ceil(box.y2)), mask.grid.shape[0])
    cells = mask.grid[max(y0, 0) : y1, max(x0, 0) : x1]
    if cells.size == 0:
        return 0.0
    return float(cells.mean())


def _reference_side(
    record: ImageRecord, tree: LabelTree, category: int, fallback: float | None
) -> float | None:
    parent = tree.parent(category) if tree.is_base(category) else None
    siblings = [
        a
        for a in record.annotations
        if not a.ignore
        and (tree.parent(a.category) == parent if parent is not None else a.category == category)
    ]
    if siblings:
        return median(float(np.sqrt(a.bbox.w * a.bbox.h)) for a in siblings)
    return fallback


def plan_pastes(
    record: ImageRecord,
    mask: MaskRaster,
    pool: list[PoolEntry],
    tree: LabelTree,
    cfg: MrmConfig | None = None,
    seed: int = 0,
    dataset_median_side: float | None = None,
) -> PastePlan:
    """Draw and vet paste candidates until the quota or the retry budget runs out.

    Acceptance requires: (a) at least mask_coverage of the footprint on
    allowed cells, (b) IoU <= overlap_cap against every existing annotation
    and earlier accepted paste, (c) pasted size within scale_jitter of the
    reference size (same-parent-class median in this image, else
    dataset_median_side, else the pool's own median). Same seed, same plan.
    """
    cfg = cfg or MrmConfig()
    plan = PastePlan(record.image_id, requested=cfg.pastes_per_image)
    if not pool:
        warnings.warn(f"{record.image_id}: empty object pool, nothing to paste")
        return plan

    fallback = dataset_median_side or median(e.side for e in pool)
    rng = np.random.default_rng(seed)
    existing = [a.bbox for a in record.annotations]
    budget = cfg.retry_factor * cfg.pastes_per_image

    for _ in range(budget):
        if len(plan.pastes) >= cfg.pastes_per_image:
            break
        entry = pool[int(rng.integers(len(pool)))]
        ref = _reference_side(record, tree, entry.category, fallback)
        if ref is None or ref <= 0:
            continue
        target_side = ref * (1.0 + cfg.scale_jitter * float(rng.uniform(-1.0, 1.0)))
        scale = target_side / entry.side
        w, h = entry.dims[0] * scale, entry.dims[1] * scale
        if w >= mask.dims.width or h >= mask.dims.height:
            continue
        x = float(rng.uniform(0.0, mask.dims.width - w))
        y = float(rng.uniform(0.0, mask.dims.height - h))
        box = BBox(x, y, w, h)
        if _footprint_allowed_fraction(mask, box) < cfg.mask_coverage:
            continue
        if any(iou(box, other) > cfg.overlap_cap for other in existing):
            continue
        plan.pastes.append((entry.crop_id, box, scale))
        existing.append(box)

    if plan.shortfall:
        warnings.warn(
            f"{record.image_id}: placed {len(plan.pastes)}/{plan.requested} pastes "
            f"within the retry budget"
        )
    return plan


def check_plan(
    plan: PastePlan,
    record: ImageRecord,
    mask: MaskRaster,
    pool: list[PoolEntry],
    tree: LabelTree,
    cfg: MrmConfig | None = None,
    dataset_median_side: float | None = None,
) -> list[str]:
    """Re-verify constraints (a)-(c) for a finished plan; returns violations."""
    cfg = cfg or MrmConfig()
    by_id = {e.crop_id: e for e in pool}
    fallback = dataset_median_side or (median(e.side for e in pool) if pool else None)
    problems = []
    accepted: list[BBox] = []
    for crop_id, box, _scale in plan.pastes:
        entry = by_id[crop_id]
        if box.x < 0 or box.y < 0 or box.x2 > mask.dims.width or box.y2 > mask.dims.height:
            problems.append(f"{crop_id}: paste box outside the image")
        if _footprint_allowed_fraction(mask, box) < cfg.mask_coverage:
            problems.append(f"{crop_id}: footprint not sufficiently on allowed mask")
        for other in [a.bbox for a in record.annotations] + accepted:
            if iou(box, other) > cfg.overlap_cap:
                problems.append(f"{crop_id}: overlaps an existing box")
                break
        ref = _reference_side(record, tree, entry.category, fallback)
        side = float(np.sqrt(box.w * box.h))
        if ref is None or not (
            ref * (1.0 - cfg.scale_jitter) - 1e-9 <= side <= ref * (1.0 + cfg.scale_jitter) + 1e-9
        ):
            problems.append(f"{crop_id}: pasted size {side:.1f} outside jitter of reference {ref}")
        accepted.append(box)
    return problems


def _nearest_resize(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    src_h, src_w = pixels.shape[:2]
    rows = np.minimum((np.arange(out_h) + 0.5) * src_h / out_h, src_h - 1).astype(int)
    cols = np.minimum((np.arange(out_w) + 0.5) * src_w / out_w, src_w - 1).astype(int)
    return pixels[rows][:, cols]


def composite(
    raster: np.ndarray,
    plan: PastePlan,
    pool: list[PoolEntry],
) -> tuple[np.ndarray, list[ObjectAnnotation]]:
    """Apply a plan to an (H, W, 3) raster; returns (new raster, new annotations).

    Crops are nearest-neighbor scaled to the planned box; pixels copy only
    where the (scaled) alpha footprint is set, or the full rectangle when
    the entry has no alpha. Entries without pixels are skipped with a
    warning. The input raster is not modified.
    """
    by_id = {e.crop_id: e for e in pool}
    out = raster.copy()
    added = []
    for crop_id, box, _scale in plan.pastes:
        entry = by_id.get(crop_id)
        if entry is None or entry.pixels is None:
            warnings.warn(f"paste {crop_id}: no crop pixels available, skipped")
            continue
        x0, y0 = max(int(round(box.x)), 0), max(int(round(box.y)), 0)
        w = max(int(round(box.w)), 1)
        h = max(int(round(box.h)), 1)
        x1 = min(x0 + w, out.shape[1])
        y1 = min(y0 + h, out.shape[0])
        w, h = x1 - x0, y1 - y0
        if w <= 0 or h <= 0:
            warnings.warn(f"paste {crop_id}: degenerate raster footprint, skipped")
            continue
        patch = _nearest_resize(entry.pixels, h, w)
        if entry.alpha is not None:
            keep = _nearest_resize(entry.alpha.astype(np.uint8), h, w).astype(bool)
            region = out[y0:y1, x0:x1]
            region[keep] = patch[keep]
        else:
            out[y0:y1, x0:x1] = patch
        added.append(ObjectAnnotation(bbox=box, category=entry.category))
    return out, added


def plan_to_json(plan: PastePlan) -> dict:
    return {
        "image_id": plan.image_id,
        "requested": plan.requested,
        "pastes": [
            {"crop_id": cid, "bbox": list(box.as_xywh()), "scale": scale}
            for cid, box, scale in plan.pastes
        ],
    }


def plan_from_json(doc: dict) -> PastePlan:
    return PastePlan(
        image_id=str(doc["image_id"]),
        requested=int(doc.get("requested", len(doc["pastes"]))),
        pastes=[
            (
                str(p["crop_id"]),
                BBox(*(float(v) for v in p["bbox"])),
                float(p["scale"]),
            )
            for p in doc["pastes"]
        ],
    )


def save_pool_manifest(pool: list[PoolEntry], path: str | os.PathLike) -> None:
    doc = {
        "entries": [
            {
                "crop_id": e.crop_id,
                "category": e.category,
                "width": e.dims[0],
                "height": e.dims[1],
                "source_image": e.source_image,
                "source_bbox": list(e.source_bbox) if e.source_bbox else None,
                "pixels_file": e.pixels_file,
            }
            for e in pool
        ]
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_pool_manifest(path: str | os.PathLike) -> list[PoolEntry]:
    with open(path) as fh:
        doc = json.load(fh)
    return [
        PoolEntry(
            crop_id=str(e["crop_id"]),
            category=int(e["category"]),
            dims=(float(e["width"]), float(e["height"])),
            source_image=e.get("source_image"),
            source_bbox=tuple(e["source_bbox"]) if e.get("source_bbox") else None,
            pixels_file=e.get("pixels_file"),
        )
        for e in doc["entries"]
    ]


def load_pool_pixels(pool: list[PoolEntry], base_dir: str | os.PathLike = ".") -> None:
    """Fill entry.pixels from each entry's pixels_file (relative to base_dir)."""
    from PIL import Image

    for entry in pool:
        if entry.pixels is not None or entry.pixels_file is None:
            continue
        with Image.open(os.path.join(os.fspath(base_dir), entry.pixels_file)) as im:
            entry.pixels = np.asarray(im.convert("RGB"))
