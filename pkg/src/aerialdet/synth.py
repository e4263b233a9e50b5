"""Synthetic scenes and an oracle detector standing in for the CNNs.

Scenes mimic aerial imagery geometry: a few dense groups of small boxes
scattered with Gaussian spread around group centers, plus a handful of
sparse large boxes. The oracle turns ground truth into detections with
configurable corruption (center/size jitter, misses, false positives), so
every downstream stage can be exercised with known-perfect or known-noisy
inputs. Everything is deterministic given the seeds.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .dataset import Detection, ImageRecord, LabelTree, ObjectAnnotation
from .geometry import BBox, ImageDims, clamp_box, iou


def toy_label_tree() -> LabelTree:
    """Small tree for synthetic data: three base classes, one parent class.

    "crate" and "barrel" (the small-object classes) share the parent
    "cargo"; "vehicle" (the large-object class) is unparented, so both the
    parented and unparented code paths get exercised.
    """
    return LabelTree(
        base_classes=((0, "crate"), (1, "barrel"), (2, "vehicle")),
        stacked_classes=((3, "cargo"),),
        parent_of={0: 3, 1: 3, 2: None},
    )


@dataclass(frozen=True)
class SceneConfig:
    dims: ImageDims = ImageDims(2000.0, 1500.0)
    n_dense_clusters: int = 3
    objects_per_cluster: tuple[int, int] = (5, 12)
    small_size: tuple[float, float] = (12.0, 40.0)
    cluster_spread: float = 120.0  # Gaussian sd of member positions around the group center
    n_large: int = 2
    large_size: tuple[float, float] = (150.0, 320.0)
    class_weights: dict[int, float] = field(default_factory=lambda: {0: 0.5, 1: 0.5})
    large_class: int = 2
    max_pairwise_iou: float = 0.3  # rejection cap so distinct objects stay distinct
    placement_retries: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_dense_clusters < 0 or self.n_large < 0:
            raise ValueError("object counts must be >= 0")
        for lo, hi in (self.objects_per_cluster, self.small_size, self.large_size):
            if lo > hi or lo < 0:
                raise ValueError(f"bad range ({lo}, {hi})")
        if not self.class_weights or sum(self.class_weights.values()) <= 0:
            raise ValueError("class_weights must have positive total weight")
        if any(w < 0 for w in self.class_weights.values()):
            raise ValueError("class_weights must be >= 0")


def _place_box(
    rng: np.random.Generator,
    cx: float,
    cy: float,
    w: float,
    h: float,
    dims: ImageDims,
    existing: list[BBox],
    max_iou: float,
    retries: int,
    spread: float,
) -> BBox | None:
    for _ in range(retries):
        x = min(max(cx - w / 2, 0.0), dims.width - w)
        y = min(max(cy - h / 2, 0.0), dims.height - h)
        box = BBox(x, y, w, h)
        if all(iou(box, other) <= max_iou for other in existing):
            return box
        cx += float(rng.normal(0.0, spread))
        cy += float(rng.normal(0.0, spread))
        cx = min(max(cx, w / 2), dims.width - w / 2)
        cy = min(max(cy, h / 2), dims.height - h / 2)
    return None


def generate_scene(cfg: SceneConfig, image_id: str = "scene-0") -> ImageRecord:
    """One seeded random scene; raises if objects cannot be placed."""
    rng = np.random.default_rng(cfg.seed)
    dims = cfg.dims
    classes = sorted(cfg.class_weights)
    weights = np.array([cfg.class_weights[c] for c in classes], dtype=np.float64)
    weights /= weights.sum()

    annotations: list[ObjectAnnotation] = []
    boxes: list[BBox] = []
    for _ in range(cfg.n_dense_clusters):
        gx = float(rng.uniform(0.1, 0.9)) * dims.width
        gy = float(rng.uniform(0.1, 0.9)) * dims.height
        count = int(rng.integers(cfg.objects_per_cluster[0], cfg.objects_per_cluster[1] + 1))
        for _ in range(count):
            w = float(rng.uniform(*cfg.small_size))
            h = float(rng.uniform(*cfg.small_size))
            cx = gx + float(rng.normal(0.0, cfg.cluster_spread))
            cy = gy + float(rng.normal(0.0, cfg.cluster_spread))
            box = _place_box(
                rng, cx, cy, w, h, dims, boxes, cfg.max_pairwise_iou,
                cfg.placement_retries, cfg.cluster_spread / 2,
            )
            if box is None:
                raise RuntimeError(f"{image_id}: could not place a small object (scene too dense)")
            cat = int(rng.choice(classes, p=weights))
            boxes.append(box)
            annotations.append(ObjectAnnotation(bbox=box, category=cat))

    for _ in range(cfg.n_large):
        w = float(rng.uniform(*cfg.large_size))
        h = float(rng.uniform(*cfg.large_size))
        cx = float(rng.uniform(w / 2, dims.width - w / 2))
        cy = float(rng.uniform(h / 2, dims.height - h / 2))
        box = _place_box(
            rng, cx, cy, w, h, dims, boxes, cfg.max_pairwise_iou,
            cfg.placement_retries, dims.width / 8,
        )
        if box is None:
            raise RuntimeError(f"{image_id}: could not place a large object")
        boxes.append(box)
        annotations.append(ObjectAnnotation(bbox=box, category=cfg.large_class))

    return ImageRecord(image_id, dims, None, tuple(annotations))


_CATEGORY_COLORS = np.array(
    [
        (214, 69, 65),
        (65, 131, 215),
        (38, 166, 91),
        (244, 179, 80),
        (154, 18, 179),
        (0, 181, 204),
    ],
    dtype=np.uint8,
)


def render_scene(record: ImageRecord, background: int = 230) -> np.ndarray:
    """Flat-color raster of the scene: one filled rectangle per object."""
    h, w = int(record.dims.height), int(record.dims.width)
    raster = np.full((h, w, 3), background, dtype=np.uint8)
    for ann in record.annotations:
        b = ann.bbox
        x0, y0 = max(int(b.x), 0), max(int(b.y), 0)
        x1, y1 = min(int(np.ceil(b.x2)), w), min(int(np.ceil(b.y2)), h)
        raster[y0:y1, x0:x1] = _CATEGORY_COLORS[ann.category % len(_CATEGORY_COLORS)]
    return raster


@dataclass(frozen=True)
class OracleConfig:
    center_jitter_sd: float = 0.0  # px, per axis
    size_jitter_sd: float = 0.0  # fraction of box extent, per axis
    miss_rate: float = 0.0
    fp_rate_per_image: float = 0.0  # Poisson mean, scaled by chip area fraction
    score_floor: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.center_jitter_sd < 0 or self.size_jitter_sd < 0:
            raise ValueError("jitter magnitudes must be >= 0")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError("miss_rate must be in [0, 1]")
        if self.fp_rate_per_image < 0:
            raise ValueError("fp_rate_per_image must be >= 0")

    @property
    def is_noiseless(self) -> bool:
        return (
            self.center_jitter_sd == 0
            and self.size_jitter_sd == 0
            and self.miss_rate == 0
            and self.fp_rate_per_image == 0
        )


def _call_rng(cfg: OracleConfig, record: ImageRecord, chip: BBox | None) -> np.random.Generator:
    # Stable per (seed, image, chip) so repeated calls reproduce exactly.
    tag = f"{record.image_id}|{chip.as_xywh() if chip else 'full'}"
    return np.random.default_rng((cfg.seed, zlib.crc32(tag.encode())))


def oracle_detect(
    record: ImageRecord, chip: BBox | None, cfg: OracleConfig
) -> list[Detection]:
    """Detections a corrupted-perfect detector would emit for one chip.

    chip=None means the whole image. Ground-truth boxes intersecting the
    chip are cropped to it and reported in chip-local coordinates (global
    when chip is None). With all noise at zero the output is exactly the
    cropped ground truth at score 1.0. Otherwise boxes are jittered, some
    are dropped, Poisson false positives appear, and scores fall with the
    jitter actually applied, clamped to [score_floor, 1].
    """
    rng = _call_rng(cfg, record, chip)
    view = chip or BBox(0.0, 0.0, record.dims.width, record.dims.height)
    view_dims = ImageDims(view.w, view.h)

    dets: list[Detection] = []
    for ann in record.annotations:
        if ann.ignore:
            continue
        visible = clamp_box(
            BBox(ann.bbox.x - view.x, ann.bbox.y - view.y, ann.bbox.w, ann.bbox.h),
            view_dims,
        )
        if visible is None:
            continue
        if cfg.miss_rate > 0 and rng.random() < cfg.miss_rate:
            continue
        if cfg.center_jitter_sd == 0 and cfg.size_jitter_sd == 0:
            dets.append(Detection(visible, ann.category, 1.0))
            continue
        dx, dy = rng.normal(0.0, cfg.center_jitter_sd or 1e-12, size=2)
        sw, sh = rng.normal(0.0, cfg.size_jitter_sd or 1e-12, size=2)
        w = max(visible.w * (1.0 + sw), 1.0)
        h = max(visible.h * (1.0 + sh), 1.0)
        jittered = clamp_box(
            BBox(visible.cx + dx - w / 2, visible.cy + dy - h / 2, w, h), view_dims
        )
        if jittered is None:
            continue
        norm = 0.0
        if cfg.center_jitter_sd > 0:
            norm += float(np.hypot(dx, dy)) / (3.0 * cfg.center_jitter_sd)
        if cfg.size_jitter_sd > 0:
            norm += (abs(sw) + abs(sh)) / (6.0 * cfg.size_jitter_sd)
        score = float(np.clip(1.0 - norm / 2.0, cfg.score_floor, 1.0))
        dets.append(Detection(jittered, ann.category, score))

    if cfg.fp_rate_per_image > 0:
        frac = view.area / (record.dims.width * record.dims.height)
        n_fp = int(rng.poisson(cfg.fp_rate_per_image * frac))
        cats = sorted({a.category for a in record.annotations if not a.ignore}) or [0]
        for _ in range(n_fp):
            w = float(rng.uniform(5.0, max(view.w / 4, 6.0)))
            h = float(rng.uniform(5.0, max(view.h / 4, 6.0)))
            x = float(rng.uniform(0.0, max(view.w - w, 1e-6)))
            y = float(rng.uniform(0.0, max(view.h - h, 1e-6)))
            box = clamp_box(BBox(x, y, w, h), view_dims)
            if box is None:
                continue
            cat = int(cats[int(rng.integers(len(cats)))])
            dets.append(Detection(box, cat, float(rng.uniform(cfg.score_floor, 0.5))))
    return dets
