"""Annotation data model, dataset ingestion, and the hierarchical label tree.

Two on-disk formats are supported:

* per-image CSV annotation files in the visDrone convention
  (``left,top,width,height,score,category,truncation,occlusion``), and
* a COCO-style JSON subset (images / annotations / categories).

Categories live in a two-level :class:`LabelTree`: ``base_classes`` carry
canonical ids ``0..C-1`` and optional parent ("stacked") classes occupy ids
``C..C+C_s-1``. The stacked ids double as heatmap channel indices, so the
tree fixes the channel layout of the dense targets.

Class-agnostic ignore regions (visDrone category 0) are retained with
``category == IGNORE_REGION`` and ``ignore=True``: they never produce
training targets but shield detections from being counted as false
positives during evaluation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .geometry import BBox, ImageDims, clamp_box

#: Sentinel category id for class-agnostic ignore regions (not a tree class).
IGNORE_REGION = -1


class DataFormatError(Exception):
    """Raised for malformed or inconsistent dataset files."""


@dataclass(frozen=True)
class LabelTree:
    """Base categories plus stacked parent categories and the child->parent map."""

    base_classes: tuple[tuple[int, str], ...]
    stacked_classes: tuple[tuple[int, str], ...] = ()
    parent_of: dict[int, int | None] = field(default_factory=dict)

    def __post_init__(self) -> None:
        base_ids = [i for i, _ in self.base_classes]
        stacked_ids = [i for i, _ in self.stacked_classes]
        n = len(base_ids)
        if n < 1:
            raise ValueError("label tree needs at least one base class")
        if sorted(base_ids) != list(range(n)):
            raise ValueError(f"base class ids must be 0..{n - 1}, got {base_ids}")
        if sorted(stacked_ids) != list(range(n, n + len(stacked_ids))):
            raise ValueError(
                f"stacked class ids must be {n}..{n + len(stacked_ids) - 1}, got {stacked_ids}"
            )
        for child, parent in self.parent_of.items():
            if child not in set(base_ids):
                raise ValueError(f"parent map child {child} is not a base class")
            if parent is not None and parent not in set(stacked_ids):
                raise ValueError(f"parent map target {parent} is not a stacked class")

    @property
    def n_base(self) -> int:
        return len(self.base_classes)

    @property
    def n_stacked(self) -> int:
        return len(self.stacked_classes)

    @property
    def n_channels(self) -> int:
        """Heatmap channel count: one per base class plus one per stacked class."""
        return self.n_base + self.n_stacked

    def parent(self, base_id: int) -> int | None:
        """Stacked parent id for a base class, or None when unparented."""
        if not self.is_base(base_id):
            raise KeyError(f"not a base class id: {base_id}")
        return self.parent_of.get(base_id)

    def is_base(self, cat_id: int) -> bool:
        return 0 <= cat_id < self.n_base

    def name(self, cat_id: int) -> str:
        if cat_id == IGNORE_REGION:
            return "ignored regions"
        for i, nm in (*self.base_classes, *self.stacked_classes):
            if i == cat_id:
                return nm
        raise KeyError(f"unknown category id: {cat_id}")

    def id_of(self, name: str) -> int:
        for i, nm in (*self.base_classes, *self.stacked_classes):
            if nm == name:
                return i
        raise KeyError(f"unknown category name: {name!r}")

    def to_json(self) -> dict:
        return {
            "base_classes": [{"id": i, "name": n} for i, n in self.base_classes],
            "stacked_classes": [{"id": i, "name": n} for i, n in self.stacked_classes],
            "parent_of": {str(c): p for c, p in self.parent_of.items()},
        }

    @staticmethod
    def from_json(doc: dict) -> "LabelTree":
        try:
            base = tuple((int(e["id"]), str(e["name"])) for e in doc["base_classes"])
            stacked = tuple(
                (int(e["id"]), str(e["name"])) for e in doc.get("stacked_classes", [])
            )
            parents = {
                int(c): (None if p is None else int(p))
                for c, p in doc.get("parent_of", {}).items()
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"bad label tree document: {exc}") from exc
        return LabelTree(base, stacked, parents)


def load_label_tree(path: str | os.PathLike) -> LabelTree:
    """Read a label tree definition JSON file."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
    return LabelTree.from_json(doc)


def save_label_tree(tree: LabelTree, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        json.dump(tree.to_json(), fh, indent=2)
        fh.write("\n")


_VISDRONE_BASE = (
    "pedestrian",
    "people",
    "bicycle",
    "car",
    "van",
    "truck",
    "tricycle",
    "awning-tricycle",
    "bus",
    "motor",
    "others",
)


def visdrone_label_tree() -> LabelTree:
    """The 11-base-class / 3-stacked-class tree for visDrone-style data.

    Base classes are the ten object categories plus ``others`` (canonical
    ids 0..10); ``ignored regions`` is not a class, its annotations become
    class-agnostic ignore regions. Stacked parents: pedestrian and people
    fall under ``human``; car, van, truck and bus under ``vehicles``;
    bicycle, tricycle, awning-tricycle and motor under
    ``non-motor-vehicles``; ``others`` has no parent.
    """
    base = tuple(enumerate(_VISDRONE_BASE))
    stacked = ((11, "human"), (12, "vehicles"), (13, "non-motor-vehicles"))
    parents: dict[int, int | None] = {
        0: 11,  # pedestrian
        1: 11,  # people
        2: 13,  # bicycle
        3: 12,  # car
        4: 12,  # van
        5: 12,  # truck
        6: 13,  # tricycle
        7: 13,  # awning-tricycle
        8: 12,  # bus
        9: 13,  # motor
        10: None,  # others
    }
    return LabelTree(base, stacked, parents)


def uavdt_label_tree() -> LabelTree:
    """Three base classes (car, bus, truck), no stacked classes.

    With no stacked classes the hierarchical heatmap degenerates to one
    plain channel per category.
    """
    return LabelTree(((0, "car"), (1, "bus"), (2, "truck")))


@dataclass(frozen=True)
class ObjectAnnotation:
    """One ground-truth box.

    ``ignore=True`` marks annotations that are excluded from training
    targets and unpenalized during evaluation (ignore regions, and by
    default the ``others`` category).
    """

    bbox: BBox
    category: int
    truncation: int | None = None
    occlusion: int | None = None
    ignore: bool = False

    def __post_init__(self) -> None:
        if self.category == IGNORE_REGION and not self.ignore:
            raise ValueError("ignore-region annotations must carry ignore=True")


@dataclass(frozen=True)
class ImageRecord:
    """One image: id, extent, optional pixel source, and its annotations."""

    image_id: str
    dims: ImageDims
    path: str | None = None
    annotations: tuple[ObjectAnnotation, ...] = ()


@dataclass(frozen=True)
class Detection:
    """One detector output box with confidence score."""

    bbox: BBox
    category: int
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


def _clip_annotation(ann: ObjectAnnotation, dims: ImageDims) -> ObjectAnnotation | None:
    clipped = clamp_box(ann.bbox, dims)
    if clipped is None:
        return None
    if clipped != ann.bbox:
        ann = replace(ann, bbox=clipped)
    return ann


# Raw visDrone category column -> (canonical id, default ignore flag).
_VISDRONE_RAW_TO_CANONICAL: dict[int, tuple[int, bool]] = {
    0: (IGNORE_REGION, True),
    **{raw: (raw - 1, False) for raw in range(1, 11)},
    11: (10, True),  # "others": retained but ignore-flagged by default
}


def _parse_visdrone_line(
    line: str, raw_map: dict[int, tuple[int, bool]], where: str
) -> ObjectAnnotation | None:
    fields = [f for f in line.strip().rstrip(",").split(",")]
    if len(fields) != 8:
        raise DataFormatError(f"{where}: expected 8 comma-separated fields, got {len(fields)}")
    try:
        x, y, w, h, _score, raw_cat, trunc, occ = (int(f) for f in fields)
    except ValueError as exc:
        raise DataFormatError(f"{where}: non-integer field: {exc}") from exc
    if w <= 0 or h <= 0:
        return None  # zero-area boxes are dropped
    if raw_cat not in raw_map:
        raise DataFormatError(f"{where}: unknown category id {raw_cat}")
    cat, ignore = raw_map[raw_cat]
    return ObjectAnnotation(
        bbox=BBox(float(x), float(y), float(w), float(h)),
        category=cat,
        truncation=trunc,
        occlusion=occ,
        ignore=ignore,
    )


def load_visdrone(
    ann_dir: str | os.PathLike,
    tree: LabelTree,
    *,
    sizes_file: str | os.PathLike | None = None,
    default_dims: tuple[float, float] = (2000.0, 1500.0),
    train_on_others: bool = False,
) -> list[ImageRecord]:
    """Load a directory of per-image visDrone annotation files.

    Image extents come from ``sizes.json`` next to the annotation files (or
    an explicit ``sizes_file``), a JSON object mapping image id to
    ``[width, height]``; images without an entry fall back to
    ``default_dims``. Boxes are clipped to the image; boxes that fall
    entirely outside raise. ``train_on_others=True`` clears the default
    ignore flag on the ``others`` category.
    """
    ann_dir = Path(ann_dir)
    if not ann_dir.is_dir():
        raise DataFormatError(f"not a directory: {ann_dir}")
    raw_map = dict(_VISDRONE_RAW_TO_CANONICAL)
    if train_on_others:
        raw_map[11] = (10, False)
    for cat, _ignore in raw_map.values():
        if cat != IGNORE_REGION and not tree.is_base(cat):
            raise DataFormatError(f"category {cat} does not resolve in the label tree")

    sizes: dict[str, tuple[float, float]] = {}
    sizes_path = Path(sizes_file) if sizes_file else ann_dir / "sizes.json"
    if sizes_path.is_file():
        with open(sizes_path) as fh:
            try:
                sizes = {k: (float(v[0]), float(v[1])) for k, v in json.load(fh).items()}
            except (json.JSONDecodeError, TypeError, ValueError, IndexError) as exc:
                raise DataFormatError(f"{sizes_path}: bad sizes file: {exc}") from exc

    records = []
    for txt in sorted(ann_dir.glob("*.txt")):
        image_id = txt.stem
        dims = ImageDims(*sizes.get(image_id, default_dims))
        annotations = []
        with open(txt) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                ann = _parse_visdrone_line(line, raw_map, f"{txt}:{lineno}")
                if ann is None:
                    continue
                clipped = _clip_annotation(ann, dims)
                if clipped is None:
                    raise DataFormatError(
                        f"{txt}:{lineno}: box {ann.bbox.as_xywh()} lies outside "
                        f"the {dims.width:g}x{dims.height:g} image"
                    )
                annotations.append(clipped)
        records.append(ImageRecord(image_id, dims, None, tuple(annotations)))
    return records


def load_coco(path: str | os.PathLike, tree: LabelTree) -> list[ImageRecord]:
    """Load a COCO-style JSON file into the same data model as load_visdrone.

    Categories are resolved by name against the tree (ignore regions may be
    written with ``category_id == -1``). Annotations with a truthy
    ``ignore`` or ``iscrowd`` field are ignore-flagged.
    """
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise DataFormatError(f"{path}: missing top-level '{key}' array")

    cat_map: dict[int, int] = {}
    for cat in doc["categories"]:
        cid = int(cat["id"])
        if cid == IGNORE_REGION:
            cat_map[cid] = IGNORE_REGION
            continue
        try:
            cat_map[cid] = tree.id_of(str(cat["name"]))
        except KeyError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc

    images: dict[str, ImageRecord] = {}
    for img in doc["images"]:
        image_id = str(img["id"])
        dims = ImageDims(float(img["width"]), float(img["height"]))
        images[image_id] = ImageRecord(image_id, dims, img.get("file_name"))

    anns_by_image: dict[str, list[ObjectAnnotation]] = {iid: [] for iid in images}
    for ann in doc["annotations"]:
        image_id = str(ann["image_id"])
        if image_id not in images:
            raise DataFormatError(f"{path}: annotation references absent image id {image_id!r}")
        x, y, w, h = (float(v) for v in ann["bbox"])
        if w <= 0 or h <= 0:
            continue
        raw_cid = int(ann["category_id"])
        if raw_cid == IGNORE_REGION:
            cat, ignore = IGNORE_REGION, True
        else:
            if raw_cid not in cat_map:
                raise DataFormatError(f"{path}: annotation uses unlisted category id {raw_cid}")
            cat = cat_map[raw_cid]
            ignore = bool(ann.get("ignore", 0)) or bool(ann.get("iscrowd", 0))
        parsed = ObjectAnnotation(
            bbox=BBox(x, y, w, h),
            category=cat,
            truncation=ann.get("truncation"),
            occlusion=ann.get("occlusion"),
            ignore=ignore,
        )
        clipped = _clip_annotation(parsed, images[image_id].dims)
        if clipped is None:
            raise DataFormatError(
                f"{path}: annotation box {parsed.bbox.as_xywh()} lies outside image {image_id!r}"
            )
        anns_by_image[image_id].append(clipped)

    return [
        replace(images[iid], annotations=tuple(anns_by_image[iid]))
        for iid in sorted(images)
    ]


def save_coco(records: list[ImageRecord], tree: LabelTree, path: str | os.PathLike) -> None:
    """Write records as COCO-style JSON (lossless round-trip with load_coco)."""
    images = []
    annotations = []
    ann_id = 0
    for rec in records:
        img: dict = {
            "id": rec.image_id,
            "width": rec.dims.width,
            "height": rec.dims.height,
        }
        if rec.path is not None:
            img["file_name"] = rec.path
        images.append(img)
        for ann in rec.annotations:
            entry: dict = {
                "id": ann_id,
                "image_id": rec.image_id,
                "bbox": list(ann.bbox.as_xywh()),
                "area": ann.bbox.area,
                "category_id": ann.category,
            }
            if ann.ignore:
                entry["ignore"] = 1
            if ann.truncation is not None:
                entry["truncation"] = ann.truncation
            if ann.occlusion is not None:
                entry["occlusion"] = ann.occlusion
            annotations.append(entry)
            ann_id += 1
    categories = [{"id": i, "name": n} for i, n in tree.base_classes]
    doc = {"images": images, "annotations": annotations, "categories": categories}
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")
