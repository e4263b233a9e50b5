"""Greedy merge of small-object boxes into fixed-size cluster windows.

Each image gets an adaptive number of chip-sized windows: boxes are swept
top-left to bottom-right, every unvisited box seeds a window placed over
its center (shifted inward so the window stays inside the image), and all
later unvisited boxes sufficiently covered by that window join the
cluster. The result partitions the small-object set: every small box is a
member of exactly one cluster, while the windows themselves may overlap.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import ImageRecord, ObjectAnnotation
from .geometry import BBox, ImageDims, recenter


@dataclass(frozen=True)
class NmmConfig:
    """Knobs for cluster-window generation.

    merge_threshold is the coverage fraction (intersection over member-box
    area) a box needs inside a window to join that cluster. Boxes whose
    longer side exceeds small_max_side are "large" and never clustered;
    they are left for the whole-image detection pass.
    """

    window_w: float = 512.0
    window_h: float = 512.0
    merge_threshold: float = 0.8
    small_max_side: float = 96.0

    def __post_init__(self) -> None:
        if self.window_w <= 0 or self.window_h <= 0:
            raise ValueError("window size must be positive")
        if not 0.0 < self.merge_threshold <= 1.0:
            raise ValueError(f"merge_threshold must be in (0, 1], got {self.merge_threshold}")
        if self.small_max_side <= 0:
            raise ValueError("small_max_side must be positive")


@dataclass(frozen=True)
class Cluster:
    """A chip window plus the indices of the annotations it absorbed."""

    window: BBox
    members: tuple[int, ...]
    seed: int

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("cluster must have at least one member")
        if self.seed not in self.members:
            raise ValueError("cluster seed must be one of its members")


def sort_boxes(annotations: list[ObjectAnnotation]) -> list[int]:
    """Indices ordered top-to-bottom, then left-to-right, then input order."""
    return sorted(
        range(len(annotations)),
        key=lambda i: (annotations[i].bbox.y, annotations[i].bbox.x, i),
    )


def is_small(ann: ObjectAnnotation, cfg: NmmConfig) -> bool:
    return max(ann.bbox.w, ann.bbox.h) <= cfg.small_max_side


def non_max_merge(
    annotations: list[ObjectAnnotation], dims: ImageDims, cfg: NmmConfig
) -> list[Cluster]:
    """Greedy single-pass clustering of the small-object subset.

    Ignore-flagged annotations and large boxes are skipped entirely. Member
    indices refer to positions in the input list. Deterministic: identical
    inputs produce identical clusters in identical order.
    """
    order = [
        i
        for i in sort_boxes(annotations)
        if is_small(annotations[i], cfg) and not annotations[i].ignore
    ]
    n = len(order)
    if n == 0:
        return []

    boxes = np.array(
        [annotations[i].bbox.as_xywh() for i in order], dtype=np.float64
    )
    x1, y1 = boxes[:, 0], boxes[:, 1]
    x2, y2 = x1 + boxes[:, 2], y1 + boxes[:, 3]
    areas = (x2 - x1) * (y2 - y1)  # corner form, consistent with geometry.coverage

    visited = np.zeros(n, dtype=bool)
    clusters: list[Cluster] = []
    for k in range(n):
        if visited[k]:
            continue
        visited[k] = True
        seed = order[k]
        window = recenter(
            annotations[seed].bbox.center, cfg.window_w, cfg.window_h, dims
        )
        rest = np.nonzero(~visited[k + 1 :])[0] + (k + 1)
        members = [seed]
        if rest.size:
            iw = np.minimum(x2[rest], window.x2) - np.maximum(x1[rest], window.x)
            ih = np.minimum(y2[rest], window.y2) - np.maximum(y1[rest], window.y)
            inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
            joined = rest[inter / areas[rest] > cfg.merge_threshold]
            visited[joined] = True
            members.extend(order[j] for j in joined)
        clusters.append(Cluster(window, tuple(members), seed))
    return clusters


@dataclass(frozen=True)
class ClusterSet:
    """Per-image cluster list, ready for serialization."""

    image_id: str
    dims: ImageDims
    clusters: tuple[Cluster, ...]
    scores: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.scores and len(self.scores) != len(self.clusters):
            raise ValueError("scores, when present, must align with clusters")


def generate_cluster_ground_truth(
    records: list[ImageRecord], cfg: NmmConfig
) -> list[ClusterSet]:
    """Run non_max_merge over every record; cluster count adapts per image."""
    return [
        ClusterSet(rec.image_id, rec.dims, tuple(non_max_merge(list(rec.annotations), rec.dims, cfg)))
        for rec in records
    ]


def cluster_count_histogram(sets: list[ClusterSet]) -> dict[int, int]:
    """Map cluster-count -> number of images with that count."""
    hist: dict[int, int] = {}
    for cs in sets:
        hist[len(cs.clusters)] = hist.get(len(cs.clusters), 0) + 1
    return dict(sorted(hist.items()))


def cluster_sets_to_json(sets: list[ClusterSet]) -> list[dict]:
    out = []
    for cs in sets:
        entry: dict = {
            "image_id": cs.image_id,
            "width": cs.dims.width,
            "height": cs.dims.height,
            "clusters": [],
        }
        for idx, cl in enumerate(cs.clusters):
            item = {
                "cx": cl.window.cx,
                "cy": cl.window.cy,
                "w": cl.window.w,
                "h": cl.window.h,
                "member_indices": list(cl.members),
                "seed_index": cl.seed,
            }
            if cs.scores:
                item["score"] = cs.scores[idx]
            entry["clusters"].append(item)
        out.append(entry)
    return out


def cluster_sets_from_json(doc: list[dict]) -> list[ClusterSet]:
    sets = []
    for entry in doc:
        dims = ImageDims(float(entry["width"]), float(entry["height"]))
        clusters = []
        scores = []
        for item in entry["clusters"]:
            w, h = float(item["w"]), float(item["h"])
            window = BBox(float(item["cx"]) - w / 2, float(item["cy"]) - h / 2, w, h)
            # prediction-side files carry no membership; default to the seed slot
            members = tuple(int(m) for m in item.get("member_indices", [0]))
            clusters.append(Cluster(window, members, int(item.get("seed_index", members[0]))))
            if "score" in item:
                scores.append(float(item["score"]))
        if scores and len(scores) != len(clusters):
            raise ValueError(f"image {entry['image_id']}: partial cluster scores")
        sets.append(
            ClusterSet(str(entry["image_id"]), dims, tuple(clusters), tuple(scores))
        )
    return sets


def save_cluster_sets(
    sets: list[ClusterSet], path: str | os.PathLike, *, metadata: dict | None = None
) -> None:
    doc = {"images": cluster_sets_to_json(sets)}
    if metadata:
        doc["config"] = metadata
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_cluster_sets(path: str | os.PathLike) -> list[ClusterSet]:
    with open(path) as fh:
        doc = json.load(fh)
    return cluster_sets_from_json(doc["images"] if isinstance(doc, dict) else doc)
