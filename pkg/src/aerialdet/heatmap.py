"""Dense training targets: center heatmaps, per-object sizes, and offsets.

Targets follow the keypoint-detector convention: each object contributes a
peak of exactly 1.0 at the down-sampled cell containing its center, with an
unnormalized Gaussian falloff around it, combined across objects by
elementwise max. The channel axis stacks one channel per base class
followed by one channel per parent class; an object is splatted into both
its base channel and (when parented) its parent channel, so the extra
channels carry real supervision.

Size targets are the raw box extents in input pixels; offset targets are
the fractional part of center / down_ratio, recovering the sub-cell center
position lost to quantization.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .dataset import ImageRecord, LabelTree
from .geometry import ImageDims


@dataclass(frozen=True)
class HeatmapConfig:
    down_ratio: int = 4
    gaussian_min_overlap: float = 0.7

    def __post_init__(self) -> None:
        if self.down_ratio < 1 or int(self.down_ratio) != self.down_ratio:
            raise ValueError(f"down_ratio must be a positive integer, got {self.down_ratio}")
        if not 0.0 < self.gaussian_min_overlap < 1.0:
            raise ValueError("gaussian_min_overlap must be in (0, 1)")


@dataclass
class DenseTargetSet:
    """Targets for one image on the (grid_h, grid_w, channels) output grid.

    heatmap values live in [0, 1]; peak_cells holds each object's (col, row)
    cell; offsets lie in [0, 1)^2. Grid dims cover the image padded up to
    the next multiple of down_ratio (bottom/right margin), recorded here so
    decoding can crop back.
    """

    heatmap: np.ndarray  # (grid_h, grid_w, n_channels) float64
    sizes: np.ndarray  # (n_objects, 2) float64, (w, h) in input pixels
    offsets: np.ndarray  # (n_objects, 2) float64 in [0, 1)
    peak_cells: np.ndarray  # (n_objects, 2) int64, (col, row)
    object_base_class: np.ndarray  # (n_objects,) int64
    image_dims: ImageDims
    down_ratio: int

    @property
    def n_objects(self) -> int:
        return int(self.sizes.shape[0])

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        h, w, c = self.heatmap.shape
        return (h, w, c)


def gaussian_radius(box_w: float, box_h: float, min_overlap: float) -> float:
    """Largest peak-perturbation radius keeping IoU >= min_overlap.

    Solves the three corner/center displacement cases for a box of the given
    extent and takes the tightest, the standard rule for sizing keypoint
    Gaussians. Clamped below at 1 so a floored radius still spans a cell.
    """
    if box_w <= 0 or box_h <= 0:
        raise ValueError("box extent must be positive")
    if not 0.0 < min_overlap < 1.0:
        raise ValueError("min_overlap must be in (0, 1)")
    w, h = box_w, box_h

    b1 = h + w
    c1 = w * h * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 - math.sqrt(b1 * b1 - 4 * c1)) / 2

    a2 = 4.0
    b2 = 2 * (h + w)
    c2 = (1 - min_overlap) * w * h
    r2 = (b2 - math.sqrt(b2 * b2 - 4 * a2 * c2)) / (2 * a2)

    a3 = 4.0 * min_overlap
    b3 = -2 * min_overlap * (h + w)
    c3 = (min_overlap - 1) * w * h
    r3 = (-b3 + math.sqrt(b3 * b3 - 4 * a3 * c3)) / (2 * a3)

    return max(min(r1, r2, r3), 1.0)


def _splat_gaussian(channel: np.ndarray, col: int, row: int, radius: int) -> None:
    # Writes max(channel, kernel) in place; kernel peaks at exactly 1.0.
    diameter = 2 * radius + 1
    sigma = diameter / 6.0
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma * sigma))

    grid_h, grid_w = channel.shape
    left, right = min(col, radius), min(grid_w - col, radius + 1)
    top, bottom = min(row, radius), min(grid_h - row, radius + 1)
    view = channel[row - top : row + bottom, col - left : col + right]
    patch = kernel[radius - top : radius + bottom, radius - left : radius + right]
    np.maximum(view, patch, out=view)


def splat_targets(record: ImageRecord, tree: LabelTree, cfg: HeatmapConfig) -> DenseTargetSet:
    """Build the dense target set for one image.

    Ignore-flagged annotations contribute nothing. Raises if an object
    center falls outside the image (annotations are clipped at load, so
    this indicates records built by hand with bad boxes).
    """
    r = cfg.down_ratio
    grid_w = -(-int(math.ceil(record.dims.width)) // r)  # ceil division
    grid_h = -(-int(math.ceil(record.dims.height)) // r)
    heatmap = np.zeros((grid_h, grid_w, tree.n_channels), dtype=np.float64)

    sizes, offsets, cells, classes = [], [], [], []
    for ann in record.annotations:
        if ann.ignore:
            continue
        if not tree.is_base(ann.category):
            raise ValueError(f"annotation category {ann.category} is not a base class")
        cx, cy = ann.bbox.center
        if not (0 <= cx < record.dims.width and 0 <= cy < record.dims.height):
            raise ValueError(f"object center ({cx}, {cy}) outside image {record.image_id!r}")
        col = int(cx // r)
        row = int(cy // r)

        radius = int(gaussian_radius(ann.bbox.w / r, ann.bbox.h / r, cfg.gaussian_min_overlap))
        _splat_gaussian(heatmap[:, :, ann.category], col, row, radius)
        parent = tree.parent(ann.category)
        if parent is not None:
            _splat_gaussian(heatmap[:, :, parent], col, row, radius)

        sizes.append((ann.bbox.w, ann.bbox.h))
        offsets.append((cx / r - col, cy / r - row))
        cells.append((col, row))
        classes.append(ann.category)

    n = len(sizes)
    return DenseTargetSet(
        heatmap=heatmap,
        sizes=np.array(sizes, dtype=np.float64).reshape(n, 2),
        offsets=np.array(offsets, dtype=np.float64).reshape(n, 2),
        peak_cells=np.array(cells, dtype=np.int64).reshape(n, 2),
        object_base_class=np.array(classes, dtype=np.int64),
        image_dims=record.dims,
        down_ratio=r,
    )


def dense_prediction_maps(targets: DenseTargetSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Perfect dense predictions for a target set: (heatmap, size map, offset map).

    The size and offset maps are (grid_h, grid_w, 2) grids holding each
    object's values at its peak cell, the layout a dense regression head
    would produce. Useful for decoder round-trips and oracle predictions.
    """
    grid_h, grid_w, _ = targets.heatmap.shape
    size_map = np.zeros((grid_h, grid_w, 2), dtype=np.float64)
    offset_map = np.zeros((grid_h, grid_w, 2), dtype=np.float64)
    for k in range(targets.n_objects):
        col, row = targets.peak_cells[k]
        size_map[row, col] = targets.sizes[k]
        offset_map[row, col] = targets.offsets[k]
    return targets.heatmap.copy(), size_map, offset_map


def save_target_dump(targets: DenseTargetSet, stem: str | os.PathLike) -> None:
    """Write <stem>.bin (float32 row-major channel-last grid) + <stem>.json sidecar."""
    stem = os.fspath(stem)
    targets.heatmap.astype(np.float32).tofile(stem + ".bin")
    sidecar = {
        "kind": "targets",
        "shape": list(targets.heatmap.shape),
        "dtype": "float32",
        "layout": "row-major channel-last",
        "down_ratio": targets.down_ratio,
        "image": {"width": targets.image_dims.width, "height": targets.image_dims.height},
        "n_objects": targets.n_objects,
        "peak_cells": targets.peak_cells.tolist(),
        "sizes": targets.sizes.tolist(),
        "offsets": targets.offsets.tolist(),
        "object_base_class": targets.object_base_class.tolist(),
    }
    with open(stem + ".json", "w") as fh:
        json.dump(sidecar, fh)
        fh.write("\n")


def load_target_dump(stem: str | os.PathLike) -> DenseTargetSet:
    stem = os.fspath(stem)
    with open(stem + ".json") as fh:
        side = json.load(fh)
    shape = tuple(side["shape"])
    grid = np.fromfile(stem + ".bin", dtype=np.float32).reshape(shape).astype(np.float64)
    n = int(side["n_objects"])
    return DenseTargetSet(
        heatmap=grid,
        sizes=np.array(side["sizes"], dtype=np.float64).reshape(n, 2),
        offsets=np.array(side["offsets"], dtype=np.float64).reshape(n, 2),
        peak_cells=np.array(side["peak_cells"], dtype=np.int64).reshape(n, 2),
        object_base_class=np.array(side["object_base_class"], dtype=np.int64),
        image_dims=ImageDims(side["image"]["width"], side["image"]["height"]),
        down_ratio=int(side["down_ratio"]),
    )


def save_prediction_dump(
    heatmap_hat: np.ndarray,
    sizes_hat: np.ndarray,
    offsets_hat: np.ndarray,
    stem: str | os.PathLike,
) -> None:
    """Write a prediction in the same binary-grid + sidecar format."""
    stem = os.fspath(stem)
    np.asarray(heatmap_hat, dtype=np.float32).tofile(stem + ".bin")
    sidecar = {
        "kind": "prediction",
        "shape": list(heatmap_hat.shape),
        "dtype": "float32",
        "layout": "row-major channel-last",
        "sizes_hat": np.asarray(sizes_hat, dtype=np.float64).tolist(),
        "offsets_hat": np.asarray(offsets_hat, dtype=np.float64).tolist(),
    }
    with open(stem + ".json", "w") as fh:
        json.dump(sidecar, fh)
        fh.write("\n")


def load_prediction_dump(stem: str | os.PathLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    stem = os.fspath(stem)
    with open(stem + ".json") as fh:
        side = json.load(fh)
    shape = tuple(side["shape"])
    grid = np.fromfile(stem + ".bin", dtype=np.float32).reshape(shape).astype(np.float64)
    sizes = np.array(side["sizes_hat"], dtype=np.float64).reshape(-1, 2)
    offsets = np.array(side["offsets_hat"], dtype=np.float64).reshape(-1, 2)
    return grid, sizes, offsets
