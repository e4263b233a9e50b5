"""End-to-end wiring: clusters to chips to per-chip detection to fusion.

The detector is pluggable: anything with the signature
``detect(record, chip_or_none) -> list[Detection]`` (chip-local
coordinates for chips) can drive the pipeline — the bundled oracle, or an
adapter reading a real model's dumped outputs.
"""

from __future__ import annotations

from typing import Callable, Protocol

from .clustering import ClusterSet, NmmConfig, generate_cluster_ground_truth
from .dataset import Detection, ImageRecord
from .fusion import ChipOrigin, FuseConfig, fuse
from .geometry import BBox, ImageDims
from .synth import OracleConfig, oracle_detect


class ChipDetector(Protocol):
    def __call__(self, record: ImageRecord, chip: BBox | None) -> list[Detection]: ...


def oracle_detector(cfg: OracleConfig) -> ChipDetector:
    return lambda record, chip: oracle_detect(record, chip, cfg)


def chips_of(cluster_set: ClusterSet) -> list[ChipOrigin]:
    return [
        ChipOrigin(
            cluster_set.image_id,
            (cl.window.x, cl.window.y),
            ImageDims(cl.window.w, cl.window.h),
        )
        for cl in cluster_set.clusters
    ]


def detect_and_fuse(
    record: ImageRecord,
    cluster_set: ClusterSet,
    detector: ChipDetector,
    fuse_cfg: FuseConfig,
    *,
    include_global_pass: bool = True,
) -> list[Detection]:
    """Run the detector on every chip (and the whole image) and fuse."""
    chip_results = []
    for origin in chips_of(cluster_set):
        chip_results.append((origin, detector(record, origin.window)))
    global_dets = detector(record, None) if include_global_pass else []
    return fuse(chip_results, global_dets, fuse_cfg, record.dims)


def run_dataset(
    records: list[ImageRecord],
    detector: ChipDetector,
    nmm_cfg: NmmConfig,
    fuse_cfg: FuseConfig,
    *,
    include_global_pass: bool = True,
    progress: Callable[[str], None] | None = None,
) -> dict[str, list[Detection]]:
    """Cluster, detect, and fuse every record; returns image id -> detections."""
    cluster_sets = generate_cluster_ground_truth(records, nmm_cfg)
    results: dict[str, list[Detection]] = {}
    for record, cset in zip(records, cluster_sets):
        results[record.image_id] = detect_and_fuse(
            record, cset, detector, fuse_cfg, include_global_pass=include_global_pass
        )
        if progress:
            progress(record.image_id)
    return results
