"""Coarse-to-fine detection toolkit for high-resolution aerial imagery.

Geometry, cluster-window generation, dense target/loss numerics, chip
fusion, mask-guided resampling augmentation, and COCO-style evaluation —
with a pluggable detector interface and a synthetic scene/oracle pair so
the whole pipeline runs at desk scale.
"""

from .clustering import Cluster, ClusterSet, NmmConfig, non_max_merge, sort_boxes
from .config import PipelineConfig, RefineConfig
from .dataset import (
    IGNORE_REGION,
    DataFormatError,
    Detection,
    ImageRecord,
    LabelTree,
    ObjectAnnotation,
    load_coco,
    load_visdrone,
    save_coco,
    uavdt_label_tree,
    visdrone_label_tree,
)
from .evaluation import EvalConfig, ap_summary, average_precision, match_detections
from .fusion import (
    ChipOrigin,
    FuseConfig,
    chip_to_global,
    decode_boxes,
    decode_chip,
    extract_peaks,
    fuse,
    merge_split_boxes,
    nms,
)
from .geometry import BBox, ImageDims, coverage, iou, recenter
from .heatmap import DenseTargetSet, HeatmapConfig, gaussian_radius, splat_targets
from .loss import (
    LossConfig,
    Prediction,
    focal_loss_shm,
    offset_loss,
    size_loss_wh,
    total_loss,
)
from .refine import ClusterCandidate, position_refinement, take_topk
from .resample import MaskRaster, MrmConfig, PastePlan, PoolEntry, build_object_pool, composite, plan_pastes
from .synth import OracleConfig, SceneConfig, generate_scene, oracle_detect, toy_label_tree

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "ChipOrigin",
    "Cluster",
    "ClusterCandidate",
    "ClusterSet",
    "DataFormatError",
    "DenseTargetSet",
    "Detection",
    "EvalConfig",
    "FuseConfig",
    "HeatmapConfig",
    "IGNORE_REGION",
    "ImageDims",
    "ImageRecord",
    "LabelTree",
    "LossConfig",
    "MaskRaster",
    "MrmConfig",
    "NmmConfig",
    "ObjectAnnotation",
    "OracleConfig",
    "PastePlan",
    "PipelineConfig",
    "PoolEntry",
    "Prediction",
    "RefineConfig",
    "SceneConfig",
    "ap_summary",
    "average_precision",
    "build_object_pool",
    "chip_to_global",
    "composite",
    "coverage",
    "decode_boxes",
    "decode_chip",
    "extract_peaks",
    "focal_loss_shm",
    "fuse",
    "gaussian_radius",
    "generate_scene",
    "iou",
    "load_coco",
    "load_visdrone",
    "match_detections",
    "merge_split_boxes",
    "nms",
    "non_max_merge",
    "offset_loss",
    "oracle_detect",
    "plan_pastes",
    "position_refinement",
    "recenter",
    "save_coco",
    "size_loss_wh",
    "sort_boxes",
    "splat_targets",
    "take_topk",
    "total_loss",
    "toy_label_tree",
    "uavdt_label_tree",
    "visdrone_label_tree",
]
