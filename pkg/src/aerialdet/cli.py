"""Batch entry points wiring the pipeline stages together.

Every subcommand is a thin shell around library calls: it loads a config
file (flag overrides win), validates it, runs the stage over the input
files with an optional worker pool, and writes JSON/CSV/PNG outputs with
the effective config echoed into the metadata.

Exit codes: 0 success, 1 usage/config error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import clustering, evaluation, fusion, heatmap, loss, refine, resample, synth
from .config import PipelineConfig, load_config
from .dataset import (
    DataFormatError,
    LabelTree,
    load_coco,
    load_label_tree,
    load_visdrone,
    save_coco,
    uavdt_label_tree,
    visdrone_label_tree,
)
from .geometry import ImageDims
from .pipeline import chips_of
from .synth import OracleConfig, SceneConfig, generate_scene, oracle_detect, toy_label_tree

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags by default; this toolkit reserves 2 for
    # data errors and uses 1 for usage problems.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _resolve_tree(spec: str) -> LabelTree:
    if spec == "visdrone":
        return visdrone_label_tree()
    if spec == "uavdt":
        return uavdt_label_tree()
    if spec == "toy":
        return toy_label_tree()
    return load_label_tree(spec)


def _load_records(path: str, fmt: str, tree: LabelTree):
    if fmt == "visdrone":
        return load_visdrone(path, tree)
    return load_coco(path, tree)


def _write_json(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _jobs(args) -> int:
    n = args.jobs if args.jobs else (os.cpu_count() or 1)
    return max(int(n), 1)


def _parallel_map(fn, items, jobs: int):
    """Order-preserving map over items; forks a worker pool when jobs > 1."""
    if jobs <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(len(items) // (jobs * 4), 1)))


# --- subcommands -----------------------------------------------------------


def _nmm_one(payload):
    record, cfg = payload
    clusters = clustering.non_max_merge(list(record.annotations), record.dims, cfg)
    return clustering.ClusterSet(record.image_id, record.dims, tuple(clusters))


def cmd_nmm(args, cfg: PipelineConfig) -> int:
    tree = _resolve_tree(args.labels)
    records = _load_records(args.dataset, args.format, tree)
    sets = _parallel_map(_nmm_one, [(r, cfg.nmm) for r in records], _jobs(args))
    out = args.out or "clusters.json"
    clustering.save_cluster_sets(sets, out, metadata=cfg.to_json())
    total = sum(len(s.clusters) for s in sets)
    print(f"{len(records)} images, {total} clusters -> {out}")
    for count, n_images in clustering.cluster_count_histogram(sets).items():
        print(f"  {count:3d} clusters: {n_images} images")
    return 0


def cmd_refine(args, cfg: PipelineConfig) -> int:
    sets = clustering.load_cluster_sets(args.clusters)
    refined = []
    for cset in sets:
        scores = list(cset.scores) or [1.0] * len(cset.clusters)
        kept = refine.select_refined(
            [cl.window for cl in cset.clusters],
            scores,
            cfg.refine.topk,
            cfg.refine.max_overlap,
        )
        refined.append(
            clustering.ClusterSet(
                cset.image_id,
                cset.dims,
                tuple(cset.clusters[i] for i in kept),
                tuple(scores[i] for i in kept),
            )
        )
    before = sum(len(s.clusters) for s in sets)
    after = sum(len(s.clusters) for s in refined)
    out = args.out or "refined.json"
    print(f"kept {after}/{before} cluster candidates -> {out}")
    clustering.save_cluster_sets(refined, out, metadata=cfg.to_json())
    return 0


def _targets_one(payload):
    record, tree, hm_cfg, out_dir = payload
    targets = heatmap.splat_targets(record, tree, hm_cfg)
    heatmap.save_target_dump(targets, Path(out_dir) / record.image_id)
    return record.image_id, targets.n_objects


def cmd_targets(args, cfg: PipelineConfig) -> int:
    tree = _resolve_tree(args.labels)
    records = _load_records(args.dataset, args.format, tree)
    out_dir = Path(args.out or "targets")
    out_dir.mkdir(parents=True, exist_ok=True)
    stats = _parallel_map(
        _targets_one, [(r, tree, cfg.heatmap, out_dir) for r in records], _jobs(args)
    )
    _write_json(
        {"config": cfg.to_json(), "images": [{"image_id": i, "n_objects": n} for i, n in stats]},
        str(out_dir / "manifest.json"),
    )
    print(f"wrote {len(stats)} target dumps to {out_dir}")
    return 0


def cmd_loss_check(args, cfg: PipelineConfig) -> int:
    targets = heatmap.load_target_dump(args.targets)
    grid, sizes_hat, offsets_hat = heatmap.load_prediction_dump(args.pred)
    if grid.shape != targets.heatmap.shape:
        raise DataFormatError(
            f"prediction grid {grid.shape} does not match targets {targets.heatmap.shape}"
        )
    if sizes_hat.shape[0] != targets.n_objects:
        raise DataFormatError(
            f"prediction has {sizes_hat.shape[0]} size entries, targets have {targets.n_objects}"
        )
    pred = loss.Prediction(grid, sizes_hat, offsets_hat)
    report = loss.evaluate_all(targets, pred, cfg.loss)

    _, analytic = loss.focal_loss_shm(targets, pred, cfg.loss)
    # the loss is flat outside the clamp range, so the difference quotient is
    # only meaningful at cells a couple of steps inside it
    step = 1e-5
    lo, hi = cfg.loss.clamp_eps + 2 * step, 1.0 - cfg.loss.clamp_eps - 2 * step
    interior = np.nonzero((grid.reshape(-1) >= lo) & (grid.reshape(-1) <= hi))[0]
    rng = np.random.default_rng(cfg.seed)
    if interior.size > args.grad_cells:
        interior = np.sort(rng.choice(interior, size=args.grad_cells, replace=False))
    idx, fd = loss.finite_difference_heatmap_grad(
        targets, pred, cfg.loss, step=step, cells=interior
    )
    ana = analytic.reshape(-1)[idx]
    denom = np.maximum(np.maximum(np.abs(ana), np.abs(fd)), 1e-8)
    report["grad_check_max_rel_err"] = (
        float(np.max(np.abs(ana - fd) / denom)) if len(idx) else 0.0
    )
    _write_json(report, args.out)
    return 0


def _parse_fusion_input(doc: dict):
    images = []
    for entry in doc["images"]:
        dims = ImageDims(float(entry["width"]), float(entry["height"]))
        chips = []
        for chip in entry.get("chips", []):
            origin = fusion.ChipOrigin(
                str(entry["image_id"]),
                (float(chip["x"]), float(chip["y"])),
                ImageDims(float(chip["w"]), float(chip["h"])),
            )
            chips.append((origin, fusion.detections_from_json(chip.get("detections", []))))
        global_dets = fusion.detections_from_json(entry.get("global_detections", []))
        images.append((str(entry["image_id"]), dims, chips, global_dets))
    return images


def cmd_fuse(args, cfg: PipelineConfig) -> int:
    with open(args.input) as fh:
        doc = json.load(fh)
    results = {}
    for image_id, dims, chips, global_dets in _parse_fusion_input(doc):
        results[image_id] = fusion.fuse(chips, global_dets, cfg.fuse, dims)
    out = args.out or "detections.json"
    fusion.save_detections(results, out, metadata=cfg.to_json())
    print(f"fused {len(results)} images, {sum(map(len, results.values()))} detections -> {out}")
    return 0


def cmd_eval(args, cfg: PipelineConfig) -> int:
    tree = _resolve_tree(args.labels)
    records = _load_records(args.gt, args.format, tree)
    dets = fusion.load_detections(args.dets)
    summary = evaluation.ap_summary(dets, records, tree, cfg.eval)
    out_doc = dict(summary)
    out_doc["config"] = cfg.to_json()
    _write_json(out_doc, args.out)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["category", "AP"])
            for name, ap in summary["per_category"].items():
                writer.writerow([name, f"{ap:.6f}"])
    print(
        f"AP {summary['AP']:.4f}  AP50 {summary['AP50']:.4f}  AP75 {summary['AP75']:.4f}"
    )
    return 0


def cmd_mrm_plan(args, cfg: PipelineConfig) -> int:
    tree = _resolve_tree(args.labels)
    records = _load_records(args.dataset, args.format, tree)
    if args.pool:
        pool = resample.load_pool_manifest(args.pool)
    else:
        pool = resample.build_object_pool(records, tree, cfg.mrm)
    plans = []
    for i, record in enumerate(records):
        if args.masks:
            mask = resample.load_mask(Path(args.masks) / f"{record.image_id}.png", record.dims)
        elif args.mask_from_gt:
            mask = resample.MaskRaster.from_annotations(record, pad=args.mask_pad)
        else:
            mask = resample.MaskRaster.full(record.dims)
        plan = resample.plan_pastes(
            record, mask, pool, tree, cfg.mrm, seed=cfg.seed + i
        )
        plans.append(plan)
    doc = {
        "config": cfg.to_json(),
        "plans": [resample.plan_to_json(p) for p in plans],
    }
    _write_json(doc, args.out)
    placed = sum(len(p.pastes) for p in plans)
    short = sum(p.shortfall for p in plans)
    print(f"planned {placed} pastes over {len(plans)} images ({short} short of quota)")
    if args.pool_out:
        resample.save_pool_manifest(pool, args.pool_out)
    return 0


def cmd_mrm_composite(args, cfg: PipelineConfig) -> int:
    from PIL import Image

    with open(args.plan) as fh:
        doc = json.load(fh)
    plans = {p["image_id"]: resample.plan_from_json(p) for p in doc["plans"]}
    if args.image_id not in plans:
        raise DataFormatError(f"plan file has no entry for image {args.image_id!r}")
    pool = resample.load_pool_manifest(args.pool)
    resample.load_pool_pixels(pool, args.crops_dir or Path(args.pool).parent)
    with Image.open(args.raster) as im:
        raster = np.asarray(im.convert("RGB"))
    out_raster, added = resample.composite(raster, plans[args.image_id], pool)
    Image.fromarray(out_raster).save(args.out or "augmented.png")
    if args.annotations_out:
        _write_json(
            {
                "image_id": args.image_id,
                "added": [
                    {"bbox": list(a.bbox.as_xywh()), "category": a.category} for a in added
                ],
            },
            args.annotations_out,
        )
    print(f"pasted {len(added)} objects onto {args.image_id}")
    return 0


def _scene_cfg(args, seed: int) -> SceneConfig:
    dims = ImageDims(*(float(v) for v in args.dims.split("x")))
    return SceneConfig(
        dims=dims,
        n_dense_clusters=args.clusters,
        objects_per_cluster=(args.min_objects, args.max_objects),
        cluster_spread=args.spread,
        n_large=args.large,
        seed=seed,
    )


def cmd_synth(args, cfg: PipelineConfig) -> int:
    tree = toy_label_tree()
    out_dir = Path(args.out or "synth")
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.oracle_from:
        records = load_coco(args.dataset or out_dir / "dataset.json", tree)
        by_id = {r.image_id: r for r in records}
        cluster_sets = clustering.load_cluster_sets(args.oracle_from)
        oracle_cfg = OracleConfig(
            center_jitter_sd=args.jitter,
            size_jitter_sd=args.size_jitter,
            miss_rate=args.miss_rate,
            fp_rate_per_image=args.fp_rate,
            seed=cfg.seed,
        )
        images = []
        for cset in cluster_sets:
            record = by_id[cset.image_id]
            chips = []
            for origin in chips_of(cset):
                dets = oracle_detect(record, origin.window, oracle_cfg)
                chips.append(
                    {
                        "x": origin.offset[0],
                        "y": origin.offset[1],
                        "w": origin.dims.width,
                        "h": origin.dims.height,
                        "detections": fusion.detections_to_json(dets),
                    }
                )
            global_dets = oracle_detect(record, None, oracle_cfg)
            images.append(
                {
                    "image_id": record.image_id,
                    "width": record.dims.width,
                    "height": record.dims.height,
                    "chips": chips,
                    "global_detections": fusion.detections_to_json(global_dets),
                }
            )
        _write_json({"config": cfg.to_json(), "images": images}, str(out_dir / "oracle_input.json"))
        print(f"wrote oracle detections for {len(images)} images to {out_dir / 'oracle_input.json'}")
        return 0

    records = []
    for i in range(args.n_scenes):
        record = generate_scene(_scene_cfg(args, cfg.seed + i), image_id=f"scene-{i:04d}")
        records.append(record)
        if args.render:
            from PIL import Image

            Image.fromarray(synth.render_scene(record)).save(
                out_dir / f"{record.image_id}.{args.image_format}"
            )
    save_coco(records, tree, out_dir / "dataset.json")
    n_objects = sum(len(r.annotations) for r in records)
    print(f"generated {len(records)} scenes ({n_objects} objects) in {out_dir}")
    return 0


# --- parser ----------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="pipeline config JSON file")
    sub.add_argument("--jobs", type=int, default=0, help="worker pool size (0 = all cores)")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--out", help="output path (subcommand-specific default)")


def _add_dataset_flags(sub: argparse.ArgumentParser, *, required: bool = True) -> None:
    sub.add_argument("--dataset", required=required, help="dataset path (directory or JSON)")
    sub.add_argument("--format", choices=["visdrone", "coco"], default="coco")
    sub.add_argument(
        "--labels",
        default="visdrone",
        help="label tree: 'visdrone', 'uavdt', 'toy', or a tree JSON path",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="aerialdet", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("nmm", help="generate cluster windows from ground truth")
    _add_common(p)
    _add_dataset_flags(p)
    p.add_argument("--window-w", type=float, help="cluster window width")
    p.add_argument("--window-h", type=float, help="cluster window height")
    p.add_argument("--tau", type=float, help="coverage threshold for merging")
    p.add_argument("--small-max-side", type=float, help="max side of a 'small' box")
    p.set_defaults(func=cmd_nmm)

    p = commands.add_parser("refine", help="prune overlapping cluster candidates")
    _add_common(p)
    p.add_argument("--clusters", required=True, help="cluster JSON (with optional scores)")
    p.add_argument("--topk", type=int, help="candidates kept before refinement")
    p.add_argument("--pr-overlap", type=float, help="max IoU between kept windows")
    p.set_defaults(func=cmd_refine)

    p = commands.add_parser("targets", help="dump dense training targets per image")
    _add_common(p)
    _add_dataset_flags(p)
    p.add_argument("--down-ratio", type=int, help="output grid down-sampling ratio")
    p.add_argument("--min-overlap", type=float, help="gaussian radius IoU parameter")
    p.set_defaults(func=cmd_targets)

    p = commands.add_parser("loss-check", help="evaluate losses on dumped target/prediction pairs")
    _add_common(p)
    p.add_argument("--targets", required=True, help="target dump stem (without .bin/.json)")
    p.add_argument("--pred", required=True, help="prediction dump stem")
    p.add_argument("--grad-cells", type=int, default=2048, help="cells for the finite-difference check")
    p.set_defaults(func=cmd_loss_check)

    p = commands.add_parser("fuse", help="fuse chip and whole-image detections")
    _add_common(p)
    p.add_argument("--input", required=True, help="fusion input JSON (chips + global detections)")
    p.add_argument("--nms-iou", type=float, help="fusion NMS threshold")
    p.add_argument("--max-detections", type=int, help="per-image detection cap")
    p.set_defaults(func=cmd_fuse)

    p = commands.add_parser("eval", help="COCO-style AP over fused detections")
    _add_common(p)
    _add_dataset_flags(p, required=False)
    p.add_argument("--dets", required=True, help="detections JSON")
    p.add_argument("--gt", required=True, help="ground-truth dataset path")
    p.add_argument("--csv", help="also write a per-category CSV table")
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser("mrm-plan", help="plan mask-guided pastes of rare objects")
    _add_common(p)
    _add_dataset_flags(p)
    p.add_argument("--masks", help="directory of per-image mask PNGs")
    p.add_argument("--mask-from-gt", action="store_true", help="rasterize GT boxes as the allow mask")
    p.add_argument("--mask-pad", type=float, default=0.0, help="padding around GT boxes")
    p.add_argument("--pool", help="pool manifest JSON (default: build from the dataset)")
    p.add_argument("--pool-out", help="write the pool manifest used")
    p.add_argument("--k", type=int, help="pastes per image")
    p.set_defaults(func=cmd_mrm_plan)

    p = commands.add_parser("mrm-composite", help="apply a paste plan to an image raster")
    _add_common(p)
    p.add_argument("--raster", required=True, help="input image (PNG)")
    p.add_argument("--plan", required=True, help="plans JSON from mrm-plan")
    p.add_argument("--image-id", required=True)
    p.add_argument("--pool", required=True, help="pool manifest JSON with pixels_file entries")
    p.add_argument("--crops-dir", help="base directory for crop files")
    p.add_argument("--annotations-out", help="write appended annotations JSON")
    p.set_defaults(func=cmd_mrm_composite)

    p = commands.add_parser("synth", help="generate synthetic scenes / oracle detections")
    _add_common(p)
    p.add_argument("--n-scenes", type=int, default=10)
    p.add_argument("--dims", default="2000x1500")
    p.add_argument("--clusters", type=int, default=3, help="dense groups per scene")
    p.add_argument("--large", type=int, default=2, help="large objects per scene")
    p.add_argument("--spread", type=float, default=120.0, help="gaussian spread of group members (px)")
    p.add_argument("--min-objects", type=int, default=5, help="min objects per group")
    p.add_argument("--max-objects", type=int, default=12, help="max objects per group")
    p.add_argument("--render", action="store_true", help="also write scene rasters")
    p.add_argument("--image-format", choices=["png", "ppm"], default="png")
    p.add_argument("--dataset", help="existing scene dataset (for --oracle-from)")
    p.add_argument("--oracle-from", help="cluster JSON; emit oracle detections per chip")
    p.add_argument("--jitter", type=float, default=0.0, help="oracle center jitter sd (px)")
    p.add_argument("--size-jitter", type=float, default=0.0, help="oracle size jitter sd (fraction)")
    p.add_argument("--miss-rate", type=float, default=0.0)
    p.add_argument("--fp-rate", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    return parser


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    if getattr(args, "seed", None) is not None:
        cfg = PipelineConfig.from_json({**cfg.to_json(), "seed": args.seed})
    cfg = cfg.override(
        "nmm",
        window_w=getattr(args, "window_w", None),
        window_h=getattr(args, "window_h", None),
        merge_threshold=getattr(args, "tau", None),
        small_max_side=getattr(args, "small_max_side", None),
    )
    cfg = cfg.override(
        "refine",
        topk=getattr(args, "topk", None),
        max_overlap=getattr(args, "pr_overlap", None),
    )
    cfg = cfg.override(
        "heatmap",
        down_ratio=getattr(args, "down_ratio", None),
        gaussian_min_overlap=getattr(args, "min_overlap", None),
    )
    cfg = cfg.override(
        "fuse",
        nms_iou=getattr(args, "nms_iou", None),
        max_detections=getattr(args, "max_detections", None),
    )
    cfg = cfg.override("mrm", pastes_per_image=getattr(args, "k", None))
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return DATA_ERROR
    try:
        return args.func(args, cfg)
    except (DataFormatError, json.JSONDecodeError, OSError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
