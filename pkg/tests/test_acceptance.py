"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines alongside pytest's own verdicts.
"""

import json
import math
import time

import numpy as np
import pytest

from aerialdet.clustering import NmmConfig, generate_cluster_ground_truth, non_max_merge
from aerialdet.dataset import (
    Detection,
    ImageRecord,
    ObjectAnnotation,
    load_coco,
    load_visdrone,
    save_coco,
    visdrone_label_tree,
)
from aerialdet.evaluation import EvalConfig, ap_summary, average_precision, match_detections
from aerialdet.fusion import FuseConfig, decode_boxes, extract_peaks
from aerialdet.geometry import BBox, ImageDims, coverage, iou
from aerialdet.heatmap import HeatmapConfig, dense_prediction_maps, splat_targets
from aerialdet.loss import (
    LossConfig,
    Prediction,
    focal_loss_shm,
    offset_loss,
    size_loss_wh,
)
from aerialdet.pipeline import chips_of, oracle_detector, run_dataset
from aerialdet.refine import dense_candidate_fixture, position_refinement
from aerialdet.resample import MaskRaster, MrmConfig, check_plan, plan_pastes, PoolEntry
from aerialdet.synth import OracleConfig, SceneConfig, generate_scene, toy_label_tree

from oracles import brute_force_summary, central_difference_grad, reference_cluster_merge

NMM_CFG = NmmConfig(window_w=512.0, window_h=512.0, merge_threshold=0.8, small_max_side=96.0)
DIMS = ImageDims(2000.0, 1500.0)


def random_box_scenes(n_scenes: int, max_boxes: int = 500, seed: int = 20240817):
    """Seeded random annotation scenes, up to max_boxes boxes each."""
    rng = np.random.default_rng(seed)
    scenes = []
    for i in range(n_scenes):
        n = max_boxes if i < 5 else int(rng.integers(0, max_boxes + 1))
        w = rng.uniform(4.0, 120.0, n)
        h = rng.uniform(4.0, 120.0, n)
        x = rng.uniform(0.0, DIMS.width - w) if n else np.empty(0)
        y = rng.uniform(0.0, DIMS.height - h) if n else np.empty(0)
        scenes.append(
            [
                ObjectAnnotation(
                    bbox=BBox(float(xi), float(yi), float(wi), float(hi)), category=0
                )
                for xi, yi, wi, hi in zip(x, y, w, h)
            ]
        )
    return scenes


def test_criterion_1_nmm_oracle_equivalence():
    start = time.monotonic()
    scenes = random_box_scenes(1000)
    for anns in scenes:
        got = non_max_merge(anns, DIMS, NMM_CFG)
        want = reference_cluster_merge(
            [a.bbox.as_xywh() for a in anns],
            DIMS.width,
            DIMS.height,
            NMM_CFG.window_w,
            NMM_CFG.window_h,
            NMM_CFG.merge_threshold,
            NMM_CFG.small_max_side,
        )
        assert len(got) == len(want)
        for g, (win, members, seed_idx) in zip(got, want):
            assert g.window.as_xywh() == pytest.approx(win, abs=1e-12)
            assert list(g.members) == members
            assert g.seed == seed_idx
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"equivalence sweep took {elapsed:.1f}s"
    total = sum(len(s) for s in scenes)
    print(f"ACCEPTANCE 1: PASS - nmm == naive reference on 1000 scenes "
          f"({total} boxes) in {elapsed:.1f}s")


def test_criterion_2_nmm_partition_and_coverage():
    scenes = random_box_scenes(1000)
    for anns in scenes:
        clusters = non_max_merge(anns, DIMS, NMM_CFG)
        small = [
            i for i, a in enumerate(anns) if max(a.bbox.w, a.bbox.h) <= NMM_CFG.small_max_side
        ]
        membership = [m for c in clusters for m in c.members]
        assert sorted(membership) == sorted(small)
        for c in clusters:
            w = c.window
            assert w.x >= 0 and w.y >= 0 and w.x2 <= DIMS.width and w.y2 <= DIMS.height
            for m in c.members:
                if m != c.seed:
                    assert coverage(anns[m].bbox, w) > NMM_CFG.merge_threshold
    print("ACCEPTANCE 2: PASS - partition, window containment, and coverage > 0.8 "
          "hold on all 1000 scenes")


def test_criterion_3_loss_numerics():
    tree = toy_label_tree()  # 3 base + 1 stacked channel = the 8x8x(3+1) grid
    loss_cfg = LossConfig()  # alpha=2, beta=4, weights 1 / 0.1 / 1
    hm_cfg = HeatmapConfig(down_ratio=4)
    assert (loss_cfg.alpha, loss_cfg.beta, hm_cfg.down_ratio) == (2.0, 4.0, 4)
    assert (loss_cfg.heatmap_weight, loss_cfg.size_weight, loss_cfg.offset_weight) == (1.0, 0.1, 1.0)

    # hand-computed scalar cases, isolated on single-cell grids
    from test_loss import single_cell_targets

    peak_cell = single_cell_targets(1.0)
    v_peak, _ = focal_loss_shm(
        peak_cell, Prediction(np.array([[[0.5]]]), peak_cell.sizes, peak_cell.offsets), loss_cfg
    )
    assert abs(v_peak - 0.173287) <= 1e-6
    tail_cell = single_cell_targets(0.5)
    v_tail, _ = focal_loss_shm(
        tail_cell, Prediction(np.array([[[0.5]]]), tail_cell.sizes, tail_cell.offsets), loss_cfg
    )
    assert abs(v_tail - 0.010830) <= 1e-6
    assert v_tail == pytest.approx(-(0.5**4) * (0.5**2) * math.log(0.5), abs=1e-12)

    # gradient vs full-evaluation central differences on 100 random pairs
    rng = np.random.default_rng(3141)
    max_rel = 0.0
    for _ in range(100):
        anns = []
        for _ in range(int(rng.integers(1, 5))):
            w, h = rng.uniform(4, 16, 2)
            x = rng.uniform(0, 32 - w)
            y = rng.uniform(0, 32 - h)
            anns.append(
                ObjectAnnotation(bbox=BBox(x, y, w, h), category=int(rng.integers(3)))
            )
        record = ImageRecord("g", ImageDims(32, 32), None, tuple(anns))
        targets = splat_targets(record, tree, hm_cfg)
        assert targets.heatmap.shape == (8, 8, 4)
        # regression errors bounded away from 0: the L1 kink has no two-sided
        # difference quotient, like the clamp boundary on the heatmap side
        signs = rng.choice([-1.0, 1.0], size=targets.sizes.shape)
        pred = Prediction(
            rng.uniform(0.02, 0.98, size=targets.heatmap.shape),
            targets.sizes + signs * rng.uniform(0.01, 3.0, size=targets.sizes.shape),
            targets.offsets
            + rng.choice([-1.0, 1.0], size=targets.offsets.shape)
            * rng.uniform(0.001, 0.2, size=targets.offsets.shape),
        )
        _, grad = focal_loss_shm(targets, pred, loss_cfg)
        grid = pred.heatmap_hat.copy()
        fd = central_difference_grad(
            lambda g: focal_loss_shm(targets, Prediction(g, pred.sizes_hat, pred.offsets_hat), loss_cfg)[0],
            grid,
            range(grid.size),
        )
        ana = grad.reshape(-1)
        rel = np.abs(ana - fd) / np.maximum(np.maximum(np.abs(ana), np.abs(fd)), 1e-8)
        max_rel = max(max_rel, float(rel.max()))

        _, size_grad = size_loss_wh(targets, pred)
        fd_size = central_difference_grad(
            lambda s: size_loss_wh(targets, Prediction(pred.heatmap_hat, s, pred.offsets_hat))[0],
            pred.sizes_hat.copy(),
            range(pred.sizes_hat.size),
        )
        assert np.allclose(size_grad.reshape(-1), fd_size, rtol=1e-4, atol=1e-10)

        _, off_grad = offset_loss(targets, pred)
        fd_off = central_difference_grad(
            lambda o: offset_loss(targets, Prediction(pred.heatmap_hat, pred.sizes_hat, o))[0],
            pred.offsets_hat.copy(),
            range(pred.offsets_hat.size),
        )
        assert np.allclose(off_grad.reshape(-1), fd_off, rtol=1e-4, atol=1e-10)
    assert max_rel <= 1e-4
    print(f"ACCEPTANCE 3: PASS - scalars reproduced to 1e-6; max heatmap-grad "
          f"rel err {max_rel:.2e} over 100 pairs")


def test_criterion_4_decode_round_trip():
    tree = toy_label_tree()
    hm_cfg = HeatmapConfig(down_ratio=4)
    rng = np.random.default_rng(2718)
    worst_iou = 1.0
    for _ in range(20):
        # lattice placement keeps every pair of centers comfortably separated
        anns = []
        for gy in range(4):
            for gx in range(4):
                if rng.random() < 0.3:
                    continue
                w, h = rng.uniform(16, 56, 2)
                cx = 96 + gx * 192 + rng.uniform(-30, 30)
                cy = 96 + gy * 192 + rng.uniform(-30, 30)
                anns.append(
                    ObjectAnnotation(
                        bbox=BBox(cx - w / 2, cy - h / 2, w, h),
                        category=int(rng.integers(3)),
                    )
                )
        record = ImageRecord("rt", ImageDims(864, 864), None, tuple(anns))
        targets = splat_targets(record, tree, hm_cfg)
        assert (targets.offsets >= 0).all() and (targets.offsets < 1).all()

        hm, size_map, offset_map = dense_prediction_maps(targets)
        peaks = [p for p in extract_peaks(hm, k=4 * len(anns) + 4) if p.score == 1.0]
        dets = decode_boxes(peaks, size_map, offset_map, hm_cfg.down_ratio, tree)
        assert len(dets) == len(anns)
        for ann in anns:
            best = max(iou(ann.bbox, d.bbox) for d in dets)
            worst_iou = min(worst_iou, best)
            assert best >= 0.95
        # offsets written into the dense map match the analytic fractional part
        for k in range(targets.n_objects):
            col, row = targets.peak_cells[k]
            cx = (
                record.annotations[k].bbox.x + record.annotations[k].bbox.w / 2
            )
            cy = (
                record.annotations[k].bbox.y + record.annotations[k].bbox.h / 2
            )
            assert offset_map[row, col, 0] == cx / 4 - math.floor(cx / 4)
            assert offset_map[row, col, 1] == cy / 4 - math.floor(cy / 4)
    print(f"ACCEPTANCE 4: PASS - decode recovers every box (worst IoU "
          f"{worst_iou:.4f} >= 0.95); offsets exactly fractional")


def test_criterion_5_end_to_end_pipeline():
    tree = toy_label_tree()
    fuse_cfg = FuseConfig()
    assert fuse_cfg.max_detections == 500
    start = time.monotonic()
    scenes = [
        generate_scene(SceneConfig(seed=i, n_dense_clusters=3, n_large=2), f"scene-{i:03d}")
        for i in range(100)
    ]
    detector = oracle_detector(OracleConfig())  # zero noise
    dets = run_dataset(scenes, detector, NMM_CFG, fuse_cfg)
    summary = ap_summary(dets, scenes, tree, EvalConfig())
    elapsed = time.monotonic() - start
    assert all(len(d) <= 500 for d in dets.values())
    assert summary["AP"] >= 0.95
    assert elapsed < 30.0, f"pipeline over 100 scenes took {elapsed:.1f}s"

    # scenes where nothing straddles any chip must come out pixel-perfect;
    # compact single-group scenes are straddle-free by construction and top
    # up whatever the random hundred happens to contain
    compact = [
        generate_scene(
            SceneConfig(
                seed=500 + i,
                n_dense_clusters=1,
                objects_per_cluster=(6, 10),
                cluster_spread=45.0,
                n_large=0,
            ),
            f"compact-{i:02d}",
        )
        for i in range(10)
    ]
    pool = scenes + compact
    pool_dets = dict(dets)
    pool_dets.update(run_dataset(compact, detector, NMM_CFG, fuse_cfg))
    cluster_sets = generate_cluster_ground_truth(pool, NMM_CFG)
    clean = []
    for rec, cset in zip(pool, cluster_sets):
        fracs = [
            coverage(ann.bbox, origin.window)
            for origin in chips_of(cset)
            for ann in rec.annotations
        ]
        if all(f == 0.0 or f == 1.0 for f in fracs):
            clean.append(rec)
    assert len(clean) >= 10
    clean_summary = ap_summary(
        {r.image_id: pool_dets[r.image_id] for r in clean}, clean, tree, EvalConfig()
    )
    assert clean_summary["AP"] == 1.0
    print(f"ACCEPTANCE 5: PASS - 100 scenes in {elapsed:.1f}s; AP {summary['AP']:.4f} "
          f">= 0.95 overall, AP == 1.0 on {len(clean)} straddle-free scenes")


def test_criterion_6_position_refinement():
    cands = dense_candidate_fixture()
    assert len(cands) == 10
    kept = position_refinement(cands, 0.5)
    assert len(kept) == 5

    rng = np.random.default_rng(1618)
    for _ in range(1000):
        n = int(rng.integers(0, 20))
        cands = []
        for _ in range(n):
            size = float(rng.uniform(128, 512))
            cands.append(
                __import__("aerialdet.refine", fromlist=["ClusterCandidate"]).ClusterCandidate(
                    BBox(
                        float(rng.uniform(0, DIMS.width - size)),
                        float(rng.uniform(0, DIMS.height - size)),
                        size,
                        size,
                    ),
                    float(rng.uniform(0, 1)),
                )
            )
        thresh = float(rng.uniform(0.2, 0.8))
        kept = position_refinement(cands, thresh)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert iou(kept[i].window, kept[j].window) <= thresh
        assert position_refinement(kept, thresh) == kept
    print("ACCEPTANCE 6: PASS - bundled fixture 10 -> 5; idempotence and "
          "pairwise-IoU bound on 1000 random sets")


def test_criterion_7_evaluation_oracle():
    tree = toy_label_tree()
    cfg = EvalConfig()
    rng = np.random.default_rng(577)
    worst = 0.0
    for _ in range(50):
        records = []
        dets = {}
        for i in range(3):
            anns = []
            for _ in range(int(rng.integers(2, 8))):
                w, h = rng.uniform(10, 60, 2)
                x = rng.uniform(0, 800 - w)
                y = rng.uniform(0, 600 - h)
                ignore = rng.random() < 0.1
                cat = -1 if ignore else int(rng.integers(3))
                anns.append(
                    ObjectAnnotation(bbox=BBox(x, y, w, h), category=cat, ignore=ignore)
                )
            rec = ImageRecord(f"im{i}", ImageDims(800, 600), None, tuple(anns))
            records.append(rec)
            items = []
            for a in rec.annotations:
                if a.ignore or rng.random() < 0.2:
                    continue
                b = a.bbox
                items.append(
                    Detection(
                        BBox(
                            b.x + rng.normal(0, 4),
                            b.y + rng.normal(0, 4),
                            max(b.w * (1 + rng.normal(0, 0.15)), 2),
                            max(b.h * (1 + rng.normal(0, 0.15)), 2),
                        ),
                        a.category,
                        float(rng.uniform(0.1, 1.0)),
                    )
                )
            for _ in range(int(rng.integers(0, 4))):
                items.append(
                    Detection(
                        BBox(
                            float(rng.uniform(0, 700)),
                            float(rng.uniform(0, 500)),
                            float(rng.uniform(10, 60)),
                            float(rng.uniform(10, 60)),
                        ),
                        int(rng.integers(3)),
                        float(rng.uniform(0.1, 1.0)),
                    )
                )
            dets[rec.image_id] = items
        got = ap_summary(dets, records, tree, cfg)
        want = brute_force_summary(
            {
                i: [(*d.bbox.as_xywh(), d.score, d.category) for d in items]
                for i, items in dets.items()
            },
            {
                r.image_id: [
                    (*a.bbox.as_xywh(), a.category) for a in r.annotations if not a.ignore
                ]
                for r in records
            },
            {
                r.image_id: [a.bbox.as_xywh() for a in r.annotations if a.ignore]
                for r in records
            },
            cfg.iou_thresholds,
            sorted({a.category for r in records for a in r.annotations if not a.ignore}),
        )
        for key in ("AP", "AP50", "AP75"):
            worst = max(worst, abs(got[key] - want[key]))
            assert abs(got[key] - want[key]) <= 1e-6

    # hand case: 1 GT, an FP at 0.9 outranking a TP at 0.8 -> AP exactly 0.5
    m = match_detections(
        [
            Detection(BBox(500, 500, 10, 10), 0, 0.9),
            Detection(BBox(0, 0, 10, 10), 0, 0.8),
        ],
        [ObjectAnnotation(bbox=BBox(0, 0, 10, 10), category=0)],
        0.5,
    )
    assert average_precision([m], cfg) == 0.5
    print(f"ACCEPTANCE 7: PASS - |AP delta| <= 1e-6 vs brute force on 50 sets "
          f"(worst {worst:.2e}); hand case AP == 0.5")


def test_criterion_8_mrm_planning():
    tree = toy_label_tree()
    cfg = MrmConfig()
    assert cfg.pastes_per_image == 5
    rng = np.random.default_rng(733)
    pool = [
        PoolEntry(crop_id=f"c{i}", category=int(rng.integers(2)), dims=(24.0, 18.0))
        for i in range(10)
    ]
    for seed in range(10):
        record = generate_scene(
            SceneConfig(seed=900 + seed, n_dense_clusters=2, n_large=1), f"m{seed}"
        )
        mask = MaskRaster.full(record.dims)
        plan = plan_pastes(record, mask, pool, tree, cfg, seed=seed)
        assert len(plan.pastes) == 5
        assert check_plan(plan, record, mask, pool, tree, cfg) == []
        again = plan_pastes(record, mask, pool, tree, cfg, seed=seed)
        assert plan.pastes == again.pastes

        closed = MaskRaster.full(record.dims, allowed=False)
        with pytest.warns(UserWarning, match="retry budget"):
            empty = plan_pastes(record, closed, pool, tree, cfg, seed=seed)
        assert empty.pastes == []
        assert empty.shortfall == 5
    print("ACCEPTANCE 8: PASS - exactly 5 vetted pastes with open masks, 0 with "
          "closed masks (warned), deterministic per seed")


def test_criterion_9_formats(tmp_path):
    import pathlib

    fixtures = pathlib.Path(__file__).parent / "fixtures"
    tree = visdrone_label_tree()
    from_csv = load_visdrone(fixtures / "visdrone", tree)
    from_coco = load_coco(fixtures / "coco_equivalent.json", tree)
    assert from_csv == from_coco

    out = tmp_path / "rt.json"
    save_coco(from_coco, tree, out)
    assert load_coco(out, tree) == from_coco
    print("ACCEPTANCE 9: PASS - visDrone CSV == COCO JSON in memory; COCO "
          "round-trip lossless")
