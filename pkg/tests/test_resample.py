import numpy as np
import pytest

from aerialdet.dataset import ImageRecord, ObjectAnnotation
from aerialdet.geometry import BBox, ImageDims, iou
from aerialdet.resample import (
    MaskRaster,
    MrmConfig,
    PoolEntry,
    build_object_pool,
    check_plan,
    composite,
    load_mask,
    load_pool_manifest,
    plan_from_json,
    plan_pastes,
    plan_to_json,
    rare_categories,
    rare_from_counts,
    save_mask,
    save_pool_manifest,
)

CFG = MrmConfig()


def gt(x, y, w, h, cat=0, ignore=False):
    return ObjectAnnotation(bbox=BBox(x, y, w, h), category=cat, ignore=ignore)


def record_with(anns, image_id="img", w=800.0, h=600.0):
    return ImageRecord(image_id, ImageDims(w, h), None, tuple(anns))


def make_pool(category=1, n=8, size=24.0):
    return [
        PoolEntry(crop_id=f"c{i}", category=category, dims=(size, size * 0.75))
        for i in range(n)
    ]


class TestRarity:
    def test_visdrone_scale_imbalance(self, vis_tree):
        # instance counts of the scale seen in real drone data: the dominant
        # car class stays out of the pool, the scarce awning-tricycle goes in
        counts = {
            vis_tree.id_of("pedestrian"): 79337,
            vis_tree.id_of("people"): 27059,
            vis_tree.id_of("bicycle"): 10480,
            vis_tree.id_of("car"): 144866,
            vis_tree.id_of("van"): 24956,
            vis_tree.id_of("truck"): 12875,
            vis_tree.id_of("tricycle"): 4812,
            vis_tree.id_of("awning-tricycle"): 3246,
            vis_tree.id_of("bus"): 5926,
            vis_tree.id_of("motor"): 29647,
        }
        rare = rare_from_counts(counts)
        assert vis_tree.id_of("awning-tricycle") in rare
        assert vis_tree.id_of("car") not in rare

    def test_unbalanced_counts(self):
        # category 0 dominates; 1 sits below the median count
        anns = [gt(i * 30.0, 10, 20, 20, cat=0) for i in range(20)]
        anns += [gt(i * 30.0, 50, 20, 20, cat=1) for i in range(2)]
        anns += [gt(i * 30.0, 90, 20, 20, cat=2) for i in range(10)]
        records = [record_with(anns, w=900)]
        rare = rare_categories(records, CFG)
        assert rare == {1}

    def test_equal_counts_default_empty_pool(self, toy_tree):
        anns = [gt(i * 40.0, 10, 20, 20, cat=i % 3) for i in range(9)]
        records = [record_with(anns, w=900)]
        assert rare_categories(records, CFG) == set()
        assert build_object_pool(records, toy_tree, CFG) == []

    def test_explicit_list_overrides(self, toy_tree):
        anns = [gt(i * 40.0, 10, 20, 20, cat=i % 3) for i in range(9)]
        records = [record_with(anns, w=900)]
        cfg = MrmConfig(rare_categories=(2,))
        pool = build_object_pool(records, toy_tree, cfg)
        assert {e.category for e in pool} == {2}
        assert len(pool) == 3

    def test_pool_deterministic_and_sourced(self, toy_tree):
        anns = [gt(10, 10, 20, 20, cat=0)] * 5 + [gt(60, 60, 24, 18, cat=1)]
        records = [record_with(anns)]
        p1 = build_object_pool(records, toy_tree, CFG)
        p2 = build_object_pool(records, toy_tree, CFG)
        assert p1 == p2
        assert p1[0].source_image == "img"
        assert p1[0].dims == (24, 18)

    def test_empty_dataset_warns(self, toy_tree):
        with pytest.warns(UserWarning):
            assert build_object_pool([], toy_tree, CFG) == []


class TestPlanPastes:
    def test_all_zero_mask_places_nothing(self, toy_tree):
        record = record_with([])
        mask = MaskRaster.full(record.dims, allowed=False)
        with pytest.warns(UserWarning):
            plan = plan_pastes(record, mask, make_pool(), toy_tree, CFG, seed=1)
        assert plan.pastes == []
        assert plan.shortfall == CFG.pastes_per_image

    def test_open_mask_places_full_quota(self, toy_tree):
        record = record_with([])
        mask = MaskRaster.full(record.dims)
        plan = plan_pastes(record, mask, make_pool(), toy_tree, CFG, seed=2)
        assert len(plan.pastes) == 5
        boxes = [b for _, b, _ in plan.pastes]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                assert iou(boxes[i], boxes[j]) <= CFG.overlap_cap
        assert check_plan(plan, record, mask, make_pool(), toy_tree, CFG) == []

    def test_constraints_hold_with_existing_objects(self, toy_tree):
        rng = np.random.default_rng(139)
        anns = [
            gt(float(rng.uniform(0, 760)), float(rng.uniform(0, 560)), 30, 22, cat=1)
            for _ in range(12)
        ]
        record = record_with(anns)
        mask = MaskRaster.full(record.dims)
        pool = make_pool()
        plan = plan_pastes(record, mask, pool, toy_tree, CFG, seed=3)
        assert check_plan(plan, record, mask, pool, toy_tree, CFG) == []
        for _, box, _ in plan.pastes:
            for ann in anns:
                assert iou(box, ann.bbox) <= CFG.overlap_cap

    def test_mask_coverage_constraint_respected(self, toy_tree):
        record = record_with([])
        mask = MaskRaster.full(record.dims, allowed=False)
        mask.grid[:, :200] = 1  # only a left strip is allowed
        pool = make_pool()
        plan = plan_pastes(record, mask, pool, toy_tree, CFG, seed=4)
        for _, box, _ in plan.pastes:
            assert box.x2 <= 201  # inside the strip up to rasterization slack
        assert check_plan(plan, record, mask, pool, toy_tree, CFG) == []

    def test_seeded_determinism(self, toy_tree):
        record = record_with([gt(100, 100, 30, 22, cat=1)])
        mask = MaskRaster.full(record.dims)
        pool = make_pool()
        a = plan_pastes(record, mask, pool, toy_tree, CFG, seed=7)
        b = plan_pastes(record, mask, pool, toy_tree, CFG, seed=7)
        c = plan_pastes(record, mask, pool, toy_tree, CFG, seed=8)
        assert a.pastes == b.pastes
        assert a.pastes != c.pastes

    def test_scale_matches_scene_reference(self, toy_tree):
        # same-parent objects in the scene have side ~40, pool crops are tiny
        anns = [gt(50 + 90.0 * i, 50, 40, 40, cat=0) for i in range(5)]
        record = record_with(anns)
        mask = MaskRaster.full(record.dims)
        pool = make_pool(category=1, size=8.0)  # parent "cargo" too
        plan = plan_pastes(record, mask, pool, toy_tree, CFG, seed=9)
        assert plan.pastes
        for _, box, _ in plan.pastes:
            side = float(np.sqrt(box.w * box.h))
            assert 40 * 0.75 - 1e-6 <= side <= 40 * 1.25 + 1e-6


class TestComposite:
    def entry_with_pixels(self, color=(250, 10, 10), size=(16, 12), cat=1):
        h, w = size[1], size[0]
        pixels = np.zeros((h, w, 3), dtype=np.uint8)
        pixels[:] = color
        return PoolEntry(crop_id="px0", category=cat, dims=(float(w), float(h)), pixels=pixels)

    def test_empty_plan_is_identity(self):
        from aerialdet.resample import PastePlan

        raster = np.random.default_rng(0).integers(0, 255, size=(60, 80, 3), dtype=np.uint8)
        out, added = composite(raster, PastePlan("img", [], 0), [])
        np.testing.assert_array_equal(out, raster)
        assert added == []

    def test_paste_is_local_and_annotated(self):
        from aerialdet.resample import PastePlan

        rng = np.random.default_rng(1)
        raster = rng.integers(0, 255, size=(100, 120, 3), dtype=np.uint8)
        entry = self.entry_with_pixels()
        plan = PastePlan("img", [("px0", BBox(30, 40, 16, 12), 1.0)], 1)
        out, added = composite(raster, plan, [entry])
        assert len(added) == 1
        assert added[0].category == 1
        np.testing.assert_array_equal(out[40:52, 30:46], entry.pixels)
        untouched = np.ones((100, 120), dtype=bool)
        untouched[40:52, 30:46] = False
        np.testing.assert_array_equal(out[untouched], raster[untouched])

    def test_alpha_footprint_respected(self):
        from aerialdet.resample import PastePlan

        raster = np.zeros((50, 50, 3), dtype=np.uint8)
        entry = self.entry_with_pixels(size=(10, 10))
        entry.alpha = np.zeros((10, 10), dtype=bool)
        entry.alpha[:5, :] = True  # only the top half pastes
        plan = PastePlan("img", [("px0", BBox(10, 10, 10, 10), 1.0)], 1)
        out, _ = composite(raster, plan, [entry])
        assert (out[10:15, 10:20] == (250, 10, 10)).all()
        assert (out[15:20, 10:20] == 0).all()

    def test_missing_pixels_skips_with_warning(self):
        from aerialdet.resample import PastePlan

        raster = np.zeros((50, 50, 3), dtype=np.uint8)
        entry = PoolEntry(crop_id="nopix", category=0, dims=(10.0, 10.0))
        plan = PastePlan("img", [("nopix", BBox(5, 5, 10, 10), 1.0)], 1)
        with pytest.warns(UserWarning):
            out, added = composite(raster, plan, [entry])
        assert added == []
        np.testing.assert_array_equal(out, raster)

    def test_deterministic(self):
        from aerialdet.resample import PastePlan

        rng = np.random.default_rng(3)
        raster = rng.integers(0, 255, size=(80, 80, 3), dtype=np.uint8)
        entry = self.entry_with_pixels()
        plan = PastePlan("img", [("px0", BBox(20, 20, 24, 18), 1.5)], 1)
        out1, _ = composite(raster, plan, [entry])
        out2, _ = composite(raster, plan, [entry])
        np.testing.assert_array_equal(out1, out2)


class TestIo:
    def test_plan_json_round_trip(self):
        from aerialdet.resample import PastePlan

        plan = PastePlan("img-9", [("c1", BBox(1.5, 2.5, 10, 8), 0.8)], 5)
        assert plan_from_json(plan_to_json(plan)) == plan

    def test_pool_manifest_round_trip(self, tmp_path):
        pool = [
            PoolEntry(
                crop_id="a:0",
                category=2,
                dims=(20.0, 14.0),
                source_image="a",
                source_bbox=(1.0, 2.0, 20.0, 14.0),
                pixels_file="crops/a0.png",
            )
        ]
        path = tmp_path / "pool.json"
        save_pool_manifest(pool, path)
        assert load_pool_manifest(path) == pool

    def test_mask_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        grid = (rng.random((40, 60)) > 0.5).astype(np.uint8)
        mask = MaskRaster(grid, ImageDims(60, 40))
        path = tmp_path / "mask.png"
        save_mask(mask, path)
        loaded = load_mask(path)
        np.testing.assert_array_equal(loaded.grid, grid)

    def test_mask_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        grid = (rng.random((25, 30)) > 0.4).astype(np.uint8)
        path = tmp_path / "mask.pgm"
        save_mask(MaskRaster(grid, ImageDims(30, 25)), path)
        loaded = load_mask(path)
        np.testing.assert_array_equal(loaded.grid, grid)

    def test_mask_dims_validated(self):
        with pytest.raises(ValueError):
            MaskRaster(np.zeros((10, 10), dtype=np.uint8), ImageDims(20, 10))

    def test_gt_addon_mask(self):
        record = record_with([gt(10, 10, 20, 20)], w=100, h=100)
        mask = MaskRaster.from_annotations(record)
        assert mask.grid[15, 15] == 1
        assert mask.grid[50, 50] == 0
