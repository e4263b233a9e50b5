import numpy as np
import pytest

from aerialdet.geometry import BBox, iou
from aerialdet.refine import (
    ClusterCandidate,
    dense_candidate_fixture,
    position_refinement,
    take_topk,
)


def cand(x, y, score, size=512.0):
    return ClusterCandidate(BBox(x, y, size, size), score)


def random_candidates(rng, n, image=2000.0, size=512.0):
    return [
        cand(float(rng.uniform(0, image - size)), float(rng.uniform(0, image - size)),
             float(rng.uniform(0, 1)), size)
        for _ in range(n)
    ]


class TestTakeTopk:
    def test_fewer_than_k_returns_all(self):
        cands = random_candidates(np.random.default_rng(1), 3)
        top = take_topk(cands, 10)
        assert sorted(top, key=lambda c: -c.score) == top
        assert {c.window for c in top} == {c.window for c in cands}

    def test_orders_by_score(self):
        cands = [cand(0, 0, 0.9), cand(600, 0, 0.1), cand(1200, 0, 0.5)]
        top = take_topk(cands, 2)
        assert [c.score for c in top] == [0.9, 0.5]

    def test_stable_on_ties(self):
        cands = [cand(i * 600.0, 0, 0.5) for i in range(3)]
        assert take_topk(cands, 2) == cands[:2]

    def test_k_validation(self):
        with pytest.raises(ValueError):
            take_topk([], 0)


class TestPositionRefinement:
    def test_identical_windows_collapse_to_one(self):
        cands = [cand(100, 100, 0.9 - i * 0.05) for i in range(10)]
        kept = position_refinement(cands, 0.5)
        assert kept == [cands[0]]

    def test_disjoint_windows_all_kept(self):
        cands = [cand((i % 3) * 600.0, (i // 3) * 600.0, 0.5 + i * 0.01) for i in range(9)]
        kept = position_refinement(cands, 0.5)
        assert len(kept) == 9

    def test_bundled_dense_fixture_halves(self):
        # ten dense proposals thin out to exactly five at the default threshold
        cands = dense_candidate_fixture()
        assert len(cands) == 10
        kept = position_refinement(cands, 0.5)
        assert len(kept) == 5
        assert [c.score for c in kept] == [0.95, 0.90, 0.85, 0.80, 0.75]

    def test_output_subset_in_score_order(self):
        rng = np.random.default_rng(5)
        cands = random_candidates(rng, 30)
        kept = position_refinement(cands, 0.4)
        assert all(k in cands for k in kept)
        scores = [k.score for k in kept]
        assert scores == sorted(scores, reverse=True)

    def test_pairwise_iou_bounded_and_idempotent(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            cands = random_candidates(rng, int(rng.integers(0, 25)))
            thresh = float(rng.uniform(0.1, 0.9))
            kept = position_refinement(cands, thresh)
            for i in range(len(kept)):
                for j in range(i + 1, len(kept)):
                    assert iou(kept[i].window, kept[j].window) <= thresh
            assert position_refinement(kept, thresh) == kept

    def test_low_score_additions_never_change_winners(self):
        rng = np.random.default_rng(13)
        cands = random_candidates(rng, 15)
        kept = position_refinement(cands, 0.5)
        floor = min(c.score for c in cands)
        extras = [
            ClusterCandidate(c.window, c.score * floor * 0.5)
            for c in random_candidates(rng, 10)
        ]
        assert all(e.score < floor for e in extras)
        again = position_refinement(cands + extras, 0.5)
        assert again[: len(kept)] == kept

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            position_refinement([], 1.0)
        with pytest.raises(ValueError):
            position_refinement([], -0.1)
