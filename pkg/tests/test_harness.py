import time

import numpy as np
import pytest

from voxprompt import errors
from voxprompt.harness import (
    EpisodeConfig,
    evaluate_case,
    fuse_multiclass,
    run_episode,
    sample_training_example,
)
from voxprompt.prompts import BBox3
from voxprompt.scoring import trapezoid
from voxprompt.segmenter import OracleConfig, OracleSegmenter, SegmenterBase


def make_case(shape=(32, 32, 32), cube=(10, 22)):
    """Image with a bright cube, the cube as ground truth, and a tight bbox."""
    img = np.full(shape, 20, np.uint8)
    lo, hi = cube
    img[lo:hi, lo:hi, lo:hi] = 200
    gt = np.zeros(shape, np.uint8)
    gt[lo:hi, lo:hi, lo:hi] = 1
    bbox = BBox3((lo, lo, lo), (hi, hi, hi))
    return img, gt, bbox


SMALL = EpisodeConfig(patch=(24, 24, 24), per_class_budget=300.0)


class SleepySegmenter(SegmenterBase):
    def __init__(self, delay):
        self.delay = delay

    def _run(self, prompt):
        time.sleep(self.delay)
        return np.full(prompt.shape[1:], 0.1, np.float32)


class TestFuseMulticlass:
    def test_single_class_above_background(self):
        p = np.full((2, 2, 2), 0.6, np.float32)
        fused = fuse_multiclass([p])
        assert (fused == 1).all()  # p_bg = 0.4 < 0.6

    def test_single_class_reduces_to_half_threshold(self):
        p = np.array([[[0.49, 0.51]]], np.float32)
        fused = fuse_multiclass([p])
        assert fused[0, 0, 0] == 0 and fused[0, 0, 1] == 1

    def test_tie_breaks_to_smallest_class(self):
        p = np.full((2, 2, 2), 0.5, np.float32)
        fused = fuse_multiclass([p, p.copy()])
        assert (fused == 1).all()  # p_bg = 0.25, classes tie at 0.5

    def test_all_zero_is_background(self):
        z = np.zeros((3, 3, 3), np.float32)
        assert (fuse_multiclass([z, z]) == 0).all()

    def test_errors(self):
        with pytest.raises(errors.EmptyClassList):
            fuse_multiclass([])
        with pytest.raises(errors.ShapeMismatch):
            fuse_multiclass([np.zeros((2, 2, 2)), np.zeros((2, 2, 3))])


class TestRunEpisode:
    def test_perfect_oracle(self):
        img, gt, bbox = make_case()
        seg = OracleSegmenter(gt, OracleConfig())
        res = run_episode(img, gt, bbox, seg, SMALL)
        assert not res.budget_exceeded
        assert all(s.dsc == 1.0 and s.nsd == 1.0 for s in res.per_iteration)
        assert res.dsc_final == 1.0 and res.nsd_final == 1.0
        assert res.dsc_auc == 4.0 and res.nsd_auc == 4.0
        assert res.clicks == []  # error-free from iteration 0 on
        assert len(res.per_iteration) == 6  # bbox pass + 5 click rounds

    def test_decaying_oracle_improves(self):
        img, gt, bbox = make_case()
        cfg = SMALL
        seg = OracleSegmenter(gt, OracleConfig(flip_rate=0.3, decay=0.5, seed=3))
        res = run_episode(img, gt, bbox, seg, cfg)
        ds = [s.dsc for s in res.per_iteration]
        assert all(b >= a for a, b in zip(ds, ds[1:]))
        assert len(res.clicks) >= 1

    def test_budget_exceeded_zeroes_aggregates(self):
        img, gt, bbox = make_case((16, 16, 16), (4, 12))
        cfg = EpisodeConfig(patch=(16, 16, 16), per_class_budget=1.0)
        res = run_episode(img, gt, bbox, SleepySegmenter(1.3), cfg)
        assert res.budget_exceeded
        assert res.dsc_auc == 0.0 and res.nsd_auc == 0.0
        assert res.dsc_final == 0.0 and res.nsd_final == 0.0

    def test_auc_consistency(self):
        img, gt, bbox = make_case()
        seg = OracleSegmenter(gt, OracleConfig(flip_rate=0.2, decay=0.6, seed=9))
        res = run_episode(img, gt, bbox, seg, SMALL)
        assert res.dsc_auc == trapezoid([s.dsc for s in res.click_scores])
        assert res.nsd_auc == trapezoid([s.nsd for s in res.click_scores])
        assert len(res.click_scores) == 5

    def test_deterministic_given_seed(self):
        img, gt, bbox = make_case()
        cfg = SMALL
        runs = []
        for _ in range(2):
            seg = OracleSegmenter(gt, OracleConfig(flip_rate=0.3, decay=0.5, seed=4))
            runs.append(run_episode(img, gt, bbox, seg, cfg))
        a, b = runs
        assert a.clicks == b.clicks
        assert [(s.dsc, s.nsd) for s in a.per_iteration] == \
               [(s.dsc, s.nsd) for s in b.per_iteration]

    def test_default_bbox_mode(self):
        img, gt, _ = make_case((30, 30, 30), (10, 20))
        cfg = EpisodeConfig(patch=(24, 24, 24), bbox_mode="default",
                            per_class_budget=300.0)
        seg = OracleSegmenter(gt, OracleConfig())
        res = run_episode(img, gt, None, seg, cfg)
        assert res.dsc_final == 1.0
        assert len(res.per_iteration) == 6

    def test_no_bbox_mode_skips_iteration_zero(self):
        # patch larger than the volume: z = 1, the crop is a pure translation
        img, gt, _ = make_case((24, 24, 24), (8, 18))
        cfg = EpisodeConfig(patch=(36, 36, 36), bbox_mode="none",
                            per_class_budget=300.0)
        seg = OracleSegmenter(gt, OracleConfig())
        res = run_episode(img, gt, None, seg, cfg)
        assert len(res.per_iteration) == 5  # click rounds only
        # first click targets the all-zero initial prediction
        assert len(res.clicks) == 1
        assert res.clicks[0].polarity == "positive"
        assert res.dsc_final == 1.0

    def test_missing_bbox_in_provided_mode(self):
        img, gt, _ = make_case()
        with pytest.raises(errors.InvalidBBox):
            run_episode(img, gt, None, OracleSegmenter(gt), SMALL)

    def test_report_json_schema(self):
        img, gt, bbox = make_case()
        seg = OracleSegmenter(gt, OracleConfig(flip_rate=0.2, seed=2))
        res = run_episode(img, gt, bbox, seg, SMALL)
        rep = res.to_json(class_id=3)
        assert rep["class_id"] == 3
        assert rep["prng"] == "pcg64"
        assert {"iter", "dsc", "nsd", "wall_ms"} <= set(rep["scores"][0])
        for c in rep["clicks"]:
            assert {"z", "y", "x", "polarity"} <= set(c)


class TestSampleTrainingExample:
    def test_p_click_zero_always_bbox_only(self):
        img, gt, bbox = make_case((16, 16, 16), (4, 12))
        cfg = EpisodeConfig(patch=(16, 16, 16), p_click=0.0)
        for seed in range(5):
            s = sample_training_example(
                img, gt, bbox, OracleSegmenter(gt, OracleConfig()),
                EpisodeConfig(patch=(16, 16, 16), p_click=0.0, seed=seed),
            )
            assert s.setting == "bbox-only"
            assert (s.prompt[2:] == 0).all()

    def test_p_click_one_with_perfect_oracle_degrades(self):
        img, gt, bbox = make_case((16, 16, 16), (4, 12))
        cfg = EpisodeConfig(patch=(16, 16, 16), p_click=1.0, seed=1)
        s = sample_training_example(img, gt, bbox, OracleSegmenter(gt), cfg)
        assert s.setting == "one-click-with-prev"
        assert (s.prompt[2] == 0).all() and (s.prompt[3] == 0).all()
        assert s.prompt[4].any()  # previous segmentation present

    def test_one_click_branch_has_click_and_prev(self):
        img, gt, bbox = make_case((16, 16, 16), (4, 12))
        cfg = EpisodeConfig(patch=(16, 16, 16), p_click=1.0, seed=2)
        seg = OracleSegmenter(gt, OracleConfig(flip_rate=0.2, seed=2))
        s = sample_training_example(img, gt, bbox, seg, cfg)
        assert s.setting == "one-click-with-prev"
        assert s.prompt[2].any() or s.prompt[3].any()
        assert s.prompt[4].any()

    def test_target_is_patch_ground_truth(self):
        img, gt, bbox = make_case((16, 16, 16), (4, 12))
        cfg = EpisodeConfig(patch=(16, 16, 16), p_click=0.0, seed=0)
        s = sample_training_example(img, gt, bbox, OracleSegmenter(gt), cfg)
        assert s.target.shape == (16, 16, 16)
        assert set(np.unique(s.target)) <= {0, 1}

    def test_bernoulli_fraction(self):
        img = np.zeros((4, 4, 4), np.uint8)
        gt = np.zeros((4, 4, 4), np.uint8)
        gt[1:3, 1:3, 1:3] = 1
        bbox = BBox3((1, 1, 1), (3, 3, 3))
        seg = OracleSegmenter(gt, OracleConfig())
        ones = 0
        n = 10_000
        for seed in range(n):
            cfg = EpisodeConfig(patch=(4, 4, 4), p_click=0.5, seed=seed)
            seg.reset()
            s = sample_training_example(img, gt, bbox, seg, cfg)
            ones += s.setting == "one-click-with-prev"
        assert abs(ones / n - 0.5) < 0.02


class TestEvaluateCase:
    def test_single_class_fusion(self):
        img, gt, bbox = make_case()
        results, fused = evaluate_case(
            img, [gt], [bbox], lambda g: OracleSegmenter(g, OracleConfig()), SMALL
        )
        assert len(results) == 1
        assert ((fused == 1) == (results[0].final_prob > 0.5)).all()

    def test_two_disjoint_classes(self):
        shape = (32, 32, 32)
        img = np.full(shape, 20, np.uint8)
        g1 = np.zeros(shape, np.uint8)
        g1[4:12, 4:12, 4:12] = 1
        g2 = np.zeros(shape, np.uint8)
        g2[20:28, 20:28, 20:28] = 1
        b1 = BBox3((4, 4, 4), (12, 12, 12))
        b2 = BBox3((20, 20, 20), (28, 28, 28))
        results, fused = evaluate_case(
            img, [g1, g2], [b1, b2],
            lambda g: OracleSegmenter(g, OracleConfig()), SMALL,
        )
        assert ((fused == 1) == (g1 > 0)).all()
        assert ((fused == 2) == (g2 > 0)).all()
        assert not ((fused == 1) & (fused == 2)).any()

    def test_zero_probability_all_background(self):
        img, gt, bbox = make_case((16, 16, 16), (4, 12))
        cfg = EpisodeConfig(patch=(16, 16, 16), per_class_budget=300.0)

        class Zero(SegmenterBase):
            def _run(self, prompt):
                return np.zeros(prompt.shape[1:], np.float32)

        results, fused = evaluate_case(img, [gt], [bbox], Zero(), cfg)
        assert (fused == 0).all()

    def test_empty_class_list(self):
        img, gt, bbox = make_case()
        with pytest.raises(errors.EmptyClassList):
            evaluate_case(img, [], [], OracleSegmenter(gt), SMALL)
