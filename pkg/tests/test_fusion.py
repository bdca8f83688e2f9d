from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from boxfuse import (
    Bicycle,
    Box3D,
    ConstantVelocity,
    Detection,
    EgoPose,
    Frame,
    FusionConfig,
    PRESETS,
    Unicycle,
    apply_score_strategy,
    bev_iou,
    decayed_weight,
    forward_box,
    forward_frame,
    fuse_frames,
    fuse_sequence,
    transform_box,
    weighted_nms,
)

from oracles import weighted_nms_reference

CFG = FusionConfig()


def make_det(x=0.0, y=0.0, yaw=0.0, score=0.9, weight=None, label="vehicle",
             motion=None, frame_lag=0, w=2.0, l=4.0):
    return Detection(
        box=Box3D(x, y, 0.8, w, l, 1.6, yaw),
        score=score,
        label=label,
        motion=motion if motion is not None else ConstantVelocity(0.0, 0.0),
        weight=weight,
        frame_lag=frame_lag,
    )


def random_scene(rng, n_boxes: int, n_classes: int = 3, motion_model: str = "unicycle"):
    """Clustered random detections with assigned weights; clusters overlap heavily."""
    dets = []
    n_clusters = max(1, n_boxes // 3)
    centers = rng.uniform(-40, 40, size=(n_clusters, 2))
    yaws = rng.uniform(-math.pi, math.pi, size=n_clusters)
    for _ in range(n_boxes):
        c = rng.integers(0, n_clusters)
        score = float(rng.uniform(0.05, 1.0))
        lag = int(rng.integers(0, 5))
        if motion_model == "unicycle":
            motion = Unicycle(float(rng.uniform(-15, 15)), float(rng.uniform(-1, 1)))
        else:
            motion = Bicycle(float(rng.uniform(-15, 15)), float(rng.uniform(-0.4, 0.4)),
                             float(rng.uniform(1, 3)))
        dets.append(
            Detection(
                box=Box3D(
                    float(centers[c, 0] + rng.normal(0, 0.3)),
                    float(centers[c, 1] + rng.normal(0, 0.3)),
                    float(rng.uniform(0, 1.5)),
                    float(rng.uniform(1.9, 2.3)),
                    float(rng.uniform(4.2, 5.0)),
                    float(rng.uniform(1.4, 1.8)),
                    float(yaws[c] + rng.normal(0, 0.08)),
                ),
                score=score,
                label=f"class{int(rng.integers(0, n_classes))}",
                motion=motion,
                weight=decayed_weight(score, lag * CFG.frame_interval, CFG),
                frame_lag=lag,
            )
        )
    return dets


def assert_detections_close(got, expected, tol=1e-9):
    assert len(got) == len(expected)
    key = lambda d: (d.label, d.box.x, d.box.y, d.box.yaw)
    for a, b in zip(sorted(got, key=key), sorted(expected, key=key)):
        assert a.label == b.label
        for name in ("x", "y", "z", "w", "l", "h", "yaw"):
            assert getattr(a.box, name) == pytest.approx(getattr(b.box, name), abs=tol)
        assert a.score == pytest.approx(b.score, abs=tol)
        assert a.weight == pytest.approx(b.weight, abs=tol)
        assert a.n_fused == b.n_fused
        assert a.n_current == b.n_current
        assert a.frame_lag == b.frame_lag
        assert type(a.motion) is type(b.motion)


class TestDecayedWeight:
    def test_current_frame_undecayed(self):
        assert decayed_weight(0.9, 0.0, CFG) == 0.9

    def test_one_interval(self):
        assert decayed_weight(1.0, CFG.frame_interval, CFG) == pytest.approx(0.8)

    def test_two_intervals(self):
        assert decayed_weight(0.5, 2 * CFG.frame_interval, CFG) == pytest.approx(0.32)

    def test_monotone_and_multiplicative(self):
        lags = np.linspace(0, 1, 11)
        weights = [decayed_weight(1.0, float(t), CFG) for t in lags]
        assert all(a > b for a, b in zip(weights, weights[1:]))
        for t in lags:
            assert decayed_weight(0.37, float(t), CFG) == pytest.approx(
                0.37 * decayed_weight(1.0, float(t), CFG)
            )

    def test_negative_lag_rejected(self):
        with pytest.raises(ValueError):
            decayed_weight(0.5, -0.1, CFG)


class TestForwardFrame:
    def test_zero_gap_unchanged(self):
        frame = Frame(1.0, EgoPose.identity(), [make_det(score=0.7)])
        out = forward_frame(frame, 1.0, EgoPose.identity(), CFG)
        assert out[0].box == frame.detections[0].box
        assert out[0].weight == 0.7
        assert out[0].frame_lag == 0

    def test_cv_advance_with_decay(self):
        frame = Frame(0.0, EgoPose.identity(), [make_det(score=0.9, motion=ConstantVelocity(10, 0))])
        out = forward_frame(frame, 0.1, EgoPose.identity(), CFG)
        assert out[0].box.x == pytest.approx(1.0)
        assert out[0].weight == pytest.approx(0.9 * 0.8)
        assert out[0].frame_lag == 1
        assert out[0].motion == ConstantVelocity(10, 0)

    def test_matches_composed_forward_and_transform(self):
        motion = Bicycle(9.0, 0.12, 1.2)
        det = make_det(x=3, y=-2, yaw=0.4, score=0.8, motion=motion)
        src_ego = EgoPose(1.0, 2.0, 0.3)
        dst_ego = EgoPose(2.5, 1.0, 0.55)
        frame = Frame(0.0, src_ego, [det])
        out = forward_frame(frame, 0.3, dst_ego, CFG)
        expect = transform_box(forward_box(det.box, motion, 0.3), src_ego, dst_ego)
        assert out[0].box == expect
        assert out[0].weight == pytest.approx(0.8 * 0.8 ** 3)

    def test_backward_target_rejected(self):
        frame = Frame(1.0, EgoPose.identity(), [])
        with pytest.raises(ValueError):
            forward_frame(frame, 0.5, EgoPose.identity(), CFG)


class TestWeightedNms:
    def test_singleton_passthrough(self):
        det = make_det(score=0.8, weight=0.8)
        out = weighted_nms([det], CFG)
        assert len(out) == 1
        assert out[0].box == det.box
        assert out[0].score == 0.8
        assert out[0].n_fused == 1

    def test_coincident_pair_fuses_to_weighted_score(self):
        d1 = make_det(score=0.8, weight=0.8)
        d2 = make_det(score=0.4, weight=0.4)
        out = weighted_nms([d1, d2], CFG)
        assert len(out) == 1
        assert out[0].score == pytest.approx(2 / 3, abs=1e-12)
        assert out[0].box.x == pytest.approx(0.0, abs=1e-12)
        assert out[0].box.l == pytest.approx(4.0, abs=1e-12)
        assert out[0].n_fused == 2

    def test_disjoint_pair_untouched(self):
        d1 = make_det(x=0.0, w=1.0, l=1.0, score=0.8, weight=0.8)
        d2 = make_det(x=1.0, w=1.0, l=1.0, score=0.4, weight=0.4)
        out = weighted_nms([d1, d2], CFG)
        assert len(out) == 2

    def test_discard_band(self):
        # unit squares shifted by 1/3 have IoU exactly 0.5: inside [0.3, 0.8)
        cfg = FusionConfig(iou_low=0.3, iou_high=0.8)
        d1 = make_det(x=0.0, w=1.0, l=1.0, score=0.9, weight=0.9)
        d2 = make_det(x=1 / 3, w=1.0, l=1.0, score=0.5, weight=0.5)
        assert bev_iou(d1.box, d2.box) == pytest.approx(0.5, abs=1e-12)
        out = weighted_nms([d1, d2], cfg)
        assert len(out) == 1
        assert out[0].box.x == 0.0
        assert out[0].n_fused == 1

    def test_at_merge_threshold_is_fused(self):
        cfg = FusionConfig(iou_low=0.3, iou_high=0.5)
        d1 = make_det(x=0.0, w=1.0, l=1.0, score=0.9, weight=0.9)
        d2 = make_det(x=1 / 3, w=1.0, l=1.0, score=0.5, weight=0.5)
        out = weighted_nms([d1, d2], cfg)
        assert len(out) == 1
        assert out[0].n_fused == 2

    def test_unassigned_weight_rejected(self):
        with pytest.raises(ValueError):
            weighted_nms([make_det()], CFG)

    def test_mixed_variants_rejected(self):
        d1 = make_det(weight=0.5)
        d2 = make_det(x=30, weight=0.5, motion=Unicycle(1, 0))
        with pytest.raises(ValueError):
            weighted_nms([d1, d2], CFG)

    def test_idempotent_on_identical_copies(self):
        base = make_det(x=2, y=-1, yaw=0.6, score=0.7)
        copies = [replace(base, weight=w, score=s)
                  for w, s in ((0.7, 0.7), (0.5, 0.5), (0.3, 0.3))]
        out = weighted_nms(copies, CFG)
        assert len(out) == 1
        for name in ("x", "y", "z", "w", "l", "h", "yaw"):
            assert getattr(out[0].box, name) == pytest.approx(getattr(base.box, name), abs=1e-12)
        expect_score = sum(w * w for w in (0.7, 0.5, 0.3)) / 1.5
        assert out[0].score == pytest.approx(expect_score, abs=1e-12)

    def test_yaw_fused_across_pi_seam(self):
        d1 = make_det(yaw=math.pi - 0.05, score=0.8, weight=0.8)
        d2 = make_det(yaw=-math.pi + 0.05, score=0.8, weight=0.8)
        out = weighted_nms([d1, d2], CFG)
        assert len(out) == 1
        assert abs(out[0].box.yaw) == pytest.approx(math.pi, abs=1e-9)

    def test_matches_reference_on_random_scenes(self):
        rng = np.random.default_rng(21)
        for _ in range(25):
            dets = random_scene(rng, int(rng.integers(1, 51)))
            got = weighted_nms(dets, CFG)
            expected, _ = weighted_nms_reference(dets, CFG)
            assert_detections_close(got, expected)

    def test_outputs_mutually_below_iou_low(self):
        # the sweep guarantees the property exactly for the surviving seeds;
        # fused outputs are cluster means and may drift slightly, so the
        # spread-cluster check carries a drift allowance while pose-identical
        # clusters (fused output == seed box) are exact
        rng = np.random.default_rng(22)
        for _ in range(10):
            dets = random_scene(rng, 40)
            out = weighted_nms(dets, CFG)
            per_label = {}
            for d in out:
                per_label.setdefault(d.label, []).append(d)
            for group in per_label.values():
                for i in range(len(group)):
                    for j in range(i + 1, len(group)):
                        assert bev_iou(group[i].box, group[j].box) <= CFG.iou_low + 0.05
        for _ in range(10):
            dets = []
            for _ in range(12):
                x = float(rng.uniform(-10, 10))
                y = float(rng.uniform(-10, 10))
                yaw = float(rng.uniform(-math.pi, math.pi))
                for _ in range(int(rng.integers(1, 4))):
                    s = float(rng.uniform(0.2, 1.0))
                    dets.append(make_det(x=x, y=y, yaw=yaw, score=s, weight=s))
            out = weighted_nms(dets, CFG)
            for i in range(len(out)):
                for j in range(i + 1, len(out)):
                    assert bev_iou(out[i].box, out[j].box) <= CFG.iou_low + 1e-9

    def test_conservation(self):
        rng = np.random.default_rng(23)
        for _ in range(10):
            dets = random_scene(rng, 40)
            out = weighted_nms(dets, CFG)
            _, discarded_ref = weighted_nms_reference(dets, CFG)
            assert sum(d.n_fused for d in out) + discarded_ref == len(dets)
            # empty discard band accounts for every input in some cluster
            cfg = FusionConfig(iou_low=0.7, iou_high=0.7)
            out_eq = weighted_nms(dets, cfg)
            assert sum(d.n_fused for d in out_eq) == len(dets)


class TestApplyScoreStrategy:
    def test_decay_takes_fused_weight(self):
        det = replace(make_det(score=0.8, weight=0.45, frame_lag=2), n_current=0)
        out = apply_score_strategy([det], FusionConfig(score_strategy="decay"))
        assert out[0].score == pytest.approx(0.45)

    def test_divide_formula(self):
        det = replace(make_det(score=0.8, weight=0.45, frame_lag=2), n_current=0, n_fused=1)
        cfg = FusionConfig(n_history=4, score_strategy="divide", score_decay_factor=0.6)
        out = apply_score_strategy([det], cfg)
        assert out[0].score == pytest.approx(0.6 * 0.8 / 3, abs=1e-12)

    def test_divide_clamps_denominator(self):
        det = replace(make_det(score=0.8, weight=0.45, frame_lag=1), n_current=0, n_fused=4)
        cfg = FusionConfig(n_history=4, score_strategy="divide", score_decay_factor=0.6)
        out = apply_score_strategy([det], cfg)
        assert out[0].score == pytest.approx(0.6 * 0.8, abs=1e-12)

    def test_current_members_untouched(self):
        det = replace(make_det(score=0.8, weight=0.7), n_current=1, n_fused=3)
        out = apply_score_strategy([det], FusionConfig())
        assert out[0].score == 0.8

    def test_never_exceeds_pre_strategy_score(self):
        rng = np.random.default_rng(24)
        for strategy in ("decay", "divide"):
            cfg = FusionConfig(score_strategy=strategy)
            for _ in range(50):
                score = float(rng.uniform(0.01, 1.0))
                lag = int(rng.integers(1, 5))
                weight = decayed_weight(score, lag * cfg.frame_interval, cfg)
                det = replace(make_det(score=score, weight=weight, frame_lag=lag),
                              n_current=0, n_fused=int(rng.integers(1, 5)))
                out = apply_score_strategy([det], cfg)
                assert out[0].score <= score + 1e-12


class TestFuseFrames:
    def test_single_frame_window_equals_plain_nms(self):
        rng = np.random.default_rng(25)
        dets = [
            replace(d, weight=None, frame_lag=0, n_current=None)
            for d in random_scene(rng, 20)
        ]
        frame = Frame(0.0, EgoPose.identity(), dets)
        fused = fuse_frames([frame], CFG)
        direct = weighted_nms([replace(d, weight=d.score) for d in dets], CFG)
        assert_detections_close(fused.detections, direct)

    def test_covering_recovers_missed_object(self):
        motion = ConstantVelocity(10.0, 0.0)
        frames = [
            Frame(0.1 * i, EgoPose.identity(),
                  [make_det(x=1.0 * i, score=0.9, motion=motion)])
            for i in range(4)
        ]
        frames.append(Frame(0.4, EgoPose.identity(), []))
        fused = fuse_frames(frames, CFG)
        assert len(fused.detections) == 1
        out = fused.detections[0]
        assert out.history_only
        # every history box extrapolates to x = 4; score is the fused decayed weight
        assert out.box.x == pytest.approx(4.0, abs=1e-9)
        weights = [0.9 * 0.8 ** (4 - i) for i in range(4)]
        expect_score = sum(w * w for w in weights) / sum(weights)
        assert out.score == pytest.approx(expect_score, abs=1e-12)
        assert out.n_fused == 4 and out.n_current == 0

    def test_current_box_pulled_toward_history_consensus(self):
        motion = ConstantVelocity(0.0, 0.0)
        history = [
            Frame(0.1 * i, EgoPose.identity(), [make_det(x=0.0, score=0.9, motion=motion)])
            for i in range(4)
        ]
        current = Frame(0.4, EgoPose.identity(), [make_det(x=0.5, score=0.9, motion=motion)])
        fused = fuse_frames(history + [current], CFG)
        assert len(fused.detections) == 1
        weights = [0.9 * 0.8 ** (4 - i) for i in range(4)] + [0.9]
        xs = [0.0, 0.0, 0.0, 0.0, 0.5]
        expect_x = sum(w * x for w, x in zip(weights, xs)) / sum(weights)
        assert fused.detections[0].box.x == pytest.approx(expect_x, abs=1e-12)
        assert 0.0 < fused.detections[0].box.x < 0.5

    def test_static_scene_is_fixed_point(self):
        dets = [make_det(x=5 * i, score=0.8) for i in range(3)]
        frames = [Frame(0.1 * i, EgoPose.identity(), [replace(d) for d in dets]) for i in range(5)]
        fused = fuse_frames(frames, CFG)
        assert len(fused.detections) == 3
        for out, src in zip(sorted(fused.detections, key=lambda d: d.box.x), dets):
            for name in ("x", "y", "z", "w", "l", "h", "yaw"):
                assert getattr(out.box, name) == pytest.approx(getattr(src.box, name), abs=1e-12)

    def test_history_floor_drops_stale_boxes(self):
        cfg = FusionConfig(history_score_floor=0.5)
        frames = [
            Frame(0.0, EgoPose.identity(), [make_det(score=0.6, motion=ConstantVelocity(0, 0))]),
            Frame(0.4, EgoPose.identity(), []),
        ]
        fused = fuse_frames(frames, cfg)
        assert fused.detections == []

    def test_window_validation(self):
        frame = Frame(0.0, EgoPose.identity(), [])
        with pytest.raises(ValueError):
            fuse_frames([], CFG)
        with pytest.raises(ValueError):
            fuse_frames([Frame(0.1 * i, EgoPose.identity(), []) for i in range(6)], CFG)
        with pytest.raises(ValueError):
            fuse_frames([frame, Frame(0.0, EgoPose.identity(), [])], CFG)


class TestFuseSequence:
    def test_single_frame(self):
        frame = Frame(0.0, EgoPose.identity(), [make_det(score=0.9)])
        out = list(fuse_sequence([frame], CFG))
        assert len(out) == 1
        assert out[0].detections[0].score == 0.9

    def test_warmup_uses_available_history(self):
        frames = [Frame(0.1 * i, EgoPose.identity(), [make_det(score=0.9)]) for i in range(8)]
        out = list(fuse_sequence(frames, CFG))
        assert [d.n_fused for f in out for d in f.detections] == [1, 2, 3, 4, 5, 5, 5, 5]

    def test_referential_transparency(self):
        rng = np.random.default_rng(26)
        frames = []
        for i in range(60):
            dets = [
                make_det(
                    x=float(rng.uniform(-20, 20)),
                    y=float(rng.uniform(-20, 20)),
                    score=float(rng.uniform(0.3, 1.0)),
                    motion=ConstantVelocity(float(rng.uniform(-5, 5)), float(rng.uniform(-5, 5))),
                )
                for _ in range(4)
            ]
            frames.append(Frame(0.1 * i, EgoPose.identity(), dets))
        streamed = list(fuse_sequence(frames, CFG))
        for i, got in enumerate(streamed):
            window = frames[max(0, i - CFG.n_history): i + 1]
            independent = fuse_frames(window, CFG)
            assert_detections_close(got.detections, independent.detections, tol=1e-12)

    def test_non_monotone_rejected(self):
        frames = [Frame(0.1, EgoPose.identity(), []), Frame(0.1, EgoPose.identity(), [])]
        with pytest.raises(ValueError):
            list(fuse_sequence(frames, CFG))


class TestPresets:
    def test_table_values(self):
        assert PRESETS["waymo-default"] == FusionConfig(
            weight_decay=0.8, iou_low=0.7, iou_high=0.7, score_strategy="decay"
        )
        assert PRESETS["nuscenes"].weight_decay == 0.6
        assert PRESETS["nuscenes"].iou_low == 0.2
        assert PRESETS["nuscenes"].iou_high == 0.7
        assert PRESETS["multi-method"].iou_low == 0.9
        assert PRESETS["multi-method"].iou_high == 0.9
        assert PRESETS["multi-method"].score_strategy == "divide"

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FusionConfig(iou_low=0.8, iou_high=0.7)
        with pytest.raises(ValueError):
            FusionConfig(weight_decay=0.0)
        with pytest.raises(ValueError):
            FusionConfig(score_strategy="other")
