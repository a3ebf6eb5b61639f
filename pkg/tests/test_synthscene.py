import json
import os

import numpy as np
import pytest

from echoseg.binaural import (
    accumulate_intensity, channel_rms, intensity_weight, read_wav, side_indicator,
)
from echoseg.errors import InvalidSpec
from echoseg.gs_scene import CameraPose, poses_from_json, read_ply
from echoseg.mask_lifting import MaskImage, read_mask, read_seg
from echoseg.render_eval import iou
from echoseg.synthscene import (
    BinauralModel, CorruptionSpec, DatasetSpec, SceneObject, SceneSpec, TrajectorySpec,
    binaural_rms_pair, build_dataset, circle_waypoints, corrupt_mask, export_dataset,
    generate_scene, lateral_offset, load_dataset_spec, bundled_spec_path, render_gt_mask,
    substream, synthesize_binaural_rms, two_instance_spec,
)

from conftest import random_rotation


def small_scene(seed=0, clutter=100):
    return SceneSpec([SceneObject("a", (1, 0, 1), (0.2, 0.2, 0.2), 200, emitting=True),
                      SceneObject("b", (-1, 0, 1), (0.2, 0.2, 0.2), 200)],
                     clutter_count=clutter, seed=seed)


def small_dataset_spec(seed=0, frames=16, **corruption):
    traj = TrajectorySpec(circle_waypoints((0, 0), 2.0, 1.0), look_at=[0, 0, 1],
                          frame_count=frames, width=48, height=48, fx=24, fy=24)
    return DatasetSpec(small_scene(seed, clutter=50), traj, BinauralModel(noise_std=0.01),
                       CorruptionSpec(**corruption), clip_seconds=0.01)


class TestGenerate:
    def test_counts(self):
        cloud, labels = generate_scene(small_scene())
        assert len(cloud) == 500
        assert [int((labels == k).sum()) for k in (0, 1, -1)] == [200, 200, 100]

    def test_inside_extent(self):
        cloud, labels = generate_scene(small_scene())
        a = cloud.centers[labels == 0]
        assert np.all(np.abs(a - [1, 0, 1]) <= 0.1 + 1e-12)

    def test_seed_determinism(self):
        a, _ = generate_scene(small_scene(3))
        b, _ = generate_scene(small_scene(3))
        c, _ = generate_scene(small_scene(4))
        assert a.centers.tobytes() == b.centers.tobytes()
        assert not np.array_equal(a.centers, c.centers)

    @pytest.mark.parametrize("objects", [
        [],
        [SceneObject("a", (0, 0, 0), (1, 1, 1), 10)],
        [SceneObject("a", (0, 0, 0), (1, 1, 1), 10, True),
         SceneObject("b", (0, 0, 0), (1, 1, 1), 10, True)],
        [SceneObject("a", (0, 0, 0), (1, 0, 1), 10, True)],
    ])
    def test_invalid(self, objects):
        with pytest.raises(InvalidSpec):
            generate_scene(SceneSpec(objects))

    def test_substreams_independent(self):
        a = substream(5, 1, 0).random(4)
        assert np.array_equal(a, substream(5, 1, 0).random(4))
        assert not np.array_equal(a, substream(5, 1, 1).random(4))
        assert not np.array_equal(a, substream(5, 2, 0).random(4))


class TestBinaural:
    def test_right_at_zero_distance(self):
        r_l, r_r = binaural_rms_pair(0.0, 1.0, BinauralModel())
        assert (r_l, r_r) == pytest.approx((0.1, 0.9), abs=1e-12)
        assert intensity_weight(r_l, r_r) == pytest.approx(0.8889, abs=1e-4)

    def test_straight_ahead(self):
        r_l, r_r = binaural_rms_pair(2.0, 0.0, BinauralModel())
        assert r_l == r_r == pytest.approx(1 / 6)
        assert intensity_weight(r_l, r_r) == 0

    def test_right_at_unit_distance(self):
        assert binaural_rms_pair(1.0, 1.0, BinauralModel()) == pytest.approx((0.05, 0.45))

    def test_lateral_offset(self):
        pose = CameraPose.look_at([0, 0, 0], [0, 1, 0], 10, 10, 5, 5, 10, 10)
        d, s = lateral_offset(pose, [3, 0, 0])  # camera looks along +y, +x is right
        assert (d, s) == pytest.approx((3.0, 1.0))
        obs = synthesize_binaural_rms(pose, [3, 0, 0], BinauralModel())
        assert obs.rms_right > obs.rms_left

    def test_noise_clamped(self, rng):
        pose = CameraPose.look_at([0, 0, 0], [0, 1, 0], 10, 10, 5, 5, 10, 10)
        for i in range(50):
            obs = synthesize_binaural_rms(pose, [30, 0, 0], BinauralModel(noise_std=0.5),
                                          substream(0, 1, i))
            assert obs.rms_left >= 0 and obs.rms_right >= 0

    def test_side_consistency(self, rng):
        cloud, labels = generate_scene(small_scene(clutter=0))
        emitter = cloud.centers[labels == 0]
        checked = 0
        for _ in range(200):
            pose = CameraPose(10, 10, 5, 5, 10, 10, random_rotation(rng), rng.normal(size=3) * 2)
            side = (emitter - pose.position) @ pose.right_axis
            if not (np.all(side > 0) or np.all(side < 0)):
                continue
            obs = synthesize_binaural_rms(pose, [1, 0, 1], BinauralModel())
            assert all(side_indicator(pose, c, obs) == 1 for c in emitter)
            checked += 1
        assert checked > 50

    def test_emitter_outweighs_mirror_instance(self):
        for seed in range(20):
            spec = two_instance_spec(seed, frame_count=40, clutter_count=0,
                                     instance_count=100, distractor_count=50)
            ds = build_dataset(spec)
            raw = accumulate_intensity(ds.cloud, ds.observations).raw
            emit = ds.gt_segmentation.selected
            names = [o.name for o in spec.scene.objects if o.name.startswith("clock")]
            silent = next(ds.object_indices(n) for n in names
                          if not np.array_equal(ds.object_indices(n), emit))
            assert raw[emit].min() > raw[silent].max()


class TestMasks:
    def test_behind_camera_is_empty(self):
        cloud, labels = generate_scene(small_scene())
        pose = CameraPose.look_at([0, 0, 1], [-1, 0, 1], 24, 24, 24, 24, 48, 48)
        assert not render_gt_mask(cloud, np.flatnonzero(labels == 0), pose).data.any()
        assert render_gt_mask(cloud, np.flatnonzero(labels == 1), pose).data.any()

    def test_gt_as_prediction(self):
        ds = build_dataset(small_dataset_spec())
        assert all(iou(m, m) == 1.0 for m in ds.gt_masks)

    def test_paint_is_exact_union(self):
        ds = build_dataset(small_dataset_spec(paint_objects=["b"]))
        b = ds.object_indices("b")
        for pose, gt, pred in zip(ds.poses, ds.gt_masks, ds.pred_masks):
            painted = render_gt_mask(ds.cloud, b, pose)
            assert pred.data.sum() == (gt.data | painted.data).sum()
            np.testing.assert_array_equal(pred.data, gt.data | painted.data)

    def test_dilation_and_dropout(self, rng):
        gt = MaskImage(np.zeros((20, 20), dtype=bool))
        gt.data[10, 10] = True
        grown = corrupt_mask(gt, [], CorruptionSpec(dilation=1), rng)
        assert grown.data.sum() == 5
        gone = corrupt_mask(gt, [], CorruptionSpec(dropout=1.0), rng)
        assert not gone.data.any()

    def test_blob(self, rng):
        gt = MaskImage(np.zeros((40, 40), dtype=bool))
        out = corrupt_mask(gt, [], CorruptionSpec(blob_probability=1.0, blob_radius=3), rng)
        assert 0 < out.data.sum() <= 29


class TestExport:
    def test_counts_and_audio(self, tmp_path):
        spec = small_dataset_spec(frames=120)
        manifest = export_dataset(spec, tmp_path)
        assert manifest["frame_count"] == 120 and manifest["seed"] == 0
        assert len(os.listdir(tmp_path / "gt")) == 120
        assert len(os.listdir(tmp_path / "pred")) == 120
        assert len(os.listdir(tmp_path / "audio")) == 120
        with open(tmp_path / "poses.json") as f:
            assert len(poses_from_json(json.load(f))) == 120
        assert len(read_ply(tmp_path / "scene.ply")) == 450

        ds = build_dataset(spec)
        for i in (0, 37, 119):
            rec = manifest["frames"][i]
            r_l, r_r = channel_rms(read_wav(tmp_path / rec["audio"]))
            obs = ds.observations[i]
            assert abs(r_l - obs.rms_left) <= 1e-4 and abs(r_r - obs.rms_right) <= 1e-4
            assert read_mask(tmp_path / rec["gt_mask"]) == ds.gt_masks[i]

    def test_byte_identical_reexport(self, tmp_path):
        spec = small_dataset_spec(blob_probability=0.5, dropout=0.2, paint_objects=["b"])
        export_dataset(spec, tmp_path / "a")
        export_dataset(spec, tmp_path / "b")
        for root, _, files in os.walk(tmp_path / "a"):
            for name in files:
                p = os.path.join(root, name)
                q = p.replace(str(tmp_path / "a"), str(tmp_path / "b"))
                with open(p, "rb") as f, open(q, "rb") as g:
                    assert f.read() == g.read(), p

    def test_manifest_self_contained(self, tmp_path):
        spec = small_dataset_spec(paint_objects=["b"])
        export_dataset(spec, tmp_path)
        with open(tmp_path / "manifest.json") as f:
            manifest = json.load(f)
        again = DatasetSpec.from_dict(manifest["spec"])
        assert again.to_dict() == spec.to_dict()
        gt = read_seg(tmp_path / manifest["gt_segmentation"])
        lo, hi = manifest["objects"][0]["index_range"]
        assert gt.selected.tolist() == list(range(lo, hi))

    def test_seed_override(self):
        spec = small_dataset_spec()
        other = spec.with_seed(9)
        assert other.seed == 9 and spec.seed == 0
        assert not np.array_equal(generate_scene(other.scene)[0].centers,
                                  generate_scene(spec.scene)[0].centers)


class TestBundled:
    @pytest.mark.parametrize("name", ["two_clock", "microwave_oven"])
    def test_loads(self, name):
        spec = load_dataset_spec(bundled_spec_path(name))
        assert spec.trajectory.frame_count == 120
        assert sum(o.emitting for o in spec.scene.objects) == 1

    def test_two_emitters_rejected(self, tmp_path):
        d = small_dataset_spec().to_dict()
        for o in d["scene"]["objects"]:
            o["emitting"] = True
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(d))
        with pytest.raises(InvalidSpec):
            load_dataset_spec(p)
