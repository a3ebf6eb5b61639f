import json
import shutil

import numpy as np
import pytest

from echoseg.binaural import StereoClip, write_wav
from echoseg.cli import main, parse_config_text
from echoseg.errors import InputError
from echoseg.mask_lifting import MASK_PATTERN, read_mask, read_seg
from echoseg.synthscene import DatasetSpec, export_dataset, two_instance_spec


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    d = two_instance_spec(3, clutter_count=2000).to_dict()
    d["clip_seconds"] = 0.05
    root = tmp_path_factory.mktemp("two_clock")
    manifest = export_dataset(DatasetSpec.from_dict(d), root)
    return root, manifest


def paths(root):
    return str(root / "scene.ply"), str(root / "poses.json")


def emitter_indices(manifest):
    obj = next(o for o in manifest["objects"] if o["emitting"])
    return set(range(*obj["index_range"]))


def silent_indices(manifest):
    obj = next(o for o in manifest["objects"] if o["name"].startswith("clock") and not o["emitting"])
    return set(range(*obj["index_range"]))


class TestLift:
    def test_gt_masks_cover_emitter(self, dataset, tmp_path):
        root, manifest = dataset
        scene, poses = paths(root)
        assert main(["lift", scene, str(root / "gt"), poses, "--out", str(tmp_path)]) == 0
        lifted = read_seg(tmp_path / "lifted.seg").as_set()
        emit = emitter_indices(manifest)
        assert len(lifted & emit) >= 0.95 * len(emit)
        run = json.loads((tmp_path / "run_lift.json").read_text())
        assert run["config"]["tau_voting"] == 0.3
        assert all((tmp_path / p).exists() for p in run["outputs"])

    def test_higher_tau_selects_fewer(self, dataset, tmp_path):
        root, _ = dataset
        scene, poses = paths(root)
        main(["lift", scene, str(root / "pred"), poses, "--out", str(tmp_path / "a")])
        main(["lift", scene, str(root / "pred"), poses, "--tau-voting", "0.9",
              "--out", str(tmp_path / "b")])
        a = read_seg(tmp_path / "a" / "lifted.seg").as_set()
        b = read_seg(tmp_path / "b" / "lifted.seg").as_set()
        assert b < a

    def test_missing_poses(self, dataset, tmp_path, capsys):
        root, _ = dataset
        missing = tmp_path / "nope.json"
        code = main(["lift", str(root / "scene.ply"), str(root / "gt"), str(missing),
                     "--out", str(tmp_path)])
        assert code == 2
        err = capsys.readouterr().err
        assert str(missing) in err and "[load]" in err

    def test_corrupt_scene(self, tmp_path, dataset, capsys):
        root, _ = dataset
        bad = tmp_path / "bad.ply"
        bad.write_bytes(b"ply\nformat ascii 1.0\nend_header\n")
        assert main(["lift", str(bad), str(root / "gt"), str(root / "poses.json"),
                     "--out", str(tmp_path)]) == 2
        assert "byte" in capsys.readouterr().err


class TestRefine:
    def lifted(self, root, out):
        scene, poses = paths(root)
        main(["lift", scene, str(root / "pred"), poses, "--out", str(out)])
        return out / "lifted.seg"

    def test_refined_within_emitter(self, dataset, tmp_path):
        root, manifest = dataset
        seg = self.lifted(root, tmp_path)
        scene, poses = paths(root)
        assert main(["refine", scene, str(seg), str(root / "audio"), poses,
                     "--out", str(tmp_path)]) == 0
        refined = read_seg(tmp_path / "refined.seg").as_set()
        assert refined and refined <= emitter_indices(manifest)
        assert refined <= read_seg(seg).as_set()

    def test_no_aisrm_copies_bytes(self, dataset, tmp_path):
        root, _ = dataset
        seg = self.lifted(root, tmp_path / "l")
        scene, poses = paths(root)
        assert main(["refine", scene, str(seg), str(root / "audio"), poses, "--no-aisrm",
                     "--out", str(tmp_path)]) == 0
        assert (tmp_path / "refined.seg").read_bytes() == seg.read_bytes()

    def test_silent_audio(self, dataset, tmp_path, capsys):
        root, manifest = dataset
        seg = self.lifted(root, tmp_path / "l")
        silent = tmp_path / "silent"
        silent.mkdir()
        for rec in manifest["frames"]:
            write_wav(tmp_path / rec["audio"].replace("audio/", "silent/"),
                      StereoClip(8000, np.zeros(80), np.zeros(80)))
        scene, poses = paths(root)
        code = main(["refine", scene, str(seg), str(silent), poses, "--out", str(tmp_path)])
        assert code == 3
        err = capsys.readouterr().err
        assert "tau_ref" in err and "--tau-ref" in err


class TestEval:
    def run_eval(self, root, seg, out, *flags):
        scene, poses = paths(root)
        assert main(["eval", scene, str(seg), str(root / "gt"), poses, "--out", str(out),
                     *flags]) == 0
        return json.loads((out / "metrics.json").read_text())

    def test_gt_segmentation(self, dataset, tmp_path):
        root, _ = dataset
        m = self.run_eval(root, root / "gt.seg", tmp_path)
        assert m["miou"] >= 0.98
        assert (tmp_path / "metrics.txt").read_text().startswith("frames")

    def test_empty_seg(self, dataset, tmp_path):
        root, _ = dataset
        (tmp_path / "empty.seg").write_text("")
        m = self.run_eval(root, tmp_path / "empty.seg", tmp_path)
        # an empty prediction scores 1 exactly on frames whose GT is empty too
        expected = [0.0 if read_mask(root / "gt" / MASK_PATTERN.format(i)).data.any() else 1.0
                    for i in range(0, 120, 8)]
        assert m["per_frame_iou"] == expected
        assert m["miou"] == pytest.approx(sum(expected) / 15, abs=1e-12)

    def test_split_lengths(self, dataset, tmp_path):
        root, _ = dataset
        test = self.run_eval(root, root / "gt.seg", tmp_path / "t")
        full = self.run_eval(root, root / "gt.seg", tmp_path / "a", "--eval-split", "all")
        assert len(test["per_frame_iou"]) == 15 and len(full["per_frame_iou"]) == 120


class TestSynth:
    def test_bundled_two_clock(self, tmp_path):
        assert main(["synth", "two-clock", "--out", str(tmp_path)]) == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["frame_count"] == 120 and len(manifest["frames"]) == 120

    def test_seed_override(self, tmp_path):
        spec = two_instance_spec(1, frame_count=8, clutter_count=10, instance_count=20,
                                 distractor_count=20).to_dict()
        spec["clip_seconds"] = 0.01
        p = tmp_path / "spec.json"
        p.write_text(json.dumps(spec))
        main(["synth", str(p), "--out", str(tmp_path / "a")])
        main(["synth", str(p), "--seed", "11", "--out", str(tmp_path / "b")])
        a = json.loads((tmp_path / "a" / "manifest.json").read_text())
        b = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert (a["seed"], b["seed"]) == (1, 11)
        assert (tmp_path / "a" / "scene.ply").read_bytes() != \
            (tmp_path / "b" / "scene.ply").read_bytes()

    def test_two_emitters(self, tmp_path, capsys):
        spec = two_instance_spec(1).to_dict()
        for o in spec["scene"]["objects"]:
            o["emitting"] = True
        p = tmp_path / "spec.json"
        p.write_text(json.dumps(spec))
        assert main(["synth", str(p), "--out", str(tmp_path / "o")]) == 2
        assert "exactly one" in capsys.readouterr().err


class TestPipeline:
    def run(self, root, out, *flags):
        assert main(["pipeline", str(root / "manifest.json"), "--out", str(out), *flags]) == 0
        return json.loads((out / "metrics.json").read_text())

    def test_aisrm_beats_ablation(self, dataset, tmp_path):
        root, manifest = dataset
        on = self.run(root, tmp_path / "on")
        off = self.run(root, tmp_path / "off", "--no-aisrm")
        assert on["miou"] > off["miou"]
        assert (tmp_path / "on" / "refined.ply").exists()
        assert not read_seg(tmp_path / "on" / "refined.seg").as_set() & silent_indices(manifest)

    def test_sweep(self, dataset, tmp_path):
        root, _ = dataset
        self.run(root, tmp_path, "--sweep-tau", "0.1,0.2,0.3,0.5,0.9")
        table = json.loads((tmp_path / "sweep.json").read_text())
        assert list(table) == ["0.1", "0.2", "0.3", "0.5", "0.9"]
        lifted = [table[k]["lifted"] for k in table]
        assert lifted == sorted(lifted, reverse=True)
        assert "tau_voting" in (tmp_path / "sweep.txt").read_text()

    def test_bad_sweep_list(self, dataset, tmp_path):
        root, _ = dataset
        assert main(["pipeline", str(root / "manifest.json"), "--out", str(tmp_path),
                     "--sweep-tau", "0.1,x"]) == 2

    def test_rerun_byte_identical(self, dataset, tmp_path):
        root, _ = dataset
        self.run(root, tmp_path / "a")
        self.run(root, tmp_path / "b")
        for name in ("metrics.json", "metrics.txt", "lifted.seg", "refined.seg", "refined.ply"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_matches_manual_composition(self, dataset, tmp_path):
        root, _ = dataset
        self.run(root, tmp_path / "p")
        scene, poses = paths(root)
        m = tmp_path / "m"
        assert main(["lift", scene, str(root / "pred"), poses, "--out", str(m)]) == 0
        assert main(["refine", scene, str(m / "lifted.seg"), str(root / "audio"), poses,
                     "--out", str(m)]) == 0
        assert main(["eval", scene, str(m / "refined.seg"), str(root / "gt"), poses,
                     "--out", str(m)]) == 0
        assert (m / "metrics.json").read_bytes() == (tmp_path / "p" / "metrics.json").read_bytes()

    def test_relocated_dataset(self, dataset, tmp_path):
        root, _ = dataset
        moved = tmp_path / "moved"
        shutil.copytree(root, moved)
        a = self.run(root, tmp_path / "a")
        b = self.run(moved, tmp_path / "b")
        assert a == b


class TestConfig:
    def test_precedence(self, dataset, tmp_path):
        root, _ = dataset
        scene, poses = paths(root)
        cfg = tmp_path / "cfg.ini"
        cfg.write_text("tau-voting = 0.9\nmin_points = 4\n")

        def resolved(*flags):
            out = tmp_path / str(len(list(tmp_path.iterdir())))
            assert main(["lift", scene, str(root / "gt"), poses, "--out", str(out), *flags]) == 0
            return json.loads((out / "run_lift.json").read_text())["config"]

        assert resolved()["tau_voting"] == 0.3
        c = resolved("--config", str(cfg))
        assert (c["tau_voting"], c["min_points"]) == (0.9, 4)
        c = resolved("--config", str(cfg), "--tau-voting", "0.2")
        assert (c["tau_voting"], c["min_points"]) == (0.2, 4)

    def test_parse(self):
        assert parse_config_text("no-aisrm = yes\neval_split = all\n") == \
            {"use_aisrm": "False", "eval_split": "all"}
        with pytest.raises(InputError):
            parse_config_text("bogus = 1\n")

    def test_out_of_range(self, dataset, tmp_path):
        root, _ = dataset
        scene, poses = paths(root)
        assert main(["lift", scene, str(root / "gt"), poses, "--tau-voting", "2",
                     "--out", str(tmp_path)]) == 2
