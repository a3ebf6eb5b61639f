"""Command-line entry point: ``echoseg {lift,refine,eval,synth,pipeline}``.

Exit codes: 0 success, 2 input/parse error, 3 pipeline error, 4 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import shutil
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .binaural import AUDIO_PATTERN, RmsObservation, channel_rms, read_wav
from .errors import EchoSegError, InputError, NoQualifyingGaussians, PipelineError
from .gs_scene import poses_from_json, read_ply, write_ply
from .mask_lifting import MASK_PATTERN, read_mask, read_seg, write_seg
from .pipeline import PipelineConfig, eval_stage, lift, refine_stage, sweep_tau
from .synthscene import bundled_spec_path, export_dataset, load_dataset_spec

EXIT_INPUT, EXIT_PIPELINE, EXIT_IO = 2, 3, 4

_FLOAT_KEYS = {"tau_voting", "eps", "tau_ref", "volume_sigma_factor", "alpha_threshold",
               "beta_squared"}


class StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage, self.exc = stage, exc


@contextmanager
def stage(name, timings=None):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except (EchoSegError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc
    if timings is not None:
        timings[name] = round(time.perf_counter() - t0, 6)


# ---------------------------------------------------------------------------
# config

def parse_config_text(text: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise InputError(f"malformed config file: {exc}") from None
    known = set(PipelineConfig.field_names())
    out = {}
    for key, value in cp["config"].items():
        name = key.strip().replace("-", "_")
        if name == "no_aisrm":
            name, value = "use_aisrm", str(not _to_bool(value))
        if name not in known:
            raise InputError(f"unknown config key {key!r}")
        out[name] = value
    return out


def _to_bool(value) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InputError(f"expected a boolean, got {value!r}")


def _coerce(name, value):
    try:
        if name in _FLOAT_KEYS:
            return float(value)
        if name == "min_points":
            return int(value)
        if name == "use_aisrm":
            return value if isinstance(value, bool) else _to_bool(value)
        return str(value)
    except (TypeError, ValueError):
        raise InputError(f"bad value for {name}: {value!r}") from None


def resolve_config(args) -> PipelineConfig:
    """Defaults, then the --config file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            values.update(parse_config_text(f.read()))
    for name in PipelineConfig.field_names():
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    if getattr(args, "no_aisrm", False):
        values["use_aisrm"] = False
    return PipelineConfig(**{k: _coerce(k, v) for k, v in values.items()})


# ---------------------------------------------------------------------------
# loading

def load_poses(path):
    with open(path) as f:
        try:
            records = json.load(f)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from None
    if not isinstance(records, list):
        raise InputError(f"{path}: expected a JSON array of pose records")
    return poses_from_json(records)


def load_masks(directory, count):
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"mask directory not found: {d}")
    return [read_mask(d / MASK_PATTERN.format(i)) for i in range(count)]


def load_observations(directory, poses):
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"audio directory not found: {d}")
    obs = []
    for i, pose in enumerate(poses):
        r_l, r_r = channel_rms(read_wav(d / AUDIO_PATTERN.format(i)))
        obs.append(RmsObservation(r_l, r_r, pose))
    return obs


def write_run_manifest(out, command, inputs, cfg, timings, outputs):
    record = {
        "command": command,
        "version": __version__,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "config": cfg.to_dict(),
        "timings": timings,
        "outputs": [str(p) for p in outputs],
    }
    path = Path(out) / f"run_{command}.json"
    with open(path, "w") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _write_text(path, text):
    with open(path, "w", newline="\n") as f:
        f.write(text)


def _write_metrics(out, metrics, name="metrics"):
    out = Path(out)
    _write_text(out / f"{name}.json", metrics.to_json())
    _write_text(out / f"{name}.txt", metrics.to_text())
    return [out / f"{name}.json", out / f"{name}.txt"]


def _prepare_out(out):
    with stage("output"):
        os.makedirs(out, exist_ok=True)
    return Path(out)


# ---------------------------------------------------------------------------
# commands

def cmd_lift(args):
    cfg = resolve_config(args)
    timings = {}
    with stage("load", timings):
        cloud = read_ply(args.scene)
        poses = load_poses(args.poses)
        masks = load_masks(args.masks, len(poses))
    with stage("lift", timings):
        seg = lift(cloud, list(zip(poses, masks)), cfg)
    out = _prepare_out(args.out)
    with stage("write", timings):
        write_seg(out / "lifted.seg", seg)
        write_run_manifest(out, "lift", {"scene": args.scene, "masks": args.masks,
                                         "poses": args.poses}, cfg, timings, [out / "lifted.seg"])
    print(f"lifted {len(seg)} of {len(cloud)} Gaussians -> {out / 'lifted.seg'}")


def cmd_refine(args):
    cfg = resolve_config(args)
    timings = {}
    out = _prepare_out(args.out)
    target = out / "refined.seg"
    if not cfg.use_aisrm:
        with stage("write", timings):
            shutil.copyfile(args.seg, target)
            write_run_manifest(out, "refine", {"seg": args.seg}, cfg, timings, [target])
        print(f"AISRM disabled: copied {args.seg} -> {target}")
        return
    with stage("load", timings):
        cloud = read_ply(args.scene)
        seg = read_seg(args.seg)
        seg.check(cloud)
        poses = load_poses(args.poses)
        obs = load_observations(args.audio, poses)
    with stage("refine", timings):
        refined = refine_stage(cloud, seg, obs, cfg)
    with stage("write", timings):
        write_seg(target, refined)
        write_run_manifest(out, "refine", {"scene": args.scene, "seg": args.seg,
                                           "audio": args.audio, "poses": args.poses},
                           cfg, timings, [target])
    note = " (no clusters found, left unrefined)" if refined.unrefined else ""
    print(f"refined {len(seg)} -> {len(refined)} Gaussians{note} -> {target}")


def cmd_eval(args):
    cfg = resolve_config(args)
    timings = {}
    with stage("load", timings):
        cloud = read_ply(args.scene)
        seg = read_seg(args.seg)
        seg.check(cloud)
        poses = load_poses(args.poses)
        gt = load_masks(args.gt_masks, len(poses))
    with stage("eval", timings):
        metrics = eval_stage(cloud, seg, poses, gt, cfg)
    out = _prepare_out(args.out)
    with stage("write", timings):
        paths = _write_metrics(out, metrics)
        write_run_manifest(out, "eval", {"scene": args.scene, "seg": args.seg,
                                         "gt_masks": args.gt_masks, "poses": args.poses},
                           cfg, timings, paths)
    sys.stdout.write(metrics.to_text())


def cmd_synth(args):
    timings = {}
    with stage("load", timings):
        path = args.spec
        if not os.path.exists(path) and bundled_spec_path(path.replace("-", "_")).exists():
            path = bundled_spec_path(path.replace("-", "_"))
        spec = load_dataset_spec(path)
        if args.seed is not None:
            spec = spec.with_seed(args.seed)
    out = _prepare_out(args.out)
    with stage("synth", timings):
        manifest = export_dataset(spec, out)
    print(f"wrote {manifest['frame_count']} frames (seed {manifest['seed']}) -> "
          f"{out / 'manifest.json'}")


def _parse_taus(text):
    try:
        taus = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InputError(f"--sweep-tau expects comma-separated numbers, got {text!r}") from None
    if not taus:
        raise InputError("--sweep-tau is empty")
    return taus


def cmd_pipeline(args):
    cfg = resolve_config(args)
    timings = {}
    with stage("load", timings):
        manifest_path = Path(args.manifest)
        with open(manifest_path) as f:
            manifest = json.load(f)
        root = manifest_path.parent
        cloud = read_ply(root / manifest["scene"])
        poses = load_poses(root / manifest["poses"])
        pred = load_masks(root / manifest["pred_masks"], len(poses))
        gt = load_masks(root / manifest["gt_masks"], len(poses))
        obs = load_observations(root / manifest["audio"], poses)
    out = _prepare_out(args.out)
    outputs = []
    with stage("lift", timings):
        lifted = lift(cloud, list(zip(poses, pred)), cfg)
    try:
        with stage("refine", timings):
            refined = refine_stage(cloud, lifted, obs, cfg)
        with stage("eval", timings):
            metrics = eval_stage(cloud, refined, poses, gt, cfg)
        with stage("write", timings):
            write_seg(out / "lifted.seg", lifted)
            write_seg(out / "refined.seg", refined)
            write_ply(out / "refined.ply", cloud.subset(refined.selected))
            outputs += [out / "lifted.seg", out / "refined.seg", out / "refined.ply"]
            outputs += _write_metrics(out, metrics)
        if args.sweep_tau:
            with stage("sweep", timings):
                taus = _parse_taus(args.sweep_tau)
                results = sweep_tau(cloud, poses, pred, gt, obs, taus, cfg)
                table = {f"{t:g}": {"miou": r.metrics.miou, "fscore": r.metrics.fscore,
                                    "lifted": len(r.lifted), "refined": len(r.refined)}
                         for t, r in results.items()}
                _write_text(out / "sweep.json", json.dumps(table, indent=2, sort_keys=True) + "\n")
                lines = ["tau_voting  mIoU    F-score"]
                lines += [f"{t:<10g}  {r.metrics.miou:.4f}  {r.metrics.fscore:.4f}"
                          for t, r in results.items()]
                _write_text(out / "sweep.txt", "\n".join(lines) + "\n")
                outputs += [out / "sweep.json", out / "sweep.txt"]
    finally:
        with stage("write"):
            write_run_manifest(out, "pipeline", {"manifest": manifest_path}, cfg, timings, outputs)
    sys.stdout.write(metrics.to_text())
    if args.sweep_tau:
        sys.stdout.write((out / "sweep.txt").read_text())


# ---------------------------------------------------------------------------

def _add_config_flags(p, with_eval=True):
    p.add_argument("--config", help="flat key = value file mirroring the flag names")
    p.add_argument("--tau-voting", dest="tau_voting", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--min-points", dest="min_points", type=int)
    p.add_argument("--tau-ref", dest="tau_ref", type=float)
    p.add_argument("--volume-sigma-factor", dest="volume_sigma_factor", type=float)
    p.add_argument("--alpha-threshold", dest="alpha_threshold", type=float)
    p.add_argument("--beta-squared", dest="beta_squared", type=float)
    p.add_argument("--no-aisrm", dest="no_aisrm", action="store_true")
    p.add_argument("--eval-split", dest="eval_split", choices=["test", "all"])
    p.add_argument("--out", default=".", help="output directory (default: current)")


def build_parser():
    parser = argparse.ArgumentParser(prog="echoseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"echoseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lift", help="vote 2D masks onto the Gaussian cloud")
    p.add_argument("scene")
    p.add_argument("masks", help="directory of mask_%%05d.pgm files")
    p.add_argument("poses")
    _add_config_flags(p)
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("refine", help="audio-informed refinement of a .seg")
    p.add_argument("scene")
    p.add_argument("seg")
    p.add_argument("audio", help="directory of audio_%%05d.wav files")
    p.add_argument("poses")
    _add_config_flags(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="render a .seg and score it against GT masks")
    p.add_argument("scene")
    p.add_argument("seg")
    p.add_argument("gt_masks")
    p.add_argument("poses")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="export a synthetic dataset")
    p.add_argument("spec", help="dataset spec JSON, or a bundled name such as two-clock")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="lift, refine and evaluate a dataset manifest")
    p.add_argument("manifest")
    p.add_argument("--sweep-tau", dest="sweep_tau", help="comma-separated tau_voting values")
    _add_config_flags(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def _exit_code(exc) -> int:
    if isinstance(exc, (PipelineError,)):
        return EXIT_PIPELINE
    if isinstance(exc, (FileNotFoundError, IsADirectoryError, NotADirectoryError)):
        return EXIT_INPUT
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_INPUT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            args.func(args)
        except (EchoSegError, OSError, ValueError) as exc:
            raise StageError("config", exc) from exc
    except StageError as err:
        exc = err.exc
        msg = str(exc)
        if isinstance(exc, OSError) and exc.filename is not None:
            msg = f"{exc.strerror or exc}: {exc.filename}"
        print(f"echoseg {args.command} [{err.stage}]: error: {msg}", file=sys.stderr)
        if isinstance(exc, NoQualifyingGaussians):
            print("hint: lower --tau-ref or check that the audio clips are not silent",
                  file=sys.stderr)
        return _exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
