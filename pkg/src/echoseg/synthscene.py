"""Deterministic synthetic scenes for end-to-end checks.

A scene is a set of box-bounded Gaussian blobs (exactly one emits sound) plus
uniform clutter. An agent walks a waypoint path; each frame yields a pose, a
ground-truth mask of the emitter, a corrupted "predicted" mask that imitates a
2D audio-visual segmenter, and a binaural RMS pair from an intensity-only
lateralisation model.

All randomness comes from ``numpy.random.PCG64`` seeded through
``SeedSequence(seed, spawn_key=(stream, frame))`` so every frame is reproducible
on its own.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage, stats

from .binaural import AUDIO_PATTERN, RmsObservation, StereoClip, write_wav
from .errors import InputError, InvalidSpec
from .gs_scene import CameraPose, GaussianCloud, poses_to_json, write_ply
from .mask_lifting import MASK_PATTERN, MaskImage, Segmentation, write_mask, write_seg
from .render_eval import RenderConfig, render_mask

STREAM_SCENE = 0
STREAM_AUDIO_NOISE = 1
STREAM_CORRUPTION = 2
STREAM_LAYOUT = 3


def substream(seed: int, stream: int, frame: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1), spawn_key=(stream, frame))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class SceneObject:
    name: str
    center: tuple
    extent: tuple
    gaussian_count: int
    emitting: bool = False


@dataclass
class SceneSpec:
    objects: list
    clutter_count: int = 0
    room_box: tuple = ((-4.0, -4.0, 0.0), (4.0, 4.0, 3.0))
    seed: int = 0
    gaussian_scale: float = 0.025
    opacity: float = 0.9

    def __post_init__(self):
        self.objects = [o if isinstance(o, SceneObject) else SceneObject(**o)
                        for o in self.objects]

    def validate(self):
        if not self.objects:
            raise InvalidSpec("scene needs at least one object")
        emitting = [o.name for o in self.objects if o.emitting]
        if len(emitting) != 1:
            raise InvalidSpec(f"exactly one object must emit sound, got {len(emitting)}")
        for o in self.objects:
            if np.any(np.asarray(o.extent, dtype=float) <= 0):
                raise InvalidSpec(f"object {o.name!r} has a non-positive extent")
            if o.gaussian_count < 1:
                raise InvalidSpec(f"object {o.name!r} needs at least one Gaussian")
        lo, hi = np.asarray(self.room_box, dtype=float)
        if np.any(hi <= lo) and self.clutter_count:
            raise InvalidSpec("room_box must have positive size")
        if self.gaussian_scale <= 0 or not 0 < self.opacity <= 1:
            raise InvalidSpec("gaussian_scale must be > 0 and opacity in (0, 1]")

    @property
    def emitter(self) -> SceneObject:
        return next(o for o in self.objects if o.emitting)


@dataclass
class TrajectorySpec:
    path_waypoints: list
    look_at: object = "path-forward"
    frame_count: int = 120
    width: int = 160
    height: int = 160
    fx: float = 80.0
    fy: float = 80.0
    cx: float | None = None
    cy: float | None = None

    def validate(self):
        if self.frame_count < 8:
            raise InvalidSpec("trajectory needs at least 8 frames")
        if len(self.path_waypoints) < 2:
            raise InvalidSpec("trajectory needs at least two waypoints")


@dataclass
class BinauralModel:
    source_amplitude: float = 1.0
    lateral_gain: float = 0.8
    noise_std: float = 0.0

    def validate(self):
        if self.source_amplitude < 0 or not 0 <= self.lateral_gain <= 1 or self.noise_std < 0:
            raise InvalidSpec("binaural model needs amplitude >= 0, gain in [0, 1], noise >= 0")


@dataclass
class CorruptionSpec:
    """How predicted masks deviate from ground truth.

    ``paint_objects`` are silent objects added to every predicted mask,
    ``dilation`` grows the mask by that many pixels, ``blob_*`` adds random
    discs and ``dropout`` is the per-frame probability of an empty prediction.
    """

    paint_objects: list = field(default_factory=list)
    dilation: int = 0
    blob_probability: float = 0.0
    blob_radius: int = 6
    dropout: float = 0.0


@dataclass
class DatasetSpec:
    scene: SceneSpec
    trajectory: TrajectorySpec
    binaural: BinauralModel = field(default_factory=BinauralModel)
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    sample_rate: int = 44100
    clip_seconds: float = 1.0

    @property
    def seed(self) -> int:
        return self.scene.seed

    def validate(self):
        self.scene.validate()
        self.trajectory.validate()
        self.binaural.validate()
        names = {o.name for o in self.scene.objects}
        for name in self.corruption.paint_objects:
            if name not in names:
                raise InvalidSpec(f"corruption paints unknown object {name!r}")
        if self.sample_rate <= 0 or self.clip_seconds <= 0:
            raise InvalidSpec("audio sample rate and duration must be positive")

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        try:
            spec = cls(
                scene=SceneSpec(**d["scene"]),
                trajectory=TrajectorySpec(**d["trajectory"]),
                binaural=BinauralModel(**d.get("binaural", {})),
                corruption=CorruptionSpec(**d.get("corruption", {})),
                sample_rate=d.get("sample_rate", 44100),
                clip_seconds=d.get("clip_seconds", 1.0),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidSpec(f"malformed dataset spec: {exc}") from None
        spec.validate()
        return spec

    def with_seed(self, seed: int) -> "DatasetSpec":
        d = self.to_dict()
        d["scene"]["seed"] = int(seed)
        return DatasetSpec.from_dict(d)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def load_dataset_spec(path) -> DatasetSpec:
    try:
        with open(path) as f:
            d = json.load(f)
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"{path}: {exc}") from None
    return DatasetSpec.from_dict(d)


def bundled_spec_path(name: str = "two_clock") -> Path:
    return Path(__file__).with_name("data") / f"{name}.json"


# ---------------------------------------------------------------------------
# scene

def generate_scene(spec: SceneSpec):
    """Sample the cloud. Returns ``(cloud, labels)``; labels hold the object index or -1."""
    spec.validate()
    rng = substream(spec.seed, STREAM_SCENE)
    centers, labels = [], []
    for k, obj in enumerate(spec.objects):
        # one-sigma truncation keeps density high up to the box faces
        sigma = np.asarray(obj.extent, dtype=float) / 2.0
        offsets = stats.truncnorm.rvs(-1.0, 1.0, size=(obj.gaussian_count, 3), random_state=rng)
        centers.append(np.asarray(obj.center, dtype=float) + offsets * sigma)
        labels.append(np.full(obj.gaussian_count, k))
    if spec.clutter_count:
        lo, hi = np.asarray(spec.room_box, dtype=float)
        centers.append(rng.uniform(lo, hi, size=(spec.clutter_count, 3)))
        labels.append(np.full(spec.clutter_count, -1))
    centers = np.concatenate(centers)
    labels = np.concatenate(labels).astype(np.int64)
    n = len(centers)
    palette = rng.uniform(-1.0, 1.0, size=(len(spec.objects) + 1, 3))
    cloud = GaussianCloud(
        centers=centers,
        scales=np.full((n, 3), spec.gaussian_scale),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        opacities=np.full(n, spec.opacity),
        colors_dc=palette[labels],
    )
    return cloud, labels


def object_indices(labels, k: int) -> np.ndarray:
    return np.flatnonzero(np.asarray(labels) == k)


# ---------------------------------------------------------------------------
# trajectory

def _sample_path(waypoints, n):
    pts = np.asarray(waypoints, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.linspace(0.0, cum[-1], n)
    return np.column_stack([np.interp(t, cum, pts[:, i]) for i in range(3)])


def trajectory_poses(spec: TrajectorySpec) -> list[CameraPose]:
    """Evenly spaced (by arc length) poses along the waypoint polyline."""
    spec.validate()
    positions = _sample_path(spec.path_waypoints, spec.frame_count)
    cx = spec.width / 2 if spec.cx is None else spec.cx
    cy = spec.height / 2 if spec.cy is None else spec.cy
    poses = []
    for i, p in enumerate(positions):
        if isinstance(spec.look_at, str):
            if spec.look_at != "path-forward":
                raise InvalidSpec(f"unknown look_at mode {spec.look_at!r}")
            j = min(i + 1, len(positions) - 1)
            d = positions[j] - positions[j - 1] if j > 0 else np.array([1.0, 0, 0])
            d = np.array([d[0], d[1], 0.0])
            target = p + (d if np.linalg.norm(d) > 0 else np.array([1.0, 0, 0]))
        else:
            target = np.asarray(spec.look_at, dtype=float)
        poses.append(CameraPose.look_at(p, target, spec.fx, spec.fy, cx, cy,
                                        spec.width, spec.height))
    return poses


def circle_waypoints(center, radius, height, count=181, start_angle=0.0, arc=2 * np.pi):
    ang = start_angle + np.linspace(0.0, arc, count)
    c = np.asarray(center, dtype=float)
    return [[float(c[0] + radius * np.cos(a)), float(c[1] + radius * np.sin(a)), float(height)]
            for a in ang]


# ---------------------------------------------------------------------------
# binaural

def lateral_offset(pose: CameraPose, emitter) -> tuple[float, float]:
    """Distance to the emitter and the sine of its azimuth (positive to the right)."""
    d_vec = np.asarray(emitter, dtype=float) - pose.position
    d = float(np.linalg.norm(d_vec))
    s = float(d_vec @ pose.right_axis / d) if d > 0 else 0.0
    return d, s


def binaural_rms_pair(distance: float, lateral: float, model: BinauralModel):
    base = model.source_amplitude / (1.0 + distance)
    g = model.lateral_gain * lateral
    return base * (1.0 - g) / 2.0, base * (1.0 + g) / 2.0


def synthesize_binaural_rms(pose: CameraPose, emitter, model: BinauralModel,
                            rng: np.random.Generator | None = None) -> RmsObservation:
    d, s = lateral_offset(pose, emitter)
    r_l, r_r = binaural_rms_pair(d, s, model)
    if model.noise_std > 0:
        if rng is None:
            raise InputError("a random generator is required when noise_std > 0")
        noise = rng.normal(0.0, model.noise_std, size=2)
        r_l, r_r = max(r_l + noise[0], 0.0), max(r_r + noise[1], 0.0)
    return RmsObservation(float(r_l), float(r_r), pose)


def constant_clip(rms_left: float, rms_right: float, sample_rate=44100, seconds=1.0):
    n = max(1, int(round(sample_rate * seconds)))
    return StereoClip(sample_rate, np.full(n, rms_left), np.full(n, rms_right))


# ---------------------------------------------------------------------------
# masks

def render_gt_mask(cloud: GaussianCloud, indices, pose: CameraPose,
                   cfg: RenderConfig = RenderConfig()) -> MaskImage:
    if len(indices) == 0:
        raise InputError("ground-truth object has no Gaussians")
    return render_mask(cloud, Segmentation(indices), pose, cfg)


def _disk(radius):
    r = int(radius)
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= r * r


def corrupt_mask(gt: MaskImage, painted: Sequence[MaskImage], spec: CorruptionSpec,
                 rng: np.random.Generator) -> MaskImage:
    data = gt.data.copy()
    for m in painted:
        data |= m.data
    if spec.dilation > 0:
        data = ndimage.binary_dilation(data, structure=_disk(spec.dilation))
    # draws happen unconditionally so the stream layout does not depend on the mask
    blob = rng.random() < spec.blob_probability
    bx, by = rng.integers(0, gt.width), rng.integers(0, gt.height)
    dropped = rng.random() < spec.dropout
    if blob:
        y, x = np.ogrid[:gt.height, :gt.width]
        data |= (x - bx) ** 2 + (y - by) ** 2 <= spec.blob_radius ** 2
    if dropped:
        data[:] = False
    return MaskImage(data)


# ---------------------------------------------------------------------------
# dataset

@dataclass(eq=False)
class SyntheticDataset:
    spec: DatasetSpec
    cloud: GaussianCloud
    labels: np.ndarray
    poses: list
    gt_masks: list
    pred_masks: list
    observations: list

    @property
    def emitter_label(self) -> int:
        return next(k for k, o in enumerate(self.spec.scene.objects) if o.emitting)

    def object_indices(self, name_or_index) -> np.ndarray:
        if isinstance(name_or_index, str):
            k = next(i for i, o in enumerate(self.spec.scene.objects) if o.name == name_or_index)
        else:
            k = int(name_or_index)
        return object_indices(self.labels, k)

    @property
    def gt_segmentation(self) -> Segmentation:
        return Segmentation(object_indices(self.labels, self.emitter_label))

    def views(self, which="pred"):
        masks = self.pred_masks if which == "pred" else self.gt_masks
        return list(zip(self.poses, masks))


def build_dataset(spec: DatasetSpec, render_cfg: RenderConfig = RenderConfig()) -> SyntheticDataset:
    """Generate everything in memory (no files)."""
    spec.validate()
    cloud, labels = generate_scene(spec.scene)
    poses = trajectory_poses(spec.trajectory)
    emitter_k = next(k for k, o in enumerate(spec.scene.objects) if o.emitting)
    emitter_idx = object_indices(labels, emitter_k)
    names = [o.name for o in spec.scene.objects]
    painted_idx = [object_indices(labels, names.index(n)) for n in spec.corruption.paint_objects]
    emitter_pos = np.asarray(spec.scene.emitter.center, dtype=float)

    gt_masks, pred_masks, observations = [], [], []
    for i, pose in enumerate(poses):
        gt = render_gt_mask(cloud, emitter_idx, pose, render_cfg)
        painted = [render_gt_mask(cloud, idx, pose, render_cfg) for idx in painted_idx]
        pred = corrupt_mask(gt, painted, spec.corruption,
                            substream(spec.seed, STREAM_CORRUPTION, i))
        obs = synthesize_binaural_rms(pose, emitter_pos, spec.binaural,
                                      substream(spec.seed, STREAM_AUDIO_NOISE, i))
        gt_masks.append(gt)
        pred_masks.append(pred)
        observations.append(obs)
    return SyntheticDataset(spec, cloud, labels, poses, gt_masks, pred_masks, observations)


def export_dataset(spec: DatasetSpec, out_dir, render_cfg: RenderConfig = RenderConfig()) -> dict:
    """Write a dataset directory and return its manifest (also saved as manifest.json)."""
    ds = build_dataset(spec, render_cfg)
    out = Path(out_dir)
    for sub in ("gt", "pred", "audio"):
        os.makedirs(out / sub, exist_ok=True)

    write_ply(out / "scene.ply", ds.cloud)
    with open(out / "poses.json", "w") as f:
        json.dump(poses_to_json(ds.poses), f, indent=1)
        f.write("\n")
    write_seg(out / "gt.seg", ds.gt_segmentation)

    frames = []
    for i in range(len(ds.poses)):
        rec = {
            "frame": i,
            "gt_mask": f"gt/{MASK_PATTERN.format(i)}",
            "pred_mask": f"pred/{MASK_PATTERN.format(i)}",
            "audio": f"audio/{AUDIO_PATTERN.format(i)}",
        }
        write_mask(out / rec["gt_mask"], ds.gt_masks[i])
        write_mask(out / rec["pred_mask"], ds.pred_masks[i])
        obs = ds.observations[i]
        write_wav(out / rec["audio"], constant_clip(obs.rms_left, obs.rms_right,
                                                    spec.sample_rate, spec.clip_seconds))
        frames.append(rec)

    objects = []
    for k, o in enumerate(spec.scene.objects):
        idx = object_indices(ds.labels, k)
        objects.append({**_jsonable(asdict(o)),
                        "index_range": [int(idx[0]), int(idx[-1]) + 1]})
    manifest = {
        "seed": spec.seed,
        "frame_count": len(ds.poses),
        "objects": objects,
        "scene": "scene.ply",
        "poses": "poses.json",
        "gt_segmentation": "gt.seg",
        "gt_masks": "gt",
        "pred_masks": "pred",
        "audio": "audio",
        "frames": frames,
        "spec": spec.to_dict(),
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# ready-made fixtures

def two_instance_spec(seed: int, frame_count: int = 120, clutter_count: int = 5000,
                      instance_count: int = 1000, distractor_count: int = 3000) -> DatasetSpec:
    """Two identical instances (one emitting) above a larger silent distractor.

    The agent circles the pair looking at their midpoint. Predicted masks paint
    both instances and the distractor, with dilation, random blobs and dropout.
    """
    rng = substream(seed, STREAM_LAYOUT)
    theta = rng.uniform(0, 2 * np.pi)
    half_sep = rng.uniform(1.0, 1.1)
    axis = np.array([np.cos(theta), np.sin(theta), 0.0])
    mid = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.0])
    emit_first = bool(rng.integers(0, 2))
    extent = (0.2, 0.2, 0.2)
    a = mid + half_sep * axis + [0, 0, 1.0]
    b = mid - half_sep * axis + [0, 0, 1.0]
    objects = [
        SceneObject("clock_a", tuple(a), extent, instance_count, emitting=emit_first),
        SceneObject("clock_b", tuple(b), extent, instance_count, emitting=not emit_first),
        SceneObject("cabinet", tuple(mid + [0, 0, 0.45]), (0.5, 0.4, 0.15), distractor_count),
    ]
    radius = rng.uniform(1.3, 1.4)
    traj = TrajectorySpec(
        path_waypoints=circle_waypoints(mid, radius, 1.05, start_angle=rng.uniform(0, 2 * np.pi)),
        look_at=[float(mid[0]), float(mid[1]), 0.95],
        frame_count=frame_count,
    )
    corruption = CorruptionSpec(paint_objects=["clock_b" if emit_first else "clock_a", "cabinet"],
                                dilation=1, blob_probability=0.3, blob_radius=6, dropout=0.25)
    spec = DatasetSpec(SceneSpec(objects, clutter_count, seed=int(seed)), traj,
                       BinauralModel(), corruption)
    spec.validate()
    return spec


def near_instance_spec(seed: int, frame_count: int = 120, clutter_count: int = 2000,
                       instance_count: int = 2000, distractor_count: int = 3000) -> DatasetSpec:
    """Two instances a fraction of their size apart, emitter almost straight ahead.

    The faces are 0.3 to 0.9 extents apart (more than the clustering radius,
    so the two stay separate clusters). A larger silent distractor is painted
    too, so the volume filter removes it rather than one of the instances and
    the choice between them is left to the audio center.
    """
    rng = substream(seed, STREAM_LAYOUT)
    extent = 0.2
    gap = rng.uniform(0.3, 0.9) * extent
    a = np.array([0.0, 0.0, 1.0])
    b = a + [0.0, extent + gap, 0.0]
    emit_first = bool(rng.integers(0, 2))
    objects = [
        SceneObject("microwave", tuple(a), (extent,) * 3, instance_count, emitting=emit_first),
        SceneObject("oven", tuple(b), (extent,) * 3, instance_count, emitting=not emit_first),
        SceneObject("shelf", (0.0, -1.2, 0.45), (0.5, 0.4, 0.15), distractor_count),
    ]
    emitter = a if emit_first else b
    # short frontal sweep: the emitter stays near the optical axis
    span = rng.uniform(0.2, 0.4)
    waypoints = [[-2.0, float(emitter[1] - span), 1.2], [-2.0, float(emitter[1] + span), 1.2]]
    traj = TrajectorySpec(path_waypoints=waypoints, look_at=[float(v) for v in emitter],
                          frame_count=frame_count)
    corruption = CorruptionSpec(paint_objects=["oven" if emit_first else "microwave", "shelf"],
                                dilation=1)
    spec = DatasetSpec(SceneSpec(objects, clutter_count, seed=int(seed)), traj,
                       BinauralModel(noise_std=0.01), corruption)
    spec.validate()
    return spec
