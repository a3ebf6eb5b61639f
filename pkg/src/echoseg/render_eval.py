"""Binary mask splatting and segmentation metrics (per-frame mIoU and F-score)."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyFrames, InputError, TooFewFrames
from .gs_scene import CameraPose, GaussianCloud, project_points, screen_covariances
from .mask_lifting import MaskImage, Segmentation

# bounds the temporary (gaussians x patch pixels) buffers in render_mask
_MAX_BATCH_PIXELS = 1 << 22


@dataclass(frozen=True)
class RenderConfig:
    alpha_threshold: float = 0.5
    sigma_cutoff: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.alpha_threshold < 1.0:
            raise InputError(f"alpha_threshold must lie in (0, 1), got {self.alpha_threshold}")
        if self.sigma_cutoff <= 0:
            raise InputError("sigma_cutoff must be positive")


@dataclass(frozen=True)
class EvalConfig:
    beta_squared: float = 0.3

    def __post_init__(self):
        if self.beta_squared <= 0:
            raise InputError("beta_squared must be positive")


def render_mask(cloud: GaussianCloud, seg: Segmentation, pose: CameraPose,
                cfg: RenderConfig = RenderConfig()) -> MaskImage:
    """Max-alpha splat of the segmented Gaussians, thresholded to a binary mask.

    A pixel (sampled at its center) is set when some Gaussian reaches
    ``alpha_threshold`` there within ``sigma_cutoff`` standard deviations.
    """
    W, H = pose.width, pose.height
    image = np.zeros((H, W), dtype=bool)
    idx = seg.selected
    if len(idx) == 0:
        return MaskImage(image)
    seg.check(cloud)
    uv, _, in_view = project_points(pose, cloud.centers[idx])
    idx, uv = idx[in_view], uv[in_view]
    opacity = cloud.opacities[idx]
    reachable = opacity >= cfg.alpha_threshold
    idx, uv, opacity = idx[reachable], uv[reachable], opacity[reachable]
    if len(idx) == 0:
        return MaskImage(image)

    cov = screen_covariances(pose, cloud.centers[idx], cloud.scales[idx], cloud.rotations[idx])
    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2
    ok = det > 0
    idx, uv, opacity, cov, det = idx[ok], uv[ok], opacity[ok], cov[ok], det[ok]
    conic_a = cov[:, 1, 1] / det
    conic_b = -cov[:, 0, 1] / det
    conic_c = cov[:, 0, 0] / det

    cutoff_sq = cfg.sigma_cutoff ** 2
    q_max = np.minimum(cutoff_sq, 2.0 * np.log(opacity / cfg.alpha_threshold))
    rx = np.sqrt(q_max * cov[:, 0, 0]) + 1e-6
    ry = np.sqrt(q_max * cov[:, 1, 1]) + 1e-6
    x0 = np.clip(np.ceil(uv[:, 0] - rx - 0.5), 0, W).astype(np.int64)
    x1 = np.clip(np.floor(uv[:, 0] + rx - 0.5), -1, W - 1).astype(np.int64)
    y0 = np.clip(np.ceil(uv[:, 1] - ry - 0.5), 0, H).astype(np.int64)
    y1 = np.clip(np.floor(uv[:, 1] + ry - 0.5), -1, H - 1).astype(np.int64)
    nx, ny = x1 - x0 + 1, y1 - y0 + 1
    live = (nx > 0) & (ny > 0)
    size = np.maximum(nx, ny)

    # bucket footprints by power-of-two patch size
    bucket = np.where(live, np.ceil(np.log2(np.maximum(size, 1))).astype(np.int64), -1)
    for b in np.unique(bucket[bucket >= 0]):
        members = np.flatnonzero(bucket == b)
        P = int(2 ** b)
        off = np.arange(P)
        step = max(1, _MAX_BATCH_PIXELS // (P * P))
        for s in range(0, len(members), step):
            m = members[s:s + step]
            xs = x0[m, None, None] + off[None, None, :]
            ys = y0[m, None, None] + off[None, :, None]
            dx = xs + 0.5 - uv[m, 0, None, None]
            dy = ys + 0.5 - uv[m, 1, None, None]
            q = (conic_a[m, None, None] * dx * dx + 2 * conic_b[m, None, None] * dx * dy
                 + conic_c[m, None, None] * dy * dy)
            alpha = opacity[m, None, None] * np.exp(-0.5 * q)
            hit = ((q <= cutoff_sq) & (alpha >= cfg.alpha_threshold)
                   & (xs <= x1[m, None, None]) & (ys <= y1[m, None, None]))
            xs, ys = np.broadcast_arrays(xs, ys)
            image[ys[hit], xs[hit]] = True
    return MaskImage(image)


def _pair(pred: MaskImage, gt: MaskImage):
    if pred.data.shape != gt.data.shape:
        raise DimensionMismatch(
            f"prediction is {pred.width}x{pred.height}, ground truth is {gt.width}x{gt.height}")
    return pred.data, gt.data


def iou(pred: MaskImage, gt: MaskImage) -> float:
    p, g = _pair(pred, gt)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def fscore(pred: MaskImage, gt: MaskImage, cfg: EvalConfig = EvalConfig()) -> float:
    p, g = _pair(pred, gt)
    tp = np.count_nonzero(p & g)
    n_pred, n_gt = np.count_nonzero(p), np.count_nonzero(g)
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if tp == 0:
        return 0.0
    precision, recall = tp / n_pred, tp / n_gt
    b2 = cfg.beta_squared
    return (1 + b2) * precision * recall / (b2 * precision + recall)


@dataclass
class Metrics:
    miou: float
    fscore: float
    per_frame_iou: list = field(default_factory=list)
    per_frame_fscore: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "miou": self.miou,
            "fscore": self.fscore,
            "per_frame_iou": list(self.per_frame_iou),
            "per_frame_fscore": list(self.per_frame_fscore),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = [f"frames   {len(self.per_frame_iou)}",
                 f"mIoU     {self.miou:.4f}",
                 f"F-score  {self.fscore:.4f}"]
        return "\n".join(lines) + "\n"


def _mean(values) -> float:
    # fsum is correctly rounded, so the mean does not depend on frame order
    return math.fsum(values) / len(values)


def evaluate(cloud: GaussianCloud, seg: Segmentation,
             frames: Sequence[tuple[CameraPose, MaskImage]],
             render_cfg: RenderConfig = RenderConfig(),
             eval_cfg: EvalConfig = EvalConfig()) -> Metrics:
    if not frames:
        raise EmptyFrames("evaluation needs at least one frame")
    ious, fs = [], []
    for pose, gt in frames:
        pred = render_mask(cloud, seg, pose, render_cfg)
        ious.append(iou(pred, gt))
        fs.append(fscore(pred, gt, eval_cfg))
    return Metrics(_mean(ious), _mean(fs), ious, fs)


def split_indices(n: int) -> tuple[list[int], list[int]]:
    """Hold out every 8th frame (index % 8 == 0) for testing."""
    if n < 8:
        raise TooFewFrames(f"a 7:1 split needs at least 8 frames, got {n}")
    test = list(range(0, n, 8))
    train = [i for i in range(n) if i % 8]
    return train, test


def split_train_test(frames: Sequence) -> tuple[list, list]:
    train, test = split_indices(len(frames))
    return [frames[i] for i in train], [frames[i] for i in test]
