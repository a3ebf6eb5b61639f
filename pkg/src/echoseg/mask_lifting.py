"""Lift per-view binary masks onto Gaussians by visibility-aware voting.

Each Gaussian center is projected into every view. Views where the center is out
of view abstain; among the rest, the Gaussian is selected when the fraction of
votes landing inside the mask reaches ``tau_voting``.
"""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DimensionMismatch, EmptyViews, InputError, ParseError
from .gs_scene import CameraPose, GaussianCloud, project_points

MASK_PATTERN = "mask_{:05d}.pgm"


@dataclass(eq=False)
class MaskImage:
    data: np.ndarray  # (height, width) bool, row-major

    def __post_init__(self):
        self.data = np.asarray(self.data).astype(bool)
        if self.data.ndim != 2:
            raise InputError("mask data must be two-dimensional")

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    def __eq__(self, other):
        return isinstance(other, MaskImage) and np.array_equal(self.data, other.data)


def encode_pgm(mask: MaskImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(mask.data.astype(np.uint8) * 255, mode="L").save(buf, format="PPM")
    return buf.getvalue()


def decode_pgm(data: bytes) -> MaskImage:
    if not data.startswith(b"P5"):
        raise ParseError("expected a binary PGM (P5) image", 0)
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise ParseError(f"unreadable PGM: {exc}", 0) from None
    return MaskImage(np.asarray(img.convert("L")) >= 128)


def read_mask(path) -> MaskImage:
    with open(path, "rb") as f:
        return decode_pgm(f.read())


def write_mask(path, mask: MaskImage) -> None:
    with open(path, "wb") as f:
        f.write(encode_pgm(mask))


@dataclass(frozen=True)
class VotingConfig:
    tau_voting: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.tau_voting <= 1.0:
            raise InputError(f"tau_voting must lie in [0, 1], got {self.tau_voting}")


@dataclass(eq=False)
class Segmentation:
    """Sorted unique Gaussian indices. ``unrefined`` marks a refinement fallback."""

    selected: np.ndarray
    unrefined: bool = False

    def __post_init__(self):
        sel = np.unique(np.asarray(self.selected, dtype=np.int64).reshape(-1))
        if len(sel) and sel[0] < 0:
            raise InputError("segmentation indices must be non-negative")
        sel.setflags(write=False)
        self.selected = sel

    def __len__(self):
        return len(self.selected)

    def __contains__(self, i):
        j = np.searchsorted(self.selected, i)
        return j < len(self.selected) and self.selected[j] == i

    def __eq__(self, other):
        return isinstance(other, Segmentation) and np.array_equal(self.selected, other.selected)

    def as_set(self) -> set[int]:
        return set(int(i) for i in self.selected)

    def check(self, cloud: GaussianCloud) -> None:
        if len(self.selected) and self.selected[-1] >= len(cloud):
            raise InputError(
                f"segmentation index {self.selected[-1]} out of range for {len(cloud)} Gaussians")


def format_seg(seg: Segmentation) -> str:
    return "".join(f"{i}\n" for i in seg.selected)


def parse_seg(text: str) -> Segmentation:
    idx = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            idx.append(int(line))
        except ValueError:
            raise InputError(f".seg line {lineno}: expected an integer, got {line!r}") from None
    return Segmentation(idx)


def read_seg(path) -> Segmentation:
    with open(path) as f:
        return parse_seg(f.read())


def write_seg(path, seg: Segmentation) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(format_seg(seg))


class Vote(enum.Enum):
    IN_MASK = "InMask"
    IN_BACKGROUND = "InBackground"
    OUT_OF_VIEW = "OutOfView"


def _check_dims(pose: CameraPose, mask: MaskImage):
    if (mask.width, mask.height) != (pose.width, pose.height):
        raise DimensionMismatch(
            f"mask is {mask.width}x{mask.height}, camera is {pose.width}x{pose.height}")


def classify_centers(pose: CameraPose, mask: MaskImage, centers) -> np.ndarray:
    """Per-center vote codes: 1 in mask, 0 in background, -1 out of view."""
    _check_dims(pose, mask)
    uv, _, in_view = project_points(pose, centers)
    out = np.full(len(in_view), -1, dtype=np.int8)
    cols = np.floor(uv[in_view, 0]).astype(np.int64)
    rows = np.floor(uv[in_view, 1]).astype(np.int64)
    out[in_view] = mask.data[rows, cols]
    return out


def classify_projection(pose: CameraPose, mask: MaskImage, center) -> Vote:
    code = classify_centers(pose, mask, np.reshape(center, (1, 3)))[0]
    return {1: Vote.IN_MASK, 0: Vote.IN_BACKGROUND, -1: Vote.OUT_OF_VIEW}[int(code)]


@dataclass(frozen=True)
class VoteTally:
    in_mask: np.ndarray
    in_background: np.ndarray
    out_of_view: np.ndarray

    @property
    def visible(self) -> np.ndarray:
        return self.in_mask + self.in_background

    def select(self, tau_voting: float) -> Segmentation:
        visible = self.visible
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = self.in_mask / visible
        keep = (visible >= 1) & (ratio >= tau_voting)
        return Segmentation(np.flatnonzero(keep))


def tally_votes(cloud: GaussianCloud, views: Sequence[tuple[CameraPose, MaskImage]]) -> VoteTally:
    if not views:
        raise EmptyViews("voting needs at least one view")
    n = len(cloud)
    in_mask = np.zeros(n, dtype=np.int64)
    in_bg = np.zeros(n, dtype=np.int64)
    for pose, mask in views:
        codes = classify_centers(pose, mask, cloud.centers)
        in_mask += codes == 1
        in_bg += codes == 0
    return VoteTally(in_mask, in_bg, len(views) - in_mask - in_bg)


def vote(cloud: GaussianCloud, views: Sequence[tuple[CameraPose, MaskImage]],
         cfg: VotingConfig = VotingConfig()) -> Segmentation:
    return tally_votes(cloud, views).select(cfg.tau_voting)
