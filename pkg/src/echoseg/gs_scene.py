"""Gaussian scene model, 3D-GS PLY I/O and pinhole projection.

Cameras follow the COLMAP / 3D-GS convention: camera x points right, y down and
z forward. ``CameraPose.rotation_wc`` maps camera-frame vectors to world frame and
``CameraPose.position`` is the camera center in world coordinates.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, MissingProperty, NotVisible, ParseError, UnexpectedEof

SCALAR_PROPS = ("x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3")

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _frozen(a, dtype=np.float64, shape=None):
    a = np.array(a, dtype=dtype)
    if shape is not None:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Gaussian:
    center: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    opacity: float
    color_dc: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(eq=False)
class GaussianCloud:
    """Struct-of-arrays container; row ``i`` of every array is Gaussian ``i``.

    Arrays are made read-only on construction, so a cloud can be shared freely.
    ``intensity`` holds the per-Gaussian audio intensity label once computed.
    """

    centers: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors_dc: np.ndarray | None = None
    intensity: np.ndarray | None = None

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        n = len(centers)
        scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        opacities = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        colors = (np.zeros((n, 3)) if self.colors_dc is None
                  else np.asarray(self.colors_dc, dtype=np.float64).reshape(n, 3))
        if np.any(scales <= 0):
            raise InputError("Gaussian scales must be strictly positive")
        if np.any((opacities < 0) | (opacities > 1)):
            raise InputError("Gaussian opacities must lie in [0, 1]")
        norms = np.linalg.norm(rotations, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise InputError("zero-length rotation quaternion")
        self.centers = _frozen(centers)
        self.scales = _frozen(scales)
        self.rotations = _frozen(rotations / norms)
        self.opacities = _frozen(opacities)
        self.colors_dc = _frozen(colors)
        if self.intensity is not None:
            intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
            if len(intensity) != n:
                raise InputError(f"intensity has {len(intensity)} entries for {n} Gaussians")
            self.intensity = _frozen(intensity)

    def __len__(self):
        return len(self.centers)

    def __getitem__(self, i) -> Gaussian:
        return Gaussian(self.centers[i], self.scales[i], self.rotations[i],
                        float(self.opacities[i]), self.colors_dc[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_gaussians(cls, gaussians: Iterable[Gaussian]) -> "GaussianCloud":
        gs = list(gaussians)
        if not gs:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros(0))
        return cls(
            centers=[g.center for g in gs],
            scales=[g.scale for g in gs],
            rotations=[g.rotation for g in gs],
            opacities=[g.opacity for g in gs],
            colors_dc=[g.color_dc for g in gs],
        )

    def subset(self, indices) -> "GaussianCloud":
        idx = np.asarray(indices, dtype=np.int64)
        return GaussianCloud(
            self.centers[idx], self.scales[idx], self.rotations[idx], self.opacities[idx],
            self.colors_dc[idx], None if self.intensity is None else self.intensity[idx],
        )

    def with_intensity(self, intensity) -> "GaussianCloud":
        return GaussianCloud(self.centers, self.scales, self.rotations, self.opacities,
                             self.colors_dc, intensity)


class Visibility(enum.Enum):
    IN_VIEW = "InView"
    OUT_OF_VIEW = "OutOfView"


@dataclass(frozen=True)
class ProjectionResult:
    u: float
    v: float
    depth: float
    visibility: Visibility

    @property
    def in_view(self) -> bool:
        return self.visibility is Visibility.IN_VIEW


@dataclass(eq=False)
class CameraPose:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation_wc: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation_wc, dtype=np.float64).reshape(3, 3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or abs(np.linalg.det(R) - 1) > 1e-6:
            raise InputError("rotation_wc must be orthonormal with determinant +1")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise InputError("image width and height must be positive")
        self.fx, self.fy = float(self.fx), float(self.fy)
        self.cx, self.cy = float(self.cx), float(self.cy)
        self.width, self.height = int(self.width), int(self.height)
        self.rotation_wc = _frozen(R)
        self.position = _frozen(self.position, shape=3)

    @classmethod
    def look_at(cls, position, target, fx, fy, cx, cy, width, height,
                up=(0.0, 0.0, 1.0)) -> "CameraPose":
        """Camera at ``position`` looking at ``target`` with world ``up`` (z-up by default)."""
        position = np.asarray(position, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - position
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        n = np.linalg.norm(right)
        if n < 1e-9:
            raise InputError("viewing direction is parallel to the up vector")
        right /= n
        down = np.cross(forward, right)
        return cls(fx, fy, cx, cy, width, height,
                   np.column_stack([right, down, forward]), position)

    @property
    def right_axis(self) -> np.ndarray:
        return self.rotation_wc[:, 0]

    def world_to_camera(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.position) @ self.rotation_wc

    def camera_to_world(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_wc.T + self.position

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation_wc": [float(x) for x in self.rotation_wc.reshape(-1)],
            "position": [float(x) for x in self.position],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        try:
            return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"],
                       np.asarray(d["rotation_wc"], dtype=np.float64).reshape(3, 3),
                       d["position"])
        except KeyError as exc:
            raise InputError(f"pose record is missing field {exc.args[0]!r}") from None


def project_points(pose: CameraPose, points):
    """Vectorised projection.

    Returns ``(uv, depth, in_view)`` with shapes (N, 2), (N,) and (N,).
    """
    pc = pose.world_to_camera(np.atleast_2d(points))
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = pose.fx * pc[:, 0] / z + pose.cx
        v = pose.fy * pc[:, 1] / z + pose.cy
    in_view = (z > 0) & (u >= 0) & (u < pose.width) & (v >= 0) & (v < pose.height)
    return np.column_stack([u, v]), z, in_view


def project_point(pose: CameraPose, point) -> ProjectionResult:
    uv, z, in_view = project_points(pose, np.asarray(point, dtype=np.float64).reshape(1, 3))
    vis = Visibility.IN_VIEW if in_view[0] else Visibility.OUT_OF_VIEW
    return ProjectionResult(float(uv[0, 0]), float(uv[0, 1]), float(z[0]), vis)


def unproject(pose: CameraPose, u, v, depth) -> np.ndarray:
    x = (np.asarray(u) - pose.cx) * depth / pose.fx
    y = (np.asarray(v) - pose.cy) * depth / pose.fy
    return pose.camera_to_world(np.stack([x, y, np.broadcast_to(depth, np.shape(x))], axis=-1))


def quaternion_to_matrix(q) -> np.ndarray:
    """(…, 4) quaternions in (w, x, y, z) order to (…, 3, 3) rotation matrices."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def covariances_3d(scales, rotations) -> np.ndarray:
    R = quaternion_to_matrix(rotations)
    M = R * np.asarray(scales)[..., None, :]
    return M @ np.swapaxes(M, -1, -2)


def screen_covariances(pose: CameraPose, centers, scales, rotations) -> np.ndarray:
    """Project 3D covariances through the perspective Jacobian, (N, 2, 2) in pixels²."""
    pc = pose.world_to_camera(centers)
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    J = np.zeros((len(pc), 2, 3))
    J[:, 0, 0] = pose.fx / z
    J[:, 0, 2] = -pose.fx * x / (z * z)
    J[:, 1, 1] = pose.fy / z
    J[:, 1, 2] = -pose.fy * y / (z * z)
    T = J @ pose.rotation_wc.T
    cov = T @ covariances_3d(scales, rotations) @ np.swapaxes(T, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def project_covariance(pose: CameraPose, g: Gaussian) -> np.ndarray:
    if not project_point(pose, g.center).in_view:
        raise NotVisible("Gaussian center projects outside the view")
    return screen_covariances(pose, np.reshape(g.center, (1, 3)), np.reshape(g.scale, (1, 3)),
                              np.reshape(g.rotation, (1, 4)))[0]


# ---------------------------------------------------------------------------
# PLY

def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return np.log(p / (1 - p))


def _parse_header(data: bytes):
    if not data.startswith(b"ply\n"):
        raise ParseError("not a PLY file: expected 'ply' magic line", 0)
    offset = 4
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    while True:
        end = data.find(b"\n", offset)
        if end < 0:
            raise ParseError("header is not terminated by 'end_header'", offset)
        try:
            line = data[offset:end].decode("ascii").strip()
        except UnicodeDecodeError:
            raise ParseError("non-ASCII byte in header", offset) from None
        tokens = line.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            pass
        elif tokens[0] == "format":
            if len(tokens) != 3:
                raise ParseError(f"malformed format line {line!r}", offset)
            fmt = tokens[1]
        elif tokens[0] == "element":
            if len(tokens) != 3 or not re.fullmatch(r"\d+", tokens[2]):
                raise ParseError(f"malformed element line {line!r}", offset)
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property declared before any element", offset)
            if tokens[1] == "list":
                raise ParseError("list properties are not supported", offset)
            if len(tokens) != 3 or tokens[1] not in _PLY_TYPES:
                raise ParseError(f"malformed property line {line!r}", offset)
            elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]]))
        elif tokens[0] == "end_header":
            offset = end + 1
            break
        else:
            raise ParseError(f"unrecognised header keyword {tokens[0]!r}", offset)
        offset = end + 1
    if fmt != "binary_little_endian":
        raise ParseError(f"unsupported PLY format {fmt!r}; expected binary_little_endian", 0)
    return offset, elements


def parse_gsplat_ply(data: bytes) -> GaussianCloud:
    """Parse a binary little-endian 3D-GS PLY.

    Stored scales are log values and stored opacities are logits; both are
    activated here. Quaternions are normalised, ``f_rest_*`` and any other extra
    properties are skipped.
    """
    body_start, elements = _parse_header(bytes(data))
    if not elements or elements[0][0] != "vertex":
        raise ParseError("first element must be 'vertex'", 0)
    _, count, props = elements[0]
    names = [p[0] for p in props]
    for name in SCALAR_PROPS:
        if name not in names:
            raise MissingProperty(name)
    dtype = np.dtype([(name, "<" + t) for name, t in props])
    need = body_start + count * dtype.itemsize
    if len(data) < need:
        raise UnexpectedEof(
            f"vertex data truncated: need {need} bytes, have {len(data)}", len(data))
    rec = np.frombuffer(data, dtype=dtype, count=count, offset=body_start)

    def cols(*keys):
        return np.column_stack([rec[k].astype(np.float64) for k in keys])

    rot = cols("rot_0", "rot_1", "rot_2", "rot_3")
    if count and np.any(np.linalg.norm(rot, axis=1) == 0):
        raise ParseError("zero-length rotation quaternion in vertex data", body_start)
    return GaussianCloud(
        centers=cols("x", "y", "z"),
        scales=np.exp(cols("scale_0", "scale_1", "scale_2")),
        rotations=rot if count else np.zeros((0, 4)),
        opacities=_sigmoid(rec["opacity"].astype(np.float64)),
        colors_dc=cols("f_dc_0", "f_dc_1", "f_dc_2"),
    )


def write_gsplat_ply(cloud: GaussianCloud) -> bytes:
    """Serialise with the layout ``parse_gsplat_ply`` reads (float32, inverse-activated)."""
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in SCALAR_PROPS]
    header.append("end_header")
    rec = np.empty(n, dtype=np.dtype([(name, "<f4") for name in SCALAR_PROPS]))
    for i, k in enumerate("xyz"):
        rec[k] = cloud.centers[:, i]
        rec[f"scale_{i}"] = np.log(cloud.scales[:, i])
        rec[f"f_dc_{i}"] = cloud.colors_dc[:, i]
    rec["opacity"] = _logit(cloud.opacities)
    for i in range(4):
        rec[f"rot_{i}"] = cloud.rotations[:, i]
    return ("\n".join(header) + "\n").encode("ascii") + rec.tobytes()


def read_ply(path) -> GaussianCloud:
    with open(path, "rb") as f:
        return parse_gsplat_ply(f.read())


def write_ply(path, cloud: GaussianCloud) -> None:
    with open(path, "wb") as f:
        f.write(write_gsplat_ply(cloud))


def poses_to_json(poses: Sequence[CameraPose]) -> list[dict]:
    return [{"frame": i, **p.to_dict()} for i, p in enumerate(poses)]


def poses_from_json(records: Sequence[dict]) -> list[CameraPose]:
    records = sorted(records, key=lambda r: r.get("frame", 0))
    return [CameraPose.from_dict(r) for r in records]
