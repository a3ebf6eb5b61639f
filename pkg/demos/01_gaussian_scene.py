"""
Gaussian-splat scenes and cameras
=================================

Build a small cloud, write it as a 3D-GS PLY, read it back and project it
through a pinhole camera.
"""
import numpy as np

from echoseg.gs_scene import (
    CameraPose, GaussianCloud, parse_gsplat_ply, project_points, screen_covariances,
    write_gsplat_ply,
)

rng = np.random.default_rng(0)
n = 5
q = rng.normal(size=(n, 4))
cloud = GaussianCloud(
    centers=rng.normal(scale=0.3, size=(n, 3)) + [0, 2, 1],
    scales=np.exp(rng.uniform(-4, -2, size=(n, 3))),
    rotations=q / np.linalg.norm(q, axis=1, keepdims=True),
    opacities=rng.uniform(0.5, 1.0, n),
)

# stored values are log-scales and logit-opacities; the reader undoes both
data = write_gsplat_ply(cloud)
back = parse_gsplat_ply(data)
print(f"{len(data)} bytes, max center error {np.abs(back.centers - cloud.centers).max():.1e}")

# a camera at the origin looking along +y with z up
pose = CameraPose.look_at([0, 0, 1], [0, 2, 1], fx=100, fy=100, cx=80, cy=60,
                          width=160, height=120)
uv, depth, in_view = project_points(pose, back.centers)
for (u, v), z, ok in zip(uv, depth, in_view):
    print(f"u={u:7.2f} v={v:7.2f} depth={z:5.2f} in_view={ok}")

# the 2x2 image-space covariance is what the mask renderer splats
cov = screen_covariances(pose, back.centers, back.scales, back.rotations)
print("footprint std (px):", np.sqrt(np.diagonal(cov, axis1=1, axis2=2)).round(2))
