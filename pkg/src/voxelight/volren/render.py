"""High-level rendering entry points tying poses, BVH and marcher together."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..errors import ConfigError
from ..primitives import PrimitivePoses, oriented_box_aabbs
from .bvh import build_bvh, candidate_mask
from .camera import Camera, camera_rays
from .march import RenderGrid, render_rays


def candidate_pairs(poses: PrimitivePoses, origins: np.ndarray, dirs: np.ndarray, grid: RenderGrid, use_bvh: bool) -> np.ndarray | None:
    """BVH candidate mask, or None meaning every pair is tested."""
    if not use_bvh:
        return None
    lo, hi = oriented_box_aabbs(poses.t.data, poses.r.data, poses.s.data)
    bvh = build_bvh(lo, hi)
    return candidate_mask(bvh, origins, dirs, grid.t_far)


def render_scene(
    poses: PrimitivePoses,
    payload: ad.Tensor,
    origins: np.ndarray,
    dirs: np.ndarray,
    grid: RenderGrid,
    use_bvh: bool = True,
) -> ad.Tensor:
    """Render arbitrary rays; returns a [n_rays, 4] rgb + alpha tensor."""
    mask = candidate_pairs(poses, origins, dirs, grid, use_bvh)
    return render_rays(poses.t, poses.r, poses.s, payload, origins, dirs, grid, mask=mask)


def render_camera(
    poses: PrimitivePoses,
    payload: ad.Tensor,
    camera: Camera,
    grid: RenderGrid,
    use_bvh: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Full-frame inference render: (rgb [H,W,3], alpha [H,W]) numpy arrays."""
    if ad.active_tape() is not None:
        raise ConfigError("render_camera is inference-only; use render_scene under a tape")
    origins, dirs = camera_rays(camera, dtype=poses.t.data.dtype)
    out = render_scene(poses, payload, origins, dirs, grid, use_bvh=use_bvh)
    img = out.data.reshape(camera.height, camera.width, 4)
    return np.ascontiguousarray(img[:, :, :3]), np.ascontiguousarray(img[:, :, 3])
