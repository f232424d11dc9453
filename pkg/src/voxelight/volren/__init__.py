"""Cameras, BVH pruning and the differentiable primitive renderer."""

from .bvh import BVH, build_bvh, candidate_mask
from .camera import Camera, camera_rays, dolly_zoom_camera, look_at, orbit_camera
from .march import RenderGrid, grid_for_extents, ray_box_intervals, render_rays
from .render import candidate_pairs, render_camera, render_scene

__all__ = [
    "BVH",
    "Camera",
    "RenderGrid",
    "build_bvh",
    "camera_rays",
    "candidate_mask",
    "candidate_pairs",
    "dolly_zoom_camera",
    "grid_for_extents",
    "look_at",
    "orbit_camera",
    "ray_box_intervals",
    "render_camera",
    "render_rays",
    "render_scene",
]
