"""Pinhole cameras and their pixel-center ray bundles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class Camera:
    """Camera-to-world frame; rotation columns are (right, down, forward)."""

    position: np.ndarray  # [3]
    rotation: np.ndarray  # [3, 3]
    fov_y_deg: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        if not (0.0 < self.fov_y_deg < 180.0):
            raise ConfigError(f"vertical fov {self.fov_y_deg} is outside (0, 180)")
        if self.width < 1 or self.height < 1:
            raise ConfigError("image must be at least 1x1")
        if not np.allclose(self.rotation.T @ self.rotation, np.eye(3), atol=1e-6):
            raise ConfigError("camera rotation is not orthonormal")

    @property
    def n_rays(self) -> int:
        return self.width * self.height

    def to_dict(self) -> dict:
        return {
            "position": self.position.tolist(),
            "rotation": self.rotation.tolist(),
            "fov_y_deg": self.fov_y_deg,
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(
            position=np.asarray(d["position"], dtype=np.float64),
            rotation=np.asarray(d["rotation"], dtype=np.float64),
            fov_y_deg=float(d["fov_y_deg"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


def look_at(
    position,
    target,
    fov_y_deg: float,
    width: int,
    height: int,
    up=(0.0, 1.0, 0.0),
) -> Camera:
    position = np.asarray(position, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    up = np.asarray(up, dtype=np.float64).reshape(3)
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise ConfigError("camera target coincides with its position")
    forward = forward / norm
    right = np.cross(up, forward)
    rnorm = np.linalg.norm(right)
    if rnorm < 1e-12:
        raise ConfigError("camera up direction is parallel to the view direction")
    right = right / rnorm
    down = np.cross(right, forward)
    rotation = np.stack([right, down, forward], axis=1)
    return Camera(position=position, rotation=rotation, fov_y_deg=fov_y_deg, width=width, height=height)


def camera_rays(cam: Camera, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Unit rays through pixel centers, row-major: index = row * width + col."""
    f = 0.5 * cam.height / np.tan(np.deg2rad(cam.fov_y_deg) * 0.5)
    cols, rows = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    x = (cols.reshape(-1) + 0.5 - 0.5 * cam.width) / f
    y = (rows.reshape(-1) + 0.5 - 0.5 * cam.height) / f
    d_cam = np.stack([x, y, np.ones_like(x)], axis=1)
    d_world = d_cam @ cam.rotation.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.position, d_world.shape).copy()
    return origins.astype(dtype), d_world.astype(dtype)


def orbit_camera(
    target,
    radius: float,
    azimuth_deg: float,
    elevation_deg: float = 0.0,
    fov_y_deg: float = 35.0,
    width: int = 64,
    height: int = 64,
) -> Camera:
    """Camera on a sphere around a target; azimuth 0 looks down -z toward it."""
    if radius <= 0:
        raise ConfigError("orbit radius must be positive")
    target = np.asarray(target, dtype=np.float64).reshape(3)
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    offset = np.array(
        [np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)],
        dtype=np.float64,
    )
    return look_at(target + radius * offset, target, fov_y_deg, width, height)


def dolly_zoom_camera(base: Camera, target, distance: float) -> Camera:
    """Move the camera along its axis, widening fov to keep framing fixed.

    tan(fov/2) * distance stays constant, so the target-plane footprint
    does not change while perspective distortion does.
    """
    if distance <= 0:
        raise ConfigError("dolly distance must be positive")
    target = np.asarray(target, dtype=np.float64).reshape(3)
    d0 = float(np.linalg.norm(target - base.position))
    if d0 == 0:
        raise ConfigError("camera sits on the dolly target")
    k = np.tan(np.deg2rad(base.fov_y_deg) * 0.5) * d0
    fov = 2.0 * np.rad2deg(np.arctan(k / distance))
    direction = (base.position - target) / d0
    return Camera(
        position=target + direction * distance,
        rotation=base.rotation,
        fov_y_deg=fov,
        width=base.width,
        height=base.height,
    )
