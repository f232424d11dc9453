"""Capture rig layout: light positions and calibrated cameras."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..volren import Camera, look_at


@dataclass
class LightRig:
    """Point lights on the frontal hemisphere plus held-out probe positions."""

    positions: np.ndarray  # [K, 3] meters, rig frame (head at origin, +z toward cameras)
    intensities: np.ndarray  # [K] linear scale, ground truth 1.0
    heldout_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.intensities = np.asarray(self.intensities, dtype=np.float64)
        self.heldout_positions = np.asarray(self.heldout_positions, dtype=np.float64)
        k = len(self.positions)
        if k < 4:
            raise ConfigError("a rig needs at least four lights")
        if self.intensities.shape != (k,):
            raise ConfigError("one intensity per light")
        d = np.linalg.norm(self.positions[:, None] - self.positions[None], axis=2)
        if np.any(d[~np.eye(k, dtype=bool)] < 1e-9):
            raise ConfigError("light positions must be distinct")

    @property
    def n_lights(self) -> int:
        return len(self.positions)

    def to_dict(self) -> dict:
        return {
            "positions": self.positions.tolist(),
            "intensities": self.intensities.tolist(),
            "heldout_positions": self.heldout_positions.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "LightRig":
        return LightRig(
            positions=np.array(d["positions"], dtype=np.float64),
            intensities=np.array(d["intensities"], dtype=np.float64),
            heldout_positions=np.array(d["heldout_positions"], dtype=np.float64),
        )


def _hemisphere_ring_points(radius: float) -> np.ndarray:
    """16 directions on the frontal (+z) side: arcs of 6/6/3 at rising
    elevation plus one near-top light.  Azimuth stays within +-70 degrees of
    the camera axis so every light faces the subject."""
    pts = []
    for elev_deg, count, half_span in ((8.0, 6, 70.0), (32.0, 6, 58.0), (56.0, 3, 40.0)):
        el = np.deg2rad(elev_deg)
        for az_deg in np.linspace(-half_span, half_span, count):
            az = np.deg2rad(az_deg)
            pts.append([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])
    pts.append([0.0, 0.85, 0.6])
    arr = np.array(pts, dtype=np.float64)
    arr /= np.linalg.norm(arr, axis=1, keepdims=True)
    return arr * radius


def desk_rig(radius: float = 2.5, n_heldout: int = 3, seed: int = 7) -> LightRig:
    """16 frontal training lights; held-out probes sit between them,
    pulled slightly toward the rig centroid so they land strictly inside
    the training directions' coverage, never on a triangulation edge."""
    positions = _hemisphere_ring_points(radius)
    mean_dir = positions.mean(axis=0)
    mean_dir /= np.linalg.norm(mean_dir)
    rng = np.random.default_rng(seed)
    held = []
    for _ in range(n_heldout):
        i, j = rng.choice(len(positions), size=2, replace=False)
        mid = 0.55 * positions[i] / radius + 0.35 * positions[j] / radius + 0.10 * mean_dir
        held.append(mid / np.linalg.norm(mid) * radius)
    return LightRig(
        positions=positions,
        intensities=np.ones(len(positions)),
        heldout_positions=np.array(held),
    )


def desk_cameras(
    width: int = 64, height: int = 64, distance: float = 3.2, fov_y_deg: float = 7.0
) -> list[Camera]:
    """Four calibrated views: frontal, left, right, high."""
    target = np.zeros(3)
    views = []
    for az_deg, el_deg in ((0.0, 0.0), (-25.0, 2.0), (25.0, 2.0), (0.0, 20.0)):
        az, el = np.deg2rad(az_deg), np.deg2rad(el_deg)
        offset = np.array([np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])
        views.append(
            look_at(
                target + offset * distance,
                target,
                fov_y_deg=fov_y_deg,
                width=width,
                height=height,
            )
        )
    return views
