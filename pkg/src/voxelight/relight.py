"""Inference lighting control: environment compilation, compositing,
orbiting point lights, dolly zoom and nearfield lights.

Environment maps are lat-long grids: row 0 faces straight up (+y), the
last row straight down, and column azimuth sweeps from +z (the frontal
camera axis) toward +x.  Compilation bins the map into a set of
equal-solid-angle cells, masks and attenuates energy arriving from
behind, and the compositor replays the surviving cells as far point
lights whose renders are summed in image space.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .avatar import AvatarBundle
from .errors import ConfigError
from .imgio import load_image
from .volren import Camera, look_at

LUMINANCE_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])
BACK_CONE_COS = np.cos(np.pi / 4.0)
FAR_RADIUS_FACTOR = 100.0
DEFAULT_DIRECTIONS = 256
DEFAULT_CULL_FRACTION = 0.1


@dataclass
class EnvironmentMap:
    """Linear-RGB lat-long radiance grid plus a yaw (about +y) in radians."""

    radiance: np.ndarray
    yaw: float = 0.0
    name: str = ""

    def __post_init__(self):
        self.radiance = np.asarray(self.radiance, dtype=np.float64)
        if self.radiance.ndim != 3 or self.radiance.shape[0] != 3:
            raise ConfigError(f"environment radiance must be [3,H,W], got {self.radiance.shape}")
        h, w = self.radiance.shape[1:]
        if w != 2 * h or h < 1:
            raise ConfigError(f"lat-long grid needs width = 2 x height, got {h}x{w}")
        if not np.all(np.isfinite(self.radiance)) or np.any(self.radiance < 0):
            raise ConfigError("environment radiance must be finite and non-negative")
        self.yaw = float(self.yaw)

    @property
    def height(self) -> int:
        return self.radiance.shape[1]

    def rotated(self, yaw: float) -> "EnvironmentMap":
        return EnvironmentMap(radiance=self.radiance, yaw=self.yaw + yaw, name=self.name)


@dataclass
class CompiledLighting:
    """Far-field point lights standing in for an environment map."""

    directions: np.ndarray
    weights: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1, 3)
        if len(self.directions) != len(self.weights):
            raise ConfigError("one weight triple per direction")
        if len(self.directions):
            norms = np.linalg.norm(self.directions, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise ConfigError("compiled directions must be unit vectors")
            if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
                raise ConfigError("compiled weights must be finite and non-negative")

    def __len__(self) -> int:
        return len(self.directions)

    def total_energy(self) -> np.ndarray:
        return self.weights.sum(axis=0)

    def luminance(self) -> np.ndarray:
        return self.weights @ LUMINANCE_WEIGHTS

    def rotated(self, yaw: float) -> "CompiledLighting":
        return CompiledLighting(
            directions=self.directions @ _yaw_matrix(yaw).T,
            weights=self.weights,
            provenance={**self.provenance, "extra_yaw": yaw},
        )

    def to_dict(self) -> dict:
        return {
            "directions": self.directions.tolist(),
            "weights": self.weights.tolist(),
            "provenance": self.provenance,
        }

    @staticmethod
    def from_dict(d: dict) -> "CompiledLighting":
        return CompiledLighting(
            directions=np.array(d["directions"], dtype=np.float64).reshape(-1, 3),
            weights=np.array(d["weights"], dtype=np.float64).reshape(-1, 3),
            provenance=dict(d.get("provenance", {})),
        )


def _yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def latlong_directions(height: int, width: int) -> np.ndarray:
    """Unit direction of every pixel center, [H,W,3]."""
    theta = np.pi * (np.arange(height) + 0.5) / height
    phi = 2.0 * np.pi * (np.arange(width) + 0.5) / width
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    return np.stack(
        [
            np.broadcast_to(st * np.sin(phi)[None, :], (height, width)),
            np.broadcast_to(ct, (height, width)),
            np.broadcast_to(st * np.cos(phi)[None, :], (height, width)),
        ],
        axis=2,
    )


def latlong_solid_angles(height: int, width: int) -> np.ndarray:
    """Exact per-pixel solid angle, [H,W]; sums to 4 pi."""
    edges = np.cos(np.pi * np.arange(height + 1) / height)
    band = edges[:-1] - edges[1:]
    return np.broadcast_to((band * (2.0 * np.pi / width))[:, None], (height, width)).copy()


def direction_attenuation(directions: np.ndarray) -> np.ndarray:
    """Back-light falloff: 1 in front of the head (+z), 0 inside the 45
    degree cone around the back axis, and a smooth fourth-power ramp in
    between that reaches 1 exactly at the side plane."""
    d = np.asarray(directions, dtype=np.float64)
    flat = d.reshape(-1, 3)
    z = flat[:, 2] / np.linalg.norm(flat, axis=1)
    a = np.ones(len(flat))
    back = z < 0
    a[back] = (1.0 - z[back] ** 2) ** 2
    a[-z >= BACK_CONE_COS] = 0.0
    return a.reshape(d.shape[:-1])


def _partition_shape(target_count: int) -> tuple[int, int]:
    if target_count < 2:
        raise ConfigError("environment compilation needs at least two directions")
    rows = max(1, round(np.sqrt(target_count / 2.0)))
    cols = max(2, round(target_count / rows))
    return rows, cols


def _integrate_grid(radiance: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Exact solid-angle integral of a pixelwise-constant map over an
    equal-area (cos-theta x phi) partition; returns [rows*cols, 3]."""
    _, he, we = radiance.shape
    cell_cos = 1.0 - 2.0 * np.arange(rows + 1) / rows
    pix_cos = np.cos(np.pi * np.arange(he + 1) / he)
    overlap_rows = np.maximum(
        0.0,
        np.minimum(cell_cos[:-1, None], pix_cos[None, :-1])
        - np.maximum(cell_cos[1:, None], pix_cos[None, 1:]),
    )
    cell_phi = 2.0 * np.pi * np.arange(cols + 1) / cols
    pix_phi = 2.0 * np.pi * np.arange(we + 1) / we
    overlap_cols = np.maximum(
        0.0,
        np.minimum(cell_phi[1:, None], pix_phi[None, 1:])
        - np.maximum(cell_phi[:-1, None], pix_phi[None, :-1]),
    )
    cells = np.einsum("jr,crw,kw->jkc", overlap_rows, radiance, overlap_cols)
    return cells.reshape(rows * cols, 3)


def _partition_directions(rows: int, cols: int) -> np.ndarray:
    ct = 1.0 - (2.0 * np.arange(rows) + 1.0) / rows
    st = np.sqrt(np.maximum(0.0, 1.0 - ct**2))
    phi = 2.0 * np.pi * (np.arange(cols) + 0.5) / cols
    dirs = np.stack(
        [
            np.broadcast_to(st[:, None] * np.sin(phi)[None, :], (rows, cols)),
            np.broadcast_to(ct[:, None], (rows, cols)),
            np.broadcast_to(st[:, None] * np.cos(phi)[None, :], (rows, cols)),
        ],
        axis=2,
    ).reshape(-1, 3)
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def integrate_envmap(
    env: EnvironmentMap, target_count: int = DEFAULT_DIRECTIONS
) -> CompiledLighting:
    """Raw energy binning with no masking or culling; yaw rotates the
    emitted directions."""
    rows, cols = _partition_shape(target_count)
    weights = _integrate_grid(env.radiance, rows, cols)
    directions = _partition_directions(rows, cols) @ _yaw_matrix(env.yaw).T
    return CompiledLighting(
        directions=directions,
        weights=weights,
        provenance={"env": env.name, "yaw": env.yaw, "target_count": target_count, "masked": False},
    )


def compile_envmap(
    env: EnvironmentMap,
    target_count: int = DEFAULT_DIRECTIONS,
    cull_fraction: float = DEFAULT_CULL_FRACTION,
) -> CompiledLighting:
    """Environment map -> weighted far-light set.

    Pipeline order: exact equal-area binning of the raw radiance, drop
    the lowest-luminance tenth of the bins, zero bins inside the back
    cone, attenuate the remaining back-hemisphere bins, then apply yaw
    as a rigid rotation of the emitted directions.  Because yaw acts
    last, compiling a rotated map equals rotating a compiled one.
    """
    if not 0.0 <= cull_fraction < 1.0:
        raise ConfigError("cull fraction must be in [0, 1)")
    rows, cols = _partition_shape(target_count)
    weights = _integrate_grid(env.radiance, rows, cols)
    directions = _partition_directions(rows, cols)
    provenance = {
        "env": env.name,
        "yaw": env.yaw,
        "target_count": target_count,
        "cull_fraction": cull_fraction,
        "masked": True,
    }

    lum = weights @ LUMINANCE_WEIGHTS
    if lum.sum() <= 0.0:
        warnings.warn("environment map has no energy; compiled lighting is empty", stacklevel=2)
        return CompiledLighting(
            directions=np.zeros((0, 3)), weights=np.zeros((0, 3)), provenance=provenance
        )

    n_drop = int(np.floor(cull_fraction * len(directions)))
    if n_drop:
        keep = np.sort(np.argsort(lum, kind="stable")[n_drop:])
        directions, weights = directions[keep], weights[keep]
    weights = weights * direction_attenuation(directions)[:, None]
    directions = directions @ _yaw_matrix(env.yaw).T
    return CompiledLighting(directions=directions, weights=weights, provenance=provenance)


def load_envmap(path: str | Path, yaw: float = 0.0) -> EnvironmentMap:
    """Read a lat-long image file (linear float or PNG) as an environment."""
    img = load_image(path)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ConfigError(f"environment image must have 3 channels, got shape {img.shape}")
    return EnvironmentMap(
        radiance=np.ascontiguousarray(img.transpose(2, 0, 1)), yaw=yaw, name=Path(path).name
    )


# ---------------------------------------------------------------------------
# procedural environments (demo assets and test fixtures)


def uniform_envmap(height: int, value: float = 1.0, name: str = "uniform") -> EnvironmentMap:
    return EnvironmentMap(
        radiance=np.full((3, height, 2 * height), float(value)), yaw=0.0, name=name
    )


def sky_envmap(
    height: int,
    sun_direction=(0.4, 0.6, 0.7),
    sun_sharpness: float = 60.0,
    sun_power: float = 12.0,
    name: str = "sky",
) -> EnvironmentMap:
    """Soft vertical gradient plus one bright sun lobe."""
    dirs = latlong_directions(height, 2 * height)
    up = dirs[:, :, 1]
    sky = np.stack(
        [0.18 + 0.25 * (up + 1.0) / 2.0, 0.22 + 0.3 * (up + 1.0) / 2.0, 0.3 + 0.45 * (up + 1.0) / 2.0]
    )
    sun = np.asarray(sun_direction, dtype=np.float64)
    sun = sun / np.linalg.norm(sun)
    lobe = np.exp(sun_sharpness * (dirs @ sun - 1.0))
    warm = np.stack([1.0 * lobe, 0.9 * lobe, 0.7 * lobe]) * sun_power
    return EnvironmentMap(radiance=sky + warm, yaw=0.0, name=name)


# ---------------------------------------------------------------------------
# render protocols


def composite_renders(
    render_fn,
    camera: Camera,
    lighting: CompiledLighting,
    far_radius: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Core compositor loop: render_fn(light world position) -> (rgb, alpha).

    Zero-weight directions are skipped entirely; alpha comes from the
    first rendered direction (geometry does not depend on the light)."""
    if far_radius <= 0:
        raise ConfigError("far radius must be positive")
    acc = np.zeros((camera.height, camera.width, 3), dtype=np.float64)
    alpha = np.zeros((camera.height, camera.width), dtype=np.float32)
    seen = False
    for direction, weight in zip(lighting.directions, lighting.weights):
        if not np.any(weight > 0):
            continue
        img, a = render_fn(direction * far_radius)
        acc += img.astype(np.float64) * weight[None, None, :]
        if not seen:
            alpha, seen = a, True
    return acc.astype(np.float32), alpha


def relight_composite(
    bundle: AvatarBundle,
    vertices: np.ndarray,
    camera: Camera,
    lighting: CompiledLighting,
    far_radius: float | None = None,
    grid=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted image-space sum of one render per surviving direction."""
    if far_radius is None:
        far_radius = FAR_RADIUS_FACTOR * bundle.scene_extent()
    gain = bundle.calibration_gain

    def render_fn(light_position):
        return bundle.render(vertices, camera, light_position, gain=gain, grid=grid)

    return composite_renders(render_fn, camera, lighting, far_radius)


def orbit_protocol(
    bundle: AvatarBundle,
    vertices: np.ndarray,
    camera: Camera,
    radius: float = 3.0,
    steps: int = 24,
) -> list[np.ndarray]:
    """One point light circling the head in the horizontal plane; the
    first and last frames sit at the same angle (0 and 360 degrees)."""
    if radius <= 0 or steps < 2:
        raise ConfigError("orbit needs a positive radius and at least two steps")
    gain = bundle.calibration_gain
    frames = []
    for angle in np.linspace(0.0, 2.0 * np.pi, steps):
        light = radius * np.array([np.sin(angle), 0.0, np.cos(angle)])
        frames.append(bundle.render(vertices, camera, light, gain=gain)[0])
    return frames


def dolly_zoom(
    bundle: AvatarBundle,
    vertices: np.ndarray,
    base_camera: Camera,
    light_position: np.ndarray,
    start_distance: float,
    end_distance: float,
    steps: int = 8,
    height_fraction: float = 0.6,
    target=(0.0, 0.0, 0.0),
) -> tuple[list[np.ndarray], list[Camera]]:
    """Camera push with focal compensation: the subject's projected
    height stays a fixed fraction of the frame (tan(fov/2) * d constant)."""
    if start_distance <= 0 or end_distance <= 0:
        raise ConfigError("dolly distances must be positive")
    if steps < 1:
        raise ConfigError("dolly needs at least one step")
    if not 0 < height_fraction <= 1:
        raise ConfigError("height fraction must be in (0, 1]")
    target = np.asarray(target, dtype=np.float64).reshape(3)
    axis = base_camera.position - target
    norm = float(np.linalg.norm(axis))
    if norm == 0:
        raise ConfigError("base camera sits on the dolly target")
    axis = axis / norm
    subject_height = float(
        bundle.template.vertices[:, 1].max() - bundle.template.vertices[:, 1].min()
    )
    gain = bundle.calibration_gain
    frames: list[np.ndarray] = []
    cameras: list[Camera] = []
    for d in np.linspace(start_distance, end_distance, steps):
        fov = 2.0 * np.arctan(subject_height / (2.0 * height_fraction * d))
        fov_deg = float(np.rad2deg(fov))
        if not 0.01 <= fov_deg <= 179.0:
            warnings.warn(f"dolly fov {fov_deg:.2f} deg clamped", stacklevel=2)
            fov_deg = float(np.clip(fov_deg, 0.01, 179.0))
        cam = look_at(
            target + axis * d, target, fov_deg, base_camera.width, base_camera.height
        )
        cameras.append(cam)
        frames.append(bundle.render(vertices, cam, light_position, gain=gain)[0])
    return frames, cameras


def nearfield_point_light(
    bundle: AvatarBundle,
    vertices: np.ndarray,
    camera: Camera,
    light_position: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Single render with the true 3D light position driving per-
    primitive light directions (parallax included, no falloff)."""
    return bundle.render(
        vertices, camera, light_position, gain=bundle.calibration_gain
    )
