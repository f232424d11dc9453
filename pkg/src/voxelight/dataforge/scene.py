"""Analytic stand-in subject: a deformable blob head with exact shading.

The surface is an ellipsoidal patch on a regular UV grid, deformed by
a small linear blendshape basis.  Shading is direct illumination only:
Lambertian plus Blinn-Phong per point light, inverse-square falloff,
and cast shadows from mesh self-occlusion.  Everything is a closed,
deterministic function of (expression params, head pose, camera,
lights), which is what makes it usable as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..primitives import TemplateMesh
from ..volren import Camera, camera_rays
from .rig import LightRig

_EPS_PARALLEL = 1e-12
_SHADOW_OFFSET = 1e-4


def _grid_faces(n: int) -> np.ndarray:
    faces = []
    for r in range(n):
        for c in range(n):
            a = r * (n + 1) + c
            b, d, e = a + 1, a + n + 1, a + n + 2
            faces.append([a, b, e])
            faces.append([a, e, d])
    return np.array(faces, dtype=np.int32)


@dataclass
class SyntheticScene:
    """Parametric subject; all fields derive deterministically from the seed."""

    n_grid: int = 12
    n_expressions: int = 4
    seed: int = 0
    light_power: float = 6.0
    shininess: float = 24.0

    base_vertices: np.ndarray = field(init=False)
    faces: np.ndarray = field(init=False)
    uvs: np.ndarray = field(init=False)
    blend_basis: np.ndarray = field(init=False)  # [E, V, 3]
    albedo: np.ndarray = field(init=False)  # [V, 3]
    specular: np.ndarray = field(init=False)  # [V]

    def __post_init__(self):
        if self.n_grid < 2:
            raise ConfigError("surface grid needs at least 2 cells per side")
        n = self.n_grid
        axis = np.linspace(0.0, 1.0, n + 1)
        uu, vv = np.meshgrid(axis, axis)
        u, v = uu.ravel(), vv.ravel()
        az = (u - 0.5) * 1.6
        el = (v - 0.5) * 1.8
        unit = np.stack(
            [np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)], axis=1
        )
        verts = unit * np.array([0.085, 0.115, 0.10])
        # nose bump on the front midline
        verts[:, 2] += 0.02 * np.exp(-(az**2 + (el + 0.15) ** 2) / 0.02)
        self.base_vertices = verts
        self.faces = _grid_faces(n)
        self.uvs = np.stack([u, v], axis=1)

        rng = np.random.default_rng(self.seed)
        normals = _vertex_normals(verts, self.faces)
        basis = np.zeros((self.n_expressions, len(verts), 3))
        for e in range(self.n_expressions):
            cu, cv = rng.uniform(0.2, 0.8, 2)
            sigma = rng.uniform(0.12, 0.25)
            amp = rng.uniform(0.008, 0.02) * (1 if e % 2 == 0 else -1)
            w = np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2 * sigma**2))
            basis[e] = amp * w[:, None] * normals
        self.blend_basis = basis

        tint = 0.85 + 0.15 * np.sin(6.0 * np.pi * u) * np.sin(4.0 * np.pi * v)
        self.albedo = np.clip(
            np.array([0.75, 0.58, 0.48]) * tint[:, None]
            + rng.normal(0.0, 0.02, (len(verts), 3)),
            0.05,
            0.95,
        )
        self.specular = 0.18 + 0.12 * np.sin(3.0 * np.pi * (u + v)) ** 2

    # -- deformation ---------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.base_vertices)

    def express(self, params: np.ndarray) -> np.ndarray:
        """Blend-deformed vertices; linear in params."""
        p = np.asarray(params, dtype=np.float64)
        if p.shape != (self.n_expressions,):
            raise ConfigError(f"expected {self.n_expressions} expression params, got {p.shape}")
        return self.base_vertices + np.einsum("e,evc->vc", p, self.blend_basis)

    def template_mesh(self) -> TemplateMesh:
        return TemplateMesh(
            vertices=self.base_vertices.astype(np.float32),
            faces=self.faces,
            uvs=self.uvs.astype(np.float32),
        )

    def to_dict(self) -> dict:
        return {
            "n_grid": self.n_grid,
            "n_expressions": self.n_expressions,
            "seed": self.seed,
            "light_power": self.light_power,
            "shininess": self.shininess,
        }

    @staticmethod
    def from_dict(d: dict) -> "SyntheticScene":
        return SyntheticScene(**d)


# ---------------------------------------------------------------------------
# motion curves


def expression_at(scene: SyntheticScene, frame_index: int, fps: float) -> np.ndarray:
    """Smooth periodic expression activity, deterministic per frame."""
    t = frame_index / fps
    e = np.arange(scene.n_expressions)
    freq = 0.23 + 0.11 * e
    phase = 1.7 * e
    return 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * t + phase)


def pose_at(frame_index: int, fps: float) -> tuple[np.ndarray, np.ndarray]:
    """Head pose: slow yaw/pitch sway and a millimeter-scale bob."""
    t = frame_index / fps
    axis_angle = np.array(
        [
            0.06 * np.sin(2.0 * np.pi * 0.17 * t + 0.3),
            0.22 * np.sin(2.0 * np.pi * 0.11 * t),
            0.03 * np.sin(2.0 * np.pi * 0.07 * t + 1.1),
        ]
    )
    translation = np.array(
        [
            0.004 * np.sin(2.0 * np.pi * 0.13 * t),
            0.003 * np.sin(2.0 * np.pi * 0.19 * t + 0.8),
            0.002 * np.sin(2.0 * np.pi * 0.10 * t + 2.0),
        ]
    )
    return axis_angle, translation


def rotation_matrix(axis_angle: np.ndarray) -> np.ndarray:
    w = np.asarray(axis_angle, dtype=np.float64)
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        return np.eye(3)
    k = w / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * (kx @ kx)


def apply_pose(verts: np.ndarray, axis_angle: np.ndarray, translation: np.ndarray) -> np.ndarray:
    return verts @ rotation_matrix(axis_angle).T + np.asarray(translation, dtype=np.float64)


def stabilize_camera(cam: Camera, axis_angle: np.ndarray, translation: np.ndarray) -> Camera:
    """Inverse head pose folded into the camera, aligning frames to the template."""
    r_inv = rotation_matrix(axis_angle).T
    return Camera(
        position=r_inv @ (cam.position - translation),
        rotation=r_inv @ cam.rotation,
        fov_y_deg=cam.fov_y_deg,
        width=cam.width,
        height=cam.height,
    )


def stabilize_point(point: np.ndarray, axis_angle: np.ndarray, translation: np.ndarray) -> np.ndarray:
    return rotation_matrix(axis_angle).T @ (np.asarray(point, dtype=np.float64) - translation)


# ---------------------------------------------------------------------------
# geometry queries


def _vertex_normals(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v0, v1, v2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    fn = np.cross(v1 - v0, v2 - v0)  # area-weighted
    out = np.zeros_like(verts)
    for col in range(3):
        np.add.at(out, faces[:, col], fn)
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return out / norm


def intersect_mesh(
    verts: np.ndarray, faces: np.ndarray, origins: np.ndarray, dirs: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest ray-triangle hits; returns (t, face index, barycentric uv).

    t is +inf and the face index -1 where a ray misses everything.
    """
    v0 = verts[faces[:, 0]]
    e1 = verts[faces[:, 1]] - v0
    e2 = verts[faces[:, 2]] - v0
    h = np.cross(dirs[:, None, :], e2[None, :, :])  # [R, F, 3]
    a = np.einsum("fc,rfc->rf", e1, h)
    ok = np.abs(a) > _EPS_PARALLEL
    inv = np.where(ok, 1.0 / np.where(ok, a, 1.0), 0.0)
    s = origins[:, None, :] - v0[None, :, :]
    u = inv * np.einsum("rfc,rfc->rf", s, h)
    q = np.cross(s, e1[None, :, :])
    v = inv * np.einsum("rc,rfc->rf", dirs, q)
    t = inv * np.einsum("fc,rfc->rf", e2, q)
    ok &= (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1.0 + 1e-12) & (t > 1e-9)
    t = np.where(ok, t, np.inf)
    best = np.argmin(t, axis=1)
    rows = np.arange(len(origins))
    t_best = t[rows, best]
    face = np.where(np.isfinite(t_best), best, -1)
    uv = np.stack([u[rows, best], v[rows, best]], axis=1)
    return t_best, face, uv


def _occluded(
    verts: np.ndarray,
    faces: np.ndarray,
    points: np.ndarray,
    normals: np.ndarray,
    light: np.ndarray,
) -> np.ndarray:
    """True where the segment point -> light is blocked by the mesh."""
    if len(points) == 0:
        return np.zeros(0, dtype=bool)
    to_light = light[None, :] - points
    dist = np.linalg.norm(to_light, axis=1)
    dirs = to_light / dist[:, None]
    origins = points + normals * _SHADOW_OFFSET
    t, _, _ = intersect_mesh(verts, faces, origins, dirs)
    return t < dist * (1.0 - 1e-9)


# ---------------------------------------------------------------------------
# shading


def shade_frame(
    scene: SyntheticScene,
    verts: np.ndarray,
    camera: Camera,
    rig: LightRig,
    light_index: int | None = None,
    light_position: np.ndarray | None = None,
    light_intensity: float = 1.0,
    reference_distance: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Render one view: (linear image [3, H, W], matte [H, W]) float32.

    light_index selects one rig light, None means all of them (the
    tracking-frame illumination); light_position overrides the rig for
    probe lights.  Output is linear radiance, unclipped.

    reference_distance, when set, replaces each surface point's true
    light distance in the inverse-square power term while shading and
    shadowing still follow the actual light position.  Close-light probe
    protocols use it so that comparisons isolate the spatially varying
    direction field from radial falloff.
    """
    if reference_distance is not None and reference_distance <= 0:
        raise ConfigError("reference distance must be positive")
    faces = scene.faces
    normals = _vertex_normals(verts, faces)
    origins, dirs = camera_rays(camera, dtype=np.float64)
    t, face, uv = intersect_mesh(verts, faces, origins, dirs)
    hit = face >= 0
    h_pix = np.flatnonzero(hit)
    image = np.zeros((len(origins), 3))
    if h_pix.size:
        f = face[h_pix]
        w = np.stack([1.0 - uv[h_pix, 0] - uv[h_pix, 1], uv[h_pix, 0], uv[h_pix, 1]], axis=1)
        points = origins[h_pix] + dirs[h_pix] * t[h_pix, None]
        n = np.einsum("pk,pkc->pc", w, normals[faces[f]])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        alb = np.einsum("pk,pkc->pc", w, scene.albedo[faces[f]])
        spec = np.einsum("pk,pk->p", w, scene.specular[faces[f]])
        view = -dirs[h_pix]

        if light_position is not None:
            lights = [(np.asarray(light_position, dtype=np.float64), light_intensity)]
        elif light_index is None:
            lights = [(rig.positions[i], rig.intensities[i]) for i in range(rig.n_lights)]
        else:
            if not 0 <= light_index < rig.n_lights:
                raise ConfigError(f"light index {light_index} outside rig of {rig.n_lights}")
            lights = [(rig.positions[light_index], rig.intensities[light_index])]

        shaded = np.zeros((h_pix.size, 3))
        for pos, inten in lights:
            to_l = pos[None, :] - points
            d2 = np.sum(to_l * to_l, axis=1)
            l = to_l / np.sqrt(d2)[:, None]
            ndl = np.maximum(np.einsum("pc,pc->p", n, l), 0.0)
            half = l + view
            half /= np.linalg.norm(half, axis=1, keepdims=True)
            ndh = np.maximum(np.einsum("pc,pc->p", n, half), 0.0)
            lit = ~_occluded(verts, faces, points, n, pos)
            denom = d2 if reference_distance is None else reference_distance**2
            power = scene.light_power * inten / denom * lit
            shaded += (power * ndl)[:, None] * alb / np.pi
            shaded += (power * spec * np.where(ndl > 0, ndh**scene.shininess, 0.0))[:, None]
        image[h_pix] = shaded
    h, wd = camera.height, camera.width
    img = image.reshape(h, wd, 3).transpose(2, 0, 1).astype(np.float32)
    matte = hit.reshape(h, wd).astype(np.float32)
    return img, matte
