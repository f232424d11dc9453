"""Guide mesh and the grid of oriented volumetric primitives riding on it.

A square n x n grid of slots is laid over the mesh's UV atlas.  Each
slot anchors one box-shaped primitive: its position is a fixed
barycentric combination of guide vertices, its orientation the tangent
frame of the anchor triangle, and its rest half-extents come from the
world-space footprint of one UV cell.  Decoded per-slot deltas
(translation, axis-angle rotation, log scale) then refine the pose.
All pose assembly is differentiable through both the guide vertices and
the deltas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataFormatError


@dataclass
class TemplateMesh:
    """Rest-pose triangle mesh with a [0,1]^2 UV atlas."""

    vertices: np.ndarray  # [V, 3] float32
    faces: np.ndarray  # [F, 3] int32
    uvs: np.ndarray  # [V, 2] float32

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float32)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32)
        self.uvs = np.ascontiguousarray(self.uvs, dtype=np.float32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise DataFormatError(f"vertices must be [V,3], got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise DataFormatError(f"faces must be [F,3], got {self.faces.shape}")
        if self.uvs.shape != (self.vertices.shape[0], 2):
            raise DataFormatError(f"uvs must be [V,2] matching vertices, got {self.uvs.shape}")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise DataFormatError("face indices out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)


def save_template(path, mesh: TemplateMesh) -> None:
    """Compressed npz container so a template travels with checkpoints."""
    np.savez_compressed(path, vertices=mesh.vertices, faces=mesh.faces, uvs=mesh.uvs)


def load_template(path) -> TemplateMesh:
    with np.load(path) as blob:
        return TemplateMesh(vertices=blob["vertices"], faces=blob["faces"], uvs=blob["uvs"])


@dataclass(frozen=True)
class SlotAnchors:
    """Frozen binding of n_side^2 primitive slots to a template mesh."""

    n_side: int
    face_index: np.ndarray  # [K] int32, anchor triangle per slot
    bary: np.ndarray  # [K, 3] float64, barycentric weights inside it
    rest_scale: np.ndarray  # [K, 3] float32, frozen half-extents
    faces: np.ndarray  # [F, 3] int32, copy of template faces

    @property
    def n_slots(self) -> int:
        return self.n_side * self.n_side

    def corner_indices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        tri = self.faces[self.face_index]
        return tri[:, 0], tri[:, 1], tri[:, 2]


def _uv_barycentric(uv_tri: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points p [P,2] in triangles uv_tri [F,3,2].

    Returns [F, P, 3]; degenerate triangles yield -inf rows.
    """
    a, b, c = uv_tri[:, 0], uv_tri[:, 1], uv_tri[:, 2]
    v0 = b - a
    v1 = c - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    safe = np.abs(det) > 1e-14
    det = np.where(safe, det, 1.0)
    v2 = p[None, :, :] - a[:, None, :]
    w1 = (v2[..., 0] * v1[:, None, 1] - v2[..., 1] * v1[:, None, 0]) / det[:, None]
    w2 = (v0[:, None, 0] * v2[..., 1] - v0[:, None, 1] * v2[..., 0]) / det[:, None]
    w0 = 1.0 - w1 - w2
    out = np.stack([w0, w1, w2], axis=-1)
    out[~safe] = -np.inf
    return out


def build_slot_anchors(
    mesh: TemplateMesh,
    n_side: int,
    margin: float = 1.5,
    thickness: float = 0.6,
) -> SlotAnchors:
    """Bind each UV cell center to its containing (or nearest) triangle.

    Rest half-extents are margin * (world size of one UV cell) / 2 in
    the tangent plane and thickness times that along the normal.  Ties
    between containing triangles resolve to the lowest face index.
    """
    if n_side < 1:
        raise ConfigError("n_side must be at least 1")
    if margin <= 0 or thickness <= 0:
        raise ConfigError("margin and thickness must be positive")
    n = n_side
    rr, cc = np.divmod(np.arange(n * n), n)
    centers = np.stack([(cc + 0.5) / n, (rr + 0.5) / n], axis=1).astype(np.float64)

    uv_tri = mesh.uvs[mesh.faces].astype(np.float64)
    bary_all = _uv_barycentric(uv_tri, centers)  # [F, K, 3]
    inside = np.all(bary_all >= -1e-9, axis=-1)  # [F, K]

    face_index = np.full(n * n, -1, dtype=np.int32)
    bary = np.zeros((n * n, 3), dtype=np.float64)
    any_inside = inside.any(axis=0)
    first_face = np.argmax(inside, axis=0)
    for k in range(n * n):
        if any_inside[k]:
            f = int(first_face[k])
            face_index[k] = f
            bary[k] = bary_all[f, k]
        else:
            # fall back to the triangle whose clamped projection is closest
            w = np.clip(bary_all[:, k, :], 0.0, None)
            w_sum = w.sum(axis=1)
            w = w / np.where(w_sum > 0, w_sum, 1.0)[:, None]
            proj = np.einsum("fi,fid->fd", w, uv_tri)
            d2 = np.sum((proj - centers[k]) ** 2, axis=1)
            d2[~np.isfinite(bary_all[:, k, 0])] = np.inf
            f = int(np.argmin(d2))
            face_index[k] = f
            bary[k] = w[f]
    bary = np.clip(bary, 0.0, None)
    bary /= bary.sum(axis=1, keepdims=True)

    # world footprint of one UV cell on the anchor triangle
    tri = mesh.vertices[mesh.faces[face_index]].astype(np.float64)  # [K, 3, 3]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    duv1 = uv_tri[face_index, 1] - uv_tri[face_index, 0]
    duv2 = uv_tri[face_index, 2] - uv_tri[face_index, 0]
    det = duv1[:, 0] * duv2[:, 1] - duv1[:, 1] * duv2[:, 0]
    if np.any(np.abs(det) < 1e-14):
        raise DataFormatError("anchor triangle has a degenerate UV parameterization")
    # J columns are dP/du and dP/dv
    ju = (e1 * duv2[:, 1:2] - e2 * duv1[:, 1:2]) / det[:, None]
    jv = (e2 * duv1[:, 0:1] - e1 * duv2[:, 0:1]) / det[:, None]
    hu = np.linalg.norm(ju, axis=1) / (2.0 * n)
    hv = np.linalg.norm(jv, axis=1) / (2.0 * n)
    rest = np.stack([margin * hu, margin * hv, margin * thickness * 0.5 * (hu + hv)], axis=1)
    if np.any(rest <= 0):
        raise DataFormatError("degenerate anchor triangle produced a zero rest scale")
    return SlotAnchors(
        n_side=n,
        face_index=face_index,
        bary=bary,
        rest_scale=rest.astype(np.float32),
        faces=mesh.faces.copy(),
    )


def slot_base_frames(verts: ad.Tensor, anchors: SlotAnchors) -> tuple[ad.Tensor, ad.Tensor]:
    """Anchor position and tangent frame per slot, differentiable in verts.

    The frame's columns are (edge tangent, in-plane bitangent, normal);
    rigid motions of the vertices rotate it exactly.
    """
    ia, ib, ic = anchors.corner_indices()
    va = ad.gather_rows(verts, ia)
    vb = ad.gather_rows(verts, ib)
    vc = ad.gather_rows(verts, ic)
    dt = verts.data.dtype
    w = anchors.bary.astype(dt)
    w0 = ad.Tensor(np.repeat(w[:, 0:1], 3, axis=1))
    w1 = ad.Tensor(np.repeat(w[:, 1:2], 3, axis=1))
    w2 = ad.Tensor(np.repeat(w[:, 2:3], 3, axis=1))
    t_base = ad.add(ad.add(ad.mul(va, w0), ad.mul(vb, w1)), ad.mul(vc, w2))
    e1 = ad.sub(vb, va)
    e2 = ad.sub(vc, va)
    xhat = ad.normalize_rows(e1)
    nhat = ad.normalize_rows(ad.cross(e1, e2))
    yhat = ad.cross(nhat, xhat)
    k = anchors.n_slots
    r_base = ad.concat(
        [ad.reshape(xhat, (k, 3, 1)), ad.reshape(yhat, (k, 3, 1)), ad.reshape(nhat, (k, 3, 1))],
        axis=2,
    )
    return t_base, r_base


@dataclass
class PrimitivePoses:
    """World pose of every primitive: center, frame, half-extents."""

    t: ad.Tensor  # [K, 3]
    r: ad.Tensor  # [K, 3, 3], columns are box axes
    s: ad.Tensor  # [K, 3], positive half-extents

    @property
    def n_slots(self) -> int:
        return self.t.shape[0]


def assemble_poses(
    verts: ad.Tensor,
    anchors: SlotAnchors,
    shift: ad.Tensor | None = None,
    spin: ad.Tensor | None = None,
    logscale: ad.Tensor | None = None,
) -> PrimitivePoses:
    """Compose anchor frames with decoded per-slot deltas.

    shift is measured in rest half-extent units along the local frame;
    spin is an axis-angle vector; logscale multiplies the rest scale
    through exp.  All-zero deltas reproduce the anchors exactly.
    """
    k = anchors.n_slots
    dt = verts.data.dtype
    t_base, r_base = slot_base_frames(verts, anchors)
    rest = ad.Tensor(anchors.rest_scale.astype(dt))
    if shift is None and spin is None and logscale is None:
        return PrimitivePoses(t=t_base, r=r_base, s=rest)
    for d, nm in ((shift, "shift"), (spin, "spin"), (logscale, "logscale")):
        if d is None or d.shape != (k, 3):
            raise ConfigError(f"{nm} must be a [K,3] tensor when any delta is given")
    t = ad.add(t_base, ad.bmv(r_base, ad.mul(shift, rest)))
    r = ad.bmm(r_base, ad.rotation_from_axis_angle(spin))
    s = ad.mul(ad.exp(logscale), rest)
    return PrimitivePoses(t=t, r=r, s=s)


def oriented_box_aabbs(t: np.ndarray, r: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tight axis-aligned bounds of oriented boxes: t +- |R| s."""
    half = np.einsum("kab,kb->ka", np.abs(r), s)
    return t - half, t + half


def scene_extent(t: np.ndarray, r: np.ndarray, s: np.ndarray) -> float:
    """Diameter of the union of primitive bounds."""
    lo, hi = oriented_box_aabbs(t, r, s)
    return float(np.max(hi.max(axis=0) - lo.min(axis=0)))


# ---------------------------------------------------------------------------
# per-primitive direction conditioning

DEGENERATE_NORM = 1e-9


def _direction_difference(
    poses: PrimitivePoses, point: np.ndarray, center_mode: str
) -> ad.Tensor:
    k = poses.n_slots
    dt = poses.t.data.dtype
    p = np.broadcast_to(np.asarray(point, dtype=dt), (k, 3))
    if not np.all(np.isfinite(p)):
        raise ConfigError("direction target point must be finite")
    if center_mode == "center":
        ref = poses.t
    elif center_mode == "rotated":
        ref = ad.bmv(poses.r, poses.t)
    else:
        raise ConfigError(f"unknown center_mode {center_mode!r}")
    diff = ad.sub(ad.Tensor(np.ascontiguousarray(p)), ref)
    norms = np.linalg.norm(diff.data, axis=1)
    if np.any(norms < DEGENERATE_NORM):
        raise ConfigError("point coincides with a primitive center; direction undefined")
    return diff


def local_directions(
    poses: PrimitivePoses,
    point: np.ndarray,
    center_mode: str = "center",
) -> ad.Tensor:
    """Unit direction from every primitive toward a world point, [K, 3].

    center_mode "center" subtracts the posed primitive center.  Mode
    "rotated" subtracts R_k @ t_k instead; it is kept only for
    compatibility and is not rigid-motion invariant.
    """
    return ad.normalize_rows(_direction_difference(poses, point, center_mode))


def assemble_direction_map(
    poses: PrimitivePoses,
    cam_position: np.ndarray,
    light_position: np.ndarray,
    n_side: int,
    tile: int,
    center_mode: str = "center",
    light_code: ad.Tensor | None = None,
    include_distances: bool = False,
) -> ad.Tensor:
    """Per-slot view and light conditioning tiled into one UV-space image.

    Returns [6, n_side*tile, n_side*tile]: channels 0-2 hold the unit
    view direction of each slot repeated across its tile, channels 3-5
    the light direction.  include_distances appends the raw view and
    light distances as two extra channels.  When light_code is given
    (a [1, C] embedding) it replaces the light block entirely, giving
    3 + C channels.
    """
    if poses.n_slots != n_side * n_side:
        raise ConfigError(f"poses hold {poses.n_slots} slots, grid wants {n_side * n_side}")
    if light_code is not None and include_distances:
        raise ConfigError("distance channels and a light code cannot be combined")
    view_diff = _direction_difference(poses, cam_position, center_mode)
    parts = [ad.normalize_rows(view_diff)]
    if light_code is None:
        light_diff = _direction_difference(poses, light_position, center_mode)
        parts.append(ad.normalize_rows(light_diff))
        if include_distances:
            parts.append(ad.row_norms(view_diff))
            parts.append(ad.row_norms(light_diff))
    else:
        if light_code.data.ndim != 2 or light_code.shape[0] != 1:
            raise ConfigError("light_code must be [1, C]")
        parts.append(ad.gather_rows(light_code, np.zeros(poses.n_slots, dtype=np.int64)))
    per_slot = ad.concat(parts, axis=1)
    return ad.tile_slots(per_slot, n_side, tile)


def world_to_primitive(t: np.ndarray, r: np.ndarray, s: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Inverse pose map diag(1/s) R^T (x - t); box interior lands in [-1,1]^3."""
    return np.einsum("ab,a->b", r, np.asarray(x, dtype=t.dtype) - t) / s
