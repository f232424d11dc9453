"""Slot anchoring and differentiable pose assembly."""

import numpy as np
import pytest

import voxelight.autodiff as ad
from voxelight.errors import ConfigError
from voxelight.primitives import (
    PrimitivePoses,
    SlotAnchors,
    TemplateMesh,
    assemble_direction_map,
    assemble_poses,
    build_slot_anchors,
    local_directions,
    oriented_box_aabbs,
    scene_extent,
    slot_base_frames,
    world_to_primitive,
)

H = 1e-5
TOL = 1e-4


def planar_mesh(size: float = 2.0) -> TemplateMesh:
    """A flat square: world (x, y) spans [0, size]^2 at z=0, uv covers [0,1]^2."""
    verts = np.array(
        [[0, 0, 0], [size, 0, 0], [size, size, 0], [0, size, 0]],
        dtype=np.float32,
    )
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    uvs = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=np.float32)
    return TemplateMesh(vertices=verts, faces=faces, uvs=uvs)


def bumpy_mesh(seed: int = 0) -> TemplateMesh:
    mesh = planar_mesh()
    rng = np.random.default_rng(seed)
    verts = mesh.vertices.copy()
    verts[:, 2] += rng.standard_normal(len(verts)).astype(np.float32) * 0.3
    return TemplateMesh(vertices=verts, faces=mesh.faces, uvs=mesh.uvs)


def random_rotation(seed: int) -> np.ndarray:
    q = np.random.default_rng(seed).standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def test_anchor_positions_match_uv_cell_centers():
    mesh = planar_mesh(size=2.0)
    anchors = build_slot_anchors(mesh, n_side=4)
    verts = ad.Tensor(mesh.vertices.astype(np.float64))
    t_base, _ = slot_base_frames(verts, anchors)
    n = 4
    rr, cc = np.divmod(np.arange(n * n), n)
    expected = np.stack([(cc + 0.5) / n * 2.0, (rr + 0.5) / n * 2.0, np.zeros(n * n)], axis=1)
    np.testing.assert_allclose(t_base.data, expected, atol=1e-12)


def test_rest_scale_tracks_uv_cell_world_size():
    mesh = planar_mesh(size=2.0)
    anchors = build_slot_anchors(mesh, n_side=4, margin=1.5, thickness=0.6)
    # one uv cell spans 0.5 world units, half of that is 0.25
    np.testing.assert_allclose(anchors.rest_scale[:, 0], 1.5 * 0.25, rtol=1e-6)
    np.testing.assert_allclose(anchors.rest_scale[:, 1], 1.5 * 0.25, rtol=1e-6)
    np.testing.assert_allclose(anchors.rest_scale[:, 2], 1.5 * 0.6 * 0.25, rtol=1e-6)


def test_anchor_tie_on_shared_edge_prefers_lowest_face():
    mesh = planar_mesh()
    anchors = build_slot_anchors(mesh, n_side=1)
    # the single cell center (0.5, 0.5) lies exactly on the shared diagonal
    assert anchors.face_index[0] == 0


def test_frames_are_orthonormal_and_tangent():
    mesh = bumpy_mesh()
    anchors = build_slot_anchors(mesh, n_side=3)
    verts = ad.Tensor(mesh.vertices.astype(np.float64))
    _, r_base = slot_base_frames(verts, anchors)
    rot = r_base.data
    for k in range(anchors.n_slots):
        np.testing.assert_allclose(rot[k].T @ rot[k], np.eye(3), atol=1e-12)
        assert np.linalg.det(rot[k]) == pytest.approx(1.0, abs=1e-12)


def test_zero_deltas_reproduce_anchors_exactly():
    mesh = bumpy_mesh(1)
    anchors = build_slot_anchors(mesh, n_side=2)
    verts = ad.Tensor(mesh.vertices.astype(np.float64))
    k = anchors.n_slots
    zeros = ad.Tensor(np.zeros((k, 3), dtype=np.float64))
    base = assemble_poses(verts, anchors)
    posed = assemble_poses(verts, anchors, shift=zeros, spin=zeros, logscale=zeros)
    np.testing.assert_array_equal(base.t.data, posed.t.data)
    np.testing.assert_allclose(base.r.data, posed.r.data, atol=1e-15)
    np.testing.assert_array_equal(base.s.data, posed.s.data)


def test_rigid_motion_transforms_poses_exactly():
    mesh = bumpy_mesh(2)
    anchors = build_slot_anchors(mesh, n_side=3)
    r0 = random_rotation(7)
    t0 = np.array([0.3, -1.2, 2.0])
    v = mesh.vertices.astype(np.float64)
    moved = v @ r0.T + t0

    rng = np.random.default_rng(5)
    k = anchors.n_slots
    shift = ad.Tensor(rng.standard_normal((k, 3)) * 0.2)
    spin = ad.Tensor(rng.standard_normal((k, 3)) * 0.4)
    logs = ad.Tensor(rng.standard_normal((k, 3)) * 0.1)

    a = assemble_poses(ad.Tensor(v), anchors, shift=shift, spin=spin, logscale=logs)
    b = assemble_poses(ad.Tensor(moved), anchors, shift=shift, spin=spin, logscale=logs)
    np.testing.assert_allclose(b.t.data, a.t.data @ r0.T + t0, atol=1e-9)
    np.testing.assert_allclose(b.r.data, np.einsum("ab,kbc->kac", r0, a.r.data), atol=1e-9)
    np.testing.assert_allclose(b.s.data, a.s.data, atol=0.0)


def test_pose_assembly_finite_difference():
    mesh = bumpy_mesh(3)
    anchors = build_slot_anchors(mesh, n_side=2)
    k = anchors.n_slots
    rng = np.random.default_rng(11)
    verts = ad.parameter(mesh.vertices.astype(np.float64))
    shift = ad.parameter(rng.standard_normal((k, 3)) * 0.3)
    spin = ad.parameter(rng.standard_normal((k, 3)) * 0.5)
    logs = ad.parameter(rng.standard_normal((k, 3)) * 0.2)
    wt = ad.Tensor(rng.standard_normal((k, 3)))
    wr = ad.Tensor(rng.standard_normal((k, 3, 3)))
    ws = ad.Tensor(rng.standard_normal((k, 3)))

    def f():
        poses = assemble_poses(verts, anchors, shift=shift, spin=spin, logscale=logs)
        return ((poses.t * wt).sum() + (poses.r * wr).sum()) + (poses.s * ws).sum()

    assert ad.gradient_error(f, [verts, shift, spin, logs], h=H) < TOL


def test_aabbs_contain_all_box_corners():
    rng = np.random.default_rng(9)
    k = 12
    t = rng.standard_normal((k, 3))
    r = np.stack([random_rotation(i) for i in range(k)])
    s = rng.uniform(0.1, 0.8, (k, 3))
    lo, hi = oriented_box_aabbs(t, r, s)
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    for kk in range(k):
        world = t[kk] + (corners * s[kk]) @ r[kk].T
        assert np.all(world >= lo[kk] - 1e-12) and np.all(world <= hi[kk] + 1e-12)
    assert scene_extent(t, r, s) > 0


def test_uncovered_uv_cell_falls_back_to_nearest_triangle():
    # atlas only covers u in [0, 0.5]; right-hand cells must still bind
    verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=np.float32)
    faces = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    uvs = np.array([[0, 0], [0.5, 0], [0.5, 1], [0, 1]], dtype=np.float32)
    mesh = TemplateMesh(vertices=verts, faces=faces, uvs=uvs)
    anchors = build_slot_anchors(mesh, n_side=2)
    assert np.all(anchors.face_index >= 0)
    np.testing.assert_allclose(anchors.bary.sum(axis=1), 1.0, atol=1e-12)


def test_bad_delta_shapes_raise():
    mesh = planar_mesh()
    anchors = build_slot_anchors(mesh, n_side=2)
    verts = ad.Tensor(mesh.vertices)
    bad = ad.Tensor(np.zeros((3, 3), dtype=np.float32))
    with pytest.raises(ConfigError):
        assemble_poses(verts, anchors, shift=bad, spin=bad, logscale=bad)


# ---------------------------------------------------------------------------
# direction conditioning


def _poses(t, r=None, s=None):
    k = len(t)
    t = np.asarray(t, dtype=np.float64)
    r = np.tile(np.eye(3), (k, 1, 1)) if r is None else np.asarray(r, dtype=np.float64)
    s = np.full((k, 3), 0.2) if s is None else np.asarray(s, dtype=np.float64)
    return PrimitivePoses(t=ad.Tensor(t), r=ad.Tensor(r), s=ad.Tensor(s))


def test_direction_from_origin_is_normalized_point():
    poses = _poses([[0.0, 0.0, 0.0]])
    d = local_directions(poses, np.array([0.0, 0.0, 2.0]))
    np.testing.assert_allclose(d.data, [[0.0, 0.0, 1.0]], atol=1e-15)


def test_direction_subtracts_posed_center():
    poses = _poses([[1.0, 0.0, 0.0]])
    d = local_directions(poses, np.array([1.0, 0.0, 1.0]))
    np.testing.assert_allclose(d.data, [[0.0, 0.0, 1.0]], atol=1e-15)


def test_rotated_mode_matches_matrix_oracle():
    rng = np.random.default_rng(11)
    k = 6
    t = rng.standard_normal((k, 3))
    r = np.stack([random_rotation(40 + i) for i in range(k)])
    p = rng.standard_normal(3) * 3
    poses = _poses(t, r=r)
    d = local_directions(poses, p, center_mode="rotated")
    for kk in range(k):
        raw = p - r[kk] @ t[kk]
        np.testing.assert_allclose(d.data[kk], raw / np.linalg.norm(raw), atol=1e-12)


def test_coincident_point_raises():
    poses = _poses([[0.5, 0.5, 0.5]])
    with pytest.raises(ConfigError):
        local_directions(poses, np.array([0.5, 0.5, 0.5]))


def test_same_point_gives_same_view_and_light():
    poses = _poses([[0.0, 0.0, 0.0], [1.0, 2.0, -0.5]])
    p = np.array([3.0, 1.0, 4.0])
    v = local_directions(poses, p)
    l = local_directions(poses, p)
    np.testing.assert_array_equal(v.data, l.data)


def test_direction_map_single_slot_tiles_constant():
    poses = _poses([[0.0, 0.0, 0.0]])
    img = assemble_direction_map(
        poses, np.array([0.0, 0.0, -3.0]), np.array([2.0, 0.0, 0.0]), n_side=1, tile=2
    )
    assert img.shape == (6, 2, 2)
    np.testing.assert_allclose(
        img.data[:3], np.broadcast_to(np.array([0.0, 0.0, -1.0]).reshape(3, 1, 1), (3, 2, 2)), atol=1e-15
    )
    np.testing.assert_allclose(
        img.data[3:], np.broadcast_to(np.array([1.0, 0.0, 0.0]).reshape(3, 1, 1), (3, 2, 2)), atol=1e-15
    )
    # every column of a tile is identical
    assert np.all(img.data == img.data[:, :1, :1])


def test_direction_map_matches_per_slot_loop_oracle():
    rng = np.random.default_rng(5)
    n, m = 3, 2
    t = rng.standard_normal((n * n, 3))
    poses = _poses(t)
    cam = np.array([0.0, 0.0, -4.0])
    light = np.array([1.0, 3.0, -2.0])
    img = assemble_direction_map(poses, cam, light, n_side=n, tile=m)
    for row in range(n):
        for col in range(n):
            kk = row * n + col
            vd = cam - t[kk]
            ld = light - t[kk]
            expect = np.concatenate([vd / np.linalg.norm(vd), ld / np.linalg.norm(ld)])
            tile = img.data[:, row * m : (row + 1) * m, col * m : (col + 1) * m]
            np.testing.assert_allclose(
                tile, np.broadcast_to(expect.reshape(6, 1, 1), (6, m, m)), atol=1e-12
            )


def test_direction_map_is_bitwise_deterministic():
    rng = np.random.default_rng(9)
    poses = _poses(rng.standard_normal((4, 3)))
    cam = np.array([0.0, 1.0, -5.0])
    light = np.array([2.0, 2.0, -1.0])
    a = assemble_direction_map(poses, cam, light, n_side=2, tile=3)
    b = assemble_direction_map(poses, cam, light, n_side=2, tile=3)
    np.testing.assert_array_equal(a.data, b.data)


def test_direction_map_rigid_rotation_invariance():
    rng = np.random.default_rng(21)
    k = 4
    t = rng.standard_normal((k, 3))
    r = np.stack([random_rotation(70 + i) for i in range(k)])
    cam = np.array([0.2, -1.0, -4.0])
    light = np.array([3.0, 2.0, 1.0])
    q = random_rotation(99)
    a = assemble_direction_map(_poses(t, r=r), cam, light, n_side=2, tile=2)
    b = assemble_direction_map(
        _poses(t @ q.T, r=np.einsum("ab,kbc->kac", q, r)), q @ cam, q @ light, n_side=2, tile=2
    )
    rotated = np.einsum("ab,bhw->ahw", q, a.data[:3])
    np.testing.assert_allclose(b.data[:3], rotated, atol=1e-9)
    rotated_l = np.einsum("ab,bhw->ahw", q, a.data[3:])
    np.testing.assert_allclose(b.data[3:], rotated_l, atol=1e-9)


def test_light_code_replaces_light_channels():
    poses = _poses([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]])
    code = ad.Tensor(np.arange(5, dtype=np.float64).reshape(1, 5))
    img = assemble_direction_map(
        poses, np.array([0.0, 0.0, -3.0]), np.array([9.0, 9.0, 9.0]),
        n_side=2, tile=2, light_code=code,
    )
    assert img.shape == (8, 4, 4)
    np.testing.assert_array_equal(img.data[3:], np.broadcast_to(np.arange(5.0).reshape(5, 1, 1), (5, 4, 4)))


def test_direction_map_gradients_flow_to_centers():
    rng = np.random.default_rng(2)
    t = ad.parameter(rng.standard_normal((4, 3)))
    s = ad.Tensor(np.full((4, 3), 0.2))
    r = ad.Tensor(np.tile(np.eye(3), (4, 1, 1)))
    cam = np.array([0.0, 0.0, -4.0])
    light = np.array([2.0, 1.0, -3.0])
    target = ad.Tensor(rng.standard_normal((6, 4, 4)))

    def f():
        poses = PrimitivePoses(t=t, r=r, s=s)
        return ad.mse(assemble_direction_map(poses, cam, light, n_side=2, tile=2), target)

    assert ad.gradient_error(f, [t], h=H) < TOL


def test_world_to_primitive_inverse_pose():
    t = np.array([0.3, -0.2, 1.0])
    r = random_rotation(55)
    s = np.array([0.5, 0.25, 2.0])
    np.testing.assert_allclose(world_to_primitive(t, r, s, t), np.zeros(3), atol=1e-15)
    np.testing.assert_allclose(
        world_to_primitive(t, np.eye(3), np.ones(3), t + np.array([1.0, 0, 0])),
        [1.0, 0.0, 0.0],
        atol=1e-15,
    )
    local = np.array([0.4, -0.9, 0.1])
    world = t + r @ (local * s)
    np.testing.assert_allclose(world_to_primitive(t, r, s, world), local, atol=1e-12)


def test_colocated_primitives_downsample_to_global_direction():
    # all primitives at nearly one point: the map collapses to the global direction
    for extent, tol in ((0.1, 0.05), (0.01, 0.005), (0.001, 0.0005)):
        rng = np.random.default_rng(31)
        t = rng.uniform(-extent, extent, (4, 3))
        poses = _poses(t)
        cam = np.array([0.0, 0.0, -5.0])
        img = assemble_direction_map(poses, cam, cam, n_side=2, tile=2)
        down = img.data[:3].mean(axis=(1, 2))
        assert np.max(np.abs(down - np.array([0.0, 0.0, -1.0]))) < tol
