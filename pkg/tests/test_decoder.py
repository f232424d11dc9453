"""Encoder, latent expansion, and the three decoder heads."""

import numpy as np
import pytest

import voxelight.autodiff as ad
from voxelight.decoder import (
    AvatarDecoder,
    DecoderConfig,
    ExpressionCode,
    MeshEncoder,
    OlatCodebook,
    kl_divergence,
    load_avatar,
    save_avatar,
)
from voxelight.errors import CheckpointError, ConfigError
from voxelight.primitives import TemplateMesh, assemble_poses, build_slot_anchors
from voxelight.volren import RenderGrid
from voxelight.volren.march import render_rays


def dome_mesh(n: int = 4, size: float = 2.0, seed: int = 0) -> TemplateMesh:
    """A bumpy (n+1)^2-vertex grid patch with a full [0,1]^2 uv atlas."""
    rng = np.random.default_rng(seed)
    axis = np.linspace(0.0, 1.0, n + 1)
    uu, vv = np.meshgrid(axis, axis)
    verts = np.stack(
        [uu.ravel() * size, vv.ravel() * size, rng.standard_normal((n + 1) ** 2) * 0.1],
        axis=1,
    ).astype(np.float32)
    faces = []
    for r in range(n):
        for c in range(n):
            a = r * (n + 1) + c
            b, d, e = a + 1, a + n + 1, a + n + 2
            faces.append([a, b, e])
            faces.append([a, e, d])
    uvs = np.stack([uu.ravel(), vv.ravel()], axis=1).astype(np.float32)
    return TemplateMesh(vertices=verts, faces=np.array(faces, dtype=np.int32), uvs=uvs)


def tiny_config(**kw) -> DecoderConfig:
    base = dict(n_side=4, voxel_res=4, appearance_channels=(12,))
    base.update(kw)
    return DecoderConfig(**base)


CAM = np.array([1.0, 1.0, -4.0])
LIGHT = np.array([3.0, 2.0, -2.0])


def build(config=None, dtype=np.float32, seed=0):
    mesh = dome_mesh()
    config = config or tiny_config()
    rng = np.random.default_rng(seed)
    enc = MeshEncoder(len(mesh.vertices), config, rng, dtype)
    dec = AvatarDecoder(config, mesh, rng, dtype)
    return mesh, enc, dec


# ---------------------------------------------------------------------------
# config plan


def test_desk_and_paper_plans_are_accepted():
    DecoderConfig()  # desk: 8 * 2^2 = 32 = 8 * 4
    DecoderConfig(
        n_side=64,
        voxel_res=16,
        appearance_channels=(256, 128, 128, 64, 64, 32, 48),
    )  # 8 * 2^7 = 1024 = 64 * 16


def test_layer_count_must_reach_slab_resolution():
    with pytest.raises(ConfigError):
        DecoderConfig(n_side=8, voxel_res=4, appearance_channels=(128, 64, 12))


def test_final_channel_counts_are_pinned():
    with pytest.raises(ConfigError):
        DecoderConfig(appearance_channels=(128, 48))  # 48 != 3 * 4
    with pytest.raises(ConfigError):
        DecoderConfig(opacity_channels=(128, 3))  # 3 != 4


def test_opacity_plan_defaults_to_appearance_trunk():
    cfg = DecoderConfig(appearance_channels=(128, 12))
    assert cfg.opacity_channels == (128, 4)


def test_codebook_and_distance_channels_conflict():
    with pytest.raises(ConfigError):
        tiny_config(codebook=True, distance_channels=True)


def test_direction_channel_arithmetic():
    assert tiny_config().direction_channels == 6
    assert tiny_config(distance_channels=True).direction_channels == 8
    assert tiny_config(codebook=True).direction_channels == 67


def test_config_dict_roundtrip():
    cfg = tiny_config(codebook=True, sh_order=3)
    assert DecoderConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------------------
# encoder


def test_identical_meshes_encode_to_identical_mu():
    mesh, enc, _ = build()
    a = enc(mesh.vertices)
    b = enc(mesh.vertices.copy())
    np.testing.assert_array_equal(a.mu.data, b.mu.data)


def test_latent_dimension_is_256_by_default():
    mesh, enc, _ = build(tiny_config(latent_dim=256))
    code = enc(mesh.vertices)
    assert code.mu.shape == (1, 256) and code.z.shape == (1, 256)


def test_inference_code_is_posterior_mean():
    mesh, enc, _ = build()
    code = enc(mesh.vertices)
    np.testing.assert_array_equal(code.z.data, code.mu.data)


def test_sampling_perturbs_with_unit_start_variance():
    mesh, enc, _ = build()
    rng_a = np.random.default_rng(5)
    rng_b = np.random.default_rng(5)
    a = enc(mesh.vertices, sample_rng=rng_a)
    b = enc(mesh.vertices, sample_rng=rng_b)
    np.testing.assert_array_equal(a.z.data, b.z.data)
    assert not np.array_equal(a.z.data, a.mu.data)
    # logvar head starts at zero: sampled z = mu + eps exactly
    eps = np.random.default_rng(5).standard_normal((1, enc.mu_head.bias.shape[0])).astype(np.float32)
    np.testing.assert_allclose(a.z.data, a.mu.data + eps, atol=1e-6)


def test_wrong_vertex_count_raises():
    mesh, enc, _ = build()
    with pytest.raises(ConfigError):
        enc(mesh.vertices[:-1])


def test_standard_normal_posterior_has_zero_kl():
    zeros = ad.Tensor(np.zeros((1, 16)))
    code = ExpressionCode(z=zeros, mu=zeros, logvar=ad.Tensor(np.zeros((1, 16))))
    assert kl_divergence(code).item() == 0.0


def test_kl_matches_closed_form():
    rng = np.random.default_rng(1)
    mu = rng.standard_normal((1, 8))
    lv = rng.standard_normal((1, 8)) * 0.5
    code = ExpressionCode(z=ad.Tensor(mu), mu=ad.Tensor(mu), logvar=ad.Tensor(lv))
    expect = 0.5 * np.mean(mu**2 + np.exp(lv) - 1.0 - lv)
    assert kl_divergence(code).item() == pytest.approx(expect, rel=1e-6)


# ---------------------------------------------------------------------------
# latent expansion


def test_expand_latent_shape_and_zero_map():
    _, _, dec = build()
    z = ad.Tensor(np.zeros((1, 256), dtype=np.float32))
    zmap = dec.expand_latent(z)
    assert zmap.shape == (256, 8, 8)
    np.testing.assert_array_equal(zmap.data, 0.0)  # bias starts at zero


def test_expand_latent_gradients():
    _, _, dec = build(dtype=np.float64)
    z = ad.parameter(np.random.default_rng(3).standard_normal((1, 256)))
    target = ad.Tensor(np.random.default_rng(4).standard_normal((256, 8, 8)))

    def f():
        return ad.mse(dec.expand_latent(z), target)

    assert ad.gradient_error(f, [z, dec.expand.weight], h=1e-6, max_entries=24) < 1e-6


# ---------------------------------------------------------------------------
# geometry head


def test_fresh_decoder_poses_sit_on_anchor_frames():
    mesh, enc, dec = build()
    code = enc(mesh.vertices)
    verts, poses = dec.decode_poses(code.z, dec.expand_latent(code.z))
    np.testing.assert_array_equal(verts.data, mesh.vertices)
    anchors = build_slot_anchors(mesh, dec.config.n_side)
    base = assemble_poses(ad.Tensor(mesh.vertices.copy()), anchors)
    np.testing.assert_allclose(poses.t.data, base.t.data, atol=1e-6)
    np.testing.assert_allclose(poses.r.data, base.r.data, atol=1e-6)
    np.testing.assert_allclose(poses.s.data, base.s.data, atol=1e-6)


def test_slot_count_is_grid_squared():
    _, enc, dec = build()
    mesh = dome_mesh()
    code = enc(mesh.vertices)
    _, poses = dec.decode_poses(code.z, dec.expand_latent(code.z))
    assert poses.n_slots == dec.config.n_side**2


def test_decoded_rotations_stay_orthonormal_after_training_noise():
    mesh, enc, dec = build()
    rng = np.random.default_rng(8)
    # knock the zero-initialized heads to simulate a trained state
    dec.geo_head.weight.data[:] = rng.standard_normal(dec.geo_head.weight.shape).astype(np.float32) * 0.2
    dec.geo_head.bias.data[:] = rng.standard_normal(dec.geo_head.bias.shape).astype(np.float32) * 0.2
    code = enc(mesh.vertices)
    _, poses = dec.decode_poses(code.z, dec.expand_latent(code.z))
    rr = np.einsum("kab,kcb->kac", poses.r.data, poses.r.data)
    np.testing.assert_allclose(rr, np.tile(np.eye(3, dtype=np.float32), (poses.n_slots, 1, 1)), atol=1e-5)
    assert np.all(poses.s.data > 0)


# ---------------------------------------------------------------------------
# appearance and opacity


def test_identical_inputs_decode_identically():
    mesh, enc, dec = build()
    code = enc(mesh.vertices)
    a = dec(code.z, CAM, LIGHT)
    b = dec(code.z, CAM, LIGHT)
    np.testing.assert_array_equal(a.payload.data, b.payload.data)
    np.testing.assert_array_equal(a.direction_map.data, b.direction_map.data)


def test_opacity_ignores_light_bitwise():
    mesh, enc, dec = build()
    code = enc(mesh.vertices)
    a = dec(code.z, CAM, LIGHT)
    b = dec(code.z, CAM, np.array([-5.0, 1.0, 3.0]))
    np.testing.assert_array_equal(a.payload.data[:, 3], b.payload.data[:, 3])
    assert not np.array_equal(a.payload.data[:, :3], b.payload.data[:, :3])


def test_opacity_ignores_view_bitwise():
    mesh, enc, dec = build()
    code = enc(mesh.vertices)
    a = dec(code.z, CAM, LIGHT)
    b = dec(code.z, np.array([-2.0, 0.5, -6.0]), LIGHT)
    np.testing.assert_array_equal(a.payload.data[:, 3], b.payload.data[:, 3])


def test_payload_shapes_and_nonnegative_alpha():
    mesh, enc, dec = build()
    code = enc(mesh.vertices)
    out = dec(code.z, CAM, LIGHT)
    k, m = dec.config.n_slots, dec.config.voxel_res
    assert out.payload.shape == (k, 4, m, m, m)
    assert out.direction_map.shape == (6, 16, 16)
    assert np.all(out.payload.data[:, 3] >= 0)
    assert np.all(out.payload.data[:, :3] >= 0)  # final relu


def test_direction_perturbation_stays_local_to_its_tile():
    # one upsampling layer: a change inside slot (0,0)'s tile can reach only
    # nearby output pixels through the triangle filter + 4x4 kernel
    mesh, enc, dec = build()
    code = enc(mesh.vertices)
    zmap = dec.expand_latent(code.z)
    rng = np.random.default_rng(12)
    dmap = ad.Tensor(rng.standard_normal((6, 16, 16)).astype(np.float32))
    bumped = dmap.data.copy()
    bumped[:, :4, :4] += 0.5
    a = dec.decode_payload(zmap, dmap)
    b = dec.decode_payload(zmap, ad.Tensor(bumped))
    diff = np.abs(a.data - b.data)
    changed_slots = {int(k) for k in np.nonzero(diff.reshape(16, -1).max(axis=1))[0]}
    assert 0 in changed_slots
    # slots in the far half of the grid cannot see the perturbation
    far = {r * 4 + c for r in range(2, 4) for c in range(2, 4)}
    assert changed_slots.isdisjoint(far)
    # opacity is independent of the direction map everywhere
    np.testing.assert_array_equal(a.data[:, 3], b.data[:, 3])


def test_decoder_gradients_reach_every_head():
    mesh, enc, dec = build()
    code_target = np.zeros((dec.config.n_slots, 4, 4, 4, 4), dtype=np.float32)
    with ad.Tape() as tape:
        code = enc(mesh.vertices)
        out = dec(code.z, CAM, LIGHT)
        loss = ad.mse(out.payload, ad.Tensor(code_target))
        tape.backward(loss)
    for name, p in [
        ("encoder fc1", enc.fc1.weight),
        ("expand", dec.expand.weight),
        ("mesh head", dec.mesh_out.weight),
        ("geometry head", dec.geo_head.weight),
        ("appearance conv", dec.appearance[-1].weight),
        ("opacity conv", dec.opacity[-1].weight),
    ]:
        assert p.grad is not None and np.any(p.grad != 0), f"no gradient at {name}"


def test_full_pipeline_gradcheck_float64():
    mesh, enc, dec = build(dtype=np.float64)
    code = enc(mesh.vertices.astype(np.float64))
    z = ad.parameter(code.z.data.copy())
    target = ad.Tensor(
        np.random.default_rng(9).standard_normal((dec.config.n_slots, 4, 4, 4, 4))
    )

    def f():
        return ad.mse(dec(z, CAM, LIGHT).payload, target)

    params = [z, dec.geo_head.weight, dec.appearance[0].weight, dec.opacity[0].weight]
    assert ad.gradient_error(f, params, h=1e-6, max_entries=12) < 1e-5


# ---------------------------------------------------------------------------
# end-to-end render differentiability


def test_render_loss_reaches_all_parameter_groups():
    mesh, enc, dec = build()
    xs = np.linspace(-0.2, 2.2, 4)
    ox, oy = np.meshgrid(xs, xs)
    origins = np.stack([ox.ravel(), oy.ravel(), np.full(16, -2.0)], axis=1).astype(np.float32)
    dirs = np.tile(np.array([[0.0, 0.0, 1.0]], dtype=np.float32), (16, 1))
    grid = RenderGrid(dt=0.1, n_samples=50)
    target = ad.Tensor(np.full((16, 4), 0.25, dtype=np.float32))
    with ad.Tape() as tape:
        code = enc(mesh.vertices)
        out = dec(code.z, CAM, LIGHT)
        pix = render_rays(out.poses.t, out.poses.r, out.poses.s, out.payload, origins, dirs, grid)
        loss = ad.mse(pix, target)
        tape.backward(loss)
    assert loss.item() > 0
    for name, p in [
        ("encoder", enc.fc1.weight),
        ("geometry", dec.geo_head.weight),
        ("appearance", dec.appearance[-1].weight),
        ("opacity", dec.opacity[-1].weight),
    ]:
        assert p.grad is not None and np.any(p.grad != 0), f"no gradient at {name}"


# ---------------------------------------------------------------------------
# olat codebook


def test_codebook_is_deterministic_and_sized():
    cfg = tiny_config(codebook=True)
    book = OlatCodebook(cfg, np.random.default_rng(0))
    d = np.array([0.3, -0.2, 0.9])
    a = book(d)
    b = book(d / np.linalg.norm(d))  # non-unit input normalized inside sh basis
    assert a.shape == (1, 64)
    np.testing.assert_array_equal(a.data, b.data)


def test_codebook_decoder_roundtrip_and_light_at_centroid_rejected():
    mesh, enc, dec = build(tiny_config(codebook=True))
    code = enc(mesh.vertices)
    out = dec(code.z, CAM, LIGHT)
    assert out.direction_map.shape == (67, 16, 16)
    centroid = mesh.vertices.mean(axis=0)
    with pytest.raises(ConfigError):
        dec(code.z, CAM, centroid)


def test_distance_channels_extend_the_map():
    mesh, enc, dec = build(tiny_config(distance_channels=True))
    code = enc(mesh.vertices)
    out = dec(code.z, CAM, LIGHT)
    assert out.direction_map.shape == (8, 16, 16)
    # distance channels hold |cam - center| and |light - center| per tile
    t = out.poses.t.data
    d_view = np.linalg.norm(CAM - t[0])
    assert out.direction_map.data[6, 0, 0] == pytest.approx(d_view, rel=1e-5)


# ---------------------------------------------------------------------------
# persistence


def test_save_load_roundtrip_is_bitwise(tmp_path):
    mesh, enc, dec = build()
    code = enc(mesh.vertices)
    before = dec(code.z, CAM, LIGHT).payload.data
    path = tmp_path / "avatar.ckpt"
    save_avatar(path, enc, dec, meta={"iteration": 7})
    enc2, dec2, meta = load_avatar(path, mesh)
    assert meta["iteration"] == 7
    code2 = enc2(mesh.vertices)
    np.testing.assert_array_equal(code2.mu.data, code.mu.data)
    after = dec2(code2.z, CAM, LIGHT).payload.data
    np.testing.assert_array_equal(after, before)


def test_load_rejects_foreign_container(tmp_path):
    path = tmp_path / "not_avatar.ckpt"
    ad.save_checkpoint(path, {"x": np.zeros(3, dtype=np.float32)}, meta={})
    with pytest.raises(CheckpointError):
        load_avatar(path, dome_mesh())
