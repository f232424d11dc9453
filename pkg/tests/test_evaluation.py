"""Metrics, scale matching, barycentric baseline and holdout reports."""

import numpy as np
import pytest

from voxelight.avatar import AvatarBundle
from voxelight.dataforge import LightRig, SyntheticScene, desk_cameras, desk_rig, generate_dataset
from voxelight.decoder import DecoderConfig
from voxelight.errors import ConfigError
from voxelight.evaluation import (
    BarycentricBasis,
    HoldoutSpec,
    barycentric_relight,
    evaluate,
    extrapolation_probe,
    mae,
    metrics,
    psnr,
    scale_match,
    ssim,
)
from voxelight.training import AvatarTrainer, TrainConfig, template_from_dataset

# ---------------------------------------------------------------------------
# metrics


def test_identical_images_hit_metric_extremes():
    img = np.random.default_rng(0).random((16, 16, 3))
    m = metrics(img, img)
    assert m.psnr == 99.0
    assert m.mae == 0.0 and m.mae_x100 == 0.0
    assert abs(m.ssim - 1.0) < 1e-12


def test_constant_offset_gives_exact_psnr():
    gt = np.random.default_rng(1).random((12, 12, 3)) * 0.5
    assert abs(psnr(gt + 0.1, gt) - 20.0) < 1e-9


def test_psnr_monotone_in_noise_amplitude():
    rng = np.random.default_rng(2)
    gt = rng.random((14, 14, 3))
    noise = rng.standard_normal(gt.shape)
    values = [psnr(gt + a * noise, gt) for a in (0.01, 0.03, 0.1, 0.3)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_mae_matches_numpy_and_scaling():
    rng = np.random.default_rng(3)
    a, b = rng.random((9, 9, 3)), rng.random((9, 9, 3))
    expect = np.abs(a - b).mean()
    assert abs(mae(a, b) - expect) < 1e-12
    m = metrics(np.zeros((16, 16)), np.full((16, 16), 0.02))
    assert abs(m.mae_x100 - 2.0) < 1e-12


def test_shape_mismatch_rejected():
    with pytest.raises(ConfigError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(ConfigError):
        metrics(np.zeros((16, 16, 3)), np.zeros((16, 16)))


def _ssim_loop_oracle(x: np.ndarray, y: np.ndarray) -> float:
    """Brute-force windowed SSIM: explicit loops, Gaussian 11x11 weights."""
    g = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5**2))
    g /= g.sum()
    w2 = np.outer(g, g)
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            wx = x[i : i + 11, j : j + 11]
            wy = y[i : i + 11, j : j + 11]
            mx, my = (w2 * wx).sum(), (w2 * wy).sum()
            vx = (w2 * wx * wx).sum() - mx * mx
            vy = (w2 * wy * wy).sum() - my * my
            cxy = (w2 * wx * wy).sum() - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_ssim_matches_loop_oracle():
    rng = np.random.default_rng(4)
    x = rng.random((16, 18))
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    assert abs(ssim(x, y) - _ssim_loop_oracle(x, y)) < 1e-10


def test_ssim_matches_reference_implementation():
    skimage_metrics = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(5)
    x = rng.random((24, 24, 3))
    y = np.clip(x + 0.2 * rng.standard_normal(x.shape), 0, 1)
    ref = skimage_metrics.structural_similarity(
        x,
        y,
        data_range=1.0,
        channel_axis=2,
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        win_size=11,
    )
    assert abs(ssim(x, y) - ref) < 1e-6


def test_ssim_self_is_one_and_needs_window():
    img = np.random.default_rng(6).random((11, 11))
    assert abs(ssim(img, img) - 1.0) < 1e-12
    with pytest.raises(ConfigError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


# ---------------------------------------------------------------------------
# scale matching


def test_scale_match_halves_doubled_prediction():
    gt = np.random.default_rng(7).random((10, 10, 3)) + 0.1
    out = scale_match(2.0 * gt, gt)
    assert abs(out.scale - 0.5) < 1e-12 and not out.skipped
    np.testing.assert_allclose(out.image, gt, atol=1e-12)
    assert abs(scale_match(gt, gt).scale - 1.0) < 1e-12


def test_scale_match_minimizes_l2_vs_grid_search():
    rng = np.random.default_rng(8)
    pred, gt = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    out = scale_match(pred, gt)
    best_mse = np.mean((out.image - gt) ** 2)
    for s in np.linspace(0.0, 3.0, 3001):
        assert best_mse <= np.mean((s * pred - gt) ** 2) + 1e-12


def test_scale_match_never_degrades_mse():
    rng = np.random.default_rng(9)
    for _ in range(20):
        pred, gt = rng.random((8, 8)), rng.random((8, 8))
        out = scale_match(pred, gt)
        assert np.mean((out.image - gt) ** 2) <= np.mean((pred - gt) ** 2) + 1e-15


def test_scale_match_edge_cases():
    gt = np.ones((4, 4))
    out = scale_match(np.zeros((4, 4)), gt)
    assert out.skipped and out.scale == 1.0 and not out.image.any()
    with pytest.raises(ConfigError):
        scale_match(np.ones((4, 4)), np.zeros((4, 4)))


# ---------------------------------------------------------------------------
# barycentric baseline


@pytest.fixture(scope="module")
def desk_basis():
    rig = desk_rig()
    dirs = rig.positions / np.linalg.norm(rig.positions, axis=1, keepdims=True)
    return BarycentricBasis.from_directions(dirs), rig


def test_training_directions_snap_to_single_vertex(desk_basis):
    basis, _ = desk_basis
    for i, d in enumerate(basis.directions):
        idx, w = basis.weights(d)
        assert list(idx) == [i]
        np.testing.assert_array_equal(w, [1.0])


def test_interior_queries_reproject_exactly(desk_basis):
    basis, _ = desk_basis
    rng = np.random.default_rng(10)
    checked = 0
    for tri in basis.triangles[:6]:
        lam = rng.dirichlet(np.ones(3) * 3.0)
        q = basis.directions[tri].T @ lam
        q /= np.linalg.norm(q)
        idx, w = basis.weights(q)
        assert abs(w.sum() - 1.0) < 1e-12
        recon = basis.directions[idx].T @ w
        np.testing.assert_allclose(recon / np.linalg.norm(recon), q, atol=1e-10)
        checked += 1
    assert checked == 6


def test_triangle_centroid_gets_equal_weights(desk_basis):
    basis, _ = desk_basis
    tri = basis.triangles[0]
    q = basis.directions[tri].sum(axis=0)
    q /= np.linalg.norm(q)
    idx, w = basis.weights(q)
    assert sorted(idx) == sorted(tri)
    np.testing.assert_allclose(np.sort(w), np.full(3, 1.0 / 3.0), atol=1e-12)


def test_interior_point_in_exactly_one_triangle(desk_basis):
    basis, _ = desk_basis
    rng = np.random.default_rng(11)
    for tri in basis.triangles[:8]:
        lam = rng.dirichlet(np.ones(3) * 5.0) + 0.05
        lam /= lam.sum()
        q = basis.directions[tri].T @ lam
        assert basis.containing_triangles(q / np.linalg.norm(q)) == 1


def test_query_outside_hull_is_rejected(desk_basis):
    basis, _ = desk_basis
    with pytest.raises(ConfigError, match="outside"):
        basis.weights(np.array([0.0, 0.0, -1.0]))  # behind the head


def test_desk_rig_heldout_probes_are_interior(desk_basis):
    basis, rig = desk_basis
    assert len(rig.heldout_positions) == 3
    for pos in rig.heldout_positions:
        idx, w = basis.weights(pos / np.linalg.norm(pos))
        assert len(idx) == 3 and np.all(w > 0)


def test_degenerate_layouts_rejected():
    with pytest.raises(ConfigError):
        BarycentricBasis.from_directions(np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    ang = np.linspace(0, 2 * np.pi, 4, endpoint=False)
    coplanar = np.stack([np.cos(ang), np.sin(ang), np.zeros(4)], axis=1)
    with pytest.raises(ConfigError):
        BarycentricBasis.from_directions(coplanar)


def test_barycentric_relight_blends_renders(desk_basis):
    basis, _ = desk_basis
    rng = np.random.default_rng(12)
    renders = rng.random((len(basis.directions), 6, 6, 3)).astype(np.float32)
    i = 4
    out = barycentric_relight(basis, renders, basis.directions[i])
    np.testing.assert_array_equal(out, renders[i])  # bitwise at a vertex
    tri = basis.triangles[2]
    q = basis.directions[tri].T @ np.array([0.5, 0.3, 0.2])
    q /= np.linalg.norm(q)
    idx, w = basis.weights(q)
    expect = sum(renders[a].astype(np.float64) * b for a, b in zip(idx, w))
    np.testing.assert_allclose(
        barycentric_relight(basis, renders, q), expect.astype(np.float32), atol=1e-7
    )
    with pytest.raises(ConfigError):
        barycentric_relight(basis, renders[:-1], q)


# ---------------------------------------------------------------------------
# holdout evaluation end to end


def ring_lights(k, radius=2.2):
    ang = np.linspace(0, 2 * np.pi, k, endpoint=False)
    pts = np.stack([np.cos(ang), 0.3 + 0.1 * np.sin(3 * ang), np.sin(ang)], axis=1)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True) * radius


def frontal_arc_lights(k, radius=2.2):
    az = np.linspace(-0.9, 0.9, k)
    elev = 0.15 + 0.4 * np.abs(np.sin(3 * az))
    pts = np.stack([np.sin(az) * np.cos(elev), np.sin(elev), np.cos(az) * np.cos(elev)], axis=1)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True) * radius


@pytest.fixture(scope="module")
def eval_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("eval_ds")
    scene = SyntheticScene(n_grid=5, seed=3)
    lights = frontal_arc_lights(6)
    mid = lights[2] + lights[3] + np.array([0.0, 0.6, 0.0])
    rig = LightRig(
        positions=lights,
        intensities=np.ones(6),
        heldout_positions=(mid / np.linalg.norm(mid) * 2.2)[None],
    )
    cams = desk_cameras(width=16, height=16)[:2]
    reader = generate_dataset(root, n_cycles=2, scene=scene, rig=rig, cameras=cams)
    olat = [
        fid
        for fid in reader.frame_ids
        if reader.schedule.frame_lights[fid % reader.schedule.n_frames] >= 0
    ]
    holdout = HoldoutSpec(light_indices=(0,), frame_ids=tuple(olat[-2:]))
    template = template_from_dataset(reader)
    trainer = AvatarTrainer(
        reader,
        template,
        TrainConfig(
            learning_rate=2e-3,
            batch_size=2,
            iterations=2,
            rays_per_image=64,
            seed=13,
            eval_every=10,
            checkpoint_every=10,
            holdout_frames=holdout.frame_ids,
        ),
        DecoderConfig(n_side=4, voxel_res=4, appearance_channels=(12,)),
    )
    assert not set(trainer.olat_frame_ids) & set(holdout.frame_ids)
    trainer.step()
    path = tmp_path_factory.mktemp("eval_ckpt") / "avatar.ckpt"
    trainer.export_avatar(path)
    bundle = AvatarBundle.load(path, template)
    return bundle, reader, holdout


def test_holdout_spec_validation():
    with pytest.raises(ConfigError):
        HoldoutSpec(light_indices=(-1,))


def test_trainer_excludes_holdout_frames(eval_setup):
    _, reader, holdout = eval_setup
    template = template_from_dataset(reader)
    with pytest.raises(ConfigError, match="no single-light frames"):
        olat = [
            fid
            for fid in reader.frame_ids
            if reader.schedule.frame_lights[fid % reader.schedule.n_frames] >= 0
        ]
        AvatarTrainer(
            reader,
            template,
            TrainConfig(holdout_frames=tuple(olat)),
            DecoderConfig(n_side=4, voxel_res=4, appearance_channels=(12,)),
        )


def test_evaluate_produces_three_categories(eval_setup, tmp_path):
    bundle, reader, holdout = eval_setup
    csv_path = tmp_path / "report.csv"
    report = evaluate(
        bundle, reader, holdout, cameras=(0,), max_frames=1, out_csv=csv_path
    )
    categories = {r.category for r in report.rows}
    assert categories == {"novel_light", "novel_performance", "light_and_performance"}
    for cat in categories:
        assert report.row(cat, "model") is not None
        assert report.row(cat, "barycentric") is not None
    text = csv_path.read_text()
    assert text.splitlines()[0].startswith("category,method")
    assert len(text.splitlines()) == 1 + len(report.rows)
    md = report.to_markdown()
    assert "LPIPS" in md or "perceptual" in md
    assert "novel_light" in md


def test_novel_performance_baseline_equals_model(eval_setup):
    bundle, reader, holdout = eval_setup
    report = evaluate(bundle, reader, holdout, cameras=(0,), max_frames=1)
    ours = report.row("novel_performance", "model")
    base = report.row("novel_performance", "barycentric")
    # queries sit exactly on training directions, so the baseline snaps
    # to the model's own render and every metric matches
    assert ours.psnr == base.psnr and ours.mae == base.mae and ours.ssim == base.ssim


def test_evaluate_omits_empty_categories(eval_setup):
    bundle, reader, _ = eval_setup
    report = evaluate(
        bundle, reader, HoldoutSpec(light_indices=(), frame_ids=()), cameras=(0,), max_frames=1
    )
    assert report.rows == []
    assert any("novel_light" in n for n in report.notes)
    assert any("novel_performance" in n for n in report.notes)


def test_evaluate_validates_indices(eval_setup):
    bundle, reader, _ = eval_setup
    with pytest.raises(ConfigError, match="held-out lights"):
        evaluate(bundle, reader, HoldoutSpec(light_indices=(5,)))
    with pytest.raises(ConfigError, match="not in the dataset"):
        evaluate(bundle, reader, HoldoutSpec(frame_ids=(999,)))
    with pytest.raises(ConfigError, match="camera"):
        evaluate(bundle, reader, HoldoutSpec(), cameras=(7,))


# ---------------------------------------------------------------------------
# extrapolation probe


def test_extrapolation_probe_rows_and_band():
    rng = np.random.default_rng(14)
    angles = np.array([0.0, 90.0, 180.0, 190.0, 200.0, 250.0])
    frames = [rng.random((8, 8, 3)) for _ in angles]
    oracle = [frames[0], None, None, None, None, None]
    report = extrapolation_probe(frames, angles, oracle)
    assert report.rows[0].frame_mae is None
    assert report.rows[0].psnr_vs_oracle == 99.0
    assert report.rows[1].frame_mae == pytest.approx(mae(frames[1], frames[0]))
    flags = [r.in_extrapolation_band for r in report.rows]
    assert flags == [False, False, False, True, True, False]
    beyond = [r.beyond_training for r in report.rows]
    assert beyond == [False, False, False, True, True, True]
    md = report.to_markdown()
    assert "extrapolation band" in md and "interior" in md
    with pytest.raises(ConfigError):
        extrapolation_probe(frames[:-1], angles)
