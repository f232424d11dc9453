import base64
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

from voxelight.avatar import AvatarBundle
from voxelight.dataforge import LightRig, SyntheticScene, desk_cameras, generate_dataset
from voxelight.decoder import DecoderConfig
from voxelight.imgio import encode_float_image, encode_png, save_float_image
from voxelight.primitives import save_template
from voxelight.relight import compile_envmap, load_envmap, relight_composite
from voxelight.service import AvatarStore, RenderService, create_app
from voxelight.service.schemas import (
    CameraSpec,
    ExpressionSpec,
    LightingSpec,
    PointLight,
    RenderRequest,
)
from voxelight.training import AvatarTrainer, TrainConfig, template_from_dataset
from voxelight.volren import look_at


def ring_lights(k, radius=2.2):
    ang = np.linspace(0, 2 * np.pi, k, endpoint=False)
    pts = np.stack([np.cos(ang), 0.3 + 0.1 * np.sin(3 * ang), np.sin(ang)], axis=1)
    return pts / np.linalg.norm(pts, axis=1, keepdims=True) * radius


CAMERA = {
    "position": (0.3, 0.1, 3.0),
    "look_at": (0.0, 0.0, 0.0),
    "vfov_deg": 7.0,
    "width": 16,
    "height": 16,
}
LIGHT = (1.0, 1.5, 2.5)


def point_request(**overrides) -> dict:
    body = {
        "camera": dict(CAMERA),
        "lighting": {"point_lights": [{"position": LIGHT}]},
        "expression": {"mesh_id": "frame0"},
    }
    body.update(overrides)
    return body


@pytest.fixture(scope="module")
def store_dir(tmp_path_factory):
    """Dataset -> two exported checkpoints -> service asset layout."""
    data_root = tmp_path_factory.mktemp("service_ds")
    scene = SyntheticScene(n_grid=5, seed=2)
    rig = LightRig(positions=ring_lights(4), intensities=np.ones(4))
    cams = desk_cameras(width=16, height=16)[:2]
    reader = generate_dataset(data_root, n_cycles=1, scene=scene, rig=rig, cameras=cams)
    template = template_from_dataset(reader)
    trainer = AvatarTrainer(
        reader,
        template,
        TrainConfig(
            learning_rate=2e-3, batch_size=2, iterations=4, rays_per_image=64, seed=5,
            eval_every=10, checkpoint_every=10,
        ),
        DecoderConfig(n_side=4, voxel_res=4, appearance_channels=(12,), latent_dim=32),
    )
    trainer.step()

    root = tmp_path_factory.mktemp("store")
    (root / "checkpoints").mkdir()
    (root / "envmaps").mkdir()
    (root / "expressions").mkdir()
    save_template(root / "template.npz", template)
    (root / "scene.json").write_text(json.dumps(scene.to_dict()))
    trainer.export_avatar(root / "checkpoints" / "main.ckpt")
    trainer.step()
    trainer.export_avatar(root / "checkpoints" / "alt.ckpt")

    frame = reader.load_frame(trainer.olat_frame_ids[0])
    np.save(root / "expressions" / "frame0.npy", frame.vertices)
    np.save(root / "expressions" / "bad.npy", frame.vertices[:-1])
    presets = {"neutral": [0.0] * scene.n_expressions}
    (root / "expressions" / "presets.json").write_text(json.dumps(presets))

    # one bright frontal patch: only a couple of compiled bins carry energy,
    # so environment composites stay cheap
    radiance = np.zeros((16, 32, 3), dtype=np.float32)
    radiance[7:9, 0:2] = (4.0, 3.0, 2.0)
    save_float_image(root / "envmaps" / "spot.fimg", radiance)
    return root


@pytest.fixture(scope="module")
def client(store_dir):
    app = create_app(store_dir, checkpoint="main")
    return TestClient(app)


@pytest.fixture(scope="module")
def bundle(store_dir):
    store = AvatarStore(store_dir)
    return AvatarBundle.load(store.checkpoint_path("main"), store.template)


# -- store ---------------------------------------------------------------


def test_store_requires_template(tmp_path):
    with pytest.raises(FileNotFoundError, match="template"):
        AvatarStore(tmp_path)


def test_store_listings(store_dir):
    store = AvatarStore(store_dir)
    assert store.checkpoints() == ["alt", "main"]
    assert store.envmaps() == ["spot"]
    assert set(store.expression_meshes()) == {"frame0", "bad"}
    assert list(store.expression_presets()) == ["neutral"]
    with pytest.raises(KeyError):
        store.checkpoint_path("nope")
    with pytest.raises(KeyError):
        store.envmap_path("nope")
    with pytest.raises(KeyError):
        store.expression_vertices("nope")


# -- session lifecycle -----------------------------------------------------


def test_render_without_checkpoint_conflicts(store_dir):
    fresh = TestClient(create_app(store_dir))
    r = fresh.post("/v1/render", json=point_request())
    assert r.status_code == 409
    assert "checkpoint" in r.json()["detail"]
    assert fresh.get("/v1/state").json()["checkpoint_id"] is None


def test_load_unknown_checkpoint_is_404(store_dir):
    fresh = TestClient(create_app(store_dir))
    r = fresh.post("/v1/checkpoint", json={"id": "missing"})
    assert r.status_code == 404


def test_load_checkpoint_updates_state(store_dir):
    fresh = TestClient(create_app(store_dir))
    assert fresh.post("/v1/checkpoint", json={"id": "main"}).json() == {"active": "main"}
    state = fresh.get("/v1/state").json()
    assert state["checkpoint_id"] == "main"
    assert state["queue_depth"] == 0


def test_asset_catalog(client):
    got = client.get("/v1/assets").json()
    assert got["checkpoints"] == ["alt", "main"]
    assert got["envmaps"] == ["spot"]
    assert got["active_checkpoint"] == "main"
    assert "frame0" in got["expressions"]
    assert got["expression_presets"] == {"neutral": [0.0, 0.0, 0.0, 0.0]}


def test_expression_catalog(client):
    got = client.get("/v1/expressions").json()
    assert got["blendweight_count"] == 4
    assert "neutral" in got["presets"]


# -- render paths ----------------------------------------------------------


def test_point_render_is_deterministic(client):
    a = client.post("/v1/render", json=point_request())
    b = client.post("/v1/render", json=point_request())
    assert a.status_code == 200, a.text
    ja, jb = a.json(), b.json()
    assert ja["png_base64"] == jb["png_base64"]
    assert ja["checkpoint_id"] == "main"
    assert (ja["width"], ja["height"]) == (16, 16)
    assert ja["render_seconds"] > 0
    assert ja["linear_base64"] is None


def test_linear_payload_matches_direct_render(client, bundle, store_dir):
    r = client.post("/v1/render", json=point_request(include_linear=True)).json()
    camera = look_at(CAMERA["position"], CAMERA["look_at"], 7.0, 16, 16)
    verts = np.load(store_dir / "expressions" / "frame0.npy")
    ref, _ = bundle.render(verts, camera, np.array(LIGHT), gain=bundle.calibration_gain)
    assert base64.b64decode(r["linear_base64"]) == encode_float_image(ref)
    assert base64.b64decode(r["png_base64"]) == encode_png(ref)


def test_split_light_reproduces_single_light_exactly(client):
    one = client.post("/v1/render", json=point_request()).json()
    halves = point_request(
        lighting={
            "point_lights": [
                {"position": LIGHT, "rgb": (0.5, 0.5, 0.5)},
                {"position": LIGHT, "rgb": (0.5, 0.5, 0.5)},
            ]
        }
    )
    two = client.post("/v1/render", json=halves).json()
    assert one["png_base64"] == two["png_base64"]


def test_accept_header_yields_binary_png(client):
    js = client.post("/v1/render", json=point_request()).json()
    raw = client.post("/v1/render", json=point_request(), headers={"accept": "image/png"})
    assert raw.status_code == 200
    assert raw.headers["content-type"] == "image/png"
    assert raw.headers["x-checkpoint-id"] == "main"
    assert float(raw.headers["x-render-seconds"]) > 0
    assert raw.content == base64.b64decode(js["png_base64"])


def test_blendweight_expression_renders(client):
    body = point_request(expression={"blendweights": [0.0, 0.0, 0.0, 0.0]})
    assert client.post("/v1/render", json=body).status_code == 200


def test_latent_expression_renders(client):
    body = point_request(expression={"latent": [0.05] * 32})
    r = client.post("/v1/render", json=body)
    assert r.status_code == 200
    short = client.post("/v1/render", json=point_request(expression={"latent": [0.05] * 7}))
    assert short.status_code == 400
    assert "32" in short.json()["detail"]


def test_step_scale_changes_image_deterministically(client):
    fine = client.post("/v1/render", json=point_request()).json()
    coarse_body = point_request(quality={"step_scale": 4.0})
    coarse = client.post("/v1/render", json=coarse_body).json()
    again = client.post("/v1/render", json=coarse_body).json()
    assert coarse["png_base64"] == again["png_base64"]
    assert coarse["png_base64"] != fine["png_base64"]


def test_environment_render_matches_library_composite(client, bundle, store_dir):
    body = point_request(lighting={"env": {"id": "spot", "yaw_deg": 0.0}})
    r = client.post("/v1/render", json=body)
    assert r.status_code == 200, r.text
    lighting = compile_envmap(load_envmap(store_dir / "envmaps" / "spot.fimg"))
    assert np.count_nonzero(lighting.weights.sum(axis=1)) <= 8
    camera = look_at(CAMERA["position"], CAMERA["look_at"], 7.0, 16, 16)
    verts = np.load(store_dir / "expressions" / "frame0.npy")
    ref, _ = relight_composite(bundle, verts, camera, lighting)
    assert base64.b64decode(r.json()["png_base64"]) == encode_png(ref)
    assert client.get("/v1/state").json()["cached_envmaps"] == ["spot"]


def test_env_yaw_cache_quantizes_to_one_degree(client):
    base = client.post(
        "/v1/render", json=point_request(lighting={"env": {"id": "spot", "yaw_deg": 0.4}})
    ).json()
    wrap = client.post(
        "/v1/render", json=point_request(lighting={"env": {"id": "spot", "yaw_deg": 359.9}})
    ).json()
    plain = client.post(
        "/v1/render", json=point_request(lighting={"env": {"id": "spot"}})
    ).json()
    assert base["png_base64"] == plain["png_base64"] == wrap["png_base64"]
    assert client.get("/v1/state").json()["cached_envmaps"] == ["spot"]


# -- failure mapping ---------------------------------------------------------


def test_unknown_mesh_is_404(client):
    r = client.post("/v1/render", json=point_request(expression={"mesh_id": "nope"}))
    assert r.status_code == 404


def test_unknown_envmap_is_404(client):
    r = client.post("/v1/render", json=point_request(lighting={"env": {"id": "nope"}}))
    assert r.status_code == 404


def test_wrong_mesh_shape_is_400(client):
    r = client.post("/v1/render", json=point_request(expression={"mesh_id": "bad"}))
    assert r.status_code == 400
    assert "shape" in r.json()["detail"]


def test_wrong_blendweight_count_is_400(client):
    r = client.post("/v1/render", json=point_request(expression={"blendweights": [0.0]}))
    assert r.status_code == 400


def test_schema_violations_are_400_not_422(client):
    both = point_request(
        lighting={"env": {"id": "spot"}, "point_lights": [{"position": LIGHT}]}
    )
    assert client.post("/v1/render", json=both).status_code == 400
    neither = point_request(lighting={})
    assert client.post("/v1/render", json=neither).status_code == 400
    empty = point_request(lighting={"point_lights": []})
    assert client.post("/v1/render", json=empty).status_code == 400
    two_expr = point_request(expression={"mesh_id": "frame0", "latent": [0.0] * 32})
    assert client.post("/v1/render", json=two_expr).status_code == 400
    negative = point_request(lighting={"point_lights": [{"position": LIGHT, "rgb": (-1, 0, 0)}]})
    assert client.post("/v1/render", json=negative).status_code == 400
    bad_fov = point_request(camera={**CAMERA, "vfov_deg": 0.0})
    assert client.post("/v1/render", json=bad_fov).status_code == 400
    garbage = client.post(
        "/v1/render", content=b"not json", headers={"content-type": "application/json"}
    )
    assert garbage.status_code == 400


def test_pixel_budget_is_413(client):
    huge = point_request(camera={**CAMERA, "width": 2048, "height": 2048})
    r = client.post("/v1/render", json=huge)
    assert r.status_code == 413


def test_full_queue_is_503(store_dir):
    starved = TestClient(create_app(store_dir, checkpoint="main", max_queue=0))
    r = starved.post("/v1/render", json=point_request())
    assert r.status_code == 503


# -- concurrency -------------------------------------------------------------


def test_concurrent_renders_respect_snapshot_swap(store_dir):
    store = AvatarStore(store_dir)
    refs = {}
    for ckpt in ("main", "alt"):
        svc = RenderService(store)
        svc.load_checkpoint(ckpt)
        img, _, _, _ = svc.render(
            RenderRequest(
                camera=CameraSpec(**CAMERA),
                lighting=LightingSpec(point_lights=[PointLight(position=LIGHT)]),
                expression=ExpressionSpec(mesh_id="frame0"),
            )
        )
        refs[ckpt] = base64.b64encode(encode_png(img)).decode("ascii")
    assert refs["main"] != refs["alt"]

    app = create_app(store_dir, checkpoint="main", max_concurrent=4, max_queue=32)
    local = TestClient(app)
    results = []
    hold = threading.Event()

    def worker():
        hold.wait()
        out = []
        for _ in range(2):
            out.append(local.post("/v1/render", json=point_request()).json())
        return out

    with ThreadPoolExecutor(max_workers=4) as pool:
        futures = [pool.submit(worker) for _ in range(4)]
        hold.set()
        time.sleep(0.05)
        assert local.post("/v1/checkpoint", json={"id": "alt"}).status_code == 200
        for f in futures:
            results.extend(f.result())

    assert local.get("/v1/state").json()["checkpoint_id"] == "alt"
    # the swap may land before, between or after any render; the contract is
    # only that every response is internally consistent with one snapshot
    for resp in results:
        assert resp["checkpoint_id"] in refs
        assert resp["png_base64"] == refs[resp["checkpoint_id"]]


# -- cli parity ----------------------------------------------------------------


def test_cli_render_matches_service_bytes(client, store_dir, tmp_path):
    from click.testing import CliRunner

    from voxelight.cli import main as cli_main

    out = tmp_path / "frame.png"
    args = [
        "render",
        "--checkpoint", str(store_dir / "checkpoints" / "main.ckpt"),
        "--template", str(store_dir / "template.npz"),
        "--mesh", str(store_dir / "expressions" / "frame0.npy"),
        "--camera-pos", "0.3,0.1,3.0",
        "--look-at", "0,0,0",
        "--fov", "7.0",
        "--width", "16",
        "--height", "16",
        "--light", "1.0,1.5,2.5",
        "--out", str(out),
    ]
    result = CliRunner().invoke(cli_main, args, catch_exceptions=False)
    assert result.exit_code == 0, result.output
    service_png = base64.b64decode(
        client.post("/v1/render", json=point_request()).json()["png_base64"]
    )
    assert out.read_bytes() == service_png
    assert out.with_suffix(".fimg").is_file()
