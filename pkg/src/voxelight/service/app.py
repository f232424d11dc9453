"""FastAPI application wrapping one avatar checkpoint for interactive use.

Snapshot discipline: the active checkpoint lives in a single attribute
that handlers read exactly once per request, so a swap mid-flight leaves
in-progress renders on the old snapshot and later ones on the new, never
a mix.  Render work runs on a bounded pool; excess demand is refused
with 503 instead of queueing without limit.
"""

from __future__ import annotations

import base64
import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.encoders import jsonable_encoder
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ..avatar import AvatarBundle
from ..dataforge import SyntheticScene
from ..errors import VoxelightError
from ..imgio import encode_float_image, encode_png
from ..primitives import load_template
from ..relight import FAR_RADIUS_FACTOR, compile_envmap, composite_renders, load_envmap
from ..volren import look_at
from .schemas import (
    CheckpointRequest,
    RenderRequest,
    RenderResponse,
    SessionState,
)

_ENV_SUFFIXES = (".fimg", ".png")


class AvatarStore:
    """File-backed asset catalog.

    Layout under the root directory:
      template.npz           required template mesh
      scene.json             optional synthetic-scene config (blendweights)
      checkpoints/<id>.ckpt  exported avatars
      envmaps/<id>.fimg|.png lat-long environments
      expressions/<id>.npy   stabilized vertex arrays
      expressions/presets.json   optional {name: [blendweights]}
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        template_path = self.root / "template.npz"
        if not template_path.is_file():
            raise FileNotFoundError(f"store needs a template mesh at {template_path}")
        self.template = load_template(template_path)
        scene_path = self.root / "scene.json"
        self.scene: SyntheticScene | None = None
        if scene_path.is_file():
            self.scene = SyntheticScene.from_dict(json.loads(scene_path.read_text()))

    def _ids(self, sub: str, suffixes: tuple[str, ...]) -> list[str]:
        d = self.root / sub
        if not d.is_dir():
            return []
        return sorted(p.stem for p in d.iterdir() if p.suffix in suffixes)

    def checkpoints(self) -> list[str]:
        return self._ids("checkpoints", (".ckpt",))

    def envmaps(self) -> list[str]:
        return self._ids("envmaps", _ENV_SUFFIXES)

    def expression_meshes(self) -> list[str]:
        return self._ids("expressions", (".npy",))

    def expression_presets(self) -> dict[str, list[float]]:
        path = self.root / "expressions" / "presets.json"
        if not path.is_file():
            return {}
        return {k: list(map(float, v)) for k, v in json.loads(path.read_text()).items()}

    def checkpoint_path(self, asset_id: str) -> Path:
        path = self.root / "checkpoints" / f"{asset_id}.ckpt"
        if not path.is_file():
            raise KeyError(f"unknown checkpoint {asset_id!r}")
        return path

    def envmap_path(self, asset_id: str) -> Path:
        for suffix in _ENV_SUFFIXES:
            path = self.root / "envmaps" / f"{asset_id}{suffix}"
            if path.is_file():
                return path
        raise KeyError(f"unknown environment map {asset_id!r}")

    def expression_vertices(self, asset_id: str) -> np.ndarray:
        path = self.root / "expressions" / f"{asset_id}.npy"
        if not path.is_file():
            raise KeyError(f"unknown expression mesh {asset_id!r}")
        return np.load(path)


@dataclass(frozen=True)
class _Snapshot:
    checkpoint_id: str
    bundle: AvatarBundle


class RenderService:
    """Stateful core behind the HTTP layer; usable directly in tests."""

    def __init__(
        self,
        store: AvatarStore,
        max_pixels: int = 1 << 20,
        max_concurrent: int = 2,
        max_queue: int = 8,
    ):
        self.store = store
        self.max_pixels = max_pixels
        self.max_queue = max_queue
        self._snapshot: _Snapshot | None = None
        self._env_cache: dict[tuple[str, int], object] = {}
        self._cache_lock = threading.Lock()
        self._gate = threading.Semaphore(max_concurrent)
        self._pending = 0
        self._pending_lock = threading.Lock()

    # -- session ------------------------------------------------------------

    def load_checkpoint(self, asset_id: str) -> str:
        path = self.store.checkpoint_path(asset_id)
        bundle = AvatarBundle.load(path, self.store.template)
        self._snapshot = _Snapshot(checkpoint_id=asset_id, bundle=bundle)
        return asset_id

    def state(self) -> SessionState:
        snap = self._snapshot
        with self._cache_lock:
            cached = sorted({key[0] for key in self._env_cache})
        with self._pending_lock:
            depth = self._pending
        return SessionState(
            checkpoint_id=None if snap is None else snap.checkpoint_id,
            cached_envmaps=cached,
            queue_depth=depth,
            max_queue=self.max_queue,
        )

    # -- lighting cache -------------------------------------------------------

    def compiled_env(self, env_id: str, yaw_deg: float):
        """Compiled lighting cached by id and yaw quantized to one degree."""
        key = (env_id, int(round(yaw_deg)) % 360)
        with self._cache_lock:
            hit = self._env_cache.get(key)
        if hit is not None:
            return hit
        env = load_envmap(self.store.envmap_path(env_id), yaw=np.deg2rad(key[1]))
        lighting = compile_envmap(env)
        with self._cache_lock:
            self._env_cache[key] = lighting
        return lighting

    # -- rendering ------------------------------------------------------------

    def _vertices_for(self, req: RenderRequest, snap: _Snapshot) -> np.ndarray:
        expr = req.expression
        if expr.mesh_id is not None:
            verts = self.store.expression_vertices(expr.mesh_id)
            if verts.shape != snap.bundle.template.vertices.shape:
                raise ValueError(
                    f"expression mesh {expr.mesh_id!r} has shape {verts.shape},"
                    f" template wants {snap.bundle.template.vertices.shape}"
                )
            return verts
        if expr.blendweights is not None:
            if self.store.scene is None:
                raise ValueError("blendweight expressions need a scene config in the store")
            return self.store.scene.express(np.asarray(expr.blendweights, dtype=np.float64))
        raise LookupError("latent expressions bypass vertex lookup")

    def render(self, req: RenderRequest) -> tuple[np.ndarray, np.ndarray, str, float]:
        """(linear rgb [H,W,3], alpha, checkpoint id, seconds). Raises
        LookupError (404), ValueError (400), OverflowError (413),
        RuntimeError (409), BlockingIOError (503)."""
        snap = self._snapshot
        if snap is None:
            raise RuntimeError("no checkpoint loaded")
        cam_spec = req.camera
        if cam_spec.width * cam_spec.height > self.max_pixels:
            raise OverflowError(
                f"{cam_spec.width}x{cam_spec.height} exceeds the {self.max_pixels}-pixel cap"
            )
        with self._pending_lock:
            if self._pending >= self.max_queue:
                raise BlockingIOError("render queue full")
            self._pending += 1
        try:
            with self._gate:
                return self._render_locked(req, snap)
        finally:
            with self._pending_lock:
                self._pending -= 1

    def _render_locked(self, req: RenderRequest, snap: _Snapshot):
        t0 = time.perf_counter()
        bundle = snap.bundle
        try:
            camera = look_at(
                req.camera.position,
                req.camera.look_at,
                req.camera.vfov_deg,
                req.camera.width,
                req.camera.height,
                up=req.camera.up,
            )
            grid = bundle.scaled_grid(req.quality.step_scale)
            gain = bundle.calibration_gain

            if req.expression.latent is not None:
                want = bundle.decoder.config.latent_dim
                if len(req.expression.latent) != want:
                    raise ValueError(f"latent must have {want} values")
                z = np.asarray(req.expression.latent, dtype=np.float32)

                def render_one(light_position):
                    return bundle.render_latent(z, camera, light_position, gain=gain, grid=grid)

                vertices = None
            else:
                vertices = self._vertices_for(req, snap)

                def render_one(light_position):
                    return bundle.render(vertices, camera, light_position, gain=gain, grid=grid)

            if req.lighting.env is not None:
                lighting = self.compiled_env(req.lighting.env.id, req.lighting.env.yaw_deg)
                far = FAR_RADIUS_FACTOR * bundle.scene_extent()
                img, alpha = composite_renders(render_one, camera, lighting, far)
            else:
                acc = np.zeros((camera.height, camera.width, 3), dtype=np.float64)
                alpha = np.zeros((camera.height, camera.width), dtype=np.float32)
                for i, light in enumerate(req.lighting.point_lights):
                    one, a = render_one(np.asarray(light.position, dtype=np.float64))
                    acc += one.astype(np.float64) * np.asarray(light.rgb)[None, None, :]
                    if i == 0:
                        alpha = a
                img = acc.astype(np.float32)
        except VoxelightError as e:
            raise ValueError(str(e)) from e
        return img, alpha, snap.checkpoint_id, time.perf_counter() - t0


def create_app(
    store_dir: str | Path,
    frontend_dir: str | Path | None = None,
    max_pixels: int = 1 << 20,
    max_concurrent: int = 2,
    max_queue: int = 8,
    checkpoint: str | None = None,
) -> FastAPI:
    store = AvatarStore(store_dir)
    service = RenderService(
        store, max_pixels=max_pixels, max_concurrent=max_concurrent, max_queue=max_queue
    )
    if checkpoint is not None:
        service.load_checkpoint(checkpoint)

    app = FastAPI(title="voxelight render service", version="1")
    app.state.service = service

    @app.exception_handler(RequestValidationError)
    async def _validation_to_400(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": jsonable_encoder(exc.errors())})

    def _describe(e: Exception) -> str:
        return str(e) or e.__class__.__name__

    @app.post("/v1/render")
    def render(req: RenderRequest, request: Request):
        try:
            img, alpha, ckpt, seconds = service.render(req)
        except LookupError as e:
            raise HTTPException(404, _describe(e)) from e
        except ValueError as e:
            raise HTTPException(400, _describe(e)) from e
        except OverflowError as e:
            raise HTTPException(413, _describe(e)) from e
        except RuntimeError as e:
            raise HTTPException(409, _describe(e)) from e
        except BlockingIOError as e:
            raise HTTPException(503, _describe(e)) from e
        png = encode_png(img)
        if request.headers.get("accept") == "image/png":
            return Response(
                content=png,
                media_type="image/png",
                headers={
                    "x-checkpoint-id": ckpt,
                    "x-render-seconds": f"{seconds:.6f}",
                },
            )
        linear = None
        if req.include_linear:
            linear = base64.b64encode(encode_float_image(img)).decode("ascii")
        return RenderResponse(
            png_base64=base64.b64encode(png).decode("ascii"),
            linear_base64=linear,
            checkpoint_id=ckpt,
            width=req.camera.width,
            height=req.camera.height,
            render_seconds=seconds,
        )

    @app.get("/v1/assets")
    def assets():
        return {
            "checkpoints": store.checkpoints(),
            "envmaps": store.envmaps(),
            "expressions": store.expression_meshes(),
            "expression_presets": store.expression_presets(),
            "active_checkpoint": service.state().checkpoint_id,
        }

    @app.post("/v1/checkpoint")
    def load_checkpoint(body: CheckpointRequest):
        try:
            active = service.load_checkpoint(body.id)
        except KeyError as e:
            raise HTTPException(404, _describe(e)) from e
        except VoxelightError as e:
            raise HTTPException(400, _describe(e)) from e
        return {"active": active}

    @app.get("/v1/envmaps")
    def envmaps():
        return {"envmaps": store.envmaps()}

    @app.get("/v1/expressions")
    def expressions():
        return {
            "meshes": store.expression_meshes(),
            "presets": store.expression_presets(),
            "blendweight_count": None if store.scene is None else store.scene.n_expressions,
        }

    @app.get("/v1/state")
    def state() -> SessionState:
        return service.state()

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="studio")

    return app
