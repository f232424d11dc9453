"""Inference-time wrapper around a trained encoder/decoder pair."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .decoder import AvatarDecoder, MeshEncoder, load_avatar
from .errors import CheckpointError, ConfigError
from .primitives import TemplateMesh
from .volren import Camera, RenderGrid, render_camera


@dataclass
class AvatarBundle:
    """Everything needed to render a trained avatar: networks, per-light
    brightness gains from training, and the frozen depth-sampling grid."""

    encoder: MeshEncoder
    decoder: AvatarDecoder
    light_gains: np.ndarray
    grid: RenderGrid
    template: TemplateMesh
    meta: dict

    @staticmethod
    def load(path: str | Path, template: TemplateMesh) -> "AvatarBundle":
        encoder, decoder, meta = load_avatar(path, template)
        if "grid" not in meta:
            raise CheckpointError("avatar container lacks a render grid")
        gains = np.asarray(meta.get("light_gains", []), dtype=np.float64).reshape(-1)
        return AvatarBundle(
            encoder=encoder,
            decoder=decoder,
            light_gains=gains,
            grid=RenderGrid.from_dict(meta["grid"]),
            template=template,
            meta=meta,
        )

    @property
    def calibration_gain(self) -> float:
        """Global brightness scale for lights outside the training rig."""
        if self.light_gains.size == 0:
            return 1.0
        return float(self.light_gains.mean())

    def scene_extent(self) -> float:
        centered = self.template.vertices - self.template.vertices.mean(axis=0)
        return 2.0 * float(np.linalg.norm(centered, axis=1).max())

    def scaled_grid(self, step_scale: float) -> RenderGrid:
        """Coarser or finer depth sampling covering the same range."""
        if step_scale <= 0:
            raise ConfigError("step scale must be positive")
        if step_scale == 1.0:
            return self.grid
        dt = self.grid.dt * step_scale
        return RenderGrid(dt=dt, n_samples=max(1, int(np.ceil(self.grid.t_far / dt))))

    def render(
        self,
        vertices: np.ndarray,
        camera: Camera,
        light_position: np.ndarray,
        gain: float = 1.0,
        grid: RenderGrid | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """One view under one point light: (rgb [H,W,3], alpha [H,W])."""
        light_position = np.asarray(light_position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(light_position)):
            raise ConfigError("light position must be finite")
        code = self.encoder(vertices)
        decoded = self.decoder(code.z, camera.position, light_position)
        img, alpha = render_camera(decoded.poses, decoded.payload, camera, grid or self.grid)
        if gain != 1.0:
            img = img * np.float32(gain)
        return img, alpha

    def render_latent(
        self,
        latent: np.ndarray,
        camera: Camera,
        light_position: np.ndarray,
        gain: float = 1.0,
        grid: RenderGrid | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Render straight from an expression code, bypassing the encoder."""
        light_position = np.asarray(light_position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(light_position)):
            raise ConfigError("light position must be finite")
        z = latent if isinstance(latent, ad.Tensor) else ad.Tensor(
            np.asarray(latent, dtype=np.float32).reshape(1, -1)
        )
        decoded = self.decoder(z, camera.position, light_position)
        img, alpha = render_camera(decoded.poses, decoded.payload, camera, grid or self.grid)
        if gain != 1.0:
            img = img * np.float32(gain)
        return img, alpha
