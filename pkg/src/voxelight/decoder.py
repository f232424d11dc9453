"""Expression-conditioned networks that drive the primitive grid.

A mesh VAE encoder maps tracked guide-mesh vertices to a latent code.
The decoder expands the code to an 8x8 feature map and splits into
three heads: a geometry head producing guide vertices plus per-slot
pose deltas, an appearance head that upsamples through transposed
convolutions while consuming the tiled view/light direction map at
every resolution, and an opacity head with the same trunk but no
lighting input, so alpha is light-independent by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ConfigError
from .primitives import (
    PrimitivePoses,
    SlotAnchors,
    TemplateMesh,
    assemble_direction_map,
    assemble_poses,
    build_slot_anchors,
)
from .sh import real_sh_basis

LATENT_BASE_RES = 8


@dataclass(frozen=True)
class DecoderConfig:
    """Architecture plan; validated so every accepted config is runnable."""

    n_side: int = 8
    voxel_res: int = 4
    latent_dim: int = 256
    appearance_channels: tuple[int, ...] = (128, 12)
    opacity_channels: tuple[int, ...] | None = None
    codebook: bool = False
    distance_channels: bool = False
    center_mode: str = "center"
    code_dim: int = 64
    sh_order: int = 5
    encoder_hidden: int = 512
    mesh_hidden: int = 256

    def __post_init__(self):
        if self.n_side < 1 or self.voxel_res < 2:
            raise ConfigError("grid needs n_side >= 1 and voxel_res >= 2")
        out_res = self.n_side * self.voxel_res
        n_layers = len(self.appearance_channels)
        if LATENT_BASE_RES * 2**n_layers != out_res:
            raise ConfigError(
                f"{n_layers} upsampling layers reach {LATENT_BASE_RES * 2 ** n_layers}, "
                f"but the slab resolution is {out_res}"
            )
        if self.appearance_channels[-1] != 3 * self.voxel_res:
            raise ConfigError(
                f"appearance must end with rgb x depth = {3 * self.voxel_res} channels"
            )
        if self.opacity_channels is None:
            object.__setattr__(
                self,
                "opacity_channels",
                self.appearance_channels[:-1] + (self.voxel_res,),
            )
        if len(self.opacity_channels) != n_layers:
            raise ConfigError("opacity plan must match the appearance layer count")
        if self.opacity_channels[-1] != self.voxel_res:
            raise ConfigError(f"opacity must end with {self.voxel_res} channels")
        if self.codebook and self.distance_channels:
            raise ConfigError("codebook conditioning replaces the light block; distances cannot be added")
        if self.center_mode not in ("center", "rotated"):
            raise ConfigError(f"unknown center_mode {self.center_mode!r}")

    @property
    def n_slots(self) -> int:
        return self.n_side * self.n_side

    @property
    def direction_channels(self) -> int:
        if self.codebook:
            return 3 + self.code_dim
        return 8 if self.distance_channels else 6

    def to_dict(self) -> dict:
        return {
            "n_side": self.n_side,
            "voxel_res": self.voxel_res,
            "latent_dim": self.latent_dim,
            "appearance_channels": list(self.appearance_channels),
            "opacity_channels": list(self.opacity_channels),
            "codebook": self.codebook,
            "distance_channels": self.distance_channels,
            "center_mode": self.center_mode,
            "code_dim": self.code_dim,
            "sh_order": self.sh_order,
            "encoder_hidden": self.encoder_hidden,
            "mesh_hidden": self.mesh_hidden,
        }

    @staticmethod
    def from_dict(d: dict) -> "DecoderConfig":
        d = dict(d)
        for key in ("appearance_channels", "opacity_channels"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return DecoderConfig(**d)


@dataclass
class ExpressionCode:
    """Latent expression sample plus the posterior it came from."""

    z: ad.Tensor  # [1, D]
    mu: ad.Tensor  # [1, D]
    logvar: ad.Tensor  # [1, D]


def kl_divergence(code: ExpressionCode) -> ad.Tensor:
    """Mean per-dimension KL of the diagonal posterior against N(0, I)."""
    mu2 = ad.mul(code.mu, code.mu)
    ev = ad.exp(code.logvar)
    inner = ad.sub(ad.add(mu2, ev), ad.add_scalar(code.logvar, 1.0))
    return ad.mul_scalar(ad.mean_all(inner), 0.5)


class MeshEncoder(ad.Module):
    """Two fully-connected layers over centered vertices, then mu/logvar heads."""

    def __init__(
        self,
        n_vertices: int,
        config: DecoderConfig,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        if n_vertices < 1:
            raise ConfigError("encoder needs at least one vertex")
        self.n_vertices = n_vertices
        self.dtype = np.dtype(dtype)
        h = config.encoder_hidden
        self.fc1 = ad.Linear(3 * n_vertices, h, rng, dtype)
        self.fc2 = ad.Linear(h, h, rng, dtype)
        self.mu_head = ad.Linear(h, config.latent_dim, rng, dtype)
        self.logvar_head = ad.Linear(h, config.latent_dim, rng, dtype)
        # posterior starts at unit variance
        self.logvar_head.weight.data[:] = 0
        self.logvar_head.bias.data[:] = 0

    def __call__(
        self, vertices: np.ndarray, sample_rng: np.random.Generator | None = None
    ) -> ExpressionCode:
        v = np.asarray(vertices, dtype=self.dtype)
        if v.shape != (self.n_vertices, 3):
            raise ConfigError(f"expected {self.n_vertices} vertices, got {v.shape}")
        centered = v - v.mean(axis=0, keepdims=True)
        x = ad.Tensor(np.ascontiguousarray(centered.reshape(1, -1)))
        h = ad.leaky_relu(self.fc1(x))
        h = ad.leaky_relu(self.fc2(h))
        mu = self.mu_head(h)
        logvar = self.logvar_head(h)
        if sample_rng is None:
            z = mu
        else:
            eps = ad.Tensor(sample_rng.standard_normal(mu.shape).astype(self.dtype))
            z = ad.add(mu, ad.mul(ad.exp(ad.mul_scalar(logvar, 0.5)), eps))
        return ExpressionCode(z=z, mu=mu, logvar=logvar)


class OlatCodebook(ad.Module):
    """Harmonic positional encoding of a light direction -> learned code."""

    def __init__(self, config: DecoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.sh_order = config.sh_order
        self.dtype = np.dtype(dtype)
        n_basis = (config.sh_order + 1) ** 2
        self.fc1 = ad.Linear(n_basis, 64, rng, dtype)
        self.fc2 = ad.Linear(64, 64, rng, dtype)
        self.fc3 = ad.Linear(64, config.code_dim, rng, dtype)

    def __call__(self, direction: np.ndarray) -> ad.Tensor:
        basis = real_sh_basis(np.asarray(direction, dtype=np.float64), self.sh_order)
        x = ad.Tensor(np.ascontiguousarray(basis.reshape(1, -1).astype(self.dtype)))
        h = ad.relu(self.fc1(x))
        h = ad.relu(self.fc2(h))
        return self.fc3(h)


@dataclass
class DecodedAvatar:
    """One decoded frame: guide mesh, posed primitives, voxel payload."""

    vertices: ad.Tensor  # [V, 3]
    poses: PrimitivePoses
    payload: ad.Tensor  # [K, 4, M, M, M]
    direction_map: ad.Tensor


class AvatarDecoder(ad.Module):
    """Latent code + camera + light -> posed, shaded primitive grid."""

    def __init__(
        self,
        config: DecoderConfig,
        template: TemplateMesh,
        rng: np.random.Generator,
        dtype=np.float32,
    ):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.anchors: SlotAnchors = build_slot_anchors(template, config.n_side)
        self.template_vertices = template.vertices.astype(self.dtype)
        self._centroid = self.template_vertices.mean(axis=0).astype(np.float64)
        n_verts = len(template.vertices)

        self.expand = ad.Linear(
            config.latent_dim, 256 * LATENT_BASE_RES * LATENT_BASE_RES, rng, dtype
        )
        self.mesh_fc = ad.Linear(config.latent_dim, config.mesh_hidden, rng, dtype)
        self.mesh_out = ad.Linear(config.mesh_hidden, 3 * n_verts, rng, dtype)
        # decoded mesh starts exactly at the template
        self.mesh_out.weight.data[:] = 0
        self.mesh_out.bias.data[:] = 0

        # geometry trunk brings the 8x8 map to slot resolution
        self.geo_convs = []
        res, ch = LATENT_BASE_RES, 256
        while res < config.n_side:
            nxt = max(ch // 2, 32)
            self.geo_convs.append(ad.ConvTranspose2d(ch, nxt, rng, dtype))
            ch, res = nxt, res * 2
        if config.n_side > LATENT_BASE_RES and res != config.n_side:
            raise ConfigError("n_side above 8 must be a power-of-two multiple of 8")
        self.geo_head = ad.Linear(ch, 9, rng, dtype)
        # zero deltas at start: primitives sit on their anchor frames
        self.geo_head.weight.data[:] = 0
        self.geo_head.bias.data[:] = 0

        d_ch = config.direction_channels
        self.appearance = []
        ch = 256
        for out_ch in config.appearance_channels:
            self.appearance.append(ad.ConvTranspose2d(ch + d_ch, out_ch, rng, dtype))
            ch = out_ch
        self.opacity = []
        ch = 256
        for out_ch in config.opacity_channels:
            self.opacity.append(ad.ConvTranspose2d(ch, out_ch, rng, dtype))
            ch = out_ch
        self.codebook = OlatCodebook(config, rng, dtype) if config.codebook else None

    # -- sub-passes ---------------------------------------------------------

    def expand_latent(self, z: ad.Tensor) -> ad.Tensor:
        if z.shape != (1, self.config.latent_dim):
            raise ConfigError(f"latent must be [1, {self.config.latent_dim}], got {z.shape}")
        flat = self.expand(z)
        return ad.reshape(flat, (256, LATENT_BASE_RES, LATENT_BASE_RES))

    def decode_vertices(self, z: ad.Tensor) -> ad.Tensor:
        h = ad.leaky_relu(self.mesh_fc(z))
        offsets = ad.reshape(self.mesh_out(h), (len(self.template_vertices), 3))
        return ad.add(ad.Tensor(self.template_vertices.copy()), offsets)

    def decode_poses(self, z: ad.Tensor, zmap: ad.Tensor) -> tuple[ad.Tensor, PrimitivePoses]:
        cfg = self.config
        verts = self.decode_vertices(z)
        feat = zmap
        for conv in self.geo_convs:
            feat = ad.leaky_relu(conv(feat))
        if cfg.n_side < LATENT_BASE_RES:
            feat = ad.bilinear_downsample(feat, cfg.n_side, cfg.n_side)
        per_slot = ad.permute(ad.reshape(feat, (feat.shape[0], cfg.n_slots)), (1, 0))
        deltas = self.geo_head(per_slot)
        poses = assemble_poses(
            verts,
            self.anchors,
            shift=ad.narrow(deltas, 1, 0, 3),
            spin=ad.narrow(deltas, 1, 3, 3),
            logscale=ad.narrow(deltas, 1, 6, 3),
        )
        return verts, poses

    def light_code(self, light_position: np.ndarray) -> ad.Tensor | None:
        if self.codebook is None:
            return None
        direction = np.asarray(light_position, dtype=np.float64) - self._centroid
        return self.codebook(direction)

    def decode_payload(self, zmap: ad.Tensor, dmap: ad.Tensor) -> ad.Tensor:
        cfg = self.config
        h, res = zmap, LATENT_BASE_RES
        last = len(self.appearance) - 1
        for i, conv in enumerate(self.appearance):
            cond = ad.bilinear_downsample(dmap, res, res)
            h = conv(ad.concat([h, cond], axis=0))
            h = ad.relu(h) if i == last else ad.leaky_relu(h)
            res *= 2
        rgb = ad.slab_to_payload(h, cfg.n_side, cfg.voxel_res, 3)
        h = zmap
        for i, conv in enumerate(self.opacity):
            h = conv(h)
            h = ad.softplus(h) if i == last else ad.leaky_relu(h)
        alpha = ad.slab_to_payload(h, cfg.n_side, cfg.voxel_res, 1)
        return ad.concat([rgb, alpha], axis=1)

    # -- full forward -------------------------------------------------------

    def __call__(
        self,
        z: ad.Tensor,
        cam_position: np.ndarray,
        light_position: np.ndarray,
    ) -> DecodedAvatar:
        cfg = self.config
        zmap = self.expand_latent(z)
        verts, poses = self.decode_poses(z, zmap)
        dmap = assemble_direction_map(
            poses,
            cam_position,
            light_position,
            cfg.n_side,
            cfg.voxel_res,
            center_mode=cfg.center_mode,
            light_code=self.light_code(light_position),
            include_distances=cfg.distance_channels,
        )
        payload = self.decode_payload(zmap, dmap)
        return DecodedAvatar(vertices=verts, poses=poses, payload=payload, direction_map=dmap)


def save_avatar(path, encoder: MeshEncoder, decoder: AvatarDecoder, meta: dict | None = None) -> None:
    """Write both networks plus the architecture plan into one container."""
    arrays = {f"encoder.{k}": v for k, v in encoder.state_dict().items()}
    arrays.update({f"decoder.{k}": v for k, v in decoder.state_dict().items()})
    header = dict(meta or {})
    header["decoder_config"] = decoder.config.to_dict()
    header["n_vertices"] = encoder.n_vertices
    ad.save_checkpoint(path, arrays, meta=header)


def load_avatar(
    path, template: TemplateMesh, dtype=np.float32
) -> tuple[MeshEncoder, AvatarDecoder, dict]:
    """Rebuild encoder and decoder from a self-describing container."""
    arrays, meta = ad.load_checkpoint(path)
    if "decoder_config" not in meta:
        raise CheckpointError("container does not describe a decoder")
    config = DecoderConfig.from_dict(meta["decoder_config"])
    rng = np.random.default_rng(0)
    encoder = MeshEncoder(int(meta["n_vertices"]), config, rng, dtype)
    decoder = AvatarDecoder(config, template, rng, dtype)
    enc_state = {k[len("encoder."):]: v for k, v in arrays.items() if k.startswith("encoder.")}
    dec_state = {k[len("decoder."):]: v for k, v in arrays.items() if k.startswith("decoder.")}
    encoder.load_state_dict(enc_state)
    decoder.load_state_dict(dec_state)
    return encoder, decoder, meta
