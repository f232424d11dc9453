"""Loss assembly and the end-to-end optimization loop.

The trainer consumes single-light frames only, samples (frame, camera)
pairs with a pixel subset per image, and optimizes the encoder, the
decoder and one brightness gain per light with Adam.  Checkpoints carry
optimizer moments and the training RNG state so a resumed run replays
the exact step sequence.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .dataforge import FULL_ON, DatasetReader
from .dataforge.scene import SyntheticScene, stabilize_camera, stabilize_point
from .decoder import (
    AvatarDecoder,
    DecoderConfig,
    DecodedAvatar,
    ExpressionCode,
    MeshEncoder,
    kl_divergence,
    save_avatar,
)
from .errors import CheckpointError, ConfigError, TrainingError
from .primitives import TemplateMesh
from .volren import camera_rays, grid_for_extents, render_camera, render_scene

GAIN_RANGE = (0.1, 10.0)
DIVERGENCE_FACTOR = 1e4


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the five loss components."""

    photometric: float = 1.0
    geometry: float = 0.1
    volume: float = 0.01
    kl: float = 0.001
    matting: float = 0.1

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ConfigError(f"loss weight {name} must be nonnegative, got {value}")

    def to_dict(self) -> dict:
        return dict(vars(self))

    @staticmethod
    def from_dict(d: dict) -> "LossWeights":
        return LossWeights(**d)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    iterations: int = 20_000
    rays_per_image: int = 4096
    seed: int = 0
    eval_every: int = 250
    checkpoint_every: int = 1000
    precision: str = "float32"
    train_cameras: tuple[int, ...] | None = None
    holdout_frames: tuple[int, ...] = ()
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")
        if self.iterations < 1 or self.rays_per_image < 1:
            raise ConfigError("iterations and rays per image must be positive")
        if self.eval_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("eval and checkpoint cadences must be positive")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.train_cameras is not None:
            object.__setattr__(self, "train_cameras", tuple(int(i) for i in self.train_cameras))
            if len(self.train_cameras) == 0:
                raise ConfigError("train_cameras may not be empty; use None for all cameras")
        object.__setattr__(self, "holdout_frames", tuple(int(i) for i in self.holdout_frames))

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.precision)

    def to_dict(self) -> dict:
        d = dict(vars(self))
        d["weights"] = self.weights.to_dict()
        d["train_cameras"] = list(self.train_cameras) if self.train_cameras is not None else None
        d["holdout_frames"] = list(self.holdout_frames)
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights.from_dict(d["weights"])
        if d.get("train_cameras") is not None:
            d["train_cameras"] = tuple(d["train_cameras"])
        d["holdout_frames"] = tuple(d.get("holdout_frames", ()))
        return TrainConfig(**d)


@dataclass(frozen=True)
class LossBreakdown:
    """Per-component values of one loss evaluation, for logging."""

    photometric: float
    geometry: float
    volume: float
    kl: float
    matting: float
    total: float

    def to_dict(self) -> dict:
        return dict(vars(self))


def loss_matting(matte_target: np.ndarray, alpha: ad.Tensor) -> ad.Tensor:
    """Mean absolute error between accumulated opacity and the matte."""
    target = np.asarray(matte_target, dtype=alpha.data.dtype)
    if target.shape != alpha.data.shape:
        raise ConfigError(f"matte shape {target.shape} does not match alpha {alpha.data.shape}")
    return ad.mae(alpha, ad.Tensor(np.ascontiguousarray(target)))


def volume_penalty(scales: ad.Tensor) -> ad.Tensor:
    """Mean box volume term: average of s_x * s_y * s_z over primitives."""
    if scales.data.ndim != 2 or scales.data.shape[1] != 3:
        raise ConfigError(f"scales must be [K,3], got {scales.data.shape}")
    sx = ad.narrow(scales, 1, 0, 1)
    sy = ad.narrow(scales, 1, 1, 1)
    sz = ad.narrow(scales, 1, 2, 1)
    return ad.mean_all(ad.mul(ad.mul(sx, sy), sz))


def loss_total(
    rendered: ad.Tensor,
    target_rgb: np.ndarray,
    target_matte: np.ndarray,
    decoded: DecodedAvatar,
    code: ExpressionCode,
    tracked_vertices: np.ndarray,
    weights: LossWeights,
    gain: ad.Tensor | None = None,
) -> tuple[ad.Tensor, LossBreakdown]:
    """Weighted sum of the five components for one (frame, camera) pair.

    rendered is [R,4] rgb+alpha from the ray march; gain, when given,
    scales the rgb rows (per-light brightness calibration) but never the
    opacity.  Any non-finite component aborts with diagnostics.
    """
    dtype = rendered.data.dtype
    rgb = ad.narrow(rendered, 1, 0, 3)
    if gain is not None:
        rgb = ad.scale_by(rgb, gain)
    alpha = ad.narrow(rendered, 1, 3, 1)

    target_rgb = np.ascontiguousarray(np.asarray(target_rgb, dtype=dtype))
    tracked = np.ascontiguousarray(np.asarray(tracked_vertices, dtype=dtype))
    pho = ad.mse(rgb, ad.Tensor(target_rgb))
    geo = ad.mse(decoded.vertices, ad.Tensor(tracked))
    vol = volume_penalty(decoded.poses.s)
    kld = kl_divergence(code)
    mat = loss_matting(target_matte, alpha)

    parts = {"photometric": pho, "geometry": geo, "volume": vol, "kl": kld, "matting": mat}
    for name, part in parts.items():
        if not np.all(np.isfinite(part.data)):
            raise TrainingError(f"non-finite {name} loss component: {part.data!r}")

    total = (
        pho * weights.photometric
        + geo * weights.geometry
        + vol * weights.volume
        + kld * weights.kl
        + mat * weights.matting
    )
    if not np.all(np.isfinite(total.data)):
        raise TrainingError(f"non-finite total loss: {total.data!r}")
    breakdown = LossBreakdown(
        photometric=pho.data.item(),
        geometry=geo.data.item(),
        volume=vol.data.item(),
        kl=kld.data.item(),
        matting=mat.data.item(),
        total=total.data.item(),
    )
    return total, breakdown


def template_from_dataset(reader: DatasetReader) -> TemplateMesh:
    """Rebuild the guide-mesh template recorded in the dataset manifest."""
    return SyntheticScene.from_dict(reader.scene.to_dict()).template_mesh()


_CSV_COLUMNS = ("iteration", "photometric", "geometry", "volume", "kl", "matting", "total", "psnr")


class AvatarTrainer:
    """Stateful optimization loop over one OLAT dataset."""

    def __init__(
        self,
        reader: DatasetReader,
        template: TemplateMesh,
        config: TrainConfig,
        decoder_config: DecoderConfig,
        out_dir: str | Path | None = None,
    ):
        self.reader = reader
        self.config = config
        self.decoder_config = decoder_config
        self.dtype = config.dtype
        self.out_dir = Path(out_dir) if out_dir is not None else None

        schedule = reader.schedule
        excluded = set(config.holdout_frames)
        self.olat_frame_ids = [
            fid
            for fid in reader.frame_ids
            if schedule.frame_lights[fid % schedule.n_frames] != FULL_ON and fid not in excluded
        ]
        if not self.olat_frame_ids:
            raise ConfigError("dataset has no single-light frames to train on")

        n_cams = len(reader.cameras)
        if config.train_cameras is None:
            self.train_cameras = tuple(range(n_cams))
        else:
            if any(i < 0 or i >= n_cams for i in config.train_cameras):
                raise ConfigError(f"train camera index out of range for {n_cams} cameras")
            self.train_cameras = config.train_cameras

        self.rng = np.random.default_rng(config.seed)
        self.encoder = MeshEncoder(len(template.vertices), decoder_config, self.rng, self.dtype)
        self.decoder = AvatarDecoder(decoder_config, template, self.rng, self.dtype)
        self.light_gains = ad.parameter(
            np.ones((reader.rig.n_lights, 1), dtype=self.dtype), name="light_gains"
        )
        params = self.encoder.parameters() + self.decoder.parameters() + [self.light_gains]
        self.optimizer = ad.Adam(params, lr=config.learning_rate)

        # depth sampling frozen from the rest pose and the camera distances
        rest = self.decoder.anchors.rest_scale
        head_radius = float(np.linalg.norm(template.vertices, axis=1).max())
        cam_dist = max(float(np.linalg.norm(c.position)) for c in reader.cameras)
        self.grid = grid_for_extents(rest, cam_dist + 2.0 * head_radius + 0.1)

        self.iteration = 0
        self.initial_loss: float | None = None
        self._frames: dict[int, object] = {}
        self.probe_frame_id = self.olat_frame_ids[0]
        self.probe_camera = self.train_cameras[0]
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.metrics_path = self.out_dir / "metrics.csv"
            if not self.metrics_path.exists():
                with open(self.metrics_path, "w", newline="") as fh:
                    csv.writer(fh).writerow(_CSV_COLUMNS)
        else:
            self.metrics_path = None

    # -- data access ---------------------------------------------------------

    def _frame(self, frame_id: int):
        if frame_id not in self._frames:
            self._frames[frame_id] = self.reader.load_frame(frame_id)
        return self._frames[frame_id]

    def _stabilized_view(self, frame, cam_index: int):
        cam = stabilize_camera(
            self.reader.cameras[cam_index], frame.pose_axis_angle, frame.pose_translation
        )
        light = stabilize_point(
            self.reader.rig.positions[frame.light_index],
            frame.pose_axis_angle,
            frame.pose_translation,
        )
        return cam, light

    # -- forward/backward ----------------------------------------------------

    def _pair_loss(self, frame, cam_index: int) -> tuple[ad.Tensor, LossBreakdown]:
        cam, light = self._stabilized_view(frame, cam_index)
        code = self.encoder(frame.vertices, sample_rng=self.rng)
        decoded = self.decoder(code.z, cam.position, light)

        origins, dirs = camera_rays(cam, dtype=self.dtype)
        n_rays = min(self.config.rays_per_image, len(origins))
        sel = self.rng.choice(len(origins), size=n_rays, replace=False)
        out = render_scene(decoded.poses, decoded.payload, origins[sel], dirs[sel], self.grid)

        gain = ad.gather_rows(self.light_gains, np.array([frame.light_index]))
        target_rgb = frame.images[cam_index].reshape(3, -1).T[sel]
        target_matte = frame.mattes[cam_index].reshape(-1)[sel][:, None]
        return loss_total(
            out,
            target_rgb,
            target_matte,
            decoded,
            code,
            frame.vertices,
            self.config.weights,
            gain=gain,
        )

    def step(self) -> dict:
        """One optimizer step over a sampled batch; returns the metric row."""
        b = self.config.batch_size
        frame_picks = self.rng.integers(0, len(self.olat_frame_ids), size=b)
        cam_picks = self.rng.integers(0, len(self.train_cameras), size=b)

        sums = dict.fromkeys(("photometric", "geometry", "volume", "kl", "matting"), 0.0)
        with ad.Tape() as tape:
            total = None
            for fi, ci in zip(frame_picks, cam_picks):
                frame = self._frame(self.olat_frame_ids[int(fi)])
                pair_total, br = self._pair_loss(frame, self.train_cameras[int(ci)])
                total = pair_total if total is None else total + pair_total
                for key in sums:
                    sums[key] += getattr(br, key)
            total = total * (1.0 / b)
            total_val = total.data.item()

            if self.initial_loss is None:
                self.initial_loss = total_val
            if total_val > DIVERGENCE_FACTOR * max(self.initial_loss, 1e-12):
                raise TrainingError(
                    f"training diverged at iteration {self.iteration + 1}: "
                    f"loss {total_val:.6g} exceeds {DIVERGENCE_FACTOR:.0g} x initial "
                    f"{self.initial_loss:.6g}; components "
                    + ", ".join(f"{k}={v / b:.6g}" for k, v in sums.items())
                )

            self.optimizer.zero_grad()
            tape.backward(total)
        self.optimizer.step()
        np.clip(self.light_gains.data, *GAIN_RANGE, out=self.light_gains.data)

        self.iteration += 1
        row = {k: v / b for k, v in sums.items()}
        row["iteration"] = self.iteration
        row["total"] = total_val
        row["psnr"] = ""
        if self.iteration % self.config.eval_every == 0 or self.iteration == 1:
            row["psnr"] = f"{self.probe_psnr():.4f}"
        self._log_row(row)
        return row

    def train(self) -> Path | None:
        """Run the configured number of iterations; returns the last checkpoint."""
        last = None
        while self.iteration < self.config.iterations:
            self.step()
            if self.out_dir is not None and (
                self.iteration % self.config.checkpoint_every == 0
                or self.iteration == self.config.iterations
            ):
                last = self.out_dir / f"checkpoint_{self.iteration:06d}.ckpt"
                self.save_checkpoint(last)
        return last

    # -- evaluation helpers ----------------------------------------------------

    def render_view(self, frame_id: int, cam_index: int) -> tuple[np.ndarray, np.ndarray]:
        """Inference render of one dataset view: (rgb [H,W,3], alpha [H,W])."""
        frame = self._frame(frame_id)
        cam, light = self._stabilized_view(frame, cam_index)
        code = self.encoder(frame.vertices)
        decoded = self.decoder(code.z, cam.position, light)
        img, alpha = render_camera(decoded.poses, decoded.payload, cam, self.grid)
        img = img * float(self.light_gains.data[frame.light_index, 0])
        return img, alpha

    def probe_psnr(self) -> float:
        frame = self._frame(self.probe_frame_id)
        img, _ = self.render_view(self.probe_frame_id, self.probe_camera)
        target = frame.images[self.probe_camera].transpose(1, 2, 0)
        err = float(np.mean((img.astype(np.float64) - target.astype(np.float64)) ** 2))
        if err <= 0:
            return 99.0
        return min(99.0, float(10.0 * np.log10(1.0 / err)))

    def background_alpha(self, frame_id: int, cam_index: int) -> float:
        """Mean accumulated opacity over pixels the matte marks as empty."""
        frame = self._frame(frame_id)
        _, alpha = self.render_view(frame_id, cam_index)
        mask = frame.mattes[cam_index] <= 0
        if not mask.any():
            raise ConfigError("view has no background pixels to measure")
        return float(alpha[mask].mean())

    def _log_row(self, row: dict) -> None:
        if self.metrics_path is None:
            return
        with open(self.metrics_path, "a", newline="") as fh:
            csv.writer(fh).writerow([row[c] for c in _CSV_COLUMNS])

    # -- persistence -----------------------------------------------------------

    def save_checkpoint(self, path: str | Path) -> None:
        arrays = {f"encoder.{k}": v for k, v in self.encoder.state_dict().items()}
        arrays.update({f"decoder.{k}": v for k, v in self.decoder.state_dict().items()})
        arrays["train.light_gains"] = self.light_gains.data.copy()
        arrays.update(self.optimizer.state_arrays())
        meta = {
            "kind": "training",
            "iteration": self.iteration,
            "initial_loss": self.initial_loss,
            "train_config": self.config.to_dict(),
            "decoder_config": self.decoder_config.to_dict(),
            "n_vertices": self.encoder.n_vertices,
            "rng_state": self.rng.bit_generator.state,
            "grid": self.grid.to_dict(),
        }
        ad.save_checkpoint(path, arrays, meta=meta)

    def export_avatar(self, path: str | Path) -> None:
        """Write the inference-only container used by rendering services."""
        save_avatar(
            path,
            self.encoder,
            self.decoder,
            meta={
                "light_gains": self.light_gains.data.reshape(-1).tolist(),
                "grid": self.grid.to_dict(),
                "iteration": self.iteration,
            },
        )

    @staticmethod
    def resume(
        reader: DatasetReader,
        template: TemplateMesh,
        path: str | Path,
        out_dir: str | Path | None = None,
    ) -> "AvatarTrainer":
        """Restore a trainer whose next step matches the saved run bitwise."""
        arrays, meta = ad.load_checkpoint(path)
        if meta.get("kind") != "training":
            raise CheckpointError("not a training checkpoint")
        config = TrainConfig.from_dict(meta["train_config"])
        decoder_config = DecoderConfig.from_dict(meta["decoder_config"])
        trainer = AvatarTrainer(reader, template, config, decoder_config, out_dir=out_dir)
        trainer.encoder.load_state_dict(
            {k[len("encoder."):]: v for k, v in arrays.items() if k.startswith("encoder.")}
        )
        trainer.decoder.load_state_dict(
            {k[len("decoder."):]: v for k, v in arrays.items() if k.startswith("decoder.")}
        )
        gains = arrays["train.light_gains"]
        if gains.shape != trainer.light_gains.data.shape:
            raise CheckpointError("light gain table does not match the dataset rig")
        trainer.light_gains.data = np.ascontiguousarray(gains, dtype=trainer.dtype)
        trainer.optimizer.load_state_arrays(
            {k: v for k, v in arrays.items() if k.startswith("adam.")}
        )
        trainer.rng.bit_generator.state = meta["rng_state"]
        trainer.iteration = int(meta["iteration"])
        trainer.initial_loss = meta["initial_loss"]
        return trainer


def train(
    reader: DatasetReader,
    config: TrainConfig,
    decoder_config: DecoderConfig,
    out_dir: str | Path,
    template: TemplateMesh | None = None,
    resume_from: str | Path | None = None,
) -> tuple[AvatarTrainer, Path | None]:
    """Convenience driver: build or resume a trainer and run it to completion."""
    if template is None:
        template = template_from_dataset(reader)
    if resume_from is not None:
        trainer = AvatarTrainer.resume(reader, template, resume_from, out_dir=out_dir)
    else:
        trainer = AvatarTrainer(reader, template, config, decoder_config, out_dir=out_dir)
    last = trainer.train()
    return trainer, last
