"""Dataset directory layout: one manifest plus per-frame blob folders.

Radiometric data stays in linear RGB float32.  Everything round-trips
bitwise: images through the raw float container, vertices through npy,
scalars through JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataFormatError
from ..imgio import load_float_image, save_float_image
from ..volren import Camera
from .rig import LightRig, desk_cameras, desk_rig
from .scene import (
    SyntheticScene,
    apply_pose,
    expression_at,
    pose_at,
    shade_frame,
)
from .schedule import FULL_ON, LightingSchedule, generate_schedule

MANIFEST_VERSION = 1


@dataclass
class ExpressionFrame:
    """One captured instant across all cameras."""

    frame_id: int
    time: float
    light_index: int  # FULL_ON for tracking frames
    vertices: np.ndarray  # [V, 3] float32, stabilized (head-pose removed)
    pose_axis_angle: np.ndarray  # [3]
    pose_translation: np.ndarray  # [3]
    expression: np.ndarray  # [E] oracle parameters
    images: np.ndarray  # [n_cams, 3, H, W] float32 linear
    mattes: np.ndarray  # [n_cams, H, W] float32 in [0, 1]

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise DataFormatError(f"frame {self.frame_id}: images must be [cams, 3, H, W]")
        if self.mattes.shape != (self.images.shape[0],) + self.images.shape[2:]:
            raise DataFormatError(f"frame {self.frame_id}: matte/image shape mismatch")
        if np.any(self.mattes < 0) or np.any(self.mattes > 1):
            raise DataFormatError(f"frame {self.frame_id}: matte outside [0, 1]")

    @property
    def is_tracking(self) -> bool:
        return self.light_index == FULL_ON


def _frame_dir(root: Path, frame_id: int) -> Path:
    return root / "frames" / f"{frame_id:06d}"


def write_dataset(
    root: str | Path,
    frames: list[ExpressionFrame],
    cameras: list[Camera],
    rig: LightRig,
    schedule: LightingSchedule,
    scene: SyntheticScene,
) -> None:
    root = Path(root)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    for fr in frames:
        if fr.light_index != FULL_ON and not 0 <= fr.light_index < rig.n_lights:
            raise DataFormatError(
                f"frame {fr.frame_id} references unknown light {fr.light_index}"
            )
        d = _frame_dir(root, fr.frame_id)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "mesh.npy", fr.vertices.astype(np.float32))
        for j in range(len(fr.images)):
            save_float_image(d / f"cam{j}.image.fimg", fr.images[j].transpose(1, 2, 0))
            save_float_image(d / f"cam{j}.matte.fimg", fr.mattes[j])
        sidecar = {
            "frame_id": fr.frame_id,
            "time": fr.time,
            "light_index": int(fr.light_index),
            "pose_axis_angle": fr.pose_axis_angle.tolist(),
            "pose_translation": fr.pose_translation.tolist(),
            "expression": fr.expression.tolist(),
            "n_cameras": len(fr.images),
        }
        (d / "frame.json").write_text(json.dumps(sidecar, indent=1))
    manifest = {
        "version": MANIFEST_VERSION,
        "frame_ids": [fr.frame_id for fr in frames],
        "cameras": [c.to_dict() for c in cameras],
        "rig": rig.to_dict(),
        "schedule": {"frame_lights": schedule.to_list(), "n_lights": schedule.n_lights, "fps": schedule.fps},
        "scene": scene.to_dict(),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))


class DatasetReader:
    """Validated view over a dataset directory; frames load lazily."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.is_file():
            raise DataFormatError(f"no manifest at {manifest_path}")
        try:
            manifest = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as e:
            raise DataFormatError(f"manifest is not valid JSON: {e}") from e
        if manifest.get("version") != MANIFEST_VERSION:
            raise DataFormatError(f"unsupported manifest version {manifest.get('version')}")
        self.manifest = manifest
        self.frame_ids: list[int] = list(manifest["frame_ids"])
        self.cameras = [Camera.from_dict(c) for c in manifest["cameras"]]
        self.rig = LightRig.from_dict(manifest["rig"])
        self.schedule = LightingSchedule(
            frame_lights=tuple(manifest["schedule"]["frame_lights"]),
            n_lights=manifest["schedule"]["n_lights"],
            fps=manifest["schedule"]["fps"],
        )
        self.scene = SyntheticScene.from_dict(manifest["scene"])

    def __len__(self) -> int:
        return len(self.frame_ids)

    def load_frame(self, frame_id: int) -> ExpressionFrame:
        d = _frame_dir(self.root, frame_id)
        sidecar_path = d / "frame.json"
        if not sidecar_path.is_file():
            raise DataFormatError(f"frame {frame_id}: missing {sidecar_path}")
        meta = json.loads(sidecar_path.read_text())
        light = int(meta["light_index"])
        if light != FULL_ON and not 0 <= light < self.rig.n_lights:
            raise DataFormatError(f"frame {frame_id} references unknown light {light}")
        try:
            verts = np.load(d / "mesh.npy")
        except (FileNotFoundError, ValueError) as e:
            raise DataFormatError(f"frame {frame_id}: bad mesh blob ({e})") from e
        images, mattes = [], []
        for j in range(int(meta["n_cameras"])):
            try:
                img = load_float_image(d / f"cam{j}.image.fimg")
                matte = load_float_image(d / f"cam{j}.matte.fimg")
            except DataFormatError as e:
                raise DataFormatError(f"frame {frame_id}: {e}") from e
            images.append(img.transpose(2, 0, 1))
            mattes.append(matte)
        return ExpressionFrame(
            frame_id=frame_id,
            time=float(meta["time"]),
            light_index=light,
            vertices=verts,
            pose_axis_angle=np.array(meta["pose_axis_angle"]),
            pose_translation=np.array(meta["pose_translation"]),
            expression=np.array(meta["expression"]),
            images=np.stack(images),
            mattes=np.stack(mattes),
        )


def read_dataset(root: str | Path) -> DatasetReader:
    return DatasetReader(root)


# ---------------------------------------------------------------------------
# generation driver


def generate_dataset(
    root: str | Path,
    n_cycles: int = 4,
    scene: SyntheticScene | None = None,
    rig: LightRig | None = None,
    cameras: list[Camera] | None = None,
    fps: float = 90.0,
) -> DatasetReader:
    """Simulate the capture: schedule-driven shading of the moving subject.

    Tracking frames store their true mesh; single-light frames store
    vertices interpolated between the neighboring tracking frames, the
    same approximation a real tracker would hand downstream.
    """
    scene = scene or SyntheticScene()
    rig = rig or desk_rig()
    cameras = cameras or desk_cameras()
    schedule = generate_schedule(rig.positions, fps=fps)
    n_frames = n_cycles * schedule.n_frames

    true_verts: dict[int, np.ndarray] = {}
    tracked: list[int] = []
    lights: list[int] = []
    for fi in range(n_frames):
        light = schedule.frame_lights[fi % schedule.n_frames]
        lights.append(light)
        true_verts[fi] = scene.express(expression_at(scene, fi, fps))
        if light == FULL_ON:
            tracked.append(fi)

    frames = []
    for fi in range(n_frames):
        light = lights[fi]
        axis_angle, translation = pose_at(fi, fps)
        posed = apply_pose(true_verts[fi], axis_angle, translation)
        images, mattes = [], []
        for cam in cameras:
            img, matte = shade_frame(
                scene, posed, cam, rig, light_index=None if light == FULL_ON else light
            )
            images.append(img)
            mattes.append(matte)
        if light == FULL_ON:
            stored = true_verts[fi]
        else:
            lo = max([t for t in tracked if t <= fi], default=tracked[0])
            hi = min([t for t in tracked if t >= fi], default=tracked[-1])
            if lo == hi:
                stored = true_verts[lo]
            else:
                w = (fi - lo) / (hi - lo)
                stored = (1 - w) * true_verts[lo] + w * true_verts[hi]
        frames.append(
            ExpressionFrame(
                frame_id=fi,
                time=fi / fps,
                light_index=light,
                vertices=stored.astype(np.float32),
                pose_axis_angle=axis_angle,
                pose_translation=translation,
                expression=expression_at(scene, fi, fps),
                images=np.stack(images),
                mattes=np.stack(mattes),
            )
        )
    write_dataset(root, frames, cameras, rig, schedule, scene)
    return read_dataset(root)
