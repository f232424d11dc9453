"""Command-line front door: every subcommand is a thin wrapper over the
library so scripted runs and the HTTP service share one code path."""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from .avatar import AvatarBundle
from .dataforge import SyntheticScene, desk_cameras, desk_rig, generate_dataset, read_dataset
from .decoder import DecoderConfig
from .errors import VoxelightError
from .evaluation import HoldoutSpec, evaluate
from .imgio import save_float_image, save_image, save_png
from .primitives import load_template, save_template
from .relight import (
    compile_envmap,
    dolly_zoom,
    load_envmap,
    orbit_protocol,
    relight_composite,
    sky_envmap,
    uniform_envmap,
)
from .training import TrainConfig, train
from .volren import look_at


def _vec3(text: str) -> np.ndarray:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise click.BadParameter(f"expected x,y,z  got {text!r}")
    return np.array(parts)


def _int_list(text: str | None) -> tuple[int, ...] | None:
    if text is None or text == "":
        return None
    return tuple(int(p) for p in text.split(","))


class _Group(click.Group):
    """Surface library errors as clean CLI failures, not tracebacks."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except VoxelightError as e:
            raise click.ClickException(str(e)) from e


@click.group(cls=_Group)
def main():
    """Volumetric-primitive avatar toolkit."""


@main.command("synth-data")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--cycles", default=4, show_default=True, help="lighting schedule repeats")
@click.option("--grid", default=9, show_default=True, help="synthetic head resolution")
@click.option("--seed", default=0, show_default=True)
@click.option("--width", default=64, show_default=True)
@click.option("--height", default=64, show_default=True)
@click.option(
    "--store",
    type=click.Path(path_type=Path),
    default=None,
    help="also lay out a service asset store (template, scene, env maps, expressions)",
)
def synth_data(out, cycles, grid, seed, width, height, store):
    """Generate the synthetic OLAT capture used for training."""
    scene = SyntheticScene(n_grid=grid, seed=seed)
    rig = desk_rig()
    cameras = desk_cameras(width=width, height=height)
    reader = generate_dataset(out, n_cycles=cycles, scene=scene, rig=rig, cameras=cameras)
    click.echo(
        f"wrote {len(reader)} frames, {rig.n_lights} lights,"
        f" {len(cameras)} cameras -> {out}"
    )
    if store is not None:
        store.mkdir(parents=True, exist_ok=True)
        (store / "checkpoints").mkdir(exist_ok=True)
        (store / "envmaps").mkdir(exist_ok=True)
        (store / "expressions").mkdir(exist_ok=True)
        save_template(store / "template.npz", scene.template_mesh())
        (store / "scene.json").write_text(json.dumps(scene.to_dict()))
        save_float_image(store / "envmaps" / "sky.fimg", sky_envmap(64).radiance.transpose(1, 2, 0))
        save_float_image(
            store / "envmaps" / "overcast.fimg",
            uniform_envmap(32, value=0.4).radiance.transpose(1, 2, 0),
        )
        np.save(store / "expressions" / "neutral.npy", scene.base_vertices.astype(np.float32))
        for fid in reader.frame_ids[:3]:
            frame = reader.load_frame(fid)
            np.save(store / "expressions" / f"frame{fid:04d}.npy", frame.vertices)
        presets = {
            "neutral": [0.0] * scene.n_expressions,
            "smile": [1.0] + [0.0] * (scene.n_expressions - 1),
        }
        (store / "expressions" / "presets.json").write_text(json.dumps(presets))
        click.echo(f"store scaffolded at {store}")


@main.command("train")
@click.option("--data", required=True, type=click.Path(path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--iterations", default=20_000, show_default=True)
@click.option("--batch", default=4, show_default=True)
@click.option("--rays", default=4096, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--n-side", default=8, show_default=True, help="primitive grid side")
@click.option("--voxel-res", default=4, show_default=True)
@click.option(
    "--appearance",
    default=None,
    help="comma-separated appearance trunk widths; one upsampling stage per entry",
)
@click.option("--eval-every", default=250, show_default=True)
@click.option("--checkpoint-every", default=1000, show_default=True)
@click.option("--cameras", default=None, help="comma-separated training camera indices")
@click.option("--holdout-frames", default=None, help="comma-separated frame ids kept out")
@click.option("--resume", type=click.Path(path_type=Path), default=None)
@click.option("--export", type=click.Path(path_type=Path), default=None, help="avatar container")
def train_cmd(
    data, out, iterations, batch, rays, lr, seed, n_side, voxel_res, appearance,
    eval_every, checkpoint_every, cameras, holdout_frames, resume, export,
):
    """Optimize an avatar on a dataset; checkpoints land in --out."""
    reader = read_dataset(data)
    config = TrainConfig(
        learning_rate=lr,
        batch_size=batch,
        iterations=iterations,
        rays_per_image=rays,
        seed=seed,
        eval_every=eval_every,
        checkpoint_every=checkpoint_every,
        train_cameras=_int_list(cameras),
        holdout_frames=_int_list(holdout_frames) or (),
    )
    arch_kw = {"n_side": n_side, "voxel_res": voxel_res}
    if appearance is not None:
        arch_kw["appearance_channels"] = _int_list(appearance)
    arch = DecoderConfig(**arch_kw)
    trainer, last = train(reader, config, arch, out, resume_from=resume)
    click.echo(f"finished at iteration {trainer.iteration}; last checkpoint {last}")
    if export is not None:
        trainer.export_avatar(export)
        click.echo(f"avatar exported to {export}")


def _load_bundle(checkpoint: Path, template: Path) -> AvatarBundle:
    return AvatarBundle.load(checkpoint, load_template(template))


def _camera_from_flags(camera_pos, look, fov, width, height):
    return look_at(_vec3(camera_pos), _vec3(look), fov, width, height)


_shared_render_options = [
    click.option("--checkpoint", required=True, type=click.Path(path_type=Path)),
    click.option("--template", required=True, type=click.Path(path_type=Path)),
    click.option("--mesh", required=True, type=click.Path(path_type=Path), help=".npy vertices"),
    click.option("--camera-pos", default="0,0,3.2", show_default=True),
    click.option("--look-at", "look", default="0,0,0", show_default=True),
    click.option("--fov", default=7.0, show_default=True),
    click.option("--width", default=64, show_default=True),
    click.option("--height", default=64, show_default=True),
]


def _with_render_options(fn):
    for opt in reversed(_shared_render_options):
        fn = opt(fn)
    return fn


@main.command("render")
@_with_render_options
@click.option("--light", required=True, help="x,y,z point light position")
@click.option("--gain", default=None, type=float, help="defaults to the calibration gain")
@click.option("--out", required=True, type=click.Path(path_type=Path), help="png path")
def render_cmd(checkpoint, template, mesh, camera_pos, look, fov, width, height, light, gain, out):
    """Single point-light render; writes PNG plus a linear .fimg twin."""
    bundle = _load_bundle(checkpoint, template)
    camera = _camera_from_flags(camera_pos, look, fov, width, height)
    g = bundle.calibration_gain if gain is None else gain
    img, _ = bundle.render(np.load(mesh), camera, _vec3(light), gain=g)
    save_png(out, img)
    save_image(Path(out).with_suffix(".fimg"), img)
    click.echo(f"wrote {out}")


@main.command("orbit")
@_with_render_options
@click.option("--radius", default=3.0, show_default=True)
@click.option("--steps", default=24, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path), help="frame directory")
def orbit_cmd(checkpoint, template, mesh, camera_pos, look, fov, width, height, radius, steps, out):
    """Point light circling the head; one PNG per step."""
    bundle = _load_bundle(checkpoint, template)
    camera = _camera_from_flags(camera_pos, look, fov, width, height)
    frames = orbit_protocol(bundle, np.load(mesh), camera, radius=radius, steps=steps)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        save_png(out / f"orbit_{i:03d}.png", frame)
    click.echo(f"wrote {len(frames)} frames to {out}")


@main.command("dolly")
@_with_render_options
@click.option("--light", default="0,0,2", show_default=True)
@click.option("--start", required=True, type=float, help="start camera distance")
@click.option("--end", required=True, type=float, help="end camera distance")
@click.option("--steps", default=8, show_default=True)
@click.option("--height-fraction", default=0.6, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path))
def dolly_cmd(
    checkpoint, template, mesh, camera_pos, look, fov, width, height,
    light, start, end, steps, height_fraction, out,
):
    """Dolly zoom: camera distance sweeps while the subject size holds."""
    bundle = _load_bundle(checkpoint, template)
    camera = _camera_from_flags(camera_pos, look, fov, width, height)
    frames, cams = dolly_zoom(
        bundle, np.load(mesh), camera, _vec3(light), start, end,
        steps=steps, height_fraction=height_fraction,
    )
    out.mkdir(parents=True, exist_ok=True)
    for i, (frame, cam) in enumerate(zip(frames, cams)):
        save_png(out / f"dolly_{i:03d}.png", frame)
    click.echo(f"wrote {len(frames)} frames to {out} (fov {cams[0].fov_y_deg:.2f} -> {cams[-1].fov_y_deg:.2f} deg)")


@main.command("compile-env")
@click.option("--env", "env_path", required=True, type=click.Path(path_type=Path))
@click.option("--yaw", default=0.0, show_default=True, help="degrees")
@click.option("--count", default=256, show_default=True)
@click.option("--out", required=True, type=click.Path(path_type=Path), help="json path")
def compile_env_cmd(env_path, yaw, count, out):
    """Environment map -> weighted light directions (json)."""
    lighting = compile_envmap(load_envmap(env_path, yaw=np.deg2rad(yaw)), target_count=count)
    Path(out).write_text(json.dumps(lighting.to_dict()))
    click.echo(f"{len(lighting)} directions, energy {lighting.total_energy().round(4).tolist()}")


@main.command("relight")
@_with_render_options
@click.option("--env", "env_path", required=True, type=click.Path(path_type=Path))
@click.option("--yaw", default=0.0, show_default=True, help="degrees")
@click.option("--out", required=True, type=click.Path(path_type=Path), help="png path")
def relight_cmd(checkpoint, template, mesh, camera_pos, look, fov, width, height, env_path, yaw, out):
    """Composite the avatar under a compiled environment map."""
    bundle = _load_bundle(checkpoint, template)
    camera = _camera_from_flags(camera_pos, look, fov, width, height)
    lighting = compile_envmap(load_envmap(env_path, yaw=np.deg2rad(yaw)))
    img, _ = relight_composite(bundle, np.load(mesh), camera, lighting)
    save_png(out, img)
    save_image(Path(out).with_suffix(".fimg"), img)
    click.echo(f"composited {len(lighting)} directions -> {out}")


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(path_type=Path))
@click.option("--template", required=True, type=click.Path(path_type=Path))
@click.option("--data", required=True, type=click.Path(path_type=Path))
@click.option("--holdout-lights", default="", help="indices into the rig's held-out probes")
@click.option("--holdout-frames", default="", help="frame ids excluded from training")
@click.option("--cameras", default=None)
@click.option("--max-frames", default=4, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="csv path")
def eval_cmd(checkpoint, template, data, holdout_lights, holdout_frames, cameras, max_frames, out):
    """Holdout metrics for the model and the barycentric baseline."""
    bundle = _load_bundle(checkpoint, template)
    reader = read_dataset(data)
    holdout = HoldoutSpec(
        light_indices=_int_list(holdout_lights) or (),
        frame_ids=_int_list(holdout_frames) or (),
    )
    report = evaluate(
        bundle, reader, holdout, cameras=_int_list(cameras), max_frames=max_frames, out_csv=out
    )
    click.echo(report.to_markdown())


@main.command("serve")
@click.option("--store", required=True, type=click.Path(path_type=Path))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True)
@click.option("--frontend", type=click.Path(path_type=Path), default=None)
@click.option("--checkpoint", default=None, help="checkpoint id to activate on start")
@click.option("--max-pixels", default=1 << 20, show_default=True)
def serve_cmd(store, host, port, frontend, checkpoint, max_pixels):
    """Run the HTTP render service (and optionally the studio UI)."""
    import uvicorn

    from .service import create_app

    app = create_app(store, frontend_dir=frontend, max_pixels=max_pixels, checkpoint=checkpoint)
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
