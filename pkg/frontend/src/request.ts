/**
 * StudioScene -> RenderRequest mapping plus the two pieces of camera
 * math the UI owns: orbit placement and the dolly-zoom constraint.
 * All rendering happens on the server; nothing here touches pixels.
 */

import type { RenderRequest, Vec3 } from "./types.js";
import type { StudioScene } from "./state.js";

const DEG = Math.PI / 180;

/**
 * Camera position on an orbit around the origin. Azimuth 0 looks down
 * +z toward the head, positive azimuth swings toward +x, elevation
 * raises the camera toward +y. Matches the service's y-up convention.
 */
export function orbitPosition(azimuthDeg: number, elevationDeg: number, distance: number): Vec3 {
  const az = azimuthDeg * DEG;
  const el = elevationDeg * DEG;
  return [
    distance * Math.sin(az) * Math.cos(el),
    distance * Math.sin(el),
    distance * Math.cos(az) * Math.cos(el),
  ];
}

/**
 * Dolly-zoom: moving the camera from `fromDistance` to `toDistance`
 * while keeping the subject's framed size constant requires
 * tan(fov/2) * distance to stay constant.
 */
export function dollyFov(fromDistance: number, fromVfovDeg: number, toDistance: number): number {
  if (fromDistance <= 0 || toDistance <= 0) {
    throw new Error("dolly distances must be positive");
  }
  const halfTan = Math.tan((fromVfovDeg * DEG) / 2) * (fromDistance / toDistance);
  const fov = (2 * Math.atan(halfTan)) / DEG;
  return Math.min(179, Math.max(0.01, fov));
}

/** Wrap any angle into [0, 360); 360 itself maps back to 0. */
export function normalizeYaw(yawDeg: number): number {
  const wrapped = yawDeg % 360;
  return wrapped < 0 ? wrapped + 360 : wrapped;
}

export function sceneToRequest(scene: StudioScene, stepScale: number): RenderRequest {
  const { orbit, size } = scene;
  const lighting =
    scene.lighting.mode === "point"
      ? { point_lights: scene.lighting.lights.map((l) => ({ position: l.position, rgb: l.rgb })) }
      : { env: { id: scene.lighting.envId, yaw_deg: normalizeYaw(scene.lighting.yawDeg) } };
  const expression =
    scene.expression.mode === "mesh"
      ? { mesh_id: scene.expression.meshId }
      : { blendweights: [...scene.expression.weights] };
  return {
    camera: {
      position: orbitPosition(orbit.azimuthDeg, orbit.elevationDeg, orbit.distance),
      look_at: [0, 0, 0],
      up: [0, 1, 0],
      vfov_deg: orbit.vfovDeg,
      width: size.width,
      height: size.height,
    },
    lighting,
    expression,
    quality: { step_scale: stepScale },
  };
}
