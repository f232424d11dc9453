/**
 * Wire types for the render service /v1 API.
 * These mirror the server's request/response schemas field for field;
 * the UI never invents render state of its own.
 */

export type Vec3 = [number, number, number];

export interface CameraSpec {
  position: Vec3;
  look_at: Vec3;
  up: Vec3;
  vfov_deg: number;
  width: number;
  height: number;
}

export interface PointLight {
  position: Vec3;
  rgb: Vec3;
}

export interface EnvLighting {
  id: string;
  yaw_deg: number;
}

/** Exactly one of the two variants is present. */
export interface LightingSpec {
  point_lights?: PointLight[];
  env?: EnvLighting;
}

/** Exactly one of the three variants is present. */
export interface ExpressionSpec {
  mesh_id?: string;
  blendweights?: number[];
  latent?: number[];
}

export interface RenderRequest {
  camera: CameraSpec;
  lighting: LightingSpec;
  expression: ExpressionSpec;
  quality: { step_scale: number };
  include_linear?: boolean;
}

export interface RenderResponse {
  png_base64: string;
  linear_base64: string | null;
  checkpoint_id: string;
  width: number;
  height: number;
  render_seconds: number;
}

export interface AssetCatalog {
  checkpoints: string[];
  envmaps: string[];
  expressions: string[];
  expression_presets: Record<string, number[]>;
  active_checkpoint: string | null;
}

export interface SessionState {
  checkpoint_id: string | null;
  cached_envmaps: string[];
  queue_depth: number;
  max_queue: number;
}
