/**
 * Studio scene state: everything the artist can touch, serializable
 * to and from the URL hash so a session can be shared as a link.
 * The scene maps to exactly one RenderRequest (see request.ts).
 */

import { z } from "zod";

const finite = z.number().finite();
const vec3 = z.tuple([finite, finite, finite]);

const lightSchema = z.object({
  position: vec3,
  rgb: z.tuple([finite.nonnegative(), finite.nonnegative(), finite.nonnegative()]),
});

/** Lighting is a tagged choice, mirroring the service contract. */
const lightingSchema = z.discriminatedUnion("mode", [
  z.object({ mode: z.literal("point"), lights: z.array(lightSchema).min(1) }),
  z.object({ mode: z.literal("env"), envId: z.string().min(1), yawDeg: finite }),
]);

const expressionSchema = z.discriminatedUnion("mode", [
  z.object({ mode: z.literal("mesh"), meshId: z.string().min(1) }),
  z.object({ mode: z.literal("blend"), weights: z.array(finite).min(1) }),
]);

export const sceneSchema = z.object({
  orbit: z.object({
    azimuthDeg: finite,
    elevationDeg: z.number().min(-89).max(89),
    distance: z.number().positive(),
    vfovDeg: z.number().gt(0).lt(180),
  }),
  lighting: lightingSchema,
  expression: expressionSchema,
  // render size of the full-quality frame; previews reuse it with a
  // coarser march step rather than a different resolution
  size: z.object({ width: z.number().int().min(1), height: z.number().int().min(1) }),
});

export type StudioScene = z.infer<typeof sceneSchema>;
export type SceneLighting = StudioScene["lighting"];
export type SceneExpression = StudioScene["expression"];

export function defaultScene(): StudioScene {
  return {
    orbit: { azimuthDeg: 0, elevationDeg: 5, distance: 3.2, vfovDeg: 7 },
    lighting: { mode: "point", lights: [{ position: [1.5, 1.5, 2.0], rgb: [1, 1, 1] }] },
    expression: { mode: "blend", weights: [0, 0, 0, 0] },
    size: { width: 256, height: 256 },
  };
}

export interface DecodedScene {
  scene: StudioScene;
  /** Non-empty when the input was malformed and defaults were substituted. */
  warnings: string[];
}

/** Compact, order-stable URL form: one `s` param holding JSON. */
export function encodeScene(scene: StudioScene): string {
  const params = new URLSearchParams();
  params.set("s", JSON.stringify(scene));
  return params.toString();
}

export function decodeScene(query: string): DecodedScene {
  const params = new URLSearchParams(query);
  const raw = params.get("s");
  if (raw === null) {
    return { scene: defaultScene(), warnings: query ? ["missing scene parameter"] : [] };
  }
  let parsed: unknown;
  try {
    parsed = JSON.parse(raw);
  } catch {
    return { scene: defaultScene(), warnings: ["scene parameter is not valid JSON"] };
  }
  const result = sceneSchema.safeParse(parsed);
  if (!result.success) {
    const issues = result.error.issues.map((i) => `${i.path.join(".")}: ${i.message}`);
    return { scene: defaultScene(), warnings: issues };
  }
  return { scene: result.data, warnings: [] };
}
