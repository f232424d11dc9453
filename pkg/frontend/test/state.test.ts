import { describe, expect, it } from "vitest";

import { decodeScene, defaultScene, encodeScene, type StudioScene } from "../src/state.js";

/** Deterministic pseudo-random scene builder for round-trip sweeps. */
function randomScene(seed: number): StudioScene {
  let s = seed >>> 0;
  const rand = () => {
    // xorshift32; plenty for test variety
    s ^= s << 13;
    s ^= s >>> 17;
    s ^= s << 5;
    return ((s >>> 0) % 10_000) / 10_000;
  };
  const pick = <T>(xs: T[]): T => xs[Math.floor(rand() * xs.length) % xs.length]!;
  const lighting =
    rand() < 0.5
      ? {
          mode: "point" as const,
          lights: [
            {
              position: [rand() * 8 - 4, rand() * 8 - 4, rand() * 8 - 4] as [number, number, number],
              rgb: [rand() * 2, rand() * 2, rand() * 2] as [number, number, number],
            },
          ],
        }
      : { mode: "env" as const, envId: pick(["sky", "overcast", "spot"]), yawDeg: rand() * 720 - 360 };
  const expression =
    rand() < 0.5
      ? { mode: "mesh" as const, meshId: pick(["frame0000", "neutral"]) }
      : { mode: "blend" as const, weights: [rand(), rand(), rand(), rand()] };
  return {
    orbit: {
      azimuthDeg: rand() * 360 - 180,
      elevationDeg: rand() * 178 - 89,
      distance: 0.5 + rand() * 7.5,
      vfovDeg: 1 + rand() * 170,
    },
    lighting,
    expression,
    size: { width: 16 + Math.floor(rand() * 500), height: 16 + Math.floor(rand() * 500) },
  };
}

describe("scene url state", () => {
  it("round-trips the default scene", () => {
    const { scene, warnings } = decodeScene(encodeScene(defaultScene()));
    expect(warnings).toEqual([]);
    expect(scene).toEqual(defaultScene());
  });

  it("round-trips randomized scenes exactly", () => {
    for (let seed = 1; seed <= 50; seed++) {
      const original = randomScene(seed);
      const { scene, warnings } = decodeScene(encodeScene(original));
      expect(warnings).toEqual([]);
      expect(scene).toEqual(original);
    }
  });

  it("yields defaults without warnings for an empty query", () => {
    const { scene, warnings } = decodeScene("");
    expect(scene).toEqual(defaultScene());
    expect(warnings).toEqual([]);
  });

  it("falls back to defaults with a notice for broken JSON", () => {
    const { scene, warnings } = decodeScene("s=%7Bnope");
    expect(scene).toEqual(defaultScene());
    expect(warnings.length).toBeGreaterThan(0);
  });

  it("falls back to defaults with a notice for schema violations", () => {
    const bad = JSON.parse(JSON.stringify(defaultScene())) as Record<string, unknown>;
    (bad.orbit as Record<string, unknown>).distance = -2;
    const query = `s=${encodeURIComponent(JSON.stringify(bad))}`;
    const { scene, warnings } = decodeScene(query);
    expect(scene).toEqual(defaultScene());
    expect(warnings.some((w) => w.includes("distance"))).toBe(true);
  });

  it("rejects non-finite and wrong-typed fields", () => {
    const cases = [
      { ...defaultScene(), orbit: { azimuthDeg: "x", elevationDeg: 0, distance: 3, vfovDeg: 7 } },
      { ...defaultScene(), lighting: { mode: "point", lights: [] } },
      { ...defaultScene(), expression: { mode: "blend", weights: [] } },
      { ...defaultScene(), size: { width: 0, height: 64 } },
    ];
    for (const c of cases) {
      const query = `s=${encodeURIComponent(JSON.stringify(c))}`;
      const { scene, warnings } = decodeScene(query);
      expect(scene).toEqual(defaultScene());
      expect(warnings.length).toBeGreaterThan(0);
    }
  });

  it("treats a query without the scene key as malformed state", () => {
    const { scene, warnings } = decodeScene("foo=bar");
    expect(scene).toEqual(defaultScene());
    expect(warnings).toEqual(["missing scene parameter"]);
  });
});
