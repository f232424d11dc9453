/**
 * Studio shell: binds the control panel to a StudioScene, keeps the
 * URL hash in sync for sharing, and drives the render loop. Every
 * pixel shown comes from the service; the client only composes state.
 */

import { activateCheckpoint, getAssets, postRender } from "./api.js";
import { RenderLoop } from "./coalesce.js";
import { dollyFov, sceneToRequest } from "./request.js";
import { decodeScene, defaultScene, encodeScene, type StudioScene } from "./state.js";
import type { RenderResponse } from "./types.js";

const PREVIEW_STEP_SCALE = 4;
const FULL_STEP_SCALE = 1;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

let scene: StudioScene = defaultScene();
let lastFull: RenderResponse | null = null;

const viewport = $<HTMLImageElement>("viewport");
const status = $<HTMLElement>("status");
const notice = $<HTMLElement>("notice");

function showNotice(lines: string[]): void {
  notice.textContent = lines.join("; ");
  notice.hidden = lines.length === 0;
}

interface TaggedResponse {
  res: RenderResponse;
  full: boolean;
}

const loop = new RenderLoop<ReturnType<typeof sceneToRequest>, TaggedResponse>({
  post: async (req, signal) => ({
    res: await postRender(req, signal),
    full: req.quality.step_scale === FULL_STEP_SCALE,
  }),
  display: ({ res, full: isFull }) => {
    viewport.src = `data:image/png;base64,${res.png_base64}`;
    status.textContent = `${res.width}x${res.height} @ ${res.checkpoint_id} in ${(
      res.render_seconds * 1000
    ).toFixed(0)} ms`;
    if (isFull) lastFull = res;
  },
  onError: (err) => {
    showNotice([err instanceof Error ? err.message : String(err)]);
  },
});

function syncUrl(): void {
  history.replaceState(null, "", `#${encodeScene(scene)}`);
}

function preview(): void {
  syncUrl();
  loop.request(sceneToRequest(scene, PREVIEW_STEP_SCALE));
}

function full(): void {
  syncUrl();
  showNotice([]);
  loop.flush(sceneToRequest(scene, FULL_STEP_SCALE));
}

/** Bind a range+number pair to a scene field; preview while dragging, full on release. */
function bindSlider(id: string, get: () => number, set: (v: number) => void): void {
  const input = $<HTMLInputElement>(id);
  input.value = String(get());
  input.addEventListener("input", () => {
    set(Number(input.value));
    preview();
  });
  input.addEventListener("change", () => {
    set(Number(input.value));
    full();
  });
}

function bindOrbit(): void {
  bindSlider("azimuth", () => scene.orbit.azimuthDeg, (v) => (scene.orbit.azimuthDeg = v));
  bindSlider("elevation", () => scene.orbit.elevationDeg, (v) => (scene.orbit.elevationDeg = v));
  bindSlider("distance", () => scene.orbit.distance, (v) => (scene.orbit.distance = v));
  bindSlider("vfov", () => scene.orbit.vfovDeg, (v) => (scene.orbit.vfovDeg = v));
}

function bindLights(): void {
  const fields: Array<[string, number]> = [["lx", 0], ["ly", 1], ["lz", 2]];
  for (const [id, axis] of fields) {
    bindSlider(
      id,
      () => (scene.lighting.mode === "point" ? scene.lighting.lights[0]!.position[axis]! : 0),
      (v) => {
        if (scene.lighting.mode === "point") scene.lighting.lights[0]!.position[axis] = v;
      },
    );
  }
  bindSlider(
    "intensity",
    () => (scene.lighting.mode === "point" ? scene.lighting.lights[0]!.rgb[0]! : 1),
    (v) => {
      if (scene.lighting.mode === "point") scene.lighting.lights[0]!.rgb = [v, v, v];
    },
  );
  bindSlider(
    "yaw",
    () => (scene.lighting.mode === "env" ? scene.lighting.yawDeg : 0),
    (v) => {
      if (scene.lighting.mode === "env") scene.lighting.yawDeg = v;
    },
  );
}

function bindExpression(presets: Record<string, number[]>): void {
  const select = $<HTMLSelectElement>("preset");
  for (const name of Object.keys(presets)) {
    const opt = document.createElement("option");
    opt.value = name;
    opt.textContent = name;
    select.appendChild(opt);
  }
  select.addEventListener("change", () => {
    const weights = presets[select.value];
    if (weights) {
      scene.expression = { mode: "blend", weights: [...weights] };
      full();
    }
  });
  const sliders = $<HTMLElement>("blendweights");
  function rebuildSliders(): void {
    sliders.replaceChildren();
    if (scene.expression.mode !== "blend") return;
    scene.expression.weights.forEach((w, i) => {
      const input = document.createElement("input");
      input.type = "range";
      input.min = "-1";
      input.max = "1";
      input.step = "0.05";
      input.value = String(w);
      input.addEventListener("input", () => {
        if (scene.expression.mode === "blend") {
          scene.expression.weights[i] = Number(input.value);
          preview();
        }
      });
      input.addEventListener("change", full);
      sliders.appendChild(input);
    });
  }
  rebuildSliders();
  select.addEventListener("change", rebuildSliders);
}

function bindEnvironment(envIds: string[]): void {
  const select = $<HTMLSelectElement>("envmap");
  const none = document.createElement("option");
  none.value = "";
  none.textContent = "point light";
  select.appendChild(none);
  for (const id of envIds) {
    const opt = document.createElement("option");
    opt.value = id;
    opt.textContent = id;
    select.appendChild(opt);
  }
  select.addEventListener("change", () => {
    if (select.value === "") {
      scene.lighting = defaultScene().lighting;
    } else {
      scene.lighting = { mode: "env", envId: select.value, yawDeg: 0 };
    }
    full();
  });
}

/** Dolly toggle: animate distance while compensating FOV. */
function bindDolly(): void {
  const button = $<HTMLButtonElement>("dolly");
  let active = false;
  button.addEventListener("click", () => {
    if (active) return;
    active = true;
    const from = { ...scene.orbit };
    const target = from.distance < 3 ? from.distance * 2 : from.distance / 2;
    const t0 = performance.now();
    const durationMs = 1200;
    const tick = (now: number) => {
      const t = Math.min(1, (now - t0) / durationMs);
      const d = from.distance + (target - from.distance) * t;
      scene.orbit.distance = d;
      scene.orbit.vfovDeg = dollyFov(from.distance, from.vfovDeg, d);
      if (t < 1) {
        preview();
        requestAnimationFrame(tick);
      } else {
        full();
        active = false;
      }
    };
    requestAnimationFrame(tick);
  });
}

function bindExport(): void {
  $<HTMLButtonElement>("export").addEventListener("click", () => {
    if (!lastFull) {
      showNotice(["no full-quality frame rendered yet"]);
      return;
    }
    const a = document.createElement("a");
    a.href = `data:image/png;base64,${lastFull.png_base64}`;
    a.download = `voxelight-${lastFull.checkpoint_id}.png`;
    a.click();
  });
}

async function boot(): Promise<void> {
  const decoded = decodeScene(location.hash.replace(/^#/, ""));
  scene = decoded.scene;
  showNotice(decoded.warnings);

  try {
    const assets = await getAssets();
    if (assets.active_checkpoint === null && assets.checkpoints.length > 0) {
      await activateCheckpoint(assets.checkpoints[0]!);
    }
    bindEnvironment(assets.envmaps);
    bindExpression(assets.expression_presets);
  } catch (err) {
    showNotice([err instanceof Error ? err.message : String(err)]);
  }
  bindOrbit();
  bindLights();
  bindDolly();
  bindExport();
  full();
}

void boot();
