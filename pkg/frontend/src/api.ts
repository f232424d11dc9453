/** Thin typed client for the render service /v1 endpoints. */

import type {
  AssetCatalog,
  RenderRequest,
  RenderResponse,
  SessionState,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(`service replied ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

async function parseError(res: Response): Promise<never> {
  let detail = res.statusText;
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (body.detail !== undefined) detail = JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(res.status, detail);
}

export async function postRender(req: RenderRequest, signal: AbortSignal): Promise<RenderResponse> {
  const res = await fetch("/v1/render", {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(req),
    signal,
  });
  if (!res.ok) await parseError(res);
  return (await res.json()) as RenderResponse;
}

export async function getAssets(): Promise<AssetCatalog> {
  const res = await fetch("/v1/assets");
  if (!res.ok) await parseError(res);
  return (await res.json()) as AssetCatalog;
}

export async function getSessionState(): Promise<SessionState> {
  const res = await fetch("/v1/state");
  if (!res.ok) await parseError(res);
  return (await res.json()) as SessionState;
}

export async function activateCheckpoint(id: string): Promise<void> {
  const res = await fetch("/v1/checkpoint", {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ id }),
  });
  if (!res.ok) await parseError(res);
}
