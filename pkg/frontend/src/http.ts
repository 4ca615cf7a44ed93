/**
 * HTTP calls to the job-runner API plus the shared client configuration.
 *
 * `configure` sets the site key and server base URL once per page (the demo
 * pages read them from the server-provided config script); every call also
 * accepts per-call overrides so multiple panes can talk to different
 * servers from one page.
 */

import { ClientMetadata } from "./wire";

export interface ClientConfig {
  /** Server base URL; empty string = same origin the page came from. */
  baseUrl: string;
  /** Site API key, sent as `X-Site-Key` (and `?key=` on event streams). */
  siteKey: string;
  fetchImpl?: typeof fetch;
  /** Event-stream reconnect delay, milliseconds. */
  retryDelayMs?: number;
}

const config: ClientConfig = { baseUrl: "", siteKey: "" };

/** Set page-wide defaults (base URL, site key) for all subsequent calls. */
export function configure(overrides: Partial<ClientConfig>): void {
  Object.assign(config, overrides);
}

export function resolveConfig(overrides?: Partial<ClientConfig>): ClientConfig {
  return { ...config, ...overrides };
}

/** A non-2xx answer from the server, with its HTTP status and detail text. */
export class RequestError extends Error {
  constructor(readonly status: number, readonly detail: string) {
    super(`request failed (${status}): ${detail}`);
  }
}

/** UTF-8 text → base64, the encoding staged files travel in. */
export function encodeBase64(text: string): string {
  const bytes = new TextEncoder().encode(text);
  let binary = "";
  for (let i = 0; i < bytes.length; i += 0x1000) {
    binary += String.fromCharCode(...bytes.subarray(i, i + 0x1000));
  }
  return btoa(binary);
}

async function request(
  method: string,
  path: string,
  body: unknown,
  cfg: ClientConfig,
): Promise<unknown> {
  const f = cfg.fetchImpl ?? globalThis.fetch;
  const response = await f(`${cfg.baseUrl}${path}`, {
    method,
    headers: {
      "Content-Type": "application/json",
      "X-Site-Key": cfg.siteKey,
    },
    body: JSON.stringify(body),
  });
  if (!response.ok) {
    let detail = response.statusText || "request rejected";
    try {
      const parsed = (await response.json()) as { detail?: unknown };
      if (typeof parsed.detail === "string") detail = parsed.detail;
    } catch {
      // Non-JSON error body; keep the status text.
    }
    throw new RequestError(response.status, detail);
  }
  if (response.status === 204) return undefined;
  return response.json();
}

/**
 * Submit a one-shot command. Passing the same `jobId` again reruns in the
 * same job context; omitting it lets the server mint a fresh job.
 */
export async function submitOneShot(
  meta: ClientMetadata,
  command: string,
  jobId?: string,
  overrides?: Partial<ClientConfig>,
): Promise<string> {
  const body: Record<string, unknown> = { meta: meta.toWire(), command };
  if (jobId) body.jobId = jobId;
  const reply = (await request("POST", "/api/v1/one-shot", body, resolveConfig(overrides))) as {
    jobId: string;
  };
  return reply.jobId;
}

/** Create an editor session with named actions (command templates). */
export async function createSession(
  meta: ClientMetadata,
  actions: Record<string, string>,
  overrides?: Partial<ClientConfig>,
): Promise<string> {
  const reply = (await request(
    "POST",
    "/api/v1/sessions",
    { meta: meta.toWire(), actions },
    resolveConfig(overrides),
  )) as { jobId: string };
  return reply.jobId;
}

/** Stage text files into a session's job context (replaces same-named files). */
export async function stageFiles(
  jobId: string,
  files: Record<string, string>,
  overrides?: Partial<ClientConfig>,
): Promise<void> {
  const encoded: Record<string, string> = {};
  for (const [name, content] of Object.entries(files)) {
    encoded[name] = encodeBase64(content);
  }
  await request(
    "PUT",
    `/api/v1/sessions/${jobId}/files`,
    { files: encoded },
    resolveConfig(overrides),
  );
}

/** Run one of the session's named actions. */
export async function postAction(
  jobId: string,
  name: string,
  overrides?: Partial<ClientConfig>,
): Promise<void> {
  await request(
    "POST",
    `/api/v1/sessions/${jobId}/actions/${encodeURIComponent(name)}`,
    {},
    resolveConfig(overrides),
  );
}
