/** Shared test plumbing: DOM windows, an in-process API stub, waiting. */

import { Window } from "happy-dom";

/** A DOM to render into, detached from any real browser. */
export function makeWindow(url = "https://lesson.example/exercise.html") {
  const window = new Window({ url });
  return {
    window,
    document: window.document as unknown as Document,
  };
}

export async function until(cond: () => boolean, timeoutMs = 5000): Promise<void> {
  const start = Date.now();
  while (!cond()) {
    if (Date.now() - start > timeoutMs) {
      throw new Error("condition not met within timeout");
    }
    await new Promise((resolve) => setTimeout(resolve, 10));
  }
}

export function b64(text: string): string {
  return Buffer.from(text, "utf-8").toString("base64");
}

export interface ScriptedEvent {
  kind: string;
  payload: unknown;
}

export function stdout(text: string): ScriptedEvent {
  return { kind: "stdout", payload: b64(text) };
}

export function stderr(text: string): ScriptedEvent {
  return { kind: "stderr", payload: b64(text) };
}

export function exit(code: number): ScriptedEvent {
  return { kind: "exit", payload: code };
}

function sseText(events: ScriptedEvent[], from: number): string {
  let body = "";
  events.forEach((event, seq) => {
    if (seq < from) return;
    const data = JSON.stringify({ timestamp: 1700000000000 + seq, payload: event.payload });
    body += `event: ${event.kind}\nid: ${seq}\ndata: ${data}\n\n`;
  });
  return body;
}

interface RecordedRequest {
  method: string;
  path: string;
  headers: Record<string, string>;
  body: unknown;
}

/**
 * In-process stand-in for the job-runner API: a `fetch`-compatible function
 * that records every request and replays scripted event streams. No
 * sockets, so DOM-level tests stay fast and deterministic.
 */
export class FakeServer {
  siteKey = "test-site-key";
  /** Events served for the next run of any job. */
  script: ScriptedEvent[] = [exit(0)];
  requests: RecordedRequest[] = [];
  /** Files staged per session jobId, decoded back to text. */
  staged = new Map<string, Record<string, string>>();
  private counter = 0;

  readonly fetch: typeof fetch = async (input, init) => {
    const url = new URL(
      typeof input === "string" ? input : (input as Request).url,
      "http://fake.test",
    );
    const method = init?.method ?? "GET";
    const headers = Object.fromEntries(
      Object.entries((init?.headers ?? {}) as Record<string, string>),
    );
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;
    this.requests.push({ method, path: url.pathname, headers, body });
    return this.route(method, url, headers, body);
  };

  requestsTo(path: string): RecordedRequest[] {
    return this.requests.filter((r) => r.path === path);
  }

  private json(status: number, payload: unknown): Response {
    return new Response(JSON.stringify(payload), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  }

  private route(
    method: string,
    url: URL,
    headers: Record<string, string>,
    body: unknown,
  ): Response {
    const path = url.pathname;
    const events = path.match(/^\/api\/v1\/jobs\/([^/]+)\/events$/);
    if (method === "GET" && events) {
      if (url.searchParams.get("key") !== this.siteKey) {
        return this.json(401, { detail: "unknown site key" });
      }
      const lastEventId = headers["Last-Event-ID"];
      const from = lastEventId !== undefined
        ? Number(lastEventId) + 1
        : Number(url.searchParams.get("from") ?? "0");
      return new Response(sseText(this.script, from), {
        status: 200,
        headers: { "Content-Type": "text/event-stream" },
      });
    }

    if (headers["X-Site-Key"] !== this.siteKey) {
      return this.json(401, { detail: "unknown site key" });
    }

    if (method === "POST" && path === "/api/v1/one-shot") {
      const doc = body as { jobId?: string };
      return this.json(200, { jobId: doc.jobId ?? `job-${++this.counter}` });
    }
    if (method === "POST" && path === "/api/v1/sessions") {
      return this.json(200, { jobId: `session-${++this.counter}` });
    }
    const files = path.match(/^\/api\/v1\/sessions\/([^/]+)\/files$/);
    if (method === "PUT" && files) {
      const doc = body as { files: Record<string, string> };
      const jobId = files[1] as string;
      const decoded: Record<string, string> = {};
      for (const [name, encoded] of Object.entries(doc.files)) {
        decoded[name] = Buffer.from(encoded, "base64").toString("utf-8");
      }
      this.staged.set(jobId, decoded);
      return new Response(null, { status: 204 });
    }
    const action = path.match(/^\/api\/v1\/sessions\/([^/]+)\/actions\/([^/]+)$/);
    if (method === "POST" && action) {
      return this.json(202, { jobId: action[1], action: action[2] });
    }
    return this.json(404, { detail: `no stub route for ${method} ${path}` });
  }
}
