/**
 * Streaming job output over server-sent events.
 *
 * Built on `fetch` + ReadableStream rather than `EventSource` so the reader
 * works identically in pages and in tests, and so reconnection is under our
 * control: every event carries a monotonically increasing `id`, and on any
 * mid-stream drop the reader resumes from the last id it has seen (via both
 * the `Last-Event-ID` header and the `from` query parameter) and discards
 * anything it already delivered. Rendering therefore never duplicates or
 * skips a line, no matter how flaky the connection.
 */

/** One parsed job event. `payload` is still wire-typed (base64 for output). */
export interface JobEvent {
  kind: string;
  seq: number;
  timestamp: number;
  payload: unknown;
}

const TERMINAL_KINDS = new Set(["exit", "error"]);

export function isTerminal(event: JobEvent): boolean {
  return TERMINAL_KINDS.has(event.kind);
}

/** Decode a stdout/stderr wire payload (base64) into text. */
export function decodeOutput(payload: unknown): string {
  if (typeof payload !== "string") return String(payload);
  const binary = atob(payload);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
  return new TextDecoder().decode(bytes);
}

interface Frame {
  event: string;
  id: string;
  data: string;
}

/** Incremental parser for `event:`/`id:`/`data:` frames. */
export class SseParser {
  private buffer = "";

  push(chunk: string): Frame[] {
    this.buffer += chunk;
    const frames: Frame[] = [];
    let split: number;
    while ((split = this.buffer.indexOf("\n\n")) >= 0) {
      const raw = this.buffer.slice(0, split);
      this.buffer = this.buffer.slice(split + 2);
      const frame = this.parseFrame(raw);
      if (frame) frames.push(frame);
    }
    return frames;
  }

  private parseFrame(raw: string): Frame | null {
    let event = "";
    let id = "";
    const data: string[] = [];
    for (const line of raw.split("\n")) {
      if (!line || line.startsWith(":")) continue;
      const colon = line.indexOf(":");
      const field = colon < 0 ? line : line.slice(0, colon);
      let value = colon < 0 ? "" : line.slice(colon + 1);
      if (value.startsWith(" ")) value = value.slice(1);
      if (field === "event") event = value;
      else if (field === "id") id = value;
      else if (field === "data") data.push(value);
    }
    if (!event && !data.length) return null;
    return { event, id, data: data.join("\n") };
  }
}

export interface StreamOptions {
  /** Server base URL; empty string means same-origin relative paths. */
  baseUrl?: string;
  /** Site API key, sent as a query parameter. */
  key?: string;
  /** First event sequence number wanted (default 0). */
  from?: number;
  /** Called once per event, in sequence order, exactly once per event. */
  onEvent: (event: JobEvent) => void;
  /** Delay between reconnect attempts, milliseconds (default 250). */
  retryDelayMs?: number;
  /** Reconnect attempts before giving up (default 20). */
  maxRetries?: number;
  fetchImpl?: typeof fetch;
}

export interface Subscription {
  /** Resolves on the job's terminal event; rejects on auth errors or when
   * retries are exhausted. */
  done: Promise<void>;
  /** Abandon the stream (the job keeps running server-side). */
  close(): void;
}

export class StreamError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/**
 * Subscribe to a job's event stream, resuming across connection drops until
 * a terminal event arrives.
 */
export function streamJobEvents(jobId: string, options: StreamOptions): Subscription {
  const f = options.fetchImpl ?? globalThis.fetch;
  const base = options.baseUrl ?? "";
  const retryDelay = options.retryDelayMs ?? 250;
  const maxRetries = options.maxRetries ?? 20;

  let closed = false;
  let controller: AbortController | null = null;

  const done = (async () => {
    let lastSeen = (options.from ?? 0) - 1;
    let retries = 0;
    while (!closed) {
      const params = new URLSearchParams();
      if (options.key) params.set("key", options.key);
      params.set("from", String(lastSeen + 1));
      const url = `${base}/api/v1/jobs/${jobId}/events?${params}`;
      const headers: Record<string, string> = {};
      if (lastSeen >= 0) headers["Last-Event-ID"] = String(lastSeen);

      controller = new AbortController();
      try {
        const response = await f(url, { headers, signal: controller.signal });
        if (!response.ok) {
          throw new StreamError(response.status, `event stream failed: ${response.status}`);
        }
        if (!response.body) {
          throw new StreamError(0, "event stream has no body");
        }
        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        const parser = new SseParser();
        for (;;) {
          const { done: eof, value } = await reader.read();
          if (eof) break;
          for (const frame of parser.push(decoder.decode(value, { stream: true }))) {
            const seq = Number.parseInt(frame.id, 10);
            if (!Number.isFinite(seq) || seq <= lastSeen) continue;
            lastSeen = seq;
            // Progress resets the retry budget; a server that connects but
            // never delivers anything still runs out of retries.
            retries = 0;
            const data = JSON.parse(frame.data) as { timestamp: number; payload: unknown };
            const event: JobEvent = {
              kind: frame.event,
              seq,
              timestamp: data.timestamp,
              payload: data.payload,
            };
            options.onEvent(event);
            if (isTerminal(event)) {
              controller.abort();
              return;
            }
          }
        }
        // Stream ended without a terminal event: reconnect and resume.
      } catch (error) {
        if (closed) return;
        if (error instanceof StreamError && error.status >= 400 && error.status < 500) {
          throw error; // auth/ownership failures do not heal by retrying
        }
      }
      retries += 1;
      if (retries > maxRetries) {
        throw new StreamError(0, "event stream lost and retries exhausted");
      }
      await sleep(retryDelay);
    }
  })();

  return {
    done,
    close() {
      closed = true;
      controller?.abort();
    },
  };
}
