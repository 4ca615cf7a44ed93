/**
 * One-shot command boxes: an input element wired to submit on Enter and
 * stream the job's output into a page-provided element.
 */

import { ClientConfig, RequestError, resolveConfig, submitOneShot } from "./http";
import { JobHandle } from "./ids";
import { streamJobEvents, StreamError } from "./sse";
import { OutputView } from "./view";
import { ClientMetadata } from "./wire";

/** Bind an output view to the element the page set aside for results. */
export function makeOneShotCommand(target: Element): OutputView {
  return new OutputView(target);
}

function failureStatus(error: unknown): string {
  if (error instanceof RequestError) {
    if (error.status === 401 || error.status === 403) {
      return `not authorized (${error.status}): ${error.detail}`;
    }
    return `request failed (${error.status}): ${error.detail}`;
  }
  if (error instanceof StreamError) {
    return `output stream failed: ${error.message}`;
  }
  return `request failed: ${error instanceof Error ? error.message : String(error)}`;
}

/**
 * Submit one command under the given handle and render every event into
 * the view. Resolves when the job reaches its terminal event; failures are
 * rendered into the status region rather than thrown.
 */
export async function runOneShot(
  view: OutputView,
  meta: ClientMetadata,
  handle: JobHandle,
  command: string,
  overrides?: Partial<ClientConfig>,
): Promise<void> {
  const cfg = resolveConfig(overrides);
  view.reset();
  view.setStatus("running…");
  try {
    const jobId = await submitOneShot(meta, command, handle.id, cfg);
    handle.confirmed = true;
    await streamJobEvents(jobId, {
      baseUrl: cfg.baseUrl,
      key: cfg.siteKey,
      from: 0,
      retryDelayMs: cfg.retryDelayMs,
      fetchImpl: cfg.fetchImpl,
      onEvent: (event) => view.renderEvent(event),
    }).done;
  } catch (error) {
    view.setStatus(failureStatus(error));
  }
}

/**
 * Build the keydown handler a page attaches to its command input. Enter
 * with a non-empty value submits; anything else is ignored. While a run is
 * in flight further Enters are ignored, and each new run clears the
 * previous output.
 */
export function makeCmdHandler(
  view: OutputView,
  meta: ClientMetadata,
  handle: JobHandle,
  overrides?: Partial<ClientConfig>,
): (event: KeyboardEvent) => void {
  let busy = false;
  return (event: KeyboardEvent): void => {
    if (event.key !== "Enter" || busy) return;
    const input = event.target as HTMLInputElement | null;
    const command = (input?.value ?? "").trim();
    if (!command) return;
    busy = true;
    void runOneShot(view, meta, handle, command, overrides).finally(() => {
      busy = false;
    });
  };
}
