/**
 * Output rendering: one target element per command box or editor pane.
 *
 * stdout and stderr interleave in arrival order inside a single <pre>,
 * distinguished by CSS class (stderr renders in red), and a status line —
 * running / exit code / kill notice / error — always sits below the output
 * as the last rendered region.
 */

import { JobEvent, decodeOutput } from "./sse";

const STYLE_MARKER = "data-ccrs-style";

const STYLESHEET = `
.ccrs-view { font-family: ui-monospace, SFMono-Regular, Menlo, monospace; }
.ccrs-output { background: #1b1b1b; color: #e6e6e6; padding: 0.75em;
               border-radius: 4px; min-height: 1.5em; margin: 0.5em 0 0.25em;
               white-space: pre-wrap; overflow-x: auto; }
.ccrs-stderr { color: #ff8a80; }
.ccrs-status { color: #555; font-size: 0.9em; min-height: 1.2em; }
.ccrs-editor { width: 100%; min-height: 12em; font-family: inherit;
               box-sizing: border-box; }
.ccrs-actions { margin: 0.5em 0; }
.ccrs-action { margin-right: 0.5em; }
`;

/** Inject the widget stylesheet once per document. */
function ensureStyles(doc: Document): void {
  if (doc.querySelector(`style[${STYLE_MARKER}]`)) return;
  const style = doc.createElement("style");
  style.setAttribute(STYLE_MARKER, "");
  style.textContent = STYLESHEET;
  (doc.head ?? doc.documentElement).appendChild(style);
}

export function requireElement(target: unknown, what: string): Element {
  const el = target as Element | null | undefined;
  if (!el || typeof el.appendChild !== "function" || !el.ownerDocument) {
    throw new Error(`${what} needs a DOM element, got ${String(target)}`);
  }
  return el;
}

/** The rendered regions below one command box / editor pane. */
export class OutputView {
  readonly target: Element;
  private readonly output: HTMLPreElement;
  private readonly status: HTMLElement;

  constructor(target: Element) {
    this.target = requireElement(target, "output view");
    const doc = this.target.ownerDocument;
    ensureStyles(doc);
    this.target.classList.add("ccrs-view");
    this.output = doc.createElement("pre");
    this.output.className = "ccrs-output";
    this.status = doc.createElement("div");
    this.status.className = "ccrs-status";
    this.target.appendChild(this.output);
    this.target.appendChild(this.status);
  }

  /** Clear prior output; each new run starts from a blank region. */
  reset(): void {
    this.output.textContent = "";
    this.status.textContent = "";
  }

  appendStdout(text: string): void {
    this.appendSpan(text, "ccrs-stdout");
  }

  appendStderr(text: string): void {
    this.appendSpan(text, "ccrs-stderr");
  }

  setStatus(text: string): void {
    this.status.textContent = text;
    // The status region stays the last rendered element even if the page
    // moved things around.
    this.target.appendChild(this.status);
  }

  /** Route one wire event into the right region. */
  renderEvent(event: JobEvent): void {
    switch (event.kind) {
      case "stdout":
        this.appendStdout(decodeOutput(event.payload));
        break;
      case "stderr":
        this.appendStderr(decodeOutput(event.payload));
        break;
      case "notice":
        this.setStatus(String(event.payload));
        break;
      case "exit":
        this.setStatus(`exited with status ${event.payload}`);
        break;
      case "error":
        this.setStatus(`error: ${event.payload}`);
        break;
      default:
        // Unknown kinds are ignored so old clients survive new servers.
        break;
    }
  }

  /** Plain text of the output region (stdout and stderr interleaved). */
  outputText(): string {
    return this.output.textContent ?? "";
  }

  statusText(): string {
    return this.status.textContent ?? "";
  }

  private appendSpan(text: string, className: string): void {
    const span = this.target.ownerDocument.createElement("span");
    span.className = className;
    span.textContent = text;
    this.output.appendChild(span);
  }
}
