/**
 * Editor-backed job launch panes: an editable source file, action buttons,
 * and streamed output, all inside one page-provided element.
 *
 * The editor itself hides behind a three-method adapter (getValue /
 * setValue / onChange) so a full-featured editor component can replace the
 * built-in textarea without touching anything else.
 */

import { ClientConfig, RequestError, createSession, postAction, resolveConfig, stageFiles } from "./http";
import { streamJobEvents, StreamError } from "./sse";
import { OutputView, requireElement } from "./view";
import { ClientMetadata } from "./wire";

export interface EditorAdapter {
  getValue(): string;
  setValue(value: string): void;
  onChange(listener: () => void): void;
}

/** Adapter over a plain textarea — the zero-dependency default editor. */
export function textAreaEditor(area: HTMLTextAreaElement): EditorAdapter {
  return {
    getValue: () => area.value,
    setValue: (value) => {
      area.value = value;
    },
    onChange: (listener) => area.addEventListener("input", listener),
  };
}

/** One runnable action: a button label plus the command template it posts. */
export interface ActionSpec {
  name: string;
  /** Command template, e.g. `python3 {main}`; `{main}` is the edited file. */
  command: string;
  /** Button text; defaults to `name`. */
  label?: string;
}

export interface EditorAppOptions {
  /** Replace the built-in textarea with an adapter over another editor. */
  editor?: EditorAdapter;
  config?: Partial<ClientConfig>;
}

export interface EditorApp {
  view: OutputView;
  editor: EditorAdapter;
  /** The session's job ID once the first run has created it. */
  jobId(): string | null;
  /** Stage the current files and run the named action. */
  run(name: string): Promise<void>;
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
 * Build an editor pane inside `target`: the edited file is staged and the
 * chosen action runs in one persistent job context, so state (and staged
 * files) carries across runs. At most one action is in flight per pane —
 * the buttons disable while a run streams.
 */
export function makeEditorApp(
  target: Element,
  meta: ClientMetadata,
  actions: ActionSpec[],
  initialFiles: Record<string, string>,
  options?: EditorAppOptions,
): EditorApp {
  const root = requireElement(target, "editor app");
  if (!actions.length) throw new Error("editor app needs at least one action");
  const fileNames = Object.keys(initialFiles).sort();
  const mainFile = fileNames[0];
  if (!mainFile) throw new Error("editor app needs at least one initial file");

  const doc = root.ownerDocument;
  const templates: Record<string, string> = {};
  for (const action of actions) {
    templates[action.name] = action.command;
  }

  let editor = options?.editor ?? null;
  if (!editor) {
    const area = doc.createElement("textarea");
    area.className = "ccrs-editor";
    area.spellcheck = false;
    root.appendChild(area);
    editor = textAreaEditor(area);
  }
  editor.setValue(initialFiles[mainFile] ?? "");

  const buttonRow = doc.createElement("div");
  buttonRow.className = "ccrs-actions";
  root.appendChild(buttonRow);

  const outputHost = doc.createElement("div");
  root.appendChild(outputHost);
  const view = new OutputView(outputHost);

  const buttons: HTMLButtonElement[] = [];
  const setDisabled = (disabled: boolean) => {
    for (const button of buttons) button.disabled = disabled;
  };

  let sessionId: string | null = null;
  let running = false;

  async function run(name: string): Promise<void> {
    if (running || !(name in templates)) return;
    running = true;
    setDisabled(true);
    const cfg = resolveConfig(options?.config);
    view.reset();
    view.setStatus("running…");
    try {
      if (!sessionId) {
        sessionId = await createSession(meta, templates, cfg);
      }
      const files = { ...initialFiles, [mainFile as string]: editor!.getValue() };
      await stageFiles(sessionId, files, cfg);
      await postAction(sessionId, name, cfg);
      await streamJobEvents(sessionId, {
        baseUrl: cfg.baseUrl,
        key: cfg.siteKey,
        from: 0,
        retryDelayMs: cfg.retryDelayMs,
        fetchImpl: cfg.fetchImpl,
        onEvent: (event) => view.renderEvent(event),
      }).done;
    } catch (error) {
      view.setStatus(failureStatus(error));
    } finally {
      running = false;
      setDisabled(false);
    }
  }

  for (const action of actions) {
    const button = doc.createElement("button");
    button.type = "button";
    button.className = "ccrs-action";
    button.dataset.action = action.name;
    button.textContent = action.label ?? action.name;
    button.addEventListener("click", () => {
      void run(action.name);
    });
    buttonRow.appendChild(button);
    buttons.push(button);
  }

  return {
    view,
    editor,
    jobId: () => sessionId,
    run,
  };
}
