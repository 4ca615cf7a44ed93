"use strict";
var CCRS = (() => {
  var __defProp = Object.defineProperty;
  var __getOwnPropDesc = Object.getOwnPropertyDescriptor;
  var __getOwnPropNames = Object.getOwnPropertyNames;
  var __hasOwnProp = Object.prototype.hasOwnProperty;
  var __export = (target, all) => {
    for (var name in all)
      __defProp(target, name, { get: all[name], enumerable: true });
  };
  var __copyProps = (to, from, except, desc) => {
    if (from && typeof from === "object" || typeof from === "function") {
      for (let key of __getOwnPropNames(from))
        if (!__hasOwnProp.call(to, key) && key !== except)
          __defProp(to, key, { get: () => from[key], enumerable: !(desc = __getOwnPropDesc(from, key)) || desc.enumerable });
    }
    return to;
  };
  var __toCommonJS = (mod) => __copyProps(__defProp({}, "__esModule", { value: true }), mod);

  // src/index.ts
  var index_exports = {};
  __export(index_exports, {
    ClientMetadata: () => ClientMetadata,
    MetadataError: () => MetadataError,
    OutputView: () => OutputView,
    RequestError: () => RequestError,
    StreamError: () => StreamError,
    configure: () => configure,
    createSession: () => createSession,
    decodeOutput: () => decodeOutput,
    isJobId: () => isJobId,
    isTerminal: () => isTerminal,
    makeCmdHandler: () => makeCmdHandler,
    makeEditorApp: () => makeEditorApp,
    makeJobId: () => makeJobId,
    makeOneShotCommand: () => makeOneShotCommand,
    postAction: () => postAction,
    runOneShot: () => runOneShot,
    stageFiles: () => stageFiles,
    streamJobEvents: () => streamJobEvents,
    submitOneShot: () => submitOneShot,
    sysJobMetaData: () => sysJobMetaData,
    textAreaEditor: () => textAreaEditor
  });

  // src/wire.ts
  var DEFAULT_NAMESPACE = "ccrs.model";
  var COMPAT_NAMESPACE = "org.xsede.jobrunner.model.ModelApi";
  var METADATA_TYPE = "SysJobMetaData";
  var ACCEPTED_NAMESPACES = /* @__PURE__ */ new Set([DEFAULT_NAMESPACE, COMPAT_NAMESPACE]);
  var CONTAINER_TYPE_NAMES = /* @__PURE__ */ new Set([
    "Singularity",
    "ImagePerJob",
    "SystemdNspawn",
    "Nspawn",
    "SharedContainer",
    "LocalSandbox"
  ]);
  var OPTIONAL_FIELDS = [
    "shell",
    "containerId",
    "image",
    "overlay",
    "address",
    "hostname",
    "url"
  ];
  var KNOWN_FIELDS = /* @__PURE__ */ new Set([
    "$type",
    "containerType",
    "user",
    "binds",
    ...OPTIONAL_FIELDS
  ]);
  var USER_RE = /^[a-z][a-z0-9_-]*$/;
  var MAX_USER_LENGTH = 32;
  var MetadataError = class extends Error {
  };
  var ClientMetadata = class {
    constructor(doc) {
      this.doc = doc;
    }
    get user() {
      return this.doc.user;
    }
    /** Deep copy of the wire document (callers cannot mutate our state). */
    toWire() {
      return JSON.parse(JSON.stringify(this.doc));
    }
  };
  function fail(message) {
    throw new MetadataError(message);
  }
  function isPlainObject(value) {
    return typeof value === "object" && value !== null && !Array.isArray(value);
  }
  function recordName(tag, where) {
    if (typeof tag !== "string" || !tag.includes(".")) {
      fail(`${where}: $type must be a dotted type tag, got ${JSON.stringify(tag)}`);
    }
    const dot = tag.lastIndexOf(".");
    const namespace = tag.slice(0, dot);
    if (!ACCEPTED_NAMESPACES.has(namespace)) {
      fail(`${where}: unknown namespace ${JSON.stringify(namespace)}`);
    }
    return tag.slice(dot + 1);
  }
  function optionalList(value, field) {
    if (value === void 0 || value === null) return [];
    if (typeof value === "string") return [value];
    if (Array.isArray(value)) {
      if (value.length > 1) {
        fail(`${field}: optional fields hold at most one value, got ${value.length}`);
      }
      if (value.length === 1 && typeof value[0] !== "string") {
        fail(`${field}: expected a string, got ${JSON.stringify(value[0])}`);
      }
      return value.slice();
    }
    fail(`${field}: expected a string or 0/1-element array`);
  }
  function normalizeBinds(value) {
    if (value === void 0 || value === null) return [];
    if (!Array.isArray(value)) fail("binds: expected an array");
    const seen = /* @__PURE__ */ new Set();
    return value.map((entry, i) => {
      if (!isPlainObject(entry)) fail(`binds[${i}]: expected an object`);
      const { hostPath, containerPath, readOnly } = entry;
      if (typeof hostPath !== "string" || !hostPath.startsWith("/")) {
        fail(`binds[${i}]: hostPath must be an absolute path`);
      }
      if (typeof containerPath !== "string" || !containerPath.startsWith("/")) {
        fail(`binds[${i}]: containerPath must be an absolute path`);
      }
      if (readOnly !== void 0 && typeof readOnly !== "boolean") {
        fail(`binds[${i}]: readOnly must be a boolean`);
      }
      if (seen.has(containerPath)) {
        fail(`binds[${i}]: duplicate containerPath ${containerPath}`);
      }
      seen.add(containerPath);
      return { hostPath, containerPath, readOnly: readOnly ?? false };
    });
  }
  function pageHref() {
    const w = globalThis.window;
    const href = w?.location?.href;
    return typeof href === "string" && href ? href : null;
  }
  function sysJobMetaData(obj) {
    if (!isPlainObject(obj)) fail("metadata must be a plain object literal");
    for (const key of Object.keys(obj)) {
      if (!KNOWN_FIELDS.has(key)) fail(`unknown metadata field: ${key}`);
    }
    let outerType = `${DEFAULT_NAMESPACE}.${METADATA_TYPE}`;
    if (obj.$type !== void 0) {
      const name = recordName(obj.$type, "metadata");
      if (name !== METADATA_TYPE) {
        fail(`metadata: expected a ${METADATA_TYPE} record, got ${name}`);
      }
      outerType = obj.$type;
    }
    if (!isPlainObject(obj.containerType)) {
      fail("containerType: required and must be an object with a $type tag");
    }
    let innerType = obj.containerType.$type;
    if (innerType === void 0) fail("containerType: missing $type tag");
    const containerName = recordName(innerType, "containerType");
    if (!CONTAINER_TYPE_NAMES.has(containerName)) {
      fail(`containerType: unknown container type ${containerName}`);
    }
    for (const key of Object.keys(obj.containerType)) {
      if (key !== "$type") fail(`containerType: unknown field ${key}`);
    }
    const user = obj.user;
    if (typeof user !== "string" || !user) fail("user: required");
    if (user.length > MAX_USER_LENGTH) {
      fail(`user: longer than ${MAX_USER_LENGTH} characters`);
    }
    if (!USER_RE.test(user)) {
      fail("user: must be lowercase letters, digits, '_' or '-', starting with a letter");
    }
    const image = optionalList(obj.image, "image");
    const containerId = optionalList(obj.containerId, "containerId");
    if (containerName === "Singularity" || containerName === "ImagePerJob") {
      if (!image.length) fail("image: required for image-per-job container types");
    }
    if ((containerName === "SystemdNspawn" || containerName === "Nspawn" || containerName === "SharedContainer") && !image.length && !containerId.length) {
      fail("shared-container types need an image or a containerId");
    }
    let url = optionalList(obj.url, "url");
    if (!url.length) {
      const href = pageHref();
      if (href) url = [href];
    }
    return new ClientMetadata({
      $type: outerType,
      shell: optionalList(obj.shell, "shell"),
      containerType: { $type: innerType },
      containerId,
      image,
      binds: normalizeBinds(obj.binds),
      overlay: optionalList(obj.overlay, "overlay"),
      user,
      address: optionalList(obj.address, "address"),
      hostname: optionalList(obj.hostname, "hostname"),
      url
    });
  }

  // src/ids.ts
  var ALPHABET = "0123456789abcdefghjkmnpqrstvwxyz";
  var JOB_ID_LENGTH = 26;
  var STRICT_RE = new RegExp(`^[${ALPHABET}]{${JOB_ID_LENGTH}}$`);
  var TIMESTAMP_BITS = 48n;
  var RANDOM_BYTES = 10;
  var MAX_TIMESTAMP_MS = (1n << TIMESTAMP_BITS) - 1n;
  function defaultEntropy(byteCount) {
    const out = new Uint8Array(byteCount);
    globalThis.crypto.getRandomValues(out);
    return out;
  }
  function encode(value) {
    const chars = new Array(JOB_ID_LENGTH);
    for (let i = JOB_ID_LENGTH - 1; i >= 0; i--) {
      chars[i] = ALPHABET[Number(value & 31n)];
      value >>= 5n;
    }
    return chars.join("");
  }
  function makeJobId(clock, entropy) {
    const ts = BigInt(clock ? clock() : Date.now());
    if (ts < 0n || ts > MAX_TIMESTAMP_MS) {
      throw new Error(`timestamp out of range for job id: ${ts}`);
    }
    const raw = (entropy ?? defaultEntropy)(RANDOM_BYTES);
    if (raw.length !== RANDOM_BYTES) {
      throw new Error(`entropy must yield ${RANDOM_BYTES} bytes, got ${raw.length}`);
    }
    let value = ts;
    for (const byte of raw) {
      value = value << 8n | BigInt(byte);
    }
    return { id: encode(value), confirmed: false };
  }
  function isJobId(value) {
    return typeof value === "string" && STRICT_RE.test(value);
  }

  // src/http.ts
  var config = { baseUrl: "", siteKey: "" };
  function configure(overrides) {
    Object.assign(config, overrides);
  }
  function resolveConfig(overrides) {
    return { ...config, ...overrides };
  }
  var RequestError = class extends Error {
    constructor(status, detail) {
      super(`request failed (${status}): ${detail}`);
      this.status = status;
      this.detail = detail;
    }
  };
  function encodeBase64(text) {
    const bytes = new TextEncoder().encode(text);
    let binary = "";
    for (let i = 0; i < bytes.length; i += 4096) {
      binary += String.fromCharCode(...bytes.subarray(i, i + 4096));
    }
    return btoa(binary);
  }
  async function request(method, path, body, cfg) {
    const f = cfg.fetchImpl ?? globalThis.fetch;
    const response = await f(`${cfg.baseUrl}${path}`, {
      method,
      headers: {
        "Content-Type": "application/json",
        "X-Site-Key": cfg.siteKey
      },
      body: JSON.stringify(body)
    });
    if (!response.ok) {
      let detail = response.statusText || "request rejected";
      try {
        const parsed = await response.json();
        if (typeof parsed.detail === "string") detail = parsed.detail;
      } catch {
      }
      throw new RequestError(response.status, detail);
    }
    if (response.status === 204) return void 0;
    return response.json();
  }
  async function submitOneShot(meta, command, jobId, overrides) {
    const body = { meta: meta.toWire(), command };
    if (jobId) body.jobId = jobId;
    const reply = await request("POST", "/api/v1/one-shot", body, resolveConfig(overrides));
    return reply.jobId;
  }
  async function createSession(meta, actions, overrides) {
    const reply = await request(
      "POST",
      "/api/v1/sessions",
      { meta: meta.toWire(), actions },
      resolveConfig(overrides)
    );
    return reply.jobId;
  }
  async function stageFiles(jobId, files, overrides) {
    const encoded = {};
    for (const [name, content] of Object.entries(files)) {
      encoded[name] = encodeBase64(content);
    }
    await request(
      "PUT",
      `/api/v1/sessions/${jobId}/files`,
      { files: encoded },
      resolveConfig(overrides)
    );
  }
  async function postAction(jobId, name, overrides) {
    await request(
      "POST",
      `/api/v1/sessions/${jobId}/actions/${encodeURIComponent(name)}`,
      {},
      resolveConfig(overrides)
    );
  }

  // src/sse.ts
  var TERMINAL_KINDS = /* @__PURE__ */ new Set(["exit", "error"]);
  function isTerminal(event) {
    return TERMINAL_KINDS.has(event.kind);
  }
  function decodeOutput(payload) {
    if (typeof payload !== "string") return String(payload);
    const binary = atob(payload);
    const bytes = new Uint8Array(binary.length);
    for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
    return new TextDecoder().decode(bytes);
  }
  var SseParser = class {
    constructor() {
      this.buffer = "";
    }
    push(chunk) {
      this.buffer += chunk;
      const frames = [];
      let split;
      while ((split = this.buffer.indexOf("\n\n")) >= 0) {
        const raw = this.buffer.slice(0, split);
        this.buffer = this.buffer.slice(split + 2);
        const frame = this.parseFrame(raw);
        if (frame) frames.push(frame);
      }
      return frames;
    }
    parseFrame(raw) {
      let event = "";
      let id = "";
      const data = [];
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
  };
  var StreamError = class extends Error {
    constructor(status, detail) {
      super(detail);
      this.status = status;
    }
  };
  function sleep(ms) {
    return new Promise((resolve) => setTimeout(resolve, ms));
  }
  function streamJobEvents(jobId, options) {
    const f = options.fetchImpl ?? globalThis.fetch;
    const base = options.baseUrl ?? "";
    const retryDelay = options.retryDelayMs ?? 250;
    const maxRetries = options.maxRetries ?? 20;
    let closed = false;
    let controller = null;
    const done = (async () => {
      let lastSeen = (options.from ?? 0) - 1;
      let retries = 0;
      while (!closed) {
        const params = new URLSearchParams();
        if (options.key) params.set("key", options.key);
        params.set("from", String(lastSeen + 1));
        const url = `${base}/api/v1/jobs/${jobId}/events?${params}`;
        const headers = {};
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
          for (; ; ) {
            const { done: eof, value } = await reader.read();
            if (eof) break;
            for (const frame of parser.push(decoder.decode(value, { stream: true }))) {
              const seq = Number.parseInt(frame.id, 10);
              if (!Number.isFinite(seq) || seq <= lastSeen) continue;
              lastSeen = seq;
              retries = 0;
              const data = JSON.parse(frame.data);
              const event = {
                kind: frame.event,
                seq,
                timestamp: data.timestamp,
                payload: data.payload
              };
              options.onEvent(event);
              if (isTerminal(event)) {
                controller.abort();
                return;
              }
            }
          }
        } catch (error) {
          if (closed) return;
          if (error instanceof StreamError && error.status >= 400 && error.status < 500) {
            throw error;
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
      }
    };
  }

  // src/view.ts
  var STYLE_MARKER = "data-ccrs-style";
  var STYLESHEET = `
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
  function ensureStyles(doc) {
    if (doc.querySelector(`style[${STYLE_MARKER}]`)) return;
    const style = doc.createElement("style");
    style.setAttribute(STYLE_MARKER, "");
    style.textContent = STYLESHEET;
    (doc.head ?? doc.documentElement).appendChild(style);
  }
  function requireElement(target, what) {
    const el = target;
    if (!el || typeof el.appendChild !== "function" || !el.ownerDocument) {
      throw new Error(`${what} needs a DOM element, got ${String(target)}`);
    }
    return el;
  }
  var OutputView = class {
    constructor(target) {
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
    reset() {
      this.output.textContent = "";
      this.status.textContent = "";
    }
    appendStdout(text) {
      this.appendSpan(text, "ccrs-stdout");
    }
    appendStderr(text) {
      this.appendSpan(text, "ccrs-stderr");
    }
    setStatus(text) {
      this.status.textContent = text;
      this.target.appendChild(this.status);
    }
    /** Route one wire event into the right region. */
    renderEvent(event) {
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
          break;
      }
    }
    /** Plain text of the output region (stdout and stderr interleaved). */
    outputText() {
      return this.output.textContent ?? "";
    }
    statusText() {
      return this.status.textContent ?? "";
    }
    appendSpan(text, className) {
      const span = this.target.ownerDocument.createElement("span");
      span.className = className;
      span.textContent = text;
      this.output.appendChild(span);
    }
  };

  // src/oneshot.ts
  function makeOneShotCommand(target) {
    return new OutputView(target);
  }
  function failureStatus(error) {
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
  async function runOneShot(view, meta, handle, command, overrides) {
    const cfg = resolveConfig(overrides);
    view.reset();
    view.setStatus("running\u2026");
    try {
      const jobId = await submitOneShot(meta, command, handle.id, cfg);
      handle.confirmed = true;
      await streamJobEvents(jobId, {
        baseUrl: cfg.baseUrl,
        key: cfg.siteKey,
        from: 0,
        retryDelayMs: cfg.retryDelayMs,
        fetchImpl: cfg.fetchImpl,
        onEvent: (event) => view.renderEvent(event)
      }).done;
    } catch (error) {
      view.setStatus(failureStatus(error));
    }
  }
  function makeCmdHandler(view, meta, handle, overrides) {
    let busy = false;
    return (event) => {
      if (event.key !== "Enter" || busy) return;
      const input = event.target;
      const command = (input?.value ?? "").trim();
      if (!command) return;
      busy = true;
      void runOneShot(view, meta, handle, command, overrides).finally(() => {
        busy = false;
      });
    };
  }

  // src/editor.ts
  function textAreaEditor(area) {
    return {
      getValue: () => area.value,
      setValue: (value) => {
        area.value = value;
      },
      onChange: (listener) => area.addEventListener("input", listener)
    };
  }
  function failureStatus2(error) {
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
  function makeEditorApp(target, meta, actions, initialFiles, options) {
    const root = requireElement(target, "editor app");
    if (!actions.length) throw new Error("editor app needs at least one action");
    const fileNames = Object.keys(initialFiles).sort();
    const mainFile = fileNames[0];
    if (!mainFile) throw new Error("editor app needs at least one initial file");
    const doc = root.ownerDocument;
    const templates = {};
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
    const buttons = [];
    const setDisabled = (disabled) => {
      for (const button of buttons) button.disabled = disabled;
    };
    let sessionId = null;
    let running = false;
    async function run(name) {
      if (running || !(name in templates)) return;
      running = true;
      setDisabled(true);
      const cfg = resolveConfig(options?.config);
      view.reset();
      view.setStatus("running\u2026");
      try {
        if (!sessionId) {
          sessionId = await createSession(meta, templates, cfg);
        }
        const files = { ...initialFiles, [mainFile]: editor.getValue() };
        await stageFiles(sessionId, files, cfg);
        await postAction(sessionId, name, cfg);
        await streamJobEvents(sessionId, {
          baseUrl: cfg.baseUrl,
          key: cfg.siteKey,
          from: 0,
          retryDelayMs: cfg.retryDelayMs,
          fetchImpl: cfg.fetchImpl,
          onEvent: (event) => view.renderEvent(event)
        }).done;
      } catch (error) {
        view.setStatus(failureStatus2(error));
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
      run
    };
  }
  return __toCommonJS(index_exports);
})();
//# sourceMappingURL=ccrs-client.js.map
