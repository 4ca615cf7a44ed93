/**
 * Demo fidelity against a real server: boots the actual job-runner process
 * (local-sandbox backend, demo site enabled) and drives the same wiring the
 * demo pages ship — real HTTP, real processes, real event streams. The
 * only substitution for a browser is that the DOM comes from happy-dom and
 * the page scripts' wiring is reproduced here instead of evaluated from the
 * HTML.
 */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import net from "node:net";
import os from "node:os";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { makeEditorApp } from "../src/editor";
import { makeJobId } from "../src/ids";
import { makeCmdHandler, makeOneShotCommand } from "../src/oneshot";
import { sysJobMetaData, ClientMetadata } from "../src/wire";
import { makeWindow, until } from "./helpers";

const REPO_ROOT = fileURLToPath(new URL("../..", import.meta.url));
const DEMO_KEY = "frontend-demo-key";
const DEMO_USER = "ccrsdemo";

let workDir: string;
let server: ChildProcess | null = null;
let baseUrl: string;
let spoolRoot: string;

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = net.createServer();
    probe.listen(0, "127.0.0.1", () => {
      const { port } = probe.address() as net.AddressInfo;
      probe.close(() => resolve(port));
    });
    probe.on("error", reject);
  });
}

beforeAll(async () => {
  workDir = mkdtempSync(path.join(os.tmpdir(), "ccrs-demo-live-"));
  spoolRoot = path.join(workDir, "spool");
  const configPath = path.join(workDir, "config.json");
  const config = {
    spoolRoot,
    registryFile: path.join(workDir, "sites.json"),
    logFile: path.join(workDir, "audit.log"),
    demoSiteKey: DEMO_KEY,
    staticDir: path.join(REPO_ROOT, "static"),
  };
  const { writeFileSync } = await import("node:fs");
  writeFileSync(configPath, JSON.stringify(config));

  const port = await freePort();
  baseUrl = `http://127.0.0.1:${port}`;
  server = spawn(
    "python3",
    ["-m", "ccrs", "--config", configPath, "--listen", `127.0.0.1:${port}`],
    { cwd: REPO_ROOT, stdio: ["ignore", "pipe", "pipe"] },
  );
  const stderrChunks: Buffer[] = [];
  server.stderr?.on("data", (chunk: Buffer) => stderrChunks.push(chunk));

  const deadline = Date.now() + 20_000;
  for (;;) {
    try {
      const reply = await fetch(`${baseUrl}/healthz`);
      if (reply.ok) break;
    } catch {
      // still booting
    }
    if (Date.now() > deadline) {
      throw new Error(`server did not boot: ${Buffer.concat(stderrChunks)}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
}, 30_000);

afterAll(() => {
  server?.kill("SIGTERM");
  server = null;
  rmSync(workDir, { recursive: true, force: true });
});

function demoMeta(pageHref: string): ClientMetadata {
  // The same literal the demo pages construct, namespace and all.
  const ns = "org.xsede.jobrunner.model.ModelApi";
  return sysJobMetaData({
    $type: `${ns}.SysJobMetaData`,
    shell: ["bash"],
    containerType: { $type: `${ns}.LocalSandbox` },
    containerId: [],
    image: [],
    binds: [],
    overlay: [],
    user: DEMO_USER,
    address: [],
    hostname: [],
    url: pageHref,
  });
}

function clientConfig() {
  return { baseUrl, siteKey: DEMO_KEY, fetchImpl: fetch, retryDelayMs: 100 };
}

describe("one-shot demo against a live server", () => {
  it("default command pwd renders the job's context path as stdout", async () => {
    const pageHref = `${baseUrl}/static/demo/one-shot.html`;
    const { document } = makeWindow(pageHref);
    const target = document.createElement("div");
    document.body.appendChild(target);
    const input = document.createElement("input") as unknown as HTMLInputElement;
    input.value = "pwd"; // the page ships this as the default value

    const handle = makeJobId();
    const view = makeOneShotCommand(target);
    const handler = makeCmdHandler(view, demoMeta(pageHref), handle, clientConfig());

    handler({ key: "Enter", target: input } as unknown as KeyboardEvent);
    await until(() => view.statusText().startsWith("exited"), 15_000);

    expect(view.statusText()).toBe("exited with status 0");
    // The working directory of a one-shot is its own job context.
    expect(view.outputText().trim()).toBe(path.join(spoolRoot, "demo", handle.id));
    expect(handle.confirmed).toBe(true);
  }, 20_000);

  it("a rerun under the same handle reuses the job context", async () => {
    const pageHref = `${baseUrl}/static/demo/one-shot.html`;
    const { document } = makeWindow(pageHref);
    const target = document.createElement("div");
    document.body.appendChild(target);
    const input = document.createElement("input") as unknown as HTMLInputElement;

    const handle = makeJobId();
    const view = makeOneShotCommand(target);
    const handler = makeCmdHandler(view, demoMeta(pageHref), handle, clientConfig());

    input.value = "echo once > marker.txt";
    handler({ key: "Enter", target: input } as unknown as KeyboardEvent);
    await until(() => view.statusText().startsWith("exited"), 15_000);

    input.value = "cat marker.txt";
    handler({ key: "Enter", target: input } as unknown as KeyboardEvent);
    await until(() => view.outputText().includes("once"), 15_000);
    expect(view.statusText()).toBe("exited with status 0");
  }, 30_000);
});

describe("editor demo against a live server", () => {
  it("stages the source file, runs it, and streams stdout then the exit", async () => {
    const pageHref = `${baseUrl}/static/demo/editor.html`;
    const { document } = makeWindow(pageHref);
    const target = document.createElement("div");
    document.body.appendChild(target);

    const app = makeEditorApp(
      target,
      demoMeta(pageHref),
      [{ name: "run", label: "Run", command: "python3 {main}" }],
      { "main.py": "print('hello from the editor')\n" },
      { config: clientConfig() },
    );

    (target.querySelector("button[data-action=run]") as HTMLButtonElement).click();
    await until(() => app.view.statusText().startsWith("exited"), 15_000);

    expect(app.view.outputText()).toBe("hello from the editor\n");
    expect(app.view.statusText()).toBe("exited with status 0");
    // Status region renders after (below) the output region.
    expect(app.view.target.lastElementChild?.className).toBe("ccrs-status");
  }, 20_000);

  it("edited code runs in the same session and stderr is rendered", async () => {
    const pageHref = `${baseUrl}/static/demo/editor.html`;
    const { document } = makeWindow(pageHref);
    const target = document.createElement("div");
    document.body.appendChild(target);

    const app = makeEditorApp(
      target,
      demoMeta(pageHref),
      [{ name: "run", label: "Run", command: "python3 {main}" }],
      { "main.py": "print('first')\n" },
      { config: clientConfig() },
    );

    await app.run("run");
    const firstJob = app.jobId();
    expect(app.view.outputText()).toBe("first\n");

    app.editor.setValue("import sys\nsys.stderr.write('broken\\n')\nsys.exit(3)\n");
    await app.run("run");

    expect(app.jobId()).toBe(firstJob);
    expect(app.view.outputText()).toBe("broken\n");
    const spans = Array.from(app.view.target.querySelectorAll("pre span"));
    expect(spans.map((s) => s.className)).toEqual(["ccrs-stderr"]);
    expect(app.view.statusText()).toBe("exited with status 3");
  }, 30_000);
});

describe("demo pages as served", () => {
  it("the server serves both demo pages and the client bundle", async () => {
    for (const page of ["one-shot.html", "editor.html"]) {
      const reply = await fetch(`${baseUrl}/static/demo/${page}`);
      expect(reply.status).toBe(200);
    }
    const bundle = await fetch(`${baseUrl}/static/ccrs-client.js`);
    expect(bundle.status).toBe(200);
    expect(await bundle.text()).toContain("sysJobMetaData");

    const demoConfig = await fetch(`${baseUrl}/static/demo-config.js`);
    expect(demoConfig.status).toBe(200);
    const body = await demoConfig.text();
    expect(body).toContain("window.CCRS_DEMO");
    expect(body).toContain(DEMO_KEY);
  });

  it("the one-shot page wires the documented API with pwd as the default", () => {
    const html = readFileSync(
      path.join(REPO_ROOT, "static", "demo", "one-shot.html"),
      "utf-8",
    );
    expect(html).toContain('value="pwd"');
    expect(html).toContain('onkeydown="oneShotHandler(event)"');
    expect(html).toContain('src="/static/ccrs-client.js"');
    expect(html).toContain('src="/static/demo-config.js"');
    for (const call of [
      "CCRS.sysJobMetaData(",
      "CCRS.makeJobId()",
      "CCRS.makeOneShotCommand(",
      "CCRS.makeCmdHandler(",
    ]) {
      expect(html).toContain(call);
    }
  });

  it("the editor page wires makeEditorApp with a run action", () => {
    const html = readFileSync(
      path.join(REPO_ROOT, "static", "demo", "editor.html"),
      "utf-8",
    );
    expect(html).toContain("CCRS.makeEditorApp(");
    expect(html).toContain('"run"');
    expect(html).toContain("python3 {main}");
    expect(html).toContain('src="/static/ccrs-client.js"');
  });
});
