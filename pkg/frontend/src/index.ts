/**
 * The embeddable client library, bundled as a single script exposing one
 * global object (`CCRS`) and nothing else. A page typically does:
 *
 *   CCRS.configure({ siteKey: "..." });
 *   var meta = CCRS.sysJobMetaData({ ... });
 *   var id = CCRS.makeJobId();
 *   var view = CCRS.makeOneShotCommand(document.getElementById("out"));
 *   var handler = CCRS.makeCmdHandler(view, meta, id);
 *   // <input onkeydown="handler(event)">
 */

export { sysJobMetaData, ClientMetadata, MetadataError } from "./wire";
export type { WireMetadata, WireBind } from "./wire";
export { makeJobId, isJobId } from "./ids";
export type { JobHandle } from "./ids";
export { configure, submitOneShot, createSession, stageFiles, postAction, RequestError } from "./http";
export type { ClientConfig } from "./http";
export { makeOneShotCommand, makeCmdHandler, runOneShot } from "./oneshot";
export { makeEditorApp, textAreaEditor } from "./editor";
export type { ActionSpec, EditorAdapter, EditorApp } from "./editor";
export { streamJobEvents, decodeOutput, isTerminal, StreamError } from "./sse";
export type { JobEvent, Subscription } from "./sse";
export { OutputView } from "./view";
