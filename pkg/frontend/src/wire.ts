/**
 * Client-side construction of job metadata documents.
 *
 * `sysJobMetaData` takes the literal object an instructor writes into a page
 * and normalizes it into the exact shape the server's wire codec expects:
 * every optional field present as a 0/1-element array, binds fully
 * spelled out, and `url` auto-filled from the page location when the page
 * did not supply one. Validation here is a convenience — the server
 * re-validates everything — but it turns the most common authoring mistakes
 * into immediate, local errors.
 */

export const DEFAULT_NAMESPACE = "ccrs.model";
export const COMPAT_NAMESPACE = "org.xsede.jobrunner.model.ModelApi";

const METADATA_TYPE = "SysJobMetaData";
const ACCEPTED_NAMESPACES = new Set([DEFAULT_NAMESPACE, COMPAT_NAMESPACE]);

/** Wire spellings of the container lifecycle strategies, plus aliases. */
const CONTAINER_TYPE_NAMES = new Set([
  "Singularity",
  "ImagePerJob",
  "SystemdNspawn",
  "Nspawn",
  "SharedContainer",
  "LocalSandbox",
]);

/** Optional metadata fields, carried on the wire as 0/1-element arrays. */
const OPTIONAL_FIELDS = [
  "shell",
  "containerId",
  "image",
  "overlay",
  "address",
  "hostname",
  "url",
] as const;

const KNOWN_FIELDS = new Set<string>([
  "$type",
  "containerType",
  "user",
  "binds",
  ...OPTIONAL_FIELDS,
]);

const USER_RE = /^[a-z][a-z0-9_-]*$/;
const MAX_USER_LENGTH = 32;

export class MetadataError extends Error {}

export interface WireBind {
  hostPath: string;
  containerPath: string;
  readOnly: boolean;
}

/** The normalized document, field for field what goes over the wire. */
export interface WireMetadata {
  $type: string;
  shell: string[];
  containerType: { $type: string };
  containerId: string[];
  image: string[];
  binds: WireBind[];
  overlay: string[];
  user: string;
  address: string[];
  hostname: string[];
  url: string[];
}

/** A validated metadata document ready to submit with jobs. */
export class ClientMetadata {
  constructor(private readonly doc: WireMetadata) {}

  get user(): string {
    return this.doc.user;
  }

  /** Deep copy of the wire document (callers cannot mutate our state). */
  toWire(): WireMetadata {
    return JSON.parse(JSON.stringify(this.doc)) as WireMetadata;
  }
}

function fail(message: string): never {
  throw new MetadataError(message);
}

function isPlainObject(value: unknown): value is Record<string, unknown> {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

/** Split a `$type` tag and check its namespace; returns the record name. */
function recordName(tag: unknown, where: string): string {
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

/** Normalize an optional field: missing → [], string → [s], [s?] kept. */
function optionalList(value: unknown, field: string): string[] {
  if (value === undefined || value === null) return [];
  if (typeof value === "string") return [value];
  if (Array.isArray(value)) {
    if (value.length > 1) {
      fail(`${field}: optional fields hold at most one value, got ${value.length}`);
    }
    if (value.length === 1 && typeof value[0] !== "string") {
      fail(`${field}: expected a string, got ${JSON.stringify(value[0])}`);
    }
    return value.slice() as string[];
  }
  fail(`${field}: expected a string or 0/1-element array`);
}

function normalizeBinds(value: unknown): WireBind[] {
  if (value === undefined || value === null) return [];
  if (!Array.isArray(value)) fail("binds: expected an array");
  const seen = new Set<string>();
  return value.map((entry, i) => {
    if (!isPlainObject(entry)) fail(`binds[${i}]: expected an object`);
    const { hostPath, containerPath, readOnly } = entry;
    if (typeof hostPath !== "string" || !hostPath.startsWith("/")) {
      fail(`binds[${i}]: hostPath must be an absolute path`);
    }
    if (typeof containerPath !== "string" || !containerPath.startsWith("/")) {
      fail(`binds[${i}]: containerPath must be an absolute path`);
    }
    if (readOnly !== undefined && typeof readOnly !== "boolean") {
      fail(`binds[${i}]: readOnly must be a boolean`);
    }
    if (seen.has(containerPath)) {
      fail(`binds[${i}]: duplicate containerPath ${containerPath}`);
    }
    seen.add(containerPath);
    return { hostPath, containerPath, readOnly: readOnly ?? false };
  });
}

/** The current page location, when running in a browser context. */
function pageHref(): string | null {
  const w = (globalThis as { window?: { location?: { href?: string } } }).window;
  const href = w?.location?.href;
  return typeof href === "string" && href ? href : null;
}

/**
 * Build validated job metadata from a literal object.
 *
 * Both the short (`ccrs.model`) and the long compatibility namespace are
 * accepted in `$type` tags, and whichever the literal used is preserved on
 * the wire. `$type` may be omitted entirely, in which case the default
 * namespace is used. When the literal carries no `url`, the page's own
 * location fills it in just before submission.
 */
export function sysJobMetaData(obj: unknown): ClientMetadata {
  if (!isPlainObject(obj)) fail("metadata must be a plain object literal");

  for (const key of Object.keys(obj)) {
    if (!KNOWN_FIELDS.has(key)) fail(`unknown metadata field: ${key}`);
  }

  let outerType = `${DEFAULT_NAMESPACE}.${METADATA_TYPE}`;
  if (obj.$type !== undefined) {
    const name = recordName(obj.$type, "metadata");
    if (name !== METADATA_TYPE) {
      fail(`metadata: expected a ${METADATA_TYPE} record, got ${name}`);
    }
    outerType = obj.$type as string;
  }

  if (!isPlainObject(obj.containerType)) {
    fail("containerType: required and must be an object with a $type tag");
  }
  let innerType = obj.containerType.$type;
  if (innerType === undefined) fail("containerType: missing $type tag");
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
  if (
    (containerName === "SystemdNspawn" ||
      containerName === "Nspawn" ||
      containerName === "SharedContainer") &&
    !image.length &&
    !containerId.length
  ) {
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
    containerType: { $type: innerType as string },
    containerId,
    image,
    binds: normalizeBinds(obj.binds),
    overlay: optionalList(obj.overlay, "overlay"),
    user,
    address: optionalList(obj.address, "address"),
    hostname: optionalList(obj.hostname, "hostname"),
    url,
  });
}
