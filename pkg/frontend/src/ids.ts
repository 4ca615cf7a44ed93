/**
 * Client-side job ID generation.
 *
 * A job ID is 26 lowercase base32 characters encoding a 48-bit millisecond
 * timestamp followed by 80 random bits, in an alphabet whose ASCII order
 * matches its numeric order — IDs generated a couple of milliseconds apart
 * sort chronologically. The server accepts client-generated IDs on first
 * use and echoes them back, which is what lets a page mint a handle up
 * front and reuse it across submissions.
 */

// Crockford's base32 set, lowercased: no i/l/o/u, ascending ASCII order.
const ALPHABET = "0123456789abcdefghjkmnpqrstvwxyz";
export const JOB_ID_LENGTH = 26;

const STRICT_RE = new RegExp(`^[${ALPHABET}]{${JOB_ID_LENGTH}}$`);
const TIMESTAMP_BITS = 48n;
const RANDOM_BYTES = 10;
const MAX_TIMESTAMP_MS = (1n << TIMESTAMP_BITS) - 1n;

export type Clock = () => number;
export type Entropy = (byteCount: number) => Uint8Array;

/**
 * A client-minted job identity. `confirmed` flips to true once the server
 * has accepted a submission under this ID; reusing the handle afterwards
 * addresses the same server-side job (and its context).
 */
export interface JobHandle {
  readonly id: string;
  confirmed: boolean;
}

function defaultEntropy(byteCount: number): Uint8Array {
  const out = new Uint8Array(byteCount);
  globalThis.crypto.getRandomValues(out);
  return out;
}

/** Render the low 130 bits of `value` as 26 base32 characters. */
function encode(value: bigint): string {
  const chars = new Array<string>(JOB_ID_LENGTH);
  for (let i = JOB_ID_LENGTH - 1; i >= 0; i--) {
    chars[i] = ALPHABET[Number(value & 31n)] as string;
    value >>= 5n;
  }
  return chars.join("");
}

/**
 * Mint a fresh job handle. `clock` (milliseconds since the epoch) and
 * `entropy` exist so tests can pin the output.
 */
export function makeJobId(clock?: Clock, entropy?: Entropy): JobHandle {
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
    value = (value << 8n) | BigInt(byte);
  }
  return { id: encode(value), confirmed: false };
}

/** True if `value` is a well-formed job ID. */
export function isJobId(value: unknown): value is string {
  return typeof value === "string" && STRICT_RE.test(value);
}
