import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

const here = dirname(fileURLToPath(import.meta.url));

export function fixturePath(name: string): string {
  return join(here, "..", "fixtures", name);
}

// Slices the exact byte range: Buffer instances share a pooled
// ArrayBuffer, so .buffer alone would leak neighbours in.
export function fixtureBuffer(name: string): ArrayBuffer {
  const buf = readFileSync(fixturePath(name));
  return buf.buffer.slice(buf.byteOffset, buf.byteOffset + buf.byteLength);
}

export function fixtureJson<T>(name: string): T {
  return JSON.parse(readFileSync(fixturePath(name), "utf8")) as T;
}
