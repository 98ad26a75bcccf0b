/**
 * Input manifest: line-delimited JSON records {id, kind, payload} where kind
 * is "image" (payload: URL or path) or "text" (payload: the text itself).
 */

import { readFileSync } from "node:fs";

export type Kind = "image" | "text";

export interface ManifestEntry {
  id: string;
  kind: Kind;
  payload: string;
}

export function parseManifest(content: string): ManifestEntry[] {
  const entries: ManifestEntry[] = [];
  const seen = new Set<string>();
  const lines = content.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    let record: unknown;
    try {
      record = JSON.parse(line);
    } catch (err) {
      throw new Error(`manifest line ${i + 1}: invalid JSON`);
    }
    const { id, kind, payload } = record as Record<string, unknown>;
    if (typeof id !== "string" || !id) {
      throw new Error(`manifest line ${i + 1}: missing id`);
    }
    if (kind !== "image" && kind !== "text") {
      throw new Error(`manifest line ${i + 1}: kind must be "image" or "text"`);
    }
    if (typeof payload !== "string") {
      throw new Error(`manifest line ${i + 1}: missing payload`);
    }
    if (seen.has(id)) {
      throw new Error(`manifest line ${i + 1}: duplicate id ${id}`);
    }
    seen.add(id);
    entries.push({ id, kind, payload });
  }
  return entries;
}

export function readManifest(path: string): ManifestEntry[] {
  return parseManifest(readFileSync(path, "utf-8"));
}
