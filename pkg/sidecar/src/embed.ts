/**
 * Embedding job execution: manifest in, NREC file out.
 *
 * The fake backend needs no model weights and is the offline-CI path.  The
 * real backend loads a vision-language dual encoder by model id (via the
 * optional `@xenova/transformers` runtime) and is selected whenever --fake
 * is not given.  Unreadable inputs are skipped and recorded in a sidecar
 * skip-list next to the output file; the engine treats skipped ids as
 * absent.
 */

import { writeFileSync } from "node:fs";

import { fakeEmbedding } from "./fake.js";
import { encodeNrec } from "./nrec.js";
import { ManifestEntry, readManifest } from "./manifest.js";

export interface EmbedJob {
  manifestPath: string;
  outPath: string;
  modelId: string;
  fake: boolean;
  seed: number;
  dim: number;
  batchSize: number;
}

export interface EmbedOutcome {
  rows: number;
  skipped: string[];
}

export interface Backend {
  /** Embed one kind-homogeneous batch; null rows mean "skip this entry". */
  embedBatch(
    kind: "image" | "text",
    payloads: string[],
  ): Promise<Array<Float32Array | null>>;
  dim(): number;
}

class FakeBackend implements Backend {
  constructor(
    private readonly dimension: number,
    private readonly seed: number,
  ) {}

  dim(): number {
    return this.dimension;
  }

  async embedBatch(
    _kind: "image" | "text",
    payloads: string[],
  ): Promise<Array<Float32Array | null>> {
    return payloads.map((p) => fakeEmbedding(p, this.dimension, this.seed));
  }
}

class TransformersBackend implements Backend {
  private constructor(
    private readonly pipe: any,
    private readonly dimension: number,
  ) {}

  static async load(modelId: string): Promise<TransformersBackend> {
    let transformers: any;
    try {
      transformers = await import("@xenova/transformers" as string);
    } catch {
      throw new Error(
        "real-model embedding needs the optional '@xenova/transformers' " +
          "package and downloaded weights; install it or run with --fake",
      );
    }
    const pipe = await transformers.pipeline("feature-extraction", modelId);
    const probe = await pipe("dimension probe", {
      pooling: "mean",
      normalize: true,
    });
    return new TransformersBackend(pipe, probe.data.length);
  }

  dim(): number {
    return this.dimension;
  }

  async embedBatch(
    kind: "image" | "text",
    payloads: string[],
  ): Promise<Array<Float32Array | null>> {
    if (kind !== "text") {
      throw new Error("this backend embeds text only; image inputs need a CLIP vision pipeline");
    }
    const out: Array<Float32Array | null> = [];
    for (const payload of payloads) {
      try {
        const result = await this.pipe(payload, {
          pooling: "mean",
          normalize: true,
        });
        out.push(Float32Array.from(result.data));
      } catch {
        out.push(null);
      }
    }
    return out;
  }
}

/** L2-normalize in place (float64 accumulation) if not already unit length. */
export function normalize(vector: Float32Array): Float32Array {
  let sumSquares = 0.0;
  for (let i = 0; i < vector.length; i++) {
    sumSquares += vector[i] * vector[i];
  }
  const norm = Math.sqrt(sumSquares);
  if (norm === 0.0) {
    return vector;
  }
  if (Math.abs(norm - 1.0) > 1e-6) {
    for (let i = 0; i < vector.length; i++) {
      vector[i] = Math.fround(vector[i] / norm);
    }
  }
  return vector;
}

export async function loadBackend(job: EmbedJob): Promise<Backend> {
  if (job.fake) {
    return new FakeBackend(job.dim, job.seed);
  }
  return TransformersBackend.load(job.modelId);
}

export async function embedManifest(
  job: EmbedJob,
  backend?: Backend,
): Promise<EmbedOutcome> {
  const entries = readManifest(job.manifestPath);
  const resolved = backend ?? (await loadBackend(job));

  const ids: string[] = [];
  const rows: Float32Array[] = [];
  const skipped: string[] = [];

  // Kind-homogeneous batches, original order restored afterwards.
  const order = new Map<string, number>();
  entries.forEach((e, i) => order.set(e.id, i));
  const byId = new Map<string, Float32Array | null>();
  for (const kind of ["image", "text"] as const) {
    const subset = entries.filter((e) => e.kind === kind);
    for (let start = 0; start < subset.length; start += job.batchSize) {
      const batch = subset.slice(start, start + job.batchSize);
      const vectors = await resolved.embedBatch(
        kind,
        batch.map((e) => e.payload),
      );
      batch.forEach((entry, i) => byId.set(entry.id, vectors[i]));
    }
  }
  for (const entry of entries) {
    const vector = byId.get(entry.id) ?? null;
    if (vector === null) {
      skipped.push(entry.id);
      continue;
    }
    ids.push(entry.id);
    rows.push(normalize(vector));
  }

  const dim = resolved.dim();
  const data = new Float32Array(ids.length * dim);
  rows.forEach((row, r) => data.set(row, r * dim));
  writeFileSync(job.outPath, encodeNrec({ ids, dim, data }));
  if (skipped.length) {
    writeFileSync(job.outPath + ".skipped", skipped.join("\n") + "\n");
  }
  return { rows: ids.length, skipped };
}
