/**
 * Offline embedding mode: a deterministic unit vector per payload string.
 *
 * The scheme is fixed and shared with the engine so both sides emit
 * bit-identical vectors: SHA-256 of `${seed}:${payload}` keys a counter-mode
 * byte stream (key || u32-LE counter, hashed per block); each little-endian
 * u32 word w maps to w / 2^31 - 1; the vector is L2-normalized with
 * left-to-right float64 accumulation and each entry rounded to float32.
 */

import { createHash } from "node:crypto";

export function fakeEmbedding(
  payload: string,
  dim: number,
  seed = 0,
): Float32Array {
  const key = createHash("sha256").update(`${seed}:${payload}`, "utf-8").digest();
  const blocks: Buffer[] = [];
  let produced = 0;
  let counter = 0;
  while (produced < dim * 4) {
    const counterBytes = Buffer.alloc(4);
    counterBytes.writeUInt32LE(counter, 0);
    const block = createHash("sha256")
      .update(Buffer.concat([key, counterBytes]))
      .digest();
    blocks.push(block);
    produced += block.length;
    counter += 1;
  }
  const raw = Buffer.concat(blocks);
  const values = new Float64Array(dim);
  for (let i = 0; i < dim; i++) {
    values[i] = raw.readUInt32LE(i * 4) / 2147483648.0 - 1.0;
  }
  let sumSquares = 0.0;
  for (let i = 0; i < dim; i++) {
    sumSquares += values[i] * values[i];
  }
  let norm = Math.sqrt(sumSquares);
  if (norm === 0.0) {
    values[0] = 1.0;
    norm = 1.0;
  }
  const out = new Float32Array(dim);
  for (let i = 0; i < dim; i++) {
    out[i] = Math.fround(values[i] / norm);
  }
  return out;
}
