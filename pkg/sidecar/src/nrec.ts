/**
 * NREC binary embedding file: magic "NREC", u16 version 1, u32 dim,
 * u64 rows, rows*dim little-endian float32, a length-prefixed UTF-8 id per
 * row, and a trailing XXH64(seed 0) of everything prior.
 */

import { xxh64 } from "./xxh64.js";

export const MAGIC = "NREC";
export const VERSION = 1;

export interface Matrix {
  ids: string[];
  dim: number;
  /** Row-major float32 values, rows * dim entries. */
  data: Float32Array;
}

export function encodeNrec(matrix: Matrix): Buffer {
  const { ids, dim, data } = matrix;
  if (data.length !== ids.length * dim) {
    throw new Error(
      `data length ${data.length} != rows ${ids.length} * dim ${dim}`,
    );
  }
  const idBlobs = ids.map((id) => Buffer.from(id, "utf-8"));
  const idBytes = idBlobs.reduce((n, b) => n + 4 + b.length, 0);
  const total = 4 + 2 + 4 + 8 + data.length * 4 + idBytes + 8;
  const out = Buffer.alloc(total);
  let offset = 0;
  out.write(MAGIC, offset, "ascii");
  offset += 4;
  out.writeUInt16LE(VERSION, offset);
  offset += 2;
  out.writeUInt32LE(dim, offset);
  offset += 4;
  out.writeBigUInt64LE(BigInt(ids.length), offset);
  offset += 8;
  for (let i = 0; i < data.length; i++) {
    out.writeFloatLE(data[i], offset);
    offset += 4;
  }
  for (const blob of idBlobs) {
    out.writeUInt32LE(blob.length, offset);
    offset += 4;
    blob.copy(out, offset);
    offset += blob.length;
  }
  const checksum = xxh64(out.subarray(0, offset));
  out.writeBigUInt64LE(checksum, offset);
  return out;
}

export function decodeNrec(blob: Buffer): Matrix {
  if (blob.length < 14) {
    throw new Error(`file truncated: ${blob.length} bytes`);
  }
  if (blob.toString("ascii", 0, 4) !== MAGIC) {
    throw new Error(`bad magic ${blob.subarray(0, 4).toString("hex")}`);
  }
  const version = blob.readUInt16LE(4);
  if (version !== VERSION) {
    throw new Error(`unsupported version ${version}`);
  }
  const stored = blob.readBigUInt64LE(blob.length - 8);
  const actual = xxh64(blob.subarray(0, blob.length - 8));
  if (stored !== actual) {
    throw new Error(`checksum mismatch: stored ${stored}, computed ${actual}`);
  }
  const dim = blob.readUInt32LE(6);
  const rows = Number(blob.readBigUInt64LE(10));
  let offset = 18;
  const data = new Float32Array(rows * dim);
  for (let i = 0; i < rows * dim; i++) {
    data[i] = blob.readFloatLE(offset);
    offset += 4;
  }
  const ids: string[] = [];
  for (let r = 0; r < rows; r++) {
    const length = blob.readUInt32LE(offset);
    offset += 4;
    ids.push(blob.toString("utf-8", offset, offset + length));
    offset += length;
  }
  if (offset !== blob.length - 8) {
    throw new Error(`${blob.length - 8 - offset} trailing bytes after id block`);
  }
  return { ids, dim, data };
}
