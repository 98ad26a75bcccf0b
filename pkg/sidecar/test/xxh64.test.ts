import assert from "node:assert/strict";
import { test } from "node:test";

import { xxh64 } from "../src/xxh64.js";

// Reference vectors (seed 0), cross-checked against the reference
// implementation used by the engine.
const VECTORS: Array<[string, bigint]> = [
  ["", 0xef46db3751d8e999n],
  ["a", 0xd24ec4f1a98c6e5bn],
  ["abc", 0x44bc2cf5ad770999n],
  ["Nobody inspects the spammish repetition", 0xfbcea83c8a378bf1n],
];

test("matches reference vectors", () => {
  for (const [input, expected] of VECTORS) {
    assert.equal(xxh64(Buffer.from(input, "utf-8")), expected);
  }
});

test("binary range input", () => {
  const data = Uint8Array.from({ length: 100 }, (_, i) => i);
  assert.equal(xxh64(data), 0x6ac1e58032166597n);
});

test("long input exercises the stripe loop", () => {
  const data = Uint8Array.from({ length: 1021 }, (_, i) => (i * 7 + 3) % 256);
  const first = xxh64(data);
  const second = xxh64(data);
  assert.equal(first, second);
  data[500] ^= 0xff;
  assert.notEqual(xxh64(data), first);
});

test("respects byte offsets into a larger buffer", () => {
  const backing = new Uint8Array(64);
  backing.set([1, 2, 3, 4, 5], 10);
  const slice = backing.subarray(10, 15);
  assert.equal(xxh64(slice), xxh64(Uint8Array.from([1, 2, 3, 4, 5])));
});
