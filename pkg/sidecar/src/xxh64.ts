/**
 * XXH64 over a byte buffer, the checksum every NREC-family artifact carries.
 *
 * Pure BigInt implementation of the reference algorithm (seed 0 unless
 * given); verified against the reference test vectors in test/xxh64.test.ts.
 */

const P1 = 11400714785074694791n;
const P2 = 14029467366897019727n;
const P3 = 1609587929392839161n;
const P4 = 9650029242287828579n;
const P5 = 2870177450012600261n;
const MASK = 0xffffffffffffffffn;

function rotl(x: bigint, r: bigint): bigint {
  return ((x << r) | (x >> (64n - r))) & MASK;
}

function round(acc: bigint, input: bigint): bigint {
  acc = (acc + ((input * P2) & MASK)) & MASK;
  acc = rotl(acc, 31n);
  return (acc * P1) & MASK;
}

function mergeRound(acc: bigint, val: bigint): bigint {
  acc ^= round(0n, val);
  return (((acc * P1) & MASK) + P4) & MASK;
}

export function xxh64(data: Uint8Array, seed = 0n): bigint {
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const len = BigInt(data.length);
  let offset = 0;
  let h64: bigint;

  if (data.length >= 32) {
    let v1 = (seed + P1 + P2) & MASK;
    let v2 = (seed + P2) & MASK;
    let v3 = seed & MASK;
    let v4 = (seed - P1) & MASK;
    const limit = data.length - 32;
    while (offset <= limit) {
      v1 = round(v1, view.getBigUint64(offset, true));
      v2 = round(v2, view.getBigUint64(offset + 8, true));
      v3 = round(v3, view.getBigUint64(offset + 16, true));
      v4 = round(v4, view.getBigUint64(offset + 24, true));
      offset += 32;
    }
    h64 = (rotl(v1, 1n) + rotl(v2, 7n) + rotl(v3, 12n) + rotl(v4, 18n)) & MASK;
    h64 = mergeRound(h64, v1);
    h64 = mergeRound(h64, v2);
    h64 = mergeRound(h64, v3);
    h64 = mergeRound(h64, v4);
  } else {
    h64 = (seed + P5) & MASK;
  }

  h64 = (h64 + len) & MASK;

  while (offset + 8 <= data.length) {
    h64 ^= round(0n, view.getBigUint64(offset, true));
    h64 = (((rotl(h64, 27n) * P1) & MASK) + P4) & MASK;
    offset += 8;
  }
  if (offset + 4 <= data.length) {
    h64 ^= (BigInt(view.getUint32(offset, true)) * P1) & MASK;
    h64 = (((rotl(h64, 23n) * P2) & MASK) + P3) & MASK;
    offset += 4;
  }
  while (offset < data.length) {
    h64 ^= (BigInt(data[offset]) * P5) & MASK;
    h64 = (rotl(h64, 11n) * P1) & MASK;
    offset += 1;
  }

  h64 ^= h64 >> 33n;
  h64 = (h64 * P2) & MASK;
  h64 ^= h64 >> 29n;
  h64 = (h64 * P3) & MASK;
  h64 ^= h64 >> 32n;
  return h64;
}
