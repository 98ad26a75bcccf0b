#!/usr/bin/env node
/**
 * embedder-sidecar CLI.
 *
 *   embed --manifest m.jsonl --out caps.nrec --model <id> [--fake --seed N]
 *         [--dim D] [--batch-size B]
 *
 * Exit codes: 0 success, 1 bad arguments, 2 runtime failure.
 */

import { embedManifest } from "./embed.js";

const USAGE =
  "usage: embedder-sidecar embed --manifest <jsonl> --out <nrec> " +
  "[--model <id>] [--fake] [--seed <n>] [--dim <n>] [--batch-size <n>]";

interface ParsedArgs {
  manifest: string;
  out: string;
  model: string;
  fake: boolean;
  seed: number;
  dim: number;
  batchSize: number;
}

export function parseArgs(argv: string[]): ParsedArgs {
  if (argv[0] !== "embed") {
    throw new Error(`unknown command ${argv[0] ?? "(none)"}\n${USAGE}`);
  }
  const values: Record<string, string | boolean> = {};
  for (let i = 1; i < argv.length; i++) {
    const arg = argv[i];
    if (arg === "--fake") {
      values.fake = true;
      continue;
    }
    if (!arg.startsWith("--")) {
      throw new Error(`unexpected argument ${arg}\n${USAGE}`);
    }
    const key = arg.slice(2);
    const value = argv[++i];
    if (value === undefined) {
      throw new Error(`missing value for --${key}\n${USAGE}`);
    }
    values[key] = value;
  }
  const manifest = values["manifest"];
  const out = values["out"];
  if (typeof manifest !== "string" || typeof out !== "string") {
    throw new Error(`--manifest and --out are required\n${USAGE}`);
  }
  const intOr = (key: string, fallback: number): number => {
    const raw = values[key];
    if (raw === undefined) return fallback;
    const parsed = Number.parseInt(String(raw), 10);
    if (!Number.isFinite(parsed) || parsed <= 0) {
      throw new Error(`--${key} must be a positive integer\n${USAGE}`);
    }
    return parsed;
  };
  return {
    manifest,
    out,
    model: typeof values["model"] === "string" ? (values["model"] as string) : "",
    fake: values.fake === true,
    seed: values["seed"] === undefined ? 0 : Number.parseInt(String(values["seed"]), 10),
    dim: intOr("dim", 768),
    batchSize: intOr("batch-size", 64),
  };
}

export async function main(argv: string[]): Promise<number> {
  let args: ParsedArgs;
  try {
    args = parseArgs(argv);
  } catch (err) {
    console.error((err as Error).message);
    return 1;
  }
  if (!args.fake && !args.model) {
    console.error(`--model is required unless --fake is given\n${USAGE}`);
    return 1;
  }
  try {
    const outcome = await embedManifest({
      manifestPath: args.manifest,
      outPath: args.out,
      modelId: args.model,
      fake: args.fake,
      seed: args.seed,
      dim: args.dim,
      batchSize: args.batchSize,
    });
    console.log(
      `wrote ${outcome.rows} rows to ${args.out}` +
        (outcome.skipped.length ? `, skipped ${outcome.skipped.length}` : ""),
    );
    return 0;
  } catch (err) {
    console.error(`embedding failed: ${(err as Error).message}`);
    return 2;
  }
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.js") || entry.endsWith("embedder-sidecar")) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
