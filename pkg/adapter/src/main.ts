#!/usr/bin/env node
/** CLI entry: wire flags to the request loop on this process's stdio. */

import { parseArgs } from "node:util";
import { pathToFileURL } from "node:url";
import { serve, type AdapterConfig } from "./serve.js";

export function configFromArgv(argv: string[]): AdapterConfig {
  const { values, positionals } = parseArgs({
    args: argv,
    options: {
      mode: { type: "string", default: "stub" },
      seed: { type: "string", default: "0" },
      "hook-command": { type: "string", multiple: true, default: [] },
    },
    allowPositionals: true,
  });
  if (values.mode !== "stub" && values.mode !== "hook") {
    throw new Error(`--mode must be stub or hook, got ${JSON.stringify(values.mode)}`);
  }
  const seed = Number(values.seed);
  if (!Number.isInteger(seed)) {
    throw new Error(`--seed must be an integer, got ${JSON.stringify(values.seed)}`);
  }
  return {
    mode: values.mode,
    seed,
    hookCommand: [...(values["hook-command"] ?? []), ...positionals],
  };
}

const isMain =
  process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href;

if (isMain) {
  let config: AdapterConfig;
  try {
    config = configFromArgv(process.argv.slice(2));
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    process.exit(2);
  }
  serve(config, process.stdin, process.stdout).then(() => process.exit(0));
}
