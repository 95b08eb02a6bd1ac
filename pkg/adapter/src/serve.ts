/**
 * Request loop: read request lines, write result lines, never exit on bad
 * input.  A malformed line produces a failure result (hash "" when the
 * request was too broken to recover one) and the loop continues.
 *
 * Hook mode is the integration template for a real trainer: each request
 * line is forwarded verbatim to a child process that is expected to speak
 * the same protocol (pretrain or fine-tune, honor the transfer hint, reply
 * with one result line).  Nothing in this repository trains a model; the
 * child command is the seam where that system plugs in.
 */

import { spawn, type ChildProcessByStdio } from "node:child_process";
import type { Readable, Writable } from "node:stream";
import { lineSplitter, parseRequest, resultToLine, ProtocolError } from "./protocol.js";
import type { EvaluationResult } from "./protocol.js";
import { evaluateStub } from "./stub.js";

export interface AdapterConfig {
  mode: "stub" | "hook";
  seed: number;
  hookCommand: string[];
}

function failureResult(hash: string, message: string): EvaluationResult {
  return { hash, score: null, cost: 0, source: "pretrain", failure: message };
}

/** Pull a request hash out of a line that failed full validation, if possible. */
function salvageHash(line: string): string {
  try {
    const obj = JSON.parse(line);
    if (typeof obj === "object" && obj !== null && typeof obj.hash === "string") {
      return obj.hash;
    }
  } catch {
    // not even JSON; nothing to salvage
  }
  return "";
}

export function serve(config: AdapterConfig, stdin: Readable, stdout: Writable): Promise<void> {
  let hook: ChildProcessByStdio<Writable, Readable, null> | null = null;
  if (config.mode === "hook") {
    if (config.hookCommand.length === 0) {
      throw new Error("hook mode needs a command (--hook-command ...)");
    }
    hook = spawn(config.hookCommand[0], config.hookCommand.slice(1), {
      stdio: ["pipe", "pipe", "inherit"],
    });
    hook.stdout.setEncoding("utf8");
    const relay = lineSplitter((line) => {
      stdout.write(line + "\n");
    });
    hook.stdout.on("data", (chunk: string) => relay.push(chunk));
  }

  const splitter = lineSplitter((line) => {
    if (hook !== null) {
      hook.stdin.write(line + "\n");
      return;
    }
    let result: EvaluationResult;
    try {
      result = evaluateStub(parseRequest(line), config.seed);
    } catch (err) {
      if (!(err instanceof ProtocolError)) throw err;
      result = failureResult(salvageHash(line), err.message);
    }
    stdout.write(resultToLine(result) + "\n");
  });

  stdin.setEncoding("utf8");
  return new Promise((resolve) => {
    stdin.on("data", (chunk: string) => splitter.push(chunk));
    stdin.on("end", () => {
      splitter.flush();
      if (hook !== null) {
        hook.stdin.end();
        hook.on("close", () => resolve());
      } else {
        resolve();
      }
    });
  });
}
