/**
 * Deterministic stub scorer.
 *
 * No training happens here.  The score is a pure function of (seed, card):
 *
 *   score = first 8 bytes of sha256(`${seed}:` + canonical card JSON),
 *           read as a big-endian unsigned integer, divided by 2^64
 *
 * where canonical card JSON is JSON.stringify with object keys sorted
 * recursively and no whitespace.  That puts scores uniformly in [0, 1) and
 * makes them reproducible from the request alone, which is exactly what a
 * protocol conformance harness needs to recompute on its side.
 *
 * Cost mirrors the engine's train-time units, (l * mean hidden + total ff
 * width) / 1024, and a transfer hint multiplies it by TRANSFER_COST_FACTOR:
 * fine-tuning from a mostly-shared parent is cheaper than pretraining from
 * scratch, but lands on the same final score.
 */

import { createHash } from "node:crypto";
import type { EvaluationRequest, EvaluationResult, ModelCard } from "./protocol.js";

export const TRANSFER_COST_FACTOR = 0.4;

export function canonicalJson(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(",")}]`;
  }
  if (typeof value === "object" && value !== null) {
    const obj = value as Record<string, unknown>;
    const parts = Object.keys(obj)
      .sort()
      .map((k) => `${JSON.stringify(k)}:${canonicalJson(obj[k])}`);
    return `{${parts.join(",")}}`;
  }
  return JSON.stringify(value);
}

export function stubScore(card: ModelCard, seed: number): number {
  const digest = createHash("sha256")
    .update(`${seed}:${canonicalJson(card)}`)
    .digest();
  const hi = digest.readBigUInt64BE(0);
  return Number(hi) / 2 ** 64;
}

export function costUnits(card: ModelCard): number {
  const totalFf = card.f.reduce((acc, stack) => acc + stack.reduce((a, w) => a + w, 0), 0);
  const meanH = card.h.reduce((a, v) => a + v, 0) / card.l;
  return (card.l * meanH + totalFf) / 1024;
}

export function evaluateStub(req: EvaluationRequest, seed: number): EvaluationResult {
  let cost = costUnits(req.card);
  let source: EvaluationResult["source"] = "pretrain";
  if (req.transfer_hint !== null) {
    cost *= TRANSFER_COST_FACTOR;
    source = "transfer";
  }
  return {
    hash: req.hash,
    score: stubScore(req.card, seed),
    cost,
    source,
    failure: null,
  };
}
