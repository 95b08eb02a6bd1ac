/**
 * Wire types for the JSON-lines evaluation protocol.
 *
 * One request object per line on stdin, one result object per line on
 * stdout.  Field names and nullability follow the search engine's
 * serialization exactly; anything that fails validation here is reported
 * back as a failure result rather than crashing the loop.
 */

export interface ModelCard {
  l: number;
  o: string[];
  n: number[];
  h: number[];
  f: number[][];
  p: (string | number)[];
}

export interface TransferHint {
  neighbor_hash: string;
  overlap_fraction: number;
}

export interface EvaluationRequest {
  hash: string;
  card: ModelCard;
  embedding: number[];
  transfer_hint: TransferHint | null;
  seed: number;
}

export interface EvaluationResult {
  hash: string;
  score: number | null;
  cost: number;
  source: "pretrain" | "transfer" | "replay" | "synthetic";
  failure: string | null;
}

export class ProtocolError extends Error {}

function isStringArray(x: unknown): x is string[] {
  return Array.isArray(x) && x.every((v) => typeof v === "string");
}

function isNumberArray(x: unknown): x is number[] {
  return Array.isArray(x) && x.every((v) => typeof v === "number" && Number.isFinite(v));
}

function parseCard(x: unknown): ModelCard {
  if (typeof x !== "object" || x === null) {
    throw new ProtocolError("card must be an object");
  }
  const c = x as Record<string, unknown>;
  if (typeof c.l !== "number" || !Number.isInteger(c.l) || c.l < 1) {
    throw new ProtocolError("card.l must be a positive integer");
  }
  if (!isStringArray(c.o)) throw new ProtocolError("card.o must be a string list");
  if (!isNumberArray(c.n)) throw new ProtocolError("card.n must be a number list");
  if (!isNumberArray(c.h)) throw new ProtocolError("card.h must be a number list");
  if (!Array.isArray(c.f) || !c.f.every(isNumberArray)) {
    throw new ProtocolError("card.f must be a list of number lists");
  }
  if (!Array.isArray(c.p) || !c.p.every((v) => typeof v === "string" || typeof v === "number")) {
    throw new ProtocolError("card.p must be a list of strings or numbers");
  }
  for (const [name, seq] of [["o", c.o], ["n", c.n], ["h", c.h], ["f", c.f], ["p", c.p]] as const) {
    if ((seq as unknown[]).length !== c.l) {
      throw new ProtocolError(`card.${name} has length ${(seq as unknown[]).length}, expected ${c.l}`);
    }
  }
  return { l: c.l, o: c.o, n: c.n, h: c.h, f: c.f as number[][], p: c.p as (string | number)[] };
}

export function parseRequest(line: string): EvaluationRequest {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch (err) {
    throw new ProtocolError(`not JSON: ${(err as Error).message}`);
  }
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new ProtocolError("expected a JSON object");
  }
  const o = obj as Record<string, unknown>;
  if (typeof o.hash !== "string" || o.hash.length === 0) {
    throw new ProtocolError("hash must be a non-empty string");
  }
  if (typeof o.seed !== "number" || !Number.isInteger(o.seed)) {
    throw new ProtocolError("seed must be an integer");
  }
  let hint: TransferHint | null = null;
  if (o.transfer_hint !== null && o.transfer_hint !== undefined) {
    const h = o.transfer_hint as Record<string, unknown>;
    if (typeof h.neighbor_hash !== "string" || typeof h.overlap_fraction !== "number") {
      throw new ProtocolError("transfer_hint must carry neighbor_hash and overlap_fraction");
    }
    if (h.overlap_fraction < 0 || h.overlap_fraction > 1) {
      throw new ProtocolError(`overlap_fraction ${h.overlap_fraction} outside [0, 1]`);
    }
    hint = { neighbor_hash: h.neighbor_hash, overlap_fraction: h.overlap_fraction };
  }
  const embedding = o.embedding === undefined || o.embedding === null ? [] : o.embedding;
  if (!isNumberArray(embedding)) {
    throw new ProtocolError("embedding must be a number list");
  }
  return {
    hash: o.hash,
    card: parseCard(o.card),
    embedding,
    transfer_hint: hint,
    seed: o.seed,
  };
}

export function resultToLine(res: EvaluationResult): string {
  return JSON.stringify({
    hash: res.hash,
    score: res.score,
    cost: res.cost,
    source: res.source,
    failure: res.failure,
  });
}

/** Incremental newline splitter for a byte stream arriving in chunks. */
export function lineSplitter(onLine: (line: string) => void) {
  let buffer = "";
  return {
    push(chunk: string) {
      buffer += chunk;
      for (;;) {
        const idx = buffer.indexOf("\n");
        if (idx === -1) break;
        const line = buffer.slice(0, idx);
        buffer = buffer.slice(idx + 1);
        if (line.trim().length > 0) onLine(line);
      }
    },
    flush() {
      const line = buffer;
      buffer = "";
      if (line.trim().length > 0) onLine(line);
    },
  };
}
