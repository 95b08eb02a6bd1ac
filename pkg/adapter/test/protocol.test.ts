import { describe, expect, it } from "vitest";
import {
  lineSplitter,
  parseRequest,
  resultToLine,
  ProtocolError,
} from "../src/protocol.js";

const CARD = {
  l: 2,
  o: ["SA", "SA"],
  n: [2, 2],
  h: [128, 128],
  f: [[512], [512]],
  p: ["SDP", "SDP"],
};

function requestLine(overrides: Record<string, unknown> = {}): string {
  return JSON.stringify({
    hash: "abc123",
    card: CARD,
    embedding: [0.1, -0.2],
    transfer_hint: null,
    seed: 0,
    ...overrides,
  });
}

describe("parseRequest", () => {
  it("accepts a well-formed request", () => {
    const req = parseRequest(requestLine());
    expect(req.hash).toBe("abc123");
    expect(req.card.l).toBe(2);
    expect(req.embedding).toEqual([0.1, -0.2]);
    expect(req.transfer_hint).toBeNull();
  });

  it("accepts a transfer hint and keeps its fields", () => {
    const req = parseRequest(
      requestLine({ transfer_hint: { neighbor_hash: "def", overlap_fraction: 0.75 } }),
    );
    expect(req.transfer_hint).toEqual({ neighbor_hash: "def", overlap_fraction: 0.75 });
  });

  it("treats a missing embedding as empty", () => {
    const obj = JSON.parse(requestLine());
    delete obj.embedding;
    expect(parseRequest(JSON.stringify(obj)).embedding).toEqual([]);
  });

  it.each([
    ["not json", "{nope"],
    ["array top level", "[1,2]"],
    ["missing hash", requestLine({ hash: undefined })],
    ["empty hash", requestLine({ hash: "" })],
    ["fractional seed", requestLine({ seed: 1.5 })],
    ["card length mismatch", requestLine({ card: { ...CARD, o: ["SA"] } })],
    ["card missing", requestLine({ card: null })],
    ["overlap out of range", requestLine({ transfer_hint: { neighbor_hash: "x", overlap_fraction: 1.5 } })],
  ])("rejects %s", (_name, line) => {
    expect(() => parseRequest(line as string)).toThrow(ProtocolError);
  });
});

describe("resultToLine", () => {
  it("serializes every field with nulls intact", () => {
    const line = resultToLine({
      hash: "abc",
      score: null,
      cost: 0,
      source: "pretrain",
      failure: "boom",
    });
    expect(JSON.parse(line)).toEqual({
      hash: "abc",
      score: null,
      cost: 0,
      source: "pretrain",
      failure: "boom",
    });
  });
});

describe("lineSplitter", () => {
  it("reassembles lines across chunk boundaries", () => {
    const seen: string[] = [];
    const s = lineSplitter((l) => seen.push(l));
    s.push('{"a"');
    s.push(': 1}\n{"b": 2}\n{"c"');
    s.push(": 3}");
    s.flush();
    expect(seen).toEqual(['{"a": 1}', '{"b": 2}', '{"c": 3}']);
  });

  it("skips blank lines", () => {
    const seen: string[] = [];
    const s = lineSplitter((l) => seen.push(l));
    s.push("\n\n  \nx\n");
    s.flush();
    expect(seen).toEqual(["x"]);
  });
});
