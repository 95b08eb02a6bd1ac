"""Pluggable performance oracles and the weight-transfer decision logic.

An oracle answers "how good is this architecture" behind one interface, so
the search loop never cares whether the answer comes from a closed-form
benchmark stand-in, a recorded ledger, or an external trainer process
speaking the JSON-lines protocol.  This module also owns the transfer
decision: the leading-layer overlap count, neighbor ranking, and the
threshold test that turns a ranked neighbor into a transfer hint.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import select
import subprocess
import time
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError
from .space import ModelCard

SOURCES = ("pretrain", "transfer", "replay", "synthetic")
DEFAULT_TAU = 0.8
TRANSFER_COST_FACTOR = 0.4
DEFAULT_TIMEOUT = 3600.0

# Closed-form oracle constants.  The base landscape rewards linear-transform
# layers (DCT flavor most), wide feed-forward stacks, more heads, wider
# hidden dims and deeper encoders, with later layers weighted more, plus a
# smooth non-monotone ripple in the width mix so greedy width is not free.
DEFAULT_ORACLE_PARAMS = {
    "offset": 0.35,
    "w_lt": 0.14,
    "dct_bonus": 0.25,
    "w_ff": 0.10,
    "w_h": 0.02,
    "w_n": 0.01,
    "w_l": 0.02,
    "w_smooth": 0.03,
    "noise_floor": 0.003,
    "noise_sa": 0.007,
    "max_layers": 4,
    "max_heads": 4,
    "max_hidden": 256,
    "max_ff_total": 3072,
}


@dataclass(frozen=True)
class TransferHint:
    """Pointer to an already-trained neighbor whose prefix layers match."""

    neighbor_hash: str
    overlap_fraction: float

    def __post_init__(self):
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ValueError(f"overlap_fraction {self.overlap_fraction} outside [0, 1]")


@dataclass(frozen=True)
class EvaluationRequest:
    """One architecture sent for scoring."""

    hash: str
    card: ModelCard
    embedding: tuple = ()
    transfer_hint: TransferHint | None = None
    seed: int = 0


@dataclass(frozen=True)
class EvaluationResult:
    """Oracle verdict: a score or a failure message, never both."""

    hash: str
    score: float | None
    cost: float
    source: str
    failure: str | None = None

    def __post_init__(self):
        if (self.score is None) == (self.failure is None):
            raise ValueError("exactly one of score and failure must be set")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.source not in SOURCES:
            raise ValueError(f"source {self.source!r} not one of {SOURCES}")

    @property
    def ok(self) -> bool:
        return self.failure is None


@dataclass(frozen=True)
class OracleSpec:
    """Declarative oracle choice: kind plus its parameters."""

    kind: str
    parameters: dict


# -- JSON-lines protocol ----------------------------------------------------


def request_to_line(req: EvaluationRequest) -> str:
    hint = None
    if req.transfer_hint is not None:
        hint = {
            "neighbor_hash": req.transfer_hint.neighbor_hash,
            "overlap_fraction": req.transfer_hint.overlap_fraction,
        }
    return json.dumps(
        {
            "hash": req.hash,
            "card": req.card.to_dict(),
            "embedding": [float(v) for v in req.embedding],
            "transfer_hint": hint,
            "seed": req.seed,
        },
        separators=(",", ":"),
    )


def request_from_line(line: str) -> EvaluationRequest:
    obj = _parse_object(line)
    try:
        hint = obj.get("transfer_hint")
        return EvaluationRequest(
            hash=str(obj["hash"]),
            card=ModelCard.from_dict(obj["card"]),
            embedding=tuple(float(v) for v in obj.get("embedding") or ()),
            transfer_hint=None
            if hint is None
            else TransferHint(str(hint["neighbor_hash"]), float(hint["overlap_fraction"])),
            seed=int(obj["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad evaluation request: {exc}") from exc


def result_to_line(res: EvaluationResult) -> str:
    return json.dumps(
        {
            "hash": res.hash,
            "score": res.score,
            "cost": res.cost,
            "source": res.source,
            "failure": res.failure,
        },
        separators=(",", ":"),
    )


def result_from_line(line: str) -> EvaluationResult:
    obj = _parse_object(line)
    try:
        return EvaluationResult(
            hash=str(obj["hash"]),
            score=None if obj.get("score") is None else float(obj["score"]),
            cost=float(obj.get("cost", 0.0)),
            source=str(obj["source"]),
            failure=None if obj.get("failure") is None else str(obj["failure"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"bad evaluation result: {exc}") from exc


def _parse_object(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ProtocolError(f"expected a JSON object, got {type(obj).__name__}")
    return obj


# -- transfer decision ------------------------------------------------------


def biased_overlap(q: ModelCard, n: ModelCard) -> tuple[int, float]:
    """Leading-layer agreement between two cards.

    Counts encoder layers from the input side whose full hyperparameter
    tuples match, stops at the first mismatch, and normalizes by the query's
    own depth, so a short query fully contained in a longer neighbor still
    reports fraction 1.
    """
    count = 0
    for j in range(min(q.l, n.l)):
        if q.layer(j) != n.layer(j):
            break
        count += 1
    return count, count / q.l


@dataclass(frozen=True)
class RankedNeighbor:
    hash: str
    count: int
    fraction: float
    distance: float


def rank_neighbors(q_card: ModelCard, knn_list, cards) -> list:
    """Order knn results for the transfer decision.

    Overlap fraction descending, then embedding distance ascending, then
    hash, which makes the order total and deterministic.  ``cards`` maps
    each neighbor hash to its model card.
    """
    ranked = []
    for h, dist in knn_list:
        count, fraction = biased_overlap(q_card, cards[h])
        ranked.append(RankedNeighbor(h, count, fraction, float(dist)))
    ranked.sort(key=lambda r: (-r.fraction, r.distance, r.hash))
    return ranked


def select_transfer(ranked, trained, tau: float = DEFAULT_TAU) -> TransferHint | None:
    """First trained neighbor whose overlap clears the threshold, if any."""
    for r in ranked:
        if r.hash in trained and r.fraction >= tau:
            return TransferHint(r.hash, r.fraction)
    return None


# -- oracles ----------------------------------------------------------------


def base_score(card: ModelCard, params=None) -> float:
    """Noise-free benchmark stand-in score for a card.

    Per-layer contributions are weighted by depth position (later layers
    count more), averaged, and added to an offset.  The ripple term is a
    smooth function of the depth-weighted width mix.  The range stays well
    inside [0, 1] so the final clamp in the oracle never actually binds.
    """
    p = {**DEFAULT_ORACLE_PARAMS, **(params or {})}
    l = card.l
    weights = [(j + 1) / l for j in range(l)]
    denom = sum(weights)
    lt = ff = h_term = n_term = 0.0
    for j, w in enumerate(weights):
        if card.o[j] == "LT":
            lt += w * (1.0 if card.p[j] == "DCT" else 1.0 - p["dct_bonus"])
        ff += w * sum(card.f[j]) / p["max_ff_total"]
        h_term += w * card.h[j] / p["max_hidden"]
        n_term += w * card.n[j] / p["max_heads"]
    lt /= denom
    width = ff / denom
    score = (
        p["offset"]
        + p["w_lt"] * lt
        + p["w_ff"] * width
        + p["w_h"] * h_term / denom
        + p["w_n"] * n_term / denom
        + p["w_l"] * l / p["max_layers"]
        + p["w_smooth"] * math.sin(math.pi * width) * (0.5 + 0.5 * lt)
    )
    return score


def noise_sigma(card: ModelCard, params=None) -> float:
    """Per-card noise level: self-attention layers evaluate less stably."""
    p = {**DEFAULT_ORACLE_PARAMS, **(params or {})}
    sa = sum(1 for o in card.o if o == "SA") / card.l
    return p["noise_floor"] + p["noise_sa"] * sa


def cost_units(card: ModelCard) -> float:
    """Abstract train-time units, growing with parameter bulk."""
    total_ff = sum(sum(stack) for stack in card.f)
    mean_h = sum(card.h) / card.l
    return (card.l * mean_h + total_ff) / 1024.0


def _request_rng(req: EvaluationRequest) -> np.random.Generator:
    """Noise stream keyed by (seed, hash): stable per request, uncorrelated
    across cards and across seeds."""
    digest = hashlib.sha256(req.hash.encode()).digest()
    key = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([req.seed, key]))


class SyntheticOracle:
    """Closed-form oracle: documented base landscape plus seeded noise.

    ``noise_scale`` multiplies the per-card noise level; zero makes the
    oracle fully deterministic.  Parameters can be overridden with a dict
    or loaded from a JSON parameter file.
    """

    kind = "synthetic"

    def __init__(self, params=None, noise_scale: float = 1.0):
        self.params = {**DEFAULT_ORACLE_PARAMS, **(params or {})}
        self.noise_scale = noise_scale

    @classmethod
    def from_file(cls, path, noise_scale: float = 1.0) -> "SyntheticOracle":
        with open(path) as fh:
            return cls(json.load(fh), noise_scale)

    def save_params(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.params, fh, sort_keys=True, indent=2)
            fh.write("\n")

    def evaluate(self, req: EvaluationRequest) -> EvaluationResult:
        base = base_score(req.card, self.params)
        sigma = self.noise_scale * noise_sigma(req.card, self.params)
        if sigma > 0:
            base += sigma * float(_request_rng(req).standard_normal())
        cost = cost_units(req.card)
        if req.transfer_hint is not None:
            cost *= TRANSFER_COST_FACTOR
        return EvaluationResult(
            hash=req.hash,
            score=min(1.0, max(0.0, base)),
            cost=cost,
            source="synthetic",
        )


class ReplayOracle:
    """Replays recorded scores from a JSONL ledger; no training happens.

    Later lines override earlier ones for the same hash.  A hash absent
    from the ledger yields the declared default score if one was given,
    otherwise a failure result.
    """

    kind = "replay"

    def __init__(self, path, default_score: float | None = None):
        self.scores = {}
        self.costs = {}
        self.default_score = default_score
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    self.scores[str(obj["hash"])] = float(obj["score"])
                    self.costs[str(obj["hash"])] = float(obj.get("cost", 0.0))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise ProtocolError(f"bad replay ledger line {lineno}: {exc}") from exc

    def evaluate(self, req: EvaluationRequest) -> EvaluationResult:
        if req.hash in self.scores:
            return EvaluationResult(
                hash=req.hash,
                score=self.scores[req.hash],
                cost=self.costs[req.hash],
                source="replay",
            )
        if self.default_score is not None:
            return EvaluationResult(
                hash=req.hash, score=self.default_score, cost=0.0, source="replay"
            )
        return EvaluationResult(
            hash=req.hash,
            score=None,
            cost=0.0,
            source="replay",
            failure="hash not in replay ledger",
        )


class ExternalOracle:
    """Talks to a real evaluator subprocess over the JSON-lines protocol.

    One request line goes to the child's stdin, one result line is read
    back.  Timeouts, early exits, and malformed replies all become failure
    results rather than exceptions; the child is restarted afterwards so
    one bad exchange cannot poison the next.
    """

    kind = "external"

    def __init__(self, command, timeout: float = DEFAULT_TIMEOUT):
        if isinstance(command, str):
            raise TypeError("command must be an argument list, not a shell string")
        self.command = list(command)
        self.timeout = timeout
        self._proc = None
        self._buf = b""

    def _ensure_proc(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
            self._buf = b""
        return self._proc

    def _read_line(self, deadline: float) -> bytes:
        fd = self._proc.stdout.fileno()
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError(f"no reply within {self.timeout} time units")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise TimeoutError(f"no reply within {self.timeout} time units")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise ProtocolError("evaluator process closed its output")
            self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line

    def evaluate(self, req: EvaluationRequest) -> EvaluationResult:
        def fail(msg):
            self._restart()
            return EvaluationResult(req.hash, None, 0.0, "pretrain", failure=msg)

        try:
            proc = self._ensure_proc()
            proc.stdin.write((request_to_line(req) + "\n").encode())
            proc.stdin.flush()
            line = self._read_line(time.monotonic() + self.timeout)
            res = result_from_line(line.decode())
        except (OSError, TimeoutError, ProtocolError, UnicodeDecodeError) as exc:
            return fail(str(exc))
        if res.hash != req.hash:
            return fail(f"reply hash {res.hash!r} does not match request")
        return res

    def _restart(self):
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None
        self._buf = b""

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_oracle(spec: OracleSpec):
    """Build the oracle an OracleSpec describes."""
    p = spec.parameters
    if spec.kind == "synthetic":
        if "params_file" in p:
            return SyntheticOracle.from_file(p["params_file"], p.get("noise_scale", 1.0))
        return SyntheticOracle(p.get("params"), p.get("noise_scale", 1.0))
    if spec.kind == "replay":
        return ReplayOracle(p["path"], p.get("default_score"))
    if spec.kind == "external":
        return ExternalOracle(p["command"], p.get("timeout", DEFAULT_TIMEOUT))
    raise ValueError(f"unknown oracle kind {spec.kind!r}")
