"""Toy-scale functional simulator of the flexible encoder architectures.

Forward passes run every operation a model card can name: scaled dot-product
and weighted multiplicative attention, Fourier and cosine transform mixing
with relative positional attention, dynamic-span convolution, feed-forward
stacks of varying width, and the projection layers that let the hidden
dimension change between layers.  Everything is forward-only and seeded;
there is no training here, the point is shape soundness and exact parameter
accounting.

Multi-head attention follows the per-head weight layout W_q, W_k, W_v of
shape (d, h/n) and W_o of shape (h/n, d); summing the per-head outputs
equals the usual concat-then-project formulation.
"""

from __future__ import annotations

import json

import numpy as np
from scipy.fft import dct as _dct
from scipy.linalg import dft as _dft
from scipy.special import erf

from .errors import SimShapeError
from .ged import DEFAULT_REF_SEQ_LEN
from .space import ModelCard

VOCAB_SIZE = 30522
MAX_POSITIONS = 512
TYPE_VOCAB = 2
NORM_EPS = 1e-5
INIT_SCALE = 0.02


def _check_2d(x, name="input"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise SimShapeError(f"{name} must be 2-D (tokens x features), got shape {x.shape}")
    if not np.isfinite(x).all():
        raise SimShapeError(f"{name} contains non-finite entries")
    return x


def softmax_rows(scores):
    """Row-wise softmax, stable under large inputs."""
    scores = np.asarray(scores, dtype=float)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


# -- attention variants ------------------------------------------------------


def sdp_wma_head(h, weights, variant):
    """One attention head: project, score, softmax, combine.

    ``weights`` maps wq/wk/wv (d, h/n) and wo (h/n, d); WMA additionally
    needs wa (h/n, h/n).  SDP scales scores by the square root of the input
    width, so WMA with wa = I/sqrt(d) reproduces SDP exactly.
    """
    h = _check_2d(h, "hidden states")
    wq, wk, wv, wo = weights["wq"], weights["wk"], weights["wv"], weights["wo"]
    if h.shape[1] != wq.shape[0]:
        raise SimShapeError(
            f"input width {h.shape[1]} does not match projection rows {wq.shape[0]}"
        )
    q, k, v = h @ wq, h @ wk, h @ wv
    if variant == "SDP":
        scores = q @ k.T / np.sqrt(h.shape[1])
    elif variant == "WMA":
        scores = q @ weights["wa"] @ k.T
    else:
        raise ValueError(f"unknown attention variant {variant!r}")
    return softmax_rows(scores) @ v @ wo


def relative_attention(x, q, r, v):
    """Positional attention against a learned relative-encoding tensor.

    softmax(Q R^T / sqrt(d_Q)) V, with R of shape (tokens, d_Q) so the score
    matrix is square over token positions.
    """
    x = _check_2d(x, "input")
    q, r, v = (np.asarray(t, dtype=float) for t in (q, r, v))
    if q.shape != (x.shape[0], r.shape[1]) or r.shape[0] != x.shape[0]:
        raise SimShapeError(
            f"relative attention shapes q{q.shape} r{r.shape} do not fit {x.shape[0]} tokens"
        )
    if v.shape[0] != x.shape[0]:
        raise SimShapeError(f"value rows {v.shape[0]} != token count {x.shape[0]}")
    scores = q @ r.T / np.sqrt(q.shape[1])
    return softmax_rows(scores) @ v


def _relative_multihead(x, heads):
    out = 0.0
    for hw in heads:
        core = relative_attention(x, x @ hw["wq"], hw["r"], x @ hw["wv"])
        out = out + core @ hw["wo"]
    return out


# -- token mixers ------------------------------------------------------------


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II transform matrix (M @ v == dct(v, norm="ortho"))."""
    return _dct(np.eye(n), axis=0, norm="ortho")


def lt_mix(x, variant):
    """Linear token/feature mixing: 2-axis Fourier or cosine transform.

    DFT follows the real-part convention: transform the token axis, then the
    feature axis, keep the real component.  DCT uses the orthonormal DCT-II
    matrix on both axes and is real throughout.  Both are linear in x.
    """
    x = _check_2d(x, "input")
    n_t, d = x.shape
    if variant == "DFT":
        # the DFT matrix is symmetric, so right-multiplying transforms rows
        return (_dft(n_t) @ x @ _dft(d)).real
    if variant == "DCT":
        return dct_matrix(n_t) @ x @ dct_matrix(d).T
    raise ValueError(f"unknown transform variant {variant!r}")


def z_lt(x, lw, variant):
    """Full linear-transform layer output: mixing plus positional attention."""
    return lt_mix(x, variant) + _relative_multihead(x, lw["rel"])


def dsc_conv(x, kernel, gates=None):
    """Depthwise 1-D convolution along tokens with optional span gates.

    ``kernel`` has shape (k, d), one k-tap filter per feature channel;
    padding is zero and the output shape equals the input shape.  ``gates``
    (same shape as x) multiplies the convolution output, modeling the
    input-dependent span; None disables gating.
    """
    x = _check_2d(x, "input")
    kernel = np.asarray(kernel, dtype=float)
    if kernel.ndim != 2 or kernel.shape[1] != x.shape[1]:
        raise SimShapeError(f"kernel shape {kernel.shape} does not fit {x.shape[1]} channels")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise SimShapeError(f"kernel size {k} must be odd for same-padding")
    half = k // 2
    padded = np.pad(x, ((half, half), (0, 0)))
    out = np.zeros_like(x)
    for tap in range(k):
        out += padded[tap : tap + x.shape[0]] * kernel[tap]
    if gates is not None:
        gates = np.asarray(gates, dtype=float)
        if gates.shape != x.shape:
            raise SimShapeError(f"gates shape {gates.shape} != input shape {x.shape}")
        out = out * gates
    return out


def z_dsc(x, lw):
    """Full convolution layer output: gated conv plus positional attention."""
    gates = _sigmoid(x @ lw["gate_w"] + lw["gate_b"])
    return dsc_conv(x, lw["kernel"], gates) + _relative_multihead(x, lw["rel"])


# -- weights -----------------------------------------------------------------


def build_weights(card: ModelCard, n_tokens: int, seed: int = 0) -> list:
    """Seed-deterministic weight tensors for every layer of a card.

    Returns one dict per layer holding the operation weights (per-head
    attention projections, relative encodings, conv kernels and gates), the
    two add-norm parameter pairs, the feed-forward chain, and the projection
    to the next layer's width (None when widths match).
    """
    rng = np.random.default_rng(seed)

    def mat(*shape):
        return rng.normal(0.0, INIT_SCALE, size=shape)

    layers = []
    for j in range(card.l):
        d, n = card.h[j], card.n[j]
        if d % n:
            raise SimShapeError(f"layer {j}: {n} heads do not divide width {d}")
        nd = d // n
        lw = {"op": card.o[j], "param": card.p[j]}
        if card.o[j] == "SA":
            lw["heads"] = [
                {"wq": mat(d, nd), "wk": mat(d, nd), "wv": mat(d, nd), "wo": mat(nd, d)}
                for _ in range(n)
            ]
            if card.p[j] == "WMA":
                for hw in lw["heads"]:
                    hw["wa"] = mat(nd, nd)
        else:
            lw["rel"] = [
                {"wq": mat(d, nd), "r": mat(n_tokens, nd), "wv": mat(d, nd), "wo": mat(nd, d)}
                for _ in range(n)
            ]
            if card.o[j] == "DSC":
                lw["kernel"] = mat(int(card.p[j]), d)
                lw["gate_w"] = mat(d, d)
                lw["gate_b"] = np.zeros(d)
        widths = [d, *card.f[j], d]
        lw["ff"] = [
            {"w": mat(a, b), "b": np.zeros(b)} for a, b in zip(widths, widths[1:])
        ]
        lw["norm1"] = {"g": np.ones(d), "b": np.zeros(d)}
        lw["norm2"] = {"g": np.ones(d), "b": np.zeros(d)}
        if j + 1 < card.l and card.h[j + 1] != d:
            lw["proj"] = mat(d, card.h[j + 1])
        else:
            lw["proj"] = None
        layers.append(lw)
    return layers


def _add_norm(x, sub, norm):
    y = x + sub
    mu = y.mean(axis=1, keepdims=True)
    var = y.var(axis=1, keepdims=True)
    return (y - mu) / np.sqrt(var + NORM_EPS) * norm["g"] + norm["b"]


def forward(card: ModelCard, x, seed: int = 0, trace: bool = False, weights=None):
    """Run one input through every encoder layer of a card.

    ``x`` must already be at the first layer's width (embedding lookup and
    input projection are out of scope).  Output has shape (tokens, h[l-1]).
    With ``trace`` the per-layer outputs (after projection) come back too.
    Pass ``weights`` (from build_weights or load_weights) to override the
    seed-derived tensors.
    """
    x = _check_2d(x, "input")
    if x.shape[1] != card.h[0]:
        raise SimShapeError(f"input width {x.shape[1]} != first layer width {card.h[0]}")
    if weights is None:
        weights = build_weights(card, x.shape[0], seed)
    outs = []
    for lw in weights:
        if lw["op"] == "SA":
            att = sum(sdp_wma_head(x, hw, lw["param"]) for hw in lw["heads"])
        elif lw["op"] == "LT":
            att = z_lt(x, lw, lw["param"])
        else:
            att = z_dsc(x, lw)
        x = _add_norm(x, att, lw["norm1"])
        y = x
        for i, fw in enumerate(lw["ff"]):
            y = y @ fw["w"] + fw["b"]
            if i + 1 < len(lw["ff"]):
                y = gelu(y)
        x = _add_norm(x, y, lw["norm2"])
        if lw["proj"] is not None:
            x = x @ lw["proj"]
        outs.append(x)
    return (x, outs) if trace else x


# -- parameter accounting ----------------------------------------------------


def param_count(
    card: ModelCard, vocab_excluded: bool = True, n_tokens: int = DEFAULT_REF_SEQ_LEN
) -> int:
    """Closed-form trainable parameter count of a card's weight layout.

    Sums the declared shapes of every tensor ``build_weights`` would create
    (the relative encodings depend on the reference token count).  With
    ``vocab_excluded`` False the standard embedding tables (vocabulary,
    positions, token types, plus their layer norm) are added.
    """
    total = 0
    for j in range(card.l):
        d, n = card.h[j], card.n[j]
        nd = d // n
        if card.o[j] == "SA":
            total += n * (3 * d * nd + nd * d)
            if card.p[j] == "WMA":
                total += n * nd * nd
        else:
            total += n * (2 * d * nd + n_tokens * nd + nd * d)
            if card.o[j] == "DSC":
                total += int(card.p[j]) * d + d * d + d
        widths = [d, *card.f[j], d]
        total += sum(a * b + b for a, b in zip(widths, widths[1:]))
        total += 4 * d  # two add-norm scale/shift pairs
        if j + 1 < card.l and card.h[j + 1] != d:
            total += d * card.h[j + 1]
    if not vocab_excluded:
        total += (VOCAB_SIZE + MAX_POSITIONS + TYPE_VOCAB) * card.h[0] + 2 * card.h[0]
    return total


# -- weight persistence ------------------------------------------------------


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return {"shape": list(obj.shape), "data": obj.reshape(-1).tolist()}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_encode(v) for v in obj]
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if set(obj) == {"shape", "data"}:
            return np.array(obj["data"], dtype=float).reshape(obj["shape"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def save_weights(weights: list, path) -> None:
    """Dump a weight list as JSON (shapes plus flat arrays)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_encode(weights), fh, sort_keys=True)
        fh.write("\n")


def load_weights(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return _decode(json.load(fh))
