"""Flexible transformer design space: model cards, validation, enumeration.

A model card is the complete hyperparameter description of one encoder:

    l   number of encoder layers
    o   per-layer operation type ("SA" self-attention, "LT" linear transform,
        "DSC" dynamic-span convolution)
    n   per-layer number of operation heads
    h   per-layer hidden dimension
    f   per-layer feed-forward stack, a list of hidden widths applied in series
    p   per-layer operation parameter (similarity type for SA, transform type
        for LT, kernel size for DSC)

The search proceeds over increasingly fine hierarchy levels.  A level fixes a
stacking granularity: at the coarsest level layers are tied in stacks of two
and feed-forward stacks are width-homogeneous; the finest level unties both.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

from .errors import EnumerationCapError

# Hierarchy level -> (stack_size, hetero_ff).  Level 1 ties consecutive layers
# in stacks of two; level 2 frees every layer; level 3 additionally allows
# mixed widths inside one feed-forward stack.
LEVEL_STACKING = {1: (2, False), 2: (1, False), 3: (1, True)}

DEFAULT_ENUMERATION_CAP = 10_000_000


@dataclass(frozen=True)
class ModelCard:
    """Immutable hyperparameter description of one encoder architecture."""

    l: int
    o: tuple[str, ...]
    n: tuple[int, ...]
    h: tuple[int, ...]
    f: tuple[tuple[int, ...], ...]
    p: tuple[str | int, ...]

    def to_dict(self) -> dict:
        return {
            "l": self.l,
            "o": list(self.o),
            "n": list(self.n),
            "h": list(self.h),
            "f": [list(stack) for stack in self.f],
            "p": list(self.p),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelCard":
        return cls(
            l=int(d["l"]),
            o=tuple(d["o"]),
            n=tuple(int(x) for x in d["n"]),
            h=tuple(int(x) for x in d["h"]),
            f=tuple(tuple(int(w) for w in stack) for stack in d["f"]),
            p=tuple(d["p"]),
        )

    def canonical_json(self) -> str:
        """Canonical serialization: sorted keys, no whitespace.

        This string is the card's identity for ordering and for any
        content-addressed derivation (stub scoring, file naming).
        """
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def layer(self, j: int) -> tuple:
        """Full hyperparameter tuple of layer ``j`` (used for overlap tests)."""
        return (self.o[j], self.n[j], self.h[j], self.f[j], self.p[j])


@dataclass(frozen=True)
class DesignSpaceConfig:
    """Allowed value sets for every card field plus stacking constraints."""

    layer_counts: tuple[int, ...] = (2, 4)
    ops: tuple[str, ...] = ("SA", "LT", "DSC")
    op_params: dict = field(
        default_factory=lambda: {
            "SA": ("SDP", "WMA"),
            "LT": ("DFT", "DCT"),
            "DSC": (5, 9),
        }
    )
    heads: tuple[int, ...] = (2, 4)
    hidden: tuple[int, ...] = (128, 256)
    ff_dims: tuple[int, ...] = (512, 1024)
    ff_depths: tuple[int, ...] = (1, 3)
    stack_size: int = 2
    hetero_ff: bool = False

    def validate(self) -> list[str]:
        """Return human-readable violations; an empty list means valid."""
        bad = []
        for name in ("layer_counts", "ops", "heads", "hidden", "ff_dims", "ff_depths"):
            if not getattr(self, name):
                bad.append(f"{name} is empty")
        if self.stack_size < 1:
            bad.append(f"stack_size must be >= 1, got {self.stack_size}")
        for l in self.layer_counts:
            if l < 1:
                bad.append(f"layer count {l} is not positive")
            elif self.stack_size >= 1 and l % self.stack_size != 0:
                bad.append(f"layer count {l} is not a multiple of stack_size {self.stack_size}")
        if set(self.op_params) != set(self.ops):
            bad.append(f"op_params keys {sorted(self.op_params)} do not match ops {sorted(self.ops)}")
        for op, params in self.op_params.items():
            if not params:
                bad.append(f"op {op} has no parameter values")
        return bad

    def at_level(self, level: int) -> "DesignSpaceConfig":
        """Copy of this config with stacking constraints of a hierarchy level."""
        stack_size, hetero = LEVEL_STACKING[level]
        return DesignSpaceConfig(
            layer_counts=self.layer_counts,
            ops=self.ops,
            op_params=dict(self.op_params),
            heads=self.heads,
            hidden=self.hidden,
            ff_dims=self.ff_dims,
            ff_depths=self.ff_depths,
            stack_size=stack_size,
            hetero_ff=hetero,
        )

    def to_dict(self) -> dict:
        return {
            "layer_counts": list(self.layer_counts),
            "ops": list(self.ops),
            "op_params": {op: list(v) for op, v in self.op_params.items()},
            "heads": list(self.heads),
            "hidden": list(self.hidden),
            "ff_dims": list(self.ff_dims),
            "ff_depths": list(self.ff_depths),
            "stack_size": self.stack_size,
            "hetero_ff": self.hetero_ff,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignSpaceConfig":
        return cls(
            layer_counts=tuple(d["layer_counts"]),
            ops=tuple(d["ops"]),
            op_params={op: tuple(v) for op, v in d["op_params"].items()},
            heads=tuple(d["heads"]),
            hidden=tuple(d["hidden"]),
            ff_dims=tuple(d["ff_dims"]),
            ff_depths=tuple(d["ff_depths"]),
            stack_size=int(d["stack_size"]),
            hetero_ff=bool(d["hetero_ff"]),
        )


def load_config(path) -> DesignSpaceConfig:
    with open(path, encoding="utf-8") as fh:
        return DesignSpaceConfig.from_dict(json.load(fh))


def save_config(config: DesignSpaceConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def validate_card(card: ModelCard, config: DesignSpaceConfig) -> list[str]:
    """Return all constraint violations of ``card`` against ``config``.

    An empty list means the card is a member of the configured space.
    Violations are data, not exceptions, so callers can batch-filter streams.
    """
    bad = []
    if card.l not in config.layer_counts:
        bad.append(f"layer count {card.l} not in {config.layer_counts}")
    for name in ("o", "n", "h", "f", "p"):
        seq = getattr(card, name)
        if len(seq) != card.l:
            bad.append(f"{name} has length {len(seq)}, expected {card.l}")
    if bad:
        return bad  # length mismatches make per-layer checks meaningless

    for j in range(card.l):
        if card.o[j] not in config.ops:
            bad.append(f"layer {j}: op {card.o[j]!r} not in {config.ops}")
        elif card.p[j] not in config.op_params[card.o[j]]:
            bad.append(f"layer {j}: param {card.p[j]!r} invalid for op {card.o[j]}")
        if card.n[j] not in config.heads:
            bad.append(f"layer {j}: {card.n[j]} heads not in {config.heads}")
        if card.h[j] not in config.hidden:
            bad.append(f"layer {j}: hidden {card.h[j]} not in {config.hidden}")
        if card.n[j] >= 1 and card.h[j] % card.n[j] != 0:
            bad.append(f"layer {j}: {card.n[j]} heads do not divide hidden {card.h[j]}")
        stack = card.f[j]
        if len(stack) not in config.ff_depths:
            bad.append(f"layer {j}: ff depth {len(stack)} not in {config.ff_depths}")
        for w in stack:
            if w not in config.ff_dims:
                bad.append(f"layer {j}: ff width {w} not in {config.ff_dims}")
        if not config.hetero_ff and len(set(stack)) > 1:
            bad.append(f"layer {j}: mixed ff widths {stack} need the hetero-ff level")

    s = config.stack_size
    if s > 1 and card.l % s == 0:
        for start in range(0, card.l, s):
            first = card.layer(start)
            for j in range(start + 1, start + s):
                if card.layer(j) != first:
                    bad.append(
                        f"layer {j} differs from layer {start} inside a stack of {s}"
                    )
    return bad


def _ff_stack_options(config: DesignSpaceConfig) -> list[tuple[int, ...]]:
    """All allowed feed-forward stacks (width lists) for one layer."""
    out = []
    for depth in config.ff_depths:
        if config.hetero_ff:
            out.extend(itertools.product(config.ff_dims, repeat=depth))
        else:
            out.extend((w,) * depth for w in config.ff_dims)
    return out


def _stack_options(config: DesignSpaceConfig) -> list[tuple]:
    """All (op, param, heads, hidden, ff_stack) choices for one layer stack."""
    out = []
    for op in config.ops:
        for param in config.op_params[op]:
            for heads in config.heads:
                for hidden in config.hidden:
                    for stack in _ff_stack_options(config):
                        out.append((op, param, heads, hidden, stack))
    return out


def count_cards(config: DesignSpaceConfig, level: int | None = None) -> int:
    """Closed-form size of the space described by ``config``.

    Per layer stack the choice count is

        sum over ops of |params(op)|  x  |heads|  x  |hidden|  x  ff options

    where ff options is ``sum over depths of |ff_dims| ** depth`` for a
    width-heterogeneous level and ``|depths| x |ff_dims|`` otherwise.  The
    total is that count raised to the number of stacks, summed over the
    allowed layer counts.
    """
    if level is not None:
        config = config.at_level(level)
    ops_with_params = sum(len(config.op_params[op]) for op in config.ops)
    if config.hetero_ff:
        ff = sum(len(config.ff_dims) ** depth for depth in config.ff_depths)
    else:
        ff = len(config.ff_depths) * len(config.ff_dims)
    per_stack = ops_with_params * len(config.heads) * len(config.hidden) * ff
    total = 0
    for l in config.layer_counts:
        total += per_stack ** (l // config.stack_size)
    return total


def enumerate_cards(
    config: DesignSpaceConfig,
    level: int | None = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
):
    """Yield every card of the space in canonical order.

    Cards are ordered lexicographically by their canonical JSON string so two
    runs (and two machines) produce byte-identical streams.  The whole space
    is materialized for sorting, so spaces larger than ``cap`` raise
    ``EnumerationCapError`` instead of exhausting memory.
    """
    if level is not None:
        config = config.at_level(level)
    problems = config.validate()
    if problems:
        raise ValueError("invalid design space config: " + "; ".join(problems))
    total = count_cards(config)
    if total > cap:
        raise EnumerationCapError(
            f"space has {total} cards, above the cap of {cap}"
        )
    options = _stack_options(config)
    cards = []
    for l in sorted(config.layer_counts):
        n_stacks = l // config.stack_size
        for combo in itertools.product(options, repeat=n_stacks):
            o, p, n, h, f = [], [], [], [], []
            for op, param, heads, hidden, stack in combo:
                for _ in range(config.stack_size):
                    o.append(op)
                    p.append(param)
                    n.append(heads)
                    h.append(hidden)
                    f.append(stack)
            cards.append(
                ModelCard(l=l, o=tuple(o), n=tuple(n), h=tuple(h), f=tuple(f), p=tuple(p))
            )
    cards.sort(key=ModelCard.canonical_json)
    yield from cards


def _homogeneous_card(l: int, op: str, param, n: int, h: int, ff: int) -> ModelCard:
    return ModelCard(
        l=l,
        o=(op,) * l,
        n=(n,) * l,
        h=(h,) * l,
        f=((ff,),) * l,
        p=(param,) * l,
    )


def seed_cards() -> list[ModelCard]:
    """The twelve homogeneous starter models used to bootstrap a search.

    Four encoder sizes (2 layers at hidden 128, 2 at 256, 4 at 128, 4 at 256)
    in three families: self-attention, Fourier-style linear transform, and
    9-wide dynamic convolution.  Head counts and feed-forward widths scale
    with the hidden dimension as in the public miniature BERT releases.
    """
    sizes = [  # (l, h, n, ff)
        (2, 128, 2, 512),
        (2, 256, 4, 1024),
        (4, 128, 2, 512),
        (4, 256, 4, 1024),
    ]
    families = [("SA", "SDP"), ("LT", "DFT"), ("DSC", 9)]
    return [
        _homogeneous_card(l, op, param, n, h, ff)
        for op, param in families
        for l, h, n, ff in sizes
    ]


def bert_tiny() -> ModelCard:
    """Two-layer, 128-wide, 2-head self-attention encoder card."""
    return _homogeneous_card(2, "SA", "SDP", 2, 128, 512)


def bert_mini() -> ModelCard:
    """Four-layer, 256-wide, 4-head self-attention encoder card."""
    return _homogeneous_card(4, "SA", "SDP", 4, 256, 1024)
