"""Three-level search refinement via crossover-derived child spaces.

After a level's search finishes, the best architectures and their embedding
neighbors become parents.  Every hyperparameter value any parent uses at a
given encoder depth becomes a legal choice at that depth for the next level,
so the child space is the per-depth product of the parents' value sets: a
neighborhood around the winners rather than the whole grammar again.  Level
transitions also refine granularity, first freeing the two-layer stacks,
then allowing mixed widths inside one feed-forward stack.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

from .errors import EnumerationCapError
from .space import DEFAULT_ENUMERATION_CAP, LEVEL_STACKING, ModelCard

DEFAULT_TOP_M = 5
DEFAULT_NEIGHBOR_K = 10


def next_level(level: int) -> int:
    """Successor in the 1 -> 2 -> 3 refinement chain."""
    if level not in LEVEL_STACKING:
        raise ValueError(f"unknown hierarchy level {level}")
    if level + 1 not in LEVEL_STACKING:
        raise ValueError(f"level {level} is terminal")
    return level + 1


@dataclass(frozen=True)
class DepthChoices:
    """Allowed hyperparameter values at one encoder depth.

    ``ops`` holds (operation, operation parameter) pairs, since parameters
    only make sense for their own operation type.  Feed-forward stacks are
    described by a width set and a depth set; whether widths may mix inside
    one stack is a property of the hierarchy level, not of the depth.
    """

    ops: tuple
    heads: tuple
    hidden: tuple
    ff_dims: tuple
    ff_depths: tuple

    def ff_stacks(self, hetero_ff: bool) -> list:
        out = []
        for k in self.ff_depths:
            if hetero_ff:
                out.extend(itertools.product(self.ff_dims, repeat=k))
            else:
                out.extend((w,) * k for w in self.ff_dims)
        return out

    def combinations(self, hetero_ff: bool) -> int:
        if hetero_ff:
            ff = sum(len(self.ff_dims) ** k for k in self.ff_depths)
        else:
            ff = len(self.ff_dims) * len(self.ff_depths)
        return len(self.ops) * len(self.heads) * len(self.hidden) * ff

    def layer_choices(self, hetero_ff: bool) -> list:
        return [
            (op, param, n, h, stack)
            for (op, param) in self.ops
            for n in self.heads
            for h in self.hidden
            for stack in self.ff_stacks(hetero_ff)
        ]


@dataclass(frozen=True)
class CrossoverSpace:
    """Per-depth value sets spanned by a parent set, at a child level."""

    layer_counts: tuple
    depths: tuple
    stack_size: int
    hetero_ff: bool

    def count_cards(self) -> int:
        """Closed-form size: per-depth products summed over layer counts."""
        total = 0
        for l in self.layer_counts:
            prod = 1
            for d in range(l):
                prod *= self.depths[d].combinations(self.hetero_ff)
            total += prod
        return total

    def enumerate_cards(self, cap: int = DEFAULT_ENUMERATION_CAP):
        """Yield every child card in canonical order.

        Same ordering contract as the base-space enumeration: sorted by
        canonical JSON, so streams are byte-identical across runs.
        """
        total = self.count_cards()
        if total > cap:
            raise EnumerationCapError(f"space has {total} cards, above the cap of {cap}")
        cards = []
        for l in sorted(self.layer_counts):
            per_depth = [self.depths[d].layer_choices(self.hetero_ff) for d in range(l)]
            for combo in itertools.product(*per_depth):
                o, p, n, h, f = zip(*[(c[0], c[1], c[2], c[3], c[4]) for c in combo])
                cards.append(ModelCard(l=l, o=o, n=n, h=h, f=f, p=p))
        cards.sort(key=ModelCard.canonical_json)
        yield from cards

    def summary(self) -> dict:
        return {
            "layer_counts": list(self.layer_counts),
            "stack_size": self.stack_size,
            "hetero_ff": self.hetero_ff,
            "depths": [
                {
                    "ops": [[o, p] for o, p in d.ops],
                    "heads": list(d.heads),
                    "hidden": list(d.hidden),
                    "ff_dims": list(d.ff_dims),
                    "ff_depths": list(d.ff_depths),
                }
                for d in self.depths
            ],
        }


def crossover_space(parents, child_level: int) -> CrossoverSpace:
    """Span the next level's space from the winning cards.

    At each depth the allowed values are the union of what any parent uses
    there; parents of differing depth contribute only to the depths they
    possess, so the child space mixes their layer counts.  Every parent that
    was valid at its own level is a member of the space it spans.
    """
    parents = list(parents)
    if not parents:
        raise ValueError("crossover needs at least one parent")
    if child_level not in (2, 3):
        raise ValueError(f"crossover children live at level 2 or 3, not {child_level}")
    for card in parents:
        for name in ("o", "n", "h", "f", "p"):
            if len(getattr(card, name)) != card.l:
                raise ValueError(f"malformed parent card: {name} length != l")
    stack_size, hetero = LEVEL_STACKING[child_level]
    depths = []
    for d in range(max(c.l for c in parents)):
        present = [c for c in parents if c.l > d]
        depths.append(
            DepthChoices(
                ops=tuple(sorted({(c.o[d], c.p[d]) for c in present})),
                heads=tuple(sorted({c.n[d] for c in present})),
                hidden=tuple(sorted({c.h[d] for c in present})),
                ff_dims=tuple(sorted({w for c in present for w in c.f[d]})),
                ff_depths=tuple(sorted({len(c.f[d]) for c in present})),
            )
        )
    return CrossoverSpace(
        layer_counts=tuple(sorted({c.l for c in parents})),
        depths=tuple(depths),
        stack_size=stack_size,
        hetero_ff=hetero,
    )


@dataclass(frozen=True)
class LevelResult:
    """Outcome of one finished level: the winners and their neighborhoods."""

    level: int
    best: tuple
    neighbors: dict

    def parent_hashes(self) -> list:
        """Winners first, then their neighbors, deduplicated in rank order."""
        seen = dict.fromkeys(self.best)
        for h in self.best:
            seen.update(dict.fromkeys(self.neighbors[h]))
        return list(seen)


def select_parents(
    level: int,
    scores: dict,
    table,
    top_m: int = DEFAULT_TOP_M,
    neighbor_k: int = DEFAULT_NEIGHBOR_K,
) -> LevelResult:
    """Top scoring architectures of a level plus their nearest neighbors.

    ``scores`` maps hash to observed score; ties break on hash so the
    selection is deterministic.  Neighbors come from the embedding table.
    """
    if not scores:
        raise ValueError("no scored architectures to select from")
    ranked = sorted(scores, key=lambda h: (-scores[h], h))
    best = tuple(ranked[:top_m])
    neighbors = {h: tuple(n for n, _ in table.knn(h, k=neighbor_k)) for h in best}
    return LevelResult(level=level, best=best, neighbors=neighbors)


def write_manifest(path, level: int, parent_cards, space: CrossoverSpace) -> None:
    """Record a level transition: the new level, its parents, its space."""
    blob = {
        "level": level,
        "parent_cards": [c.to_dict() for c in parent_cards],
        "child_space_summary": space.summary(),
        "child_count": space.count_cards(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    blob["parent_cards"] = [ModelCard.from_dict(d) for d in blob["parent_cards"]]
    return blob
