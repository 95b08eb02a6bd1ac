"""Block-level computational graphs and their content hashes.

A model card maps to a directed acyclic graph of compute blocks: an input
block, then per encoder layer a bank of parallel operation heads feeding an
add-norm, a series of feed-forward blocks, a second add-norm and a projection
to the next layer's hidden size, and finally an output block.  The identity of
an architecture is the hash of this labeled graph, which makes deduplication
and caching independent of node numbering.

Hashing walks nodes in dependency order.  Each node digests the sorted hashes
of its predecessors, its own label and the sorted label hashes of its
successors; the graph hash digests the sorted list of node hashes.  Sorting at
every aggregation step is what buys invariance to node permutation.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass

from .errors import CyclicGraphError, InvalidCardError
from .space import DesignSpaceConfig, ModelCard

KIND_INPUT = "input"
KIND_OUTPUT = "output"
KIND_ADD_NORM = "add-norm"
KIND_PROJECTION = "projection"
KIND_FF = "feed-forward-layer"
KIND_HEAD = "attention-head"

# Canonical kind order: the catalog lists blocks in this order, and the
# complexity ranking uses catalog position to break cost ties.
KIND_ORDER = (KIND_INPUT, KIND_OUTPUT, KIND_ADD_NORM, KIND_PROJECTION, KIND_FF, KIND_HEAD)


@dataclass(frozen=True)
class ComputeBlock:
    """One node of the architecture graph.

    The label is a pure function of kind and attributes, so equal labels mean
    interchangeable blocks.
    """

    kind: str
    label: str
    attrs: tuple[tuple[str, object], ...] = ()

    @property
    def attr_dict(self) -> dict:
        return dict(self.attrs)

    @staticmethod
    def input_block() -> "ComputeBlock":
        return ComputeBlock(KIND_INPUT, "input")

    @staticmethod
    def output_block() -> "ComputeBlock":
        return ComputeBlock(KIND_OUTPUT, "output")

    @staticmethod
    def add_norm() -> "ComputeBlock":
        return ComputeBlock(KIND_ADD_NORM, "add-norm")

    @staticmethod
    def head(hidden: int, op: str, param) -> "ComputeBlock":
        return ComputeBlock(
            KIND_HEAD,
            f"h-{hidden}/{op}-{param}",
            (("hidden", hidden), ("op", op), ("param", param)),
        )

    @staticmethod
    def ff(width: int) -> "ComputeBlock":
        return ComputeBlock(KIND_FF, f"ff-{width}", (("width", width),))

    @staticmethod
    def projection(dim_in: int, dim_out: int) -> "ComputeBlock":
        """Projection between hidden sizes; equal sizes collapse to identity."""
        if dim_in == dim_out:
            return ComputeBlock(KIND_PROJECTION, "proj-id")
        return ComputeBlock(
            KIND_PROJECTION,
            f"proj-{dim_in}-{dim_out}",
            (("in", dim_in), ("out", dim_out)),
        )


@dataclass(frozen=True)
class ComputationalGraph:
    """Labeled DAG with one source (input) and one sink (output)."""

    nodes: tuple[ComputeBlock, ...]
    edges: tuple[tuple[int, int], ...]

    def successors(self) -> list[list[int]]:
        out = [[] for _ in self.nodes]
        for a, b in self.edges:
            out[a].append(b)
        return out

    def predecessors(self) -> list[list[int]]:
        out = [[] for _ in self.nodes]
        for a, b in self.edges:
            out[b].append(a)
        return out

    def topological_order(self) -> list[int]:
        """Kahn's algorithm; raises ``CyclicGraphError`` on a cycle."""
        indeg = [0] * len(self.nodes)
        succ = self.successors()
        for _, b in self.edges:
            indeg[b] += 1
        ready = deque(i for i, d in enumerate(indeg) if d == 0)
        order = []
        while ready:
            v = ready.popleft()
            order.append(v)
            for w in succ[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    ready.append(w)
        if len(order) != len(self.nodes):
            raise CyclicGraphError("graph contains a cycle")
        return order

    def validate(self) -> list[str]:
        """Structural violations: connectivity, degrees, single ends."""
        bad = []
        n = len(self.nodes)
        if n == 0:
            return ["empty graph"]
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n):
                bad.append(f"edge ({a},{b}) out of range")
                return bad
        if len(set(self.edges)) != len(self.edges):
            bad.append("duplicate edges")
        try:
            self.topological_order()
        except CyclicGraphError:
            bad.append("cycle")
            return bad
        pred, succ = self.predecessors(), self.successors()
        sources = [i for i in range(n) if not pred[i]]
        sinks = [i for i in range(n) if not succ[i]]
        if len(sources) != 1 or self.nodes[sources[0]].kind != KIND_INPUT:
            bad.append(f"expected a single input source, found {sources}")
        if len(sinks) != 1 or self.nodes[sinks[0]].kind != KIND_OUTPUT:
            bad.append(f"expected a single output sink, found {sinks}")
        if bad:
            return bad
        reach = _reachable(succ, sources[0])
        coreach = _reachable(pred, sinks[0])
        for i in range(n):
            if i not in reach:
                bad.append(f"node {i} unreachable from input")
            if i not in coreach:
                bad.append(f"node {i} cannot reach output")
        return bad


def _reachable(adj: list[list[int]], start: int) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return seen


def card_to_graph(card: ModelCard) -> ComputationalGraph:
    """Build the block graph of a card.

    Raises ``InvalidCardError`` on structurally broken cards (field length
    mismatches or operation/parameter inconsistencies); membership in a
    particular configured space is checked separately by ``validate_card``.
    """
    if card.l < 1:
        raise InvalidCardError(f"card needs at least one layer, got l={card.l}")
    for name in ("o", "n", "h", "f", "p"):
        if len(getattr(card, name)) != card.l:
            raise InvalidCardError(f"card field {name} does not have l={card.l} entries")
    for j in range(card.l):
        if card.n[j] < 1 or not card.f[j]:
            raise InvalidCardError(f"layer {j} has no heads or an empty ff stack")

    nodes: list[ComputeBlock] = [ComputeBlock.input_block()]
    edges: list[tuple[int, int]] = []
    prev = 0  # node feeding the next stage
    for j in range(card.l):
        head_ids = []
        for _ in range(card.n[j]):
            nodes.append(ComputeBlock.head(card.h[j], card.o[j], card.p[j]))
            head_ids.append(len(nodes) - 1)
            edges.append((prev, head_ids[-1]))
        nodes.append(ComputeBlock.add_norm())
        an1 = len(nodes) - 1
        edges.extend((hid, an1) for hid in head_ids)
        cur = an1
        for width in card.f[j]:
            nodes.append(ComputeBlock.ff(width))
            edges.append((cur, len(nodes) - 1))
            cur = len(nodes) - 1
        nodes.append(ComputeBlock.add_norm())
        edges.append((cur, len(nodes) - 1))
        cur = len(nodes) - 1
        dim_out = card.h[j + 1] if j + 1 < card.l else card.h[j]
        nodes.append(ComputeBlock.projection(card.h[j], dim_out))
        edges.append((cur, len(nodes) - 1))
        prev = len(nodes) - 1
    nodes.append(ComputeBlock.output_block())
    edges.append((prev, len(nodes) - 1))
    return ComputationalGraph(nodes=tuple(nodes), edges=tuple(edges))


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def graph_hash(graph: ComputationalGraph) -> str:
    """64-hex content hash of a labeled DAG, invariant to node numbering.

    For each node, in an order where predecessors come first:

        node_hash = sha256( join(sorted(pred node hashes))
                            + sha256(label)
                            + join(sorted(succ label hashes)) )

    and the final hash is sha256 of the concatenation of all node hashes in
    sorted order.  Every aggregation sorts its inputs, so any renumbering of
    nodes produces the same digest.
    """
    order = graph.topological_order()
    pred, succ = graph.predecessors(), graph.successors()
    label_hash = [_sha(node.label) for node in graph.nodes]
    node_hash: dict[int, str] = {}
    for v in order:
        parts = (
            "".join(sorted(node_hash[u] for u in pred[v]))
            + label_hash[v]
            + "".join(sorted(label_hash[w] for w in succ[v]))
        )
        node_hash[v] = _sha(parts)
    return _sha("".join(sorted(node_hash.values())))


def card_hash(card: ModelCard) -> str:
    """Hash of the card's computational graph."""
    return graph_hash(card_to_graph(card))


def block_catalog(config: DesignSpaceConfig) -> list[ComputeBlock]:
    """Every block label realizable in a configured space, in canonical order.

    Canonical order is: input, output, add-norm, projections (identity first,
    then by dimension pair), feed-forward blocks by width, then heads by
    declared operation order, declared parameter order and ascending hidden
    size.  The declared parameter order matters: it is the tiebreak used by
    the edit-cost ranking for equal-cost labels.
    """
    blocks = [
        ComputeBlock.input_block(),
        ComputeBlock.output_block(),
        ComputeBlock.add_norm(),
        ComputeBlock.projection(0, 0),  # proj-id carries no dimensions
    ]
    for dim_in in sorted(config.hidden):
        for dim_out in sorted(config.hidden):
            if dim_in != dim_out:
                blocks.append(ComputeBlock.projection(dim_in, dim_out))
    for width in sorted(config.ff_dims):
        blocks.append(ComputeBlock.ff(width))
    for op in config.ops:
        for param in config.op_params[op]:
            for hidden in sorted(config.hidden):
                blocks.append(ComputeBlock.head(hidden, op, param))
    return blocks


class GraphLibrary:
    """Deduplicated hash -> (card, graph) store for one design space level."""

    def __init__(self):
        self._entries: dict[str, tuple[ModelCard, ComputationalGraph]] = {}
        self.duplicates_skipped = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, h: str) -> bool:
        return h in self._entries

    def hashes(self) -> list[str]:
        return sorted(self._entries)

    def card(self, h: str) -> ModelCard:
        return self._entries[h][0]

    def graph(self, h: str) -> ComputationalGraph:
        return self._entries[h][1]

    def items(self):
        for h in self.hashes():
            card, graph = self._entries[h]
            yield h, card, graph

    def cards(self) -> dict[str, ModelCard]:
        return {h: card for h, (card, _) in self._entries.items()}

    def add(self, card: ModelCard, graph: ComputationalGraph | None = None) -> str:
        """Insert a card; duplicate hashes keep the first entry seen."""
        if graph is None:
            graph = card_to_graph(card)
        h = graph_hash(graph)
        if h in self._entries:
            self.duplicates_skipped += 1
        else:
            self._entries[h] = (card, graph)
        return h

    @classmethod
    def build(cls, cards) -> "GraphLibrary":
        lib = cls()
        for card in cards:
            lib.add(card)
        return lib

    def save(self, path) -> None:
        """One JSON object per line: {hash, card, nodes, edges}."""
        with open(path, "w", encoding="utf-8") as fh:
            for h, card, graph in self.items():
                record = {
                    "hash": h,
                    "card": card.to_dict(),
                    "nodes": [
                        {"kind": b.kind, "label": b.label, "attrs": b.attr_dict}
                        for b in graph.nodes
                    ],
                    "edges": [list(e) for e in graph.edges],
                }
                fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
                fh.write("\n")

    @classmethod
    def load(cls, path) -> "GraphLibrary":
        lib = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                card = ModelCard.from_dict(record["card"])
                nodes = tuple(
                    ComputeBlock(
                        kind=nd["kind"],
                        label=nd["label"],
                        attrs=tuple(sorted(nd["attrs"].items())),
                    )
                    for nd in record["nodes"]
                )
                edges = tuple((int(a), int(b)) for a, b in record["edges"])
                graph = ComputationalGraph(nodes=nodes, edges=edges)
                h = graph_hash(graph)
                if h != record["hash"]:
                    raise ValueError(
                        f"stored hash {record['hash'][:12]} does not match recomputed {h[:12]}"
                    )
                lib._entries.setdefault(h, (card, graph))
        return lib


def dedup(cards) -> GraphLibrary:
    """Collapse an iterable of cards into a library keyed by graph hash."""
    return GraphLibrary.build(cards)
