"""Weighted graph edit distance between architecture graphs.

Block labels are ranked by a coarse computational-cost estimate; edit costs
are differences of rank positions, so swapping a block for a similar-cost one
is cheap while replacing a trivial block with an expensive head is not.  With
``B`` ranked labels:

    substitute(label_i, label_j) = |i - j| / B
    delete(label_i) = insert(label_i) = (i + 1) / B
    every edge insertion or deletion = 0.5 / B

The distance itself is computed by depth-first branch and bound over node
assignments with an admissible completion bound, so results are provably
optimal whenever the search finishes; oversized graphs or exhausted budgets
fall back to the (still admissible) lower bound, flagged as such.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import UnknownLabelError
from .graphs import (
    KIND_ADD_NORM,
    KIND_FF,
    KIND_HEAD,
    KIND_INPUT,
    KIND_OUTPUT,
    KIND_PROJECTION,
    ComputationalGraph,
    block_catalog,
    graph_hash,
)

DEFAULT_REF_SEQ_LEN = 128
DEFAULT_NODE_BUDGET = 64
DEFAULT_EXPANSION_BUDGET = 1000

# Coarse cost tiers by block role.  Raw per-block FLOP estimates are not
# comparable across roles (a whole feed-forward layer always out-flops a
# single head slice), so the tier fixes the between-role order and the FLOP
# proxy only orders blocks within a role.
_TIERS = {
    KIND_INPUT: 0,
    KIND_OUTPUT: 0,
    KIND_ADD_NORM: 0,
    KIND_PROJECTION: 1,
    KIND_FF: 2,
}
_HEAD_TIERS = {"LT": 3, "DSC": 4, "SA": 5}


def flop_proxy(block, ref_seq_len: int = DEFAULT_REF_SEQ_LEN) -> float:
    """Very coarse FLOP estimate for one block at a reference token count."""
    n = float(ref_seq_len)
    attrs = block.attr_dict
    if block.kind in (KIND_INPUT, KIND_OUTPUT):
        return 0.0
    if block.kind == KIND_ADD_NORM:
        return 4.0 * n
    if block.kind == KIND_PROJECTION:
        if not attrs:  # identity projection
            return 0.0
        return n * attrs["in"] * attrs["out"]
    if block.kind == KIND_FF:
        w = attrs["width"]
        return n * w * w
    if block.kind == KIND_HEAD:
        h = attrs["hidden"]
        op = attrs["op"]
        if op == "LT":
            return n * n * h + n * h * h  # dense transform on both axes
        if op == "DSC":
            return n * attrs["param"] * h  # depthwise conv, kernel size k
        if op == "SA":
            base = n * n * h + n * h * h
            if attrs["param"] == "WMA":
                base += n * h * h  # extra weight matrix in the similarity
            return base
    raise UnknownLabelError(block.label)


def _tier(block) -> int:
    if block.kind == KIND_HEAD:
        return _HEAD_TIERS[block.attr_dict["op"]]
    return _TIERS[block.kind]


def complexity_rank(catalog, ref_seq_len: int = DEFAULT_REF_SEQ_LEN) -> list:
    """Catalog blocks sorted cheapest-first.

    Sort key is (role tier, FLOP proxy, catalog position); the catalog
    position tiebreak keeps equal-cost labels in their declared order.
    """
    order = sorted(
        range(len(catalog)),
        key=lambda i: (_tier(catalog[i]), flop_proxy(catalog[i], ref_seq_len), i),
    )
    return [catalog[i] for i in order]


class CostModel:
    """Edit costs derived from the complexity ranking of a block catalog."""

    def __init__(self, ranked_blocks):
        self.ranked_labels = [b.label for b in ranked_blocks]
        if len(set(self.ranked_labels)) != len(self.ranked_labels):
            raise ValueError("duplicate labels in ranking")
        self._rank = {label: i for i, label in enumerate(self.ranked_labels)}
        self.size = len(self.ranked_labels)
        self.edge_cost = 0.5 / self.size

    @classmethod
    def from_config(cls, config, ref_seq_len: int = DEFAULT_REF_SEQ_LEN) -> "CostModel":
        return cls(complexity_rank(block_catalog(config), ref_seq_len))

    def rank(self, label: str) -> int:
        try:
            return self._rank[label]
        except KeyError:
            raise UnknownLabelError(f"label {label!r} is not in the cost ranking") from None

    def substitute(self, label_a: str, label_b: str) -> float:
        return abs(self.rank(label_a) - self.rank(label_b)) / self.size

    def delete(self, label: str) -> float:
        return (self.rank(label) + 1) / self.size

    insert = delete


@dataclass(frozen=True)
class GedValue:
    """Edit-distance result; ``exact`` means proven optimal."""

    value: float
    exact: bool
    expansions: int = 0

    @property
    def lower_bound_only(self) -> bool:
        return not self.exact


def _phantom_match(sorted_a, sorted_b) -> float:
    """Optimal node-only assignment cost between two sorted rank lists.

    Deleting rank ``r`` costs ``r + 1``, which equals matching it against a
    phantom of rank -1, so padding both sides with phantoms reduces the
    assignment to a 1-D matching solved by sorted pairing.  Phantoms sort
    before every real rank, so the padded pairing closes to: the surplus of
    the longer list takes its cheapest entries as inserts/deletes and the
    rest pair positionally against the shorter list.  Returned in rank units
    (divide by the catalog size for cost units).
    """
    if len(sorted_a) > len(sorted_b):
        sorted_a, sorted_b = sorted_b, sorted_a
    surplus = len(sorted_b) - len(sorted_a)
    total = surplus + sum(sorted_b[:surplus])  # (rank + 1) each
    for x, y in zip(sorted_a, sorted_b[surplus:]):
        total += abs(x - y)
    return float(total)


class _Searcher:
    """Depth-first branch and bound over node assignments of g1 onto g2.

    g1 nodes are processed in topological order, so the exact incremental
    edge cost of each assignment is known against all earlier decisions.
    Candidates that are interchangeable in g2 (equal label, identical
    neighbor sets) are collapsed to one representative; parallel heads would
    otherwise multiply the search tree by a factorial.
    """

    DELETE = -1

    def __init__(self, g1, g2, cm, expansion_budget):
        self.cm = cm
        self.budget = expansion_budget
        self.expansions = 0
        self.order = g1.topological_order()
        self.n1, self.n2 = len(g1.nodes), len(g2.nodes)
        self.r1 = [cm.rank(b.label) for b in g1.nodes]
        self.r2 = [cm.rank(b.label) for b in g2.nodes]
        self.e1 = set(g1.edges)
        self.e2 = set(g2.edges)
        self.out1, self.in1 = g1.successors(), g1.predecessors()
        self.out2, self.in2 = g2.successors(), g2.predecessors()
        self.ec = cm.edge_cost
        self.inv_size = 1.0 / cm.size
        # equivalence key for symmetry collapse among unused g2 candidates
        self.eq_key = [
            (self.r2[v], tuple(sorted(self.in2[v])), tuple(sorted(self.out2[v])))
            for v in range(self.n2)
        ]
        # suffix data per depth: sorted ranks of not-yet-processed g1 nodes
        # and the count of g1 edges with at least one undecided endpoint
        self.rem1 = [None] * (self.n1 + 1)
        self.rem1[self.n1] = []
        for i in range(self.n1 - 1, -1, -1):
            self.rem1[i] = sorted(self.rem1[i + 1] + [self.r1[self.order[i]]])
        undecided = set(self.order)
        self.e1_rem = [0] * (self.n1 + 1)
        for i in range(self.n1):
            self.e1_rem[i] = sum(1 for a, b in self.e1 if a in undecided or b in undecided)
            undecided.discard(self.order[i])
        # state
        self.mapping = [None] * self.n1
        self.inverse = [None] * self.n2
        self.used = [False] * self.n2
        self.best = float("inf")
        self.aborted = False
        # tightest certified bound below ``best`` among subtrees abandoned on
        # abort; min(best, abort_lb) is then a valid global lower bound
        self.abort_lb = float("inf")

    # -- bounds ------------------------------------------------------------

    def completion_bound(self, depth, avail_sorted, e2_rem) -> float:
        node = _phantom_match(self.rem1[depth], avail_sorted) * self.inv_size
        edge = self.ec * abs(self.e1_rem[depth] - e2_rem)
        return node + edge

    def root_bound(self) -> float:
        plain = self.completion_bound(0, sorted(self.r2), len(self.e2))
        return max(plain, self._degree_assignment_bound())

    def _degree_assignment_bound(self) -> float:
        """Linear-assignment bound with half-edge degree terms.

        Each unmatched edge costs ``edge_cost`` and touches two endpoint
        slots, so charging half per endpoint degree mismatch stays
        admissible while seeing wiring differences the rank-only bound
        misses.
        """
        import numpy as np
        from scipy.optimize import linear_sum_assignment

        n1, n2 = self.n1, self.n2
        r1 = np.asarray(self.r1, dtype=float)
        r2 = np.asarray(self.r2, dtype=float)
        od1 = np.asarray([len(x) for x in self.out1], dtype=float)
        id1 = np.asarray([len(x) for x in self.in1], dtype=float)
        od2 = np.asarray([len(x) for x in self.out2], dtype=float)
        id2 = np.asarray([len(x) for x in self.in2], dtype=float)
        half = self.ec / 2.0
        big = 1e9
        size = n1 + n2
        cost = np.zeros((size, size))
        cost[:n1, :n2] = (
            np.abs(r1[:, None] - r2[None, :]) * self.inv_size
            + half * np.abs(od1[:, None] - od2[None, :])
            + half * np.abs(id1[:, None] - id2[None, :])
        )
        cost[:n1, n2:] = big
        cost[np.arange(n1), n2 + np.arange(n1)] = (r1 + 1) * self.inv_size + half * (od1 + id1)
        cost[n1:, :n2] = big
        cost[n1 + np.arange(n2), np.arange(n2)] = (r2 + 1) * self.inv_size + half * (od2 + id2)
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].sum())

    # -- incremental exact costs -------------------------------------------

    def _delta_substitute(self, u, v) -> float:
        """Exact added cost of mapping u -> v given already-decided nodes."""
        cost = abs(self.r1[u] - self.r2[v]) * self.inv_size
        # g1 edges between u and decided nodes
        for w in self.out1[u]:
            t = self.mapping[w]
            if t is not None and (t == self.DELETE or (v, t) not in self.e2):
                cost += self.ec
        for w in self.in1[u]:
            t = self.mapping[w]
            if t is not None and (t == self.DELETE or (t, v) not in self.e2):
                cost += self.ec
        # g2 edges between v and used nodes that no g1 edge maps onto
        for t in self.out2[v]:
            if self.used[t] and (u, self.inverse[t]) not in self.e1:
                cost += self.ec
        for t in self.in2[v]:
            if self.used[t] and (self.inverse[t], u) not in self.e1:
                cost += self.ec
        return cost

    def _delta_delete(self, u) -> float:
        cost = (self.r1[u] + 1) * self.inv_size
        for w in self.out1[u]:
            if self.mapping[w] is not None:
                cost += self.ec
        for w in self.in1[u]:
            if self.mapping[w] is not None:
                cost += self.ec
        return cost

    def _finish(self, g) -> float:
        """Close a complete assignment: insert every unused g2 node and every
        g2 edge with at least one unused endpoint."""
        cost = g
        for v in range(self.n2):
            if not self.used[v]:
                cost += (self.r2[v] + 1) * self.inv_size
        for a, b in self.e2:
            if not (self.used[a] and self.used[b]):
                cost += self.ec
        return cost

    # -- search ------------------------------------------------------------

    def run(self, upper_bound) -> None:
        self.best = upper_bound
        self._dfs(0, 0.0, sorted(self.r2), len(self.e2))

    def _dfs(self, depth, g, avail_sorted, e2_rem) -> None:
        if depth == self.n1:
            total = self._finish(g)
            if total < self.best - 1e-12:
                self.best = total
            return
        self.expansions += 1
        if self.expansions > self.budget:
            self.aborted = True
            lb_here = g + self.completion_bound(depth, avail_sorted, e2_rem)
            if lb_here < self.abort_lb:
                self.abort_lb = lb_here
            return
        u = self.order[depth]
        rem_next = self.rem1[depth + 1]
        e1_next = self.e1_rem[depth + 1]

        # node-only completion bounds after removing one rank from the pool,
        # shared by every candidate of that rank; the first index of the rank
        # is kept so children can drop it without a linear scan
        rank_info: dict[int, tuple[float, int]] = {}
        for i, r in enumerate(avail_sorted):
            if r not in rank_info:
                bound_minus = _phantom_match(rem_next, avail_sorted[:i] + avail_sorted[i + 1 :])
                rank_info[r] = (bound_minus, i)
        node_bound_keep = _phantom_match(rem_next, avail_sorted)

        candidates = []
        seen_classes = set()
        for v in range(self.n2):
            if self.used[v]:
                continue
            key = self.eq_key[v]
            if key in seen_classes:
                continue
            seen_classes.add(key)
            delta = self._delta_substitute(u, v)
            resolved = sum(1 for t in self.out2[v] if self.used[t]) + sum(
                1 for t in self.in2[v] if self.used[t]
            )
            child_e2 = e2_rem - resolved
            bound = (
                delta
                + rank_info[self.r2[v]][0] * self.inv_size
                + self.ec * abs(e1_next - child_e2)
            )
            if g + bound < self.best - 1e-12:
                candidates.append((bound, v, delta, child_e2))
        del_delta = self._delta_delete(u)
        del_bound = del_delta + node_bound_keep * self.inv_size + self.ec * abs(e1_next - e2_rem)
        if g + del_bound < self.best - 1e-12:
            candidates.append((del_bound, self.DELETE, del_delta, e2_rem))
        candidates.sort(key=lambda c: (c[0], c[1]))

        for idx, (bound, v, delta, child_e2) in enumerate(candidates):
            if g + bound >= self.best - 1e-12:  # best may have improved
                continue
            if v == self.DELETE:
                child_avail = avail_sorted
            else:
                i = rank_info[self.r2[v]][1]
                child_avail = avail_sorted[:i] + avail_sorted[i + 1 :]
                self.used[v] = True
                self.inverse[v] = u
            self.mapping[u] = v
            self._dfs(depth + 1, g + delta, child_avail, child_e2)
            self.mapping[u] = None
            if v != self.DELETE:
                self.used[v] = False
                self.inverse[v] = None
            if self.aborted:
                # candidates after this one were never tried; the list is
                # sorted, so the next bound certifies all of them
                if idx + 1 < len(candidates):
                    lb_rest = g + candidates[idx + 1][0]
                    if lb_rest < self.abort_lb:
                        self.abort_lb = lb_rest
                return


def _alignment_upper_bound(searcher: _Searcher) -> float:
    """Cost of one concrete assignment: align both node sequences in
    dependency order with a Needleman-Wunsch pass over node costs, then price
    the resulting mapping exactly.  Any complete mapping is an upper bound."""
    s = searcher
    seq2 = list(range(s.n2))  # g2 nodes in index order (already topological for
    # built graphs; order only affects the quality of the bound, not validity)
    n1, n2 = s.n1, len(seq2)
    sub = lambda u, v: abs(s.r1[u] - s.r2[v]) * s.inv_size
    dele = lambda u: (s.r1[u] + 1) * s.inv_size
    ins = lambda v: (s.r2[v] + 1) * s.inv_size
    dp = [[0.0] * (n2 + 1) for _ in range(n1 + 1)]
    for i in range(1, n1 + 1):
        dp[i][0] = dp[i - 1][0] + dele(s.order[i - 1])
    for j in range(1, n2 + 1):
        dp[0][j] = dp[0][j - 1] + ins(seq2[j - 1])
    for i in range(1, n1 + 1):
        u = s.order[i - 1]
        for j in range(1, n2 + 1):
            v = seq2[j - 1]
            dp[i][j] = min(
                dp[i - 1][j - 1] + sub(u, v),
                dp[i - 1][j] + dele(u),
                dp[i][j - 1] + ins(v),
            )
    # traceback -> mapping
    mapping = {}
    i, j = n1, n2
    while i > 0 and j > 0:
        u, v = s.order[i - 1], seq2[j - 1]
        if dp[i][j] == dp[i - 1][j - 1] + sub(u, v):
            mapping[u] = v
            i, j = i - 1, j - 1
        elif dp[i][j] == dp[i - 1][j] + dele(u):
            i -= 1
        else:
            j -= 1
    # price the mapping exactly
    cost = 0.0
    used = set(mapping.values())
    for u in range(n1):
        if u in mapping:
            cost += sub(u, mapping[u])
        else:
            cost += dele(u)
    for v in range(s.n2):
        if v not in used:
            cost += ins(v)
    matched = sum(
        1
        for a, b in s.e1
        if a in mapping and b in mapping and (mapping[a], mapping[b]) in s.e2
    )
    cost += s.ec * (len(s.e1) - matched) + s.ec * (len(s.e2) - matched)
    return cost


def ged(
    g1: ComputationalGraph,
    g2: ComputationalGraph,
    cost_model: CostModel,
    node_budget: int = DEFAULT_NODE_BUDGET,
    expansion_budget: int = DEFAULT_EXPANSION_BUDGET,
) -> GedValue:
    """Edit distance between two labeled DAGs under ``cost_model``.

    The computation direction is fixed (smaller graph first, ties broken by
    hash order), so the result is symmetric by construction.  Graphs above
    ``node_budget`` nodes, or searches that exhaust ``expansion_budget``
    assignments, return an admissible lower bound flagged as not exact.
    """
    h1, h2 = graph_hash(g1), graph_hash(g2)
    if h1 == h2:
        return GedValue(0.0, True, 0)
    if (len(g1.nodes), h1) > (len(g2.nodes), h2):
        g1, g2 = g2, g1

    searcher = _Searcher(g1, g2, cost_model, expansion_budget)
    root_lb = searcher.root_bound()
    if max(searcher.n1, searcher.n2) > node_budget:
        return GedValue(root_lb, False, 0)
    upper = _alignment_upper_bound(searcher)
    if upper <= root_lb + 1e-12:
        return GedValue(upper, True, 0)
    searcher.run(upper)
    if searcher.aborted:
        # every abandoned subtree carries a certified bound; if none of them
        # could undercut the best mapping found, that mapping is optimal
        if searcher.abort_lb >= searcher.best - 1e-12:
            return GedValue(searcher.best, True, searcher.expansions)
        return GedValue(max(root_lb, searcher.abort_lb), False, searcher.expansions)
    return GedValue(searcher.best, True, searcher.expansions)


class GedCache:
    """In-memory pair cache with a JSON-lines disk format.

    Keys are unordered hash pairs stored with ``hash1 < hash2``; re-loading a
    file with duplicate pairs keeps the last record.
    """

    def __init__(self):
        self._values: dict[tuple[str, str], GedValue] = {}

    @staticmethod
    def _key(ha: str, hb: str) -> tuple[str, str]:
        return (ha, hb) if ha <= hb else (hb, ha)

    def __len__(self) -> int:
        return len(self._values)

    def get(self, ha: str, hb: str) -> GedValue | None:
        return self._values.get(self._key(ha, hb))

    def put(self, ha: str, hb: str, value: GedValue) -> None:
        self._values[self._key(ha, hb)] = value

    def items(self):
        for (ha, hb) in sorted(self._values):
            yield ha, hb, self._values[(ha, hb)]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for ha, hb, val in self.items():
                fh.write(
                    json.dumps(
                        {"hash1": ha, "hash2": hb, "ged": val.value, "exact": val.exact},
                        sort_keys=True,
                        separators=(",", ":"),
                    )
                )
                fh.write("\n")

    @classmethod
    def load(cls, path) -> "GedCache":
        cache = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                cache.put(rec["hash1"], rec["hash2"], GedValue(float(rec["ged"]), bool(rec["exact"])))
        return cache


def _pair_worker(args):
    graphs, pairs, node_budget, expansion_budget, ranked_labels = args
    from .graphs import ComputeBlock  # noqa: F401  (keep import local for pickling)

    cm = CostModel.__new__(CostModel)
    cm.ranked_labels = ranked_labels
    cm._rank = {label: i for i, label in enumerate(ranked_labels)}
    cm.size = len(ranked_labels)
    cm.edge_cost = 0.5 / cm.size
    out = []
    for ha, hb in pairs:
        val = ged(graphs[ha], graphs[hb], cm, node_budget, expansion_budget)
        out.append((ha, hb, val.value, val.exact, val.expansions))
    return out


def pairwise_ged(
    graphs: dict,
    pairs,
    cost_model: CostModel,
    cache: GedCache | None = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
    expansion_budget: int = DEFAULT_EXPANSION_BUDGET,
    workers: int = 1,
) -> GedCache:
    """Compute distances for the given hash pairs, reusing ``cache`` entries."""
    cache = cache if cache is not None else GedCache()
    todo = [p for p in pairs if cache.get(*p) is None]
    if workers <= 1 or len(todo) < 64:
        for ha, hb in todo:
            cache.put(ha, hb, ged(graphs[ha], graphs[hb], cost_model, node_budget, expansion_budget))
        return cache
    from concurrent.futures import ProcessPoolExecutor

    chunks = [todo[i::workers] for i in range(workers)]
    needed = {h for pair in todo for h in pair}
    subset = {h: graphs[h] for h in needed}
    jobs = [
        (subset, chunk, node_budget, expansion_budget, cost_model.ranked_labels)
        for chunk in chunks
        if chunk
    ]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for result in pool.map(_pair_worker, jobs):
            for ha, hb, value, exact, expansions in result:
                cache.put(ha, hb, GedValue(value, exact, expansions))
    return cache
