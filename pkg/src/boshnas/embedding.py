"""Low-dimensional Euclidean embeddings of architecture graphs.

Graphs are placed in ``R^d`` so that pairwise Euclidean distance tracks
normalized edit distance: stochastic minimization of the metric-MDS stress
over whatever pairs the distance cache supplies.  Sparse pair sets are fine,
only cached pairs enter the loss, so the full space can be embedded from a
sampled subset of the quadratically many distances.
"""

from __future__ import annotations

import itertools
import json

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import DivergenceError, UnknownHashError
from .ged import flop_proxy

DEFAULT_PAIR_BUDGET = 500_000
INIT_ANCHORS = 32


def graph_cost_proxy(graph) -> float:
    """Cheap scalar complexity proxy: summed per-block FLOP estimates."""
    return float(sum(flop_proxy(b) for b in graph.nodes))


def pair_sample(
    hashes,
    proxy,
    clique_size: int = 32,
    landmarks: int = 32,
    seed: int = 0,
    max_pairs: int = DEFAULT_PAIR_BUDGET,
):
    """Pick distance pairs worth computing: local windows plus landmark stars.

    The hashes are ordered by the complexity proxy and tiled with
    half-overlapping windows of ``clique_size``; every pair inside a window
    is taken.  Each window is then a rigid patch, and consecutive windows
    share half their members, so nearby graphs get densely cross-checked
    and local neighborhoods come out accurate.  Windows alone are not
    enough: a chain of patches can fold in many ways that satisfy every
    within-window distance while scrambling the distances between far-apart
    regions.  To fix the large-scale shape, ``landmarks`` graphs drawn
    uniformly at random are each paired with every other graph, so every
    graph is triangulated against the same set of shared reference points.

    Results are truncated to ``max_pairs`` by seeded subsampling that always
    keeps the immediate proxy neighbor of each graph, so every hash stays
    covered.  Sorted, unique, deterministic for a given seed.
    """
    if clique_size < 2:
        raise ValueError("clique_size must be at least 2")
    if landmarks < 0:
        raise ValueError("landmarks must be non-negative")
    order = sorted(hashes, key=lambda h: (proxy[h], h))
    n = len(order)
    c = min(clique_size, n)
    rng = np.random.default_rng(seed)
    chain = set()
    for a, b in zip(order, order[1:]):
        chain.add((a, b) if a < b else (b, a))
    pairs = set(chain)

    stride = max(1, c // 2)
    starts = list(range(0, max(n - c, 0) + 1, stride))
    if starts and starts[-1] != n - c:
        starts.append(n - c)  # clip the last window to the tail
    for s in starts:
        for a, b in itertools.combinations(order[s : s + c], 2):
            pairs.add((a, b) if a < b else (b, a))

    picked = rng.choice(n, size=min(landmarks, n), replace=False)
    for i in picked:
        lm = order[int(i)]
        for h in order:
            if h != lm:
                pairs.add((h, lm) if h < lm else (lm, h))

    if len(pairs) > max_pairs:
        extra = sorted(pairs - chain)
        keep = max_pairs - len(chain)
        if keep < 0:
            raise ValueError("max_pairs too small to cover every hash")
        chosen = rng.choice(len(extra), size=keep, replace=False)
        pairs = chain | {extra[int(i)] for i in chosen}
    return sorted(pairs)


def _triangulated_init(n, dim, ii, jj, targets, rng):
    """Starting coordinates from landmark triangulation of the pair graph.

    Random starts satisfy sampled distances while leaving the large-scale
    layout folded: gradient refinement then never untangles thousands of
    points.  Instead, place the highest-degree anchor graphs by classical
    MDS on their mutual shortest-path distances through the pair graph, and
    triangulate everyone else from their squared distances to those anchors.
    Refinement then starts from a globally unfolded configuration and only
    has to polish.  Falls back to uniform noise when the pair graph is
    disconnected (shortest paths undefined across components).
    """
    noise = rng.uniform(-0.1, 0.1, size=(n, dim))
    degree = np.bincount(np.concatenate([ii, jj]), minlength=n)
    anchors = np.argsort(-degree, kind="stable")[: min(INIT_ANCHORS, n)]
    # zero-weight edges would read as non-edges to the sparse graph code
    graph = coo_matrix((targets + 1e-9, (ii, jj)), shape=(n, n))
    geo = dijkstra(graph, directed=False, indices=anchors)
    if not np.isfinite(geo).all():
        return noise
    d2 = geo**2
    dll2 = d2[:, anchors]
    l = len(anchors)
    center = np.eye(l) - 1.0 / l
    b = -0.5 * center @ dll2 @ center
    vals, vecs = np.linalg.eigh(b)
    order = np.argsort(vals)[::-1][:dim]
    lam = vals[order]
    keep = lam > 1e-12
    if not keep.any():
        return noise
    basis = vecs[:, order[keep]] / np.sqrt(lam[keep])  # (l, k)
    x = -0.5 * (d2 - dll2.mean(axis=1, keepdims=True)).T @ basis  # (n, k)
    out = np.zeros((n, dim))
    out[:, : x.shape[1]] = x
    return out + 0.001 * noise


class GraphEmbedder(BaseEstimator):
    """Metric-MDS style embedder trained by minibatch gradient descent.

    Edit distances are min-max normalized over the training pairs so targets
    live in [0, 1]; coordinates start from a landmark triangulation of the
    pair graph and follow Adam steps on the squared stress of each pair
    batch.  The step size decays linearly to zero across the run: constant
    steps hold a minibatch noise floor that can be worse than the starting
    layout, while the decay lets refinement settle arbitrarily close to the
    optimum it polishes.  Everything is seeded, so a fit is reproducible bit
    for bit.
    """

    def __init__(
        self,
        dim: int = 16,
        epochs: int = 500,
        batch_size: int = 1024,
        learning_rate: float = 0.02,
        seed: int = 0,
    ):
        self.dim = dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, hashes, cache) -> "GraphEmbedder":
        """Train coordinates for ``hashes`` from the pairs present in ``cache``."""
        hashes = list(hashes)
        if len(set(hashes)) != len(hashes):
            raise ValueError("duplicate hashes")
        index = {h: i for i, h in enumerate(hashes)}
        ii, jj, raw = [], [], []
        for ha, hb, val in cache.items():
            a, b = index.get(ha), index.get(hb)
            if a is None or b is None or a == b:
                continue
            ii.append(a)
            jj.append(b)
            raw.append(val.value)
        if not raw:
            raise ValueError("cache holds no pairs over the given hashes")
        covered = set(ii) | set(jj)
        missing = [h for h in hashes if index[h] not in covered]
        if missing:
            raise ValueError(f"{len(missing)} hashes appear in no pair, e.g. {missing[0]!r}")
        ii = np.asarray(ii)
        jj = np.asarray(jj)
        raw = np.asarray(raw, dtype=float)
        lo, hi = float(raw.min()), float(raw.max())
        if hi > lo:
            targets = (raw - lo) / (hi - lo)
        else:
            # all distances equal: park every target at one radius
            targets = np.full_like(raw, 1.0 if hi > 0 else 0.0)

        rng = np.random.default_rng(self.seed)
        x = _triangulated_init(len(hashes), self.dim, ii, jj, targets, rng)
        m = np.zeros_like(x)
        v = np.zeros_like(x)
        b1, b2, eps = 0.9, 0.999, 1e-8
        step = 0
        n_pairs = len(targets)
        batches = range(0, n_pairs, self.batch_size)
        total_steps = self.epochs * len(batches)
        curve = []
        for epoch in range(self.epochs):
            perm = rng.permutation(n_pairs)
            for batch_lo in batches:
                sel = perm[batch_lo : batch_lo + self.batch_size]
                bi, bj = ii[sel], jj[sel]
                diff = x[bi] - x[bj]
                dist = np.sqrt((diff * diff).sum(axis=1) + 1e-12)
                err = dist - targets[sel]
                coef = (2.0 / len(sel)) * (err / dist)
                grad = np.zeros_like(x)
                np.add.at(grad, bi, coef[:, None] * diff)
                np.add.at(grad, bj, -coef[:, None] * diff)
                step += 1
                m = b1 * m + (1 - b1) * grad
                v = b2 * v + (1 - b2) * grad * grad
                mhat = m / (1 - b1**step)
                vhat = v / (1 - b2**step)
                lr = self.learning_rate * (1.0 - (step - 1) / total_steps)
                x -= lr * mhat / (np.sqrt(vhat) + eps)
            diff = x[ii] - x[jj]
            dist = np.sqrt((diff * diff).sum(axis=1))
            stress = float(((dist - targets) ** 2).mean())
            if not np.isfinite(stress):
                raise DivergenceError(f"stress became non-finite at epoch {epoch}")
            curve.append(stress)

        self.hashes_ = hashes
        self.index_ = index
        self.embedding_ = x
        self.norm_min_ = lo
        self.norm_max_ = hi
        self.loss_curve_ = curve
        self.stress_ = curve[-1]
        return self

    def fit_transform(self, hashes, cache) -> np.ndarray:
        return self.fit(hashes, cache).embedding_

    def transform(self, hashes) -> np.ndarray:
        """Rows for already-embedded graphs; unknown hashes are an error."""
        check_is_fitted(self, "embedding_")
        rows = []
        for h in hashes:
            if h not in self.index_:
                raise UnknownHashError(f"hash {h!r} was not embedded")
            rows.append(self.index_[h])
        return self.embedding_[rows]

    def knn(self, query, k: int = 5, exclude=()) -> list:
        """``k`` nearest embedded graphs as (hash, distance), nearest first.

        ``query`` is a hash or a raw coordinate vector.  Exact distance ties
        break on hash order so results never depend on row layout.
        """
        check_is_fitted(self, "embedding_")
        if isinstance(query, str):
            point = self.transform([query])[0]
            exclude = set(exclude) | {query}
        else:
            point = np.asarray(query, dtype=float)
            if point.shape != (self.dim,):
                raise ValueError(f"query vector must have shape ({self.dim},)")
            exclude = set(exclude)
        dists = np.sqrt(((self.embedding_ - point) ** 2).sum(axis=1))
        ranked = sorted(
            (float(dists[i]), h)
            for i, h in enumerate(self.hashes_)
            if h not in exclude
        )
        return [(h, d) for d, h in ranked[:k]]

    def save(self, path) -> None:
        """Write the coordinate table as JSON: dimension, seed, hash -> vector."""
        check_is_fitted(self, "embedding_")
        table = {
            "d": self.dim,
            "seed": self.seed,
            "vectors": {h: [float(v) for v in self.embedding_[i]] for h, i in self.index_.items()},
        }
        with open(path, "w") as fh:
            json.dump(table, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GraphEmbedder":
        """Rebuild a queryable embedder from a table written by :meth:`save`."""
        with open(path) as fh:
            table = json.load(fh)
        emb = cls(dim=int(table["d"]), seed=int(table["seed"]))
        emb.hashes_ = sorted(table["vectors"])
        emb.index_ = {h: i for i, h in enumerate(emb.hashes_)}
        emb.embedding_ = np.array([table["vectors"][h] for h in emb.hashes_], dtype=float)
        if emb.embedding_.shape != (len(emb.hashes_), emb.dim):
            raise ValueError("vector rows disagree with the stored dimension")
        return emb


def knee_select_d(candidates, errors) -> int:
    """Pick the elbow of an error-vs-candidate curve.

    The winner is the interior point farthest from the chord joining the
    first and last points of the raw (candidate, error) curve; ties go to
    the smaller candidate.  Needs at least three points to have an interior.
    """
    candidates = list(candidates)
    xs = np.asarray(candidates, dtype=float)
    ys = np.asarray(list(errors), dtype=float)
    if xs.shape != ys.shape:
        raise ValueError("candidates and errors must have the same length")
    if len(xs) < 3:
        raise ValueError("need at least three candidates to find a knee")
    if not np.all(np.diff(xs) > 0):
        raise ValueError("candidates must be strictly increasing")
    x0, y0, x1, y1 = xs[0], ys[0], xs[-1], ys[-1]
    norm = np.hypot(x1 - x0, y1 - y0)
    dist = np.abs((y1 - y0) * xs - (x1 - x0) * ys + x1 * y0 - y1 * x0) / norm
    return candidates[1 + int(np.argmax(dist[1:-1]))]


def dimension_sweep(hashes, cache, dims=(2, 4, 8, 16, 32), **embed_params):
    """Fit one embedder per dimension and return (chosen_dim, final stresses)."""
    dims = list(dims)
    if len(dims) < 3:
        raise ValueError("need at least three dims to sweep")
    stresses = [GraphEmbedder(dim=d, **embed_params).fit(hashes, cache).stress_ for d in dims]
    return knee_select_d(dims, stresses), stresses
