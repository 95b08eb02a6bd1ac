"""Surrogate-guided architecture search plus random and evolutionary baselines.

One coordinator owns the state.  Each step draws a branch: with probability
1-alpha-beta it refits the surrogate on everything ingested so far and runs
second-order input optimization (GOBI) over the embedding space to pick the
next architecture; with probability alpha it queries the most uncertain
untrained point; with probability beta it explores uniformly.  Evaluations
run on a worker pool and are ingested in dispatch order, so a run's ledger
is reproducible for a fixed config; runs that end by exhaustion or budget
are byte-identical across worker counts as well.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import SearchExhaustedError
from .evaluator import (
    DEFAULT_TAU,
    EvaluationRequest,
    EvaluationResult,
    rank_neighbors,
    select_transfer,
)
from .surrogate import PerformanceSurrogate

DEFAULT_SEED_MODELS = 12
GOBI_LR = 0.05
GOBI_EPS = 1e-8
GOBI_MAX_ITERS = 200
GOBI_STEP_TOL = 1e-6


@dataclass(frozen=True)
class SearchConfig:
    """Knobs of the search loop; ``eps = 0`` disables convergence entirely."""

    alpha: float = 0.1
    beta: float = 0.1
    k1: float = 0.5
    k2: float = 0.5
    tau: float = DEFAULT_TAU
    convergence_eps: float = 1e-4
    convergence_window: int = 5
    gobi_restarts: int = 16
    worker_count: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha", "beta", "tau"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.alpha + self.beta > 1.0 + 1e-12:
            raise ValueError(f"alpha + beta must not exceed 1, got {self.alpha + self.beta}")
        if self.convergence_eps < 0:
            raise ValueError("convergence_eps must be nonnegative")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be positive")
        if self.gobi_restarts < 1:
            raise ValueError("gobi_restarts must be positive")
        if self.worker_count < 1:
            raise ValueError("worker_count must be positive")

    def to_file(self, path) -> None:
        from dataclasses import asdict

        with open(path, "w") as fh:
            json.dump(asdict(self), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def from_file(cls, path) -> "SearchConfig":
        with open(path) as fh:
            return cls(**json.load(fh))


@dataclass
class SearchState:
    """Everything the coordinator mutates while a search runs."""

    corpus: dict = field(default_factory=dict)  # hash -> EvaluationResult (ok only)
    trained: set = field(default_factory=set)  # dispatched hashes, incl. in-flight
    best_hash: str | None = None
    best_score: float = float("-inf")
    history: list = field(default_factory=list)  # best-so-far after each ingest
    records: list = field(default_factory=list)  # ledger dicts
    iteration: int = 0  # dispatches so far
    ingested: int = 0
    streak: int = 0  # consecutive ingests with sub-eps best change
    wallclock: float = 0.0  # cumulative logical cost units


# -- worker pools ------------------------------------------------------------


class SyncPool:
    """In-process pool: evaluation happens at dispatch, results queue up.

    ``pending`` counts results not yet taken, so the engine's capacity rule
    ingests each result right before the next dispatch.
    """

    def __init__(self, oracle):
        self.oracle = oracle
        self._done = []

    @property
    def pending(self) -> int:
        return len(self._done)

    def dispatch(self, request) -> None:
        self._done.append(self.oracle.evaluate(request))

    def take_next(self):
        return self._done.pop(0)

    def drain(self) -> list:
        out, self._done = self._done, []
        return out

    def close(self) -> None:
        pass


class ThreadPool:
    """Real worker threads, one oracle per worker, ordered result delivery.

    Results leave the pool strictly in dispatch order (``take_next`` blocks
    on the oldest outstanding job), so ingestion never depends on thread
    timing and a threaded run writes the same ledger as a serial one.
    """

    def __init__(self, oracle_factory, worker_count: int):
        self._jobs = queue.Queue()
        self._results = {}
        self._lock = threading.Condition()
        self._next_dispatch = 0
        self._next_release = 0
        self._workers = [
            threading.Thread(target=self._work, args=(oracle_factory(),), daemon=True)
            for _ in range(worker_count)
        ]
        for w in self._workers:
            w.start()

    @property
    def pending(self) -> int:
        with self._lock:
            return self._next_dispatch - self._next_release

    def _work(self, oracle):
        while True:
            item = self._jobs.get()
            if item is None:
                return
            idx, request = item
            result = oracle.evaluate(request)
            with self._lock:
                self._results[idx] = result
                self._lock.notify_all()

    def dispatch(self, request) -> None:
        with self._lock:
            idx = self._next_dispatch
            self._next_dispatch += 1
        self._jobs.put((idx, request))

    def take_next(self):
        with self._lock:
            while self._next_release not in self._results:
                self._lock.wait()
            result = self._results.pop(self._next_release)
            self._next_release += 1
            return result

    def drain(self) -> list:
        out = []
        while self.pending:
            out.append(self.take_next())
        return out

    def close(self) -> None:
        for _ in self._workers:
            self._jobs.put(None)
        for w in self._workers:
            w.join()


# -- GOBI --------------------------------------------------------------------


def gobi_query(nets, table, restarts: int, seed: int, exclude=()) -> str:
    """Second-order ascent of the optimistic score over the embedding space.

    Starts from ``restarts`` table vectors, steps by gradient over the
    absolute Hessian diagonal, and snaps the best converged point to the
    nearest table vector outside ``exclude``.  Degenerate directions just
    stop early; the snap always lands on a real hash.
    """
    vectors = np.asarray(table.embedding_, dtype=float)
    hashes = list(table.hashes_)
    rng = np.random.default_rng(seed)
    x = vectors[rng.integers(0, len(vectors), size=restarts)].copy()
    active = np.ones(restarts, dtype=bool)
    for _ in range(GOBI_MAX_ITERS):
        if not active.any():
            break
        _, grad, diag = nets.ucb_gradient(x[active])
        step = GOBI_LR * grad / (np.abs(diag) + GOBI_EPS)
        bad = ~np.isfinite(step).all(axis=1)
        step[bad] = 0.0
        x[active] += step
        norms = np.sqrt((step * step).sum(axis=1))
        still = active.copy()
        still[active] = (norms >= GOBI_STEP_TOL) & ~bad
        active = still
    final = nets.ucb(x)
    best = x[int(np.argmax(final))]
    banned = set(exclude)
    ranked = sorted(
        (float(np.linalg.norm(vectors[i] - best)), h)
        for i, h in enumerate(hashes)
        if h not in banned
    )
    if not ranked:
        raise SearchExhaustedError("every table vector is excluded")
    return ranked[0][1]


# -- the search engine -------------------------------------------------------

BRANCH_GOBI = "gobi"
BRANCH_UNCERTAINTY = "uncertainty"
BRANCH_DIVERSITY = "diversity"


class SearchEngine:
    """Coordinator for one search run over a fixed library of architectures.

    ``cards`` maps hash to model card; ``table`` is a fitted embedder whose
    rows cover every hash; ``oracle`` answers evaluation requests.  Pass an
    ``oracle_factory`` to give each worker thread its own oracle when
    worker_count > 1.
    """

    def __init__(
        self,
        config: SearchConfig,
        cards: dict,
        table,
        oracle=None,
        oracle_factory=None,
        surrogate_params: dict | None = None,
    ):
        if oracle is None and oracle_factory is None:
            raise ValueError("need an oracle or an oracle_factory")
        self.config = config
        self.cards = cards
        self.table = table
        self.hashes = sorted(cards)
        self.rng = np.random.default_rng(config.seed)
        self.state = SearchState()
        params = {
            "k_sigma": config.k1,
            "k_xi": config.k2,
            "seed": config.seed,
            **(surrogate_params or {}),
        }
        self.nets = PerformanceSurrogate(**params)
        self.nets_fitted = False
        if config.worker_count > 1:
            factory = oracle_factory or (lambda: oracle)
            self.pool = ThreadPool(factory, config.worker_count)
        else:
            self.pool = SyncPool(oracle or oracle_factory())

    # -- plumbing ---------------------------------------------------------

    def untrained(self) -> list:
        return [h for h in self.hashes if h not in self.state.trained]

    def _ingest(self, result: EvaluationResult) -> None:
        st = self.state
        st.ingested += 1
        st.wallclock += result.cost
        if result.ok:
            st.corpus[result.hash] = result
            if result.score > st.best_score:
                st.best_hash, st.best_score = result.hash, result.score
        previous = st.history[-1] if st.history else None
        st.history.append(st.best_score)
        record = next(r for r in st.records if r["hash"] == result.hash)
        record["score"] = result.score
        record["wallclock"] = st.wallclock
        if previous is not None and abs(st.best_score - previous) < self.config.convergence_eps:
            st.streak += 1
        else:
            st.streak = 0

    def _drain_ingest(self) -> None:
        for result in self.pool.drain():
            self._ingest(result)

    def _dispatch(self, h: str, branch: str, hint) -> None:
        st = self.state
        st.iteration += 1
        st.trained.add(h)
        seed = int(self.rng.integers(0, 2**31 - 1))
        request = EvaluationRequest(
            hash=h,
            card=self.cards[h],
            embedding=tuple(float(v) for v in self.table.transform([h])[0]),
            transfer_hint=hint,
            seed=seed,
        )
        st.records.append(
            {
                "iter": st.iteration,
                "hash": h,
                "branch": branch,
                "score": None,
                "transfer": None
                if hint is None
                else {"neighbor": hint.neighbor_hash, "overlap": hint.overlap_fraction},
                "wallclock": None,
            }
        )
        self.pool.dispatch(request)

    def _refit(self) -> None:
        done = [h for h in self.hashes if h in self.state.corpus]
        x = self.table.transform(done)
        y = np.array([self.state.corpus[h].score for h in done])
        self.nets.fit(x, y)
        self.nets_fitted = True

    def _transfer_hint(self, h: str):
        knn = self.table.knn(h, k=min(100, len(self.hashes) - 1))
        ranked = rank_neighbors(self.cards[h], knn, self.cards)
        return select_transfer(ranked, set(self.state.corpus), tau=self.config.tau)

    # -- the three branches ----------------------------------------------

    def step(self) -> str:
        """One scheduling decision; returns the branch taken."""
        cfg = self.config
        if not self.untrained():
            raise SearchExhaustedError("no untrained architectures left")
        u = float(self.rng.random())
        if u < 1.0 - cfg.alpha - cfg.beta:
            self._drain_ingest()
            if self.state.corpus:
                self._refit()
            gobi_seed = int(self.rng.integers(0, 2**31 - 1))
            h = gobi_query(
                self.nets, self.table, cfg.gobi_restarts, gobi_seed, exclude=self.state.trained
            )
            self._dispatch(h, BRANCH_GOBI, self._transfer_hint(h))
            return BRANCH_GOBI
        if u < 1.0 - cfg.beta:
            h = self._most_uncertain()
            self._dispatch(h, BRANCH_UNCERTAINTY, None)
            return BRANCH_UNCERTAINTY
        pool = self.untrained()
        h = pool[int(self.rng.integers(0, len(pool)))]
        self._dispatch(h, BRANCH_DIVERSITY, None)
        return BRANCH_DIVERSITY

    def _most_uncertain(self) -> str:
        pool = self.untrained()
        sig, xi = self.nets.uncertainties(self.table.transform(pool))
        score = self.config.k1 * sig + self.config.k2 * xi
        top = float(score.max())
        return min(h for h, s in zip(pool, score) if s == top)

    # -- the loop ---------------------------------------------------------

    def seed_corpus(self, seed_hashes=None, count: int = DEFAULT_SEED_MODELS) -> None:
        """Evaluate the starting corpus and fit the first surrogate."""
        if seed_hashes is None:
            count = min(count, len(self.hashes))
            picks = self.rng.choice(len(self.hashes), size=count, replace=False)
            seed_hashes = [self.hashes[int(i)] for i in picks]
        for h in dict.fromkeys(seed_hashes):
            self._dispatch(h, BRANCH_DIVERSITY, None)
        self._drain_ingest()
        if self.state.corpus:
            self._refit()

    def converged(self) -> bool:
        cfg = self.config
        return cfg.convergence_eps > 0 and self.state.streak >= cfg.convergence_window

    def run(self, seed_hashes=None, max_evaluations: int | None = None, stop=None):
        """Search until convergence, exhaustion, or the evaluation cap.

        Returns (best card or None, ledger records).  Oracle failures are
        ledger entries with a null score, never exceptions.  A result is
        ingested no later than ``worker_count`` dispatches after its own,
        which pins the ingestion schedule regardless of thread timing.
        Convergence is judged on ingested results, so with worker_count > 1
        the cutoff can land a few dispatches later than a serial run's.
        ``stop`` is an optional callback on the search state, checked before
        each dispatch; returning truthy halts the run early.
        """
        self.seed_corpus(seed_hashes)
        try:
            while True:
                while self.pool.pending >= self.config.worker_count:
                    self._ingest(self.pool.take_next())
                if stop is not None and stop(self.state):
                    break
                if self.converged():
                    break
                if max_evaluations is not None and self.state.iteration >= max_evaluations:
                    break
                self.step()
        except SearchExhaustedError:
            pass
        self._drain_ingest()
        self.pool.close()
        best = self.cards.get(self.state.best_hash)
        return best, self.state.records


def run_search(
    config: SearchConfig,
    cards: dict,
    table,
    oracle=None,
    oracle_factory=None,
    seed_hashes=None,
    max_evaluations=None,
    ledger_path=None,
    surrogate_params=None,
    stop=None,
):
    """Convenience wrapper: build an engine, run it, optionally write the ledger."""
    engine = SearchEngine(
        config, cards, table, oracle, oracle_factory, surrogate_params=surrogate_params
    )
    best, records = engine.run(
        seed_hashes=seed_hashes, max_evaluations=max_evaluations, stop=stop
    )
    if ledger_path is not None:
        write_ledger(records, ledger_path)
    return best, records


def write_ledger(records, path) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


# -- baselines ---------------------------------------------------------------


def _evaluate(oracle, h, card, rng, records, branch, wallclock):
    request = EvaluationRequest(
        hash=h, card=card, seed=int(rng.integers(0, 2**31 - 1))
    )
    result = oracle.evaluate(request)
    wallclock += result.cost
    records.append(
        {
            "iter": len(records) + 1,
            "hash": h,
            "branch": branch,
            "score": result.score,
            "transfer": None,
            "wallclock": wallclock,
        }
    )
    return result, wallclock


def random_search(cards: dict, oracle, budget: int, seed: int = 0):
    """Uniform sampling without replacement up to ``budget`` evaluations."""
    hashes = sorted(cards)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(hashes))
    records = []
    best, best_score = None, float("-inf")
    wallclock = 0.0
    for i in order[: max(0, budget)]:
        h = hashes[int(i)]
        result, wallclock = _evaluate(oracle, h, cards[h], rng, records, "random", wallclock)
        if result.ok and result.score > best_score:
            best, best_score = cards[h], result.score
    return best, records


def evolutionary_search(cards: dict, oracle, budget: int, seed: int = 0, config=None):
    """Elitist evolution: population 20, top-5 parents, per-stack operators.

    Mutation resamples one stack-level field; crossover mixes parents stack
    by stack.  Operating at stack granularity keeps every child inside the
    same design space the library was enumerated from.
    """
    from .graphs import card_hash
    from .space import DesignSpaceConfig

    cfg = config or DesignSpaceConfig()
    hashes = sorted(cards)
    rng = np.random.default_rng(seed)
    records = []
    scores = {}  # hash -> score, evaluation cache
    best, best_score = None, float("-inf")
    wallclock = 0.0
    budget = max(0, budget)

    def spend(h):
        nonlocal best, best_score, wallclock
        if h in scores or len(records) >= budget:
            return h in scores
        result, wallclock = _evaluate(
            oracle, h, cards[h], rng, records, "evolutionary", wallclock
        )
        if result.ok:
            scores[h] = result.score
            if result.score > best_score:
                best, best_score = cards[h], result.score
        return result.ok

    population = [hashes[int(i)] for i in rng.choice(len(hashes), size=min(20, len(hashes)), replace=False)]
    for h in population:
        if len(records) >= budget:
            break
        spend(h)
    while len(records) < budget and len(scores) < len(hashes):
        ranked = sorted((h for h in population if h in scores), key=lambda h: -scores[h])
        parents = ranked[:5] or population[:5]
        children = list(parents)
        attempts = 0
        while len(children) < 20 and attempts < 1000:
            attempts += 1
            a = cards[parents[int(rng.integers(0, len(parents)))]]
            b = cards[parents[int(rng.integers(0, len(parents)))]]
            child = _mutate(_crossover(a, b, rng), cfg, rng)
            ch = card_hash(child)
            if ch in cards:
                children.append(ch)
        while len(children) < 20:  # offspring left the library; pad randomly
            children.append(hashes[int(rng.integers(0, len(hashes)))])
        population = children
        progressed = False
        for h in population:
            if len(records) >= budget:
                break
            if h not in scores and spend(h):
                progressed = True
        if not progressed and all(h in scores for h in population):
            # stagnant generation: reseed one random individual
            extra = hashes[int(rng.integers(0, len(hashes)))]
            population[-1] = extra
            spend(extra)
    return best, records


def _stacks(card, stack_size):
    return [tuple(range(i, i + stack_size)) for i in range(0, card.l, stack_size)]


def _crossover(a, b, rng):
    """Child takes each stack from one parent; depth follows parent a."""
    from .space import ModelCard

    size = 2 if a.l % 2 == 0 else 1
    o, n, h, f, p = list(a.o), list(a.n), list(a.h), list(a.f), list(a.p)
    for stack in _stacks(a, size):
        if rng.random() < 0.5 and stack[-1] < b.l:
            for j in stack:
                o[j], n[j], h[j], f[j], p[j] = b.o[j], b.n[j], b.h[j], b.f[j], b.p[j]
    return ModelCard(a.l, tuple(o), tuple(n), tuple(h), tuple(f), tuple(p))


def _mutate(card, cfg, rng):
    """Resample one stack-level field from the design space's value sets."""
    from .space import ModelCard

    size = cfg.stack_size if card.l % cfg.stack_size == 0 else 1
    stacks = _stacks(card, size)
    stack = stacks[int(rng.integers(0, len(stacks)))]
    field_name = ("op", "heads", "hidden", "ff")[int(rng.integers(0, 4))]
    o, n, h, f, p = list(card.o), list(card.n), list(card.h), list(card.f), list(card.p)
    if field_name == "op":
        new_o = cfg.ops[int(rng.integers(0, len(cfg.ops)))]
        params = cfg.op_params[new_o]
        new_p = params[int(rng.integers(0, len(params)))]
        for j in stack:
            o[j], p[j] = new_o, new_p
    elif field_name == "heads":
        v = cfg.heads[int(rng.integers(0, len(cfg.heads)))]
        for j in stack:
            n[j] = v
    elif field_name == "hidden":
        v = cfg.hidden[int(rng.integers(0, len(cfg.hidden)))]
        for j in stack:
            h[j] = v
    else:
        width = cfg.ff_dims[int(rng.integers(0, len(cfg.ff_dims)))]
        depth = cfg.ff_depths[int(rng.integers(0, len(cfg.ff_depths)))]
        for j in stack:
            f[j] = (width,) * depth
    return ModelCard(card.l, tuple(o), tuple(n), tuple(h), tuple(f), tuple(p))
