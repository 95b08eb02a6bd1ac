"""Command-line pipeline driver.

Each subcommand runs one stage on files: enumerate the space, hash cards,
build the pairwise distance cache, train the embedding table, run a search
against an oracle, simulate a card's forward pass, or summarize a ledger.
Stages communicate only through their output files, so any stage can be
re-run in isolation and identical inputs give identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from .embedding import (
    DEFAULT_PAIR_BUDGET,
    GraphEmbedder,
    dimension_sweep,
    graph_cost_proxy,
    pair_sample,
)
from .errors import BoshnasError
from .evaluator import OracleSpec, make_oracle
from .ged import CostModel, GedCache, pairwise_ged
from .graphs import card_to_graph, graph_hash
from .hierarchy import crossover_space, read_manifest
from .search import (
    SearchConfig,
    SearchEngine,
    evolutionary_search,
    random_search,
    write_ledger,
)
from .sim import forward, param_count
from .space import (
    DesignSpaceConfig,
    ModelCard,
    enumerate_cards,
    count_cards,
    load_config,
    seed_cards,
)

WORKERS_ENV = "BOSHNAS_WORKERS"


def _load_space(args) -> DesignSpaceConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return DesignSpaceConfig()


def _library(args):
    """Hash-keyed card library for the configured space and level.

    A ``--manifest`` level file switches enumeration to the crossover child
    space recorded there; otherwise the base config at ``--level`` is used.
    """
    manifest = getattr(args, "manifest", None)
    if manifest:
        blob = read_manifest(manifest)
        space = crossover_space(blob["parent_cards"], blob["level"])
        cards = space.enumerate_cards()
    else:
        cards = enumerate_cards(_load_space(args), level=args.level)
    return {graph_hash(card_to_graph(c)): c for c in cards}


def _file_sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_run_manifest(out_dir: Path, stage: str, inputs: dict, seeds: dict) -> None:
    """Append one stage record to the run manifest in ``out_dir``.

    Every output file of the stage is listed with its content hash, so a
    finished directory is self-describing and verifiable.
    """
    path = out_dir / "run_manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {"stages": []}
    outputs = {
        str(p.relative_to(out_dir)): _file_sha(p)
        for p in sorted(out_dir.rglob("*"))
        if p.is_file() and p.name != "run_manifest.json"
    }
    manifest["stages"].append(
        {"stage": stage, "inputs": inputs, "seeds": seeds, "outputs": outputs}
    )
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands -------------------------------------------------------------


def cmd_enumerate(args) -> int:
    library = _library(args)
    if args.out:
        out = _out_dir(args)
        with open(out / "cards.jsonl", "w", encoding="utf-8") as fh:
            for h in sorted(library):
                fh.write(json.dumps({"hash": h, "card": library[h].to_dict()}, sort_keys=True))
                fh.write("\n")
        _write_run_manifest(out, "enumerate", {"config": args.config, "level": args.level}, {})
    print(len(library))
    return 0


def cmd_count(args) -> int:
    print(count_cards(_load_space(args), level=args.level))
    return 0


def cmd_hash(args) -> int:
    with open(args.card, encoding="utf-8") as fh:
        card = ModelCard.from_dict(json.load(fh))
    print(graph_hash(card_to_graph(card)))
    return 0


def cmd_ged(args) -> int:
    config = _load_space(args)
    library = _library(args)
    graphs = {h: card_to_graph(c) for h, c in library.items()}
    proxy = {h: graph_cost_proxy(g) for h, g in graphs.items()}
    pairs = pair_sample(
        sorted(graphs), proxy, clique_size=args.clique_size,
        landmarks=args.landmarks, seed=args.seed, max_pairs=args.max_pairs,
    )
    cache = pairwise_ged(
        graphs,
        pairs,
        CostModel.from_config(config),
        expansion_budget=args.budget,
        workers=args.workers,
    )
    out = _out_dir(args)
    cache.save(out / "ged_cache.jsonl")
    _write_run_manifest(
        out, "ged",
        {"config": args.config, "level": args.level, "budget": args.budget},
        {"pair_seed": args.seed},
    )
    print(f"{len(pairs)} pairs cached")
    return 0


def cmd_embed(args) -> int:
    library = _library(args)
    cache = GedCache.load(args.cache)
    hashes = sorted(library)
    if args.knee:
        dim, errors = dimension_sweep(
            hashes, cache, dims=tuple(args.knee), epochs=args.epochs, seed=args.seed
        )
        print(f"knee at d={dim} (stress per d: {[round(e, 5) for e in errors]})")
    else:
        dim = args.dim
    table = GraphEmbedder(dim=dim, epochs=args.epochs, seed=args.seed).fit(hashes, cache)
    out = _out_dir(args)
    table.save(out / "table.json")
    _write_run_manifest(
        out, "embed",
        {"cache": args.cache, "dim": dim, "epochs": args.epochs},
        {"seed": args.seed},
    )
    print(f"embedded {len(hashes)} graphs at d={dim}, stress {table.stress_:.5f}")
    return 0


def _oracle_spec(args) -> OracleSpec:
    params = {}
    if args.oracle == "replay":
        if not args.replay_file:
            raise BoshnasError("--replay-file is required with --oracle replay")
        params["path"] = args.replay_file
    elif args.oracle == "external":
        if not args.command:
            raise BoshnasError("--command is required with --oracle external")
        params["command"] = args.command
    elif args.oracle_params:
        params["params_file"] = args.oracle_params
    return OracleSpec(kind=args.oracle, parameters=params)


def cmd_search(args) -> int:
    library = _library(args)
    spec = _oracle_spec(args)
    out = _out_dir(args)
    if args.algo == "boshnas":
        table = GraphEmbedder.load(args.table)
        missing = [h for h in library if h not in table.index_]
        if missing:
            raise BoshnasError(
                f"embedding table lacks {len(missing)} of {len(library)} hashes"
            )
        config = SearchConfig.from_file(args.search_config) if args.search_config else SearchConfig(
            seed=args.seed, worker_count=args.workers
        )
        engine = SearchEngine(
            config, library, table, oracle_factory=lambda: make_oracle(spec)
        )
        seed_hashes = None
        if args.seed_defaults:
            seed_hashes = [
                h for c in seed_cards() if (h := graph_hash(card_to_graph(c))) in library
            ]
        best, records = engine.run(seed_hashes=seed_hashes, max_evaluations=args.budget)
    elif args.algo == "random":
        best, records = random_search(
            library, make_oracle(spec), budget=args.budget or len(library), seed=args.seed
        )
    else:
        best, records = evolutionary_search(
            library, make_oracle(spec), budget=args.budget or len(library),
            seed=args.seed, config=_load_space(args),
        )
    write_ledger(records, out / "ledger.jsonl")
    summary = {
        "algo": args.algo,
        "evaluations": len(records),
        "best_card": best.to_dict() if best else None,
        "best_score": max(
            (r["score"] for r in records if r["score"] is not None), default=None
        ),
    }
    (out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write_run_manifest(
        out, "search",
        {"algo": args.algo, "oracle": args.oracle, "budget": args.budget},
        {"seed": args.seed},
    )
    print(json.dumps(summary["best_score"]))
    return 0


def cmd_simulate(args) -> int:
    with open(args.card, encoding="utf-8") as fh:
        card = ModelCard.from_dict(json.load(fh))
    rng = np.random.default_rng(args.seed)
    out = forward(card, rng.normal(size=(args.tokens, card.h[0])), seed=args.seed)
    count = param_count(card, vocab_excluded=not args.with_vocab)
    print(f"output shape {out.shape[0]}x{out.shape[1]}, {count} parameters")
    return 0


def cmd_report(args) -> int:
    """Summarize a search ledger and emit frontier plot data.

    The frontier CSV pairs each evaluation's parameter count with its score,
    flagging points on the running best-score-per-parameter frontier.
    """
    records = []
    with open(args.ledger, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    cards = {}
    if args.cards:
        with open(args.cards, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    cards[rec["hash"]] = ModelCard.from_dict(rec["card"])
    scored = [r for r in records if r["score"] is not None]
    summary = {
        "evaluations": len(records),
        "failures": len(records) - len(scored),
        "best_score": max((r["score"] for r in scored), default=None),
        "total_cost": records[-1]["wallclock"] if records else 0.0,
        "branches": {},
    }
    for r in records:
        summary["branches"][r["branch"]] = summary["branches"].get(r["branch"], 0) + 1
    out = _out_dir(args)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if cards:
        rows = []
        for r in scored:
            if r["hash"] in cards:
                rows.append(
                    {
                        "hash": r["hash"],
                        "params": param_count(cards[r["hash"]]),
                        "score": r["score"],
                    }
                )
        rows.sort(key=lambda row: (row["params"], -row["score"]))
        best = float("-inf")
        with open(out / "frontier.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["hash", "params", "score", "on_frontier"])
            writer.writeheader()
            for row in rows:
                on = row["score"] > best
                best = max(best, row["score"])
                writer.writerow({**row, "on_frontier": int(on)})
    _write_run_manifest(out, "report", {"ledger": args.ledger}, {})
    print(json.dumps(summary["best_score"]))
    return 0


def cmd_seeds(args) -> int:
    for card in seed_cards():
        print(graph_hash(card_to_graph(card)))
    return 0


# -- argument wiring ---------------------------------------------------------


def _add_space_flags(p):
    p.add_argument("--config", help="design space config JSON (defaults to the full space)")
    p.add_argument("--level", type=int, default=1, help="hierarchy level (1-3)")
    p.add_argument("--manifest", help="level manifest JSON; overrides --config/--level")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boshnas", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    default_workers = int(os.environ.get(WORKERS_ENV, "1"))

    p = sub.add_parser("enumerate", help="count (and optionally dump) the space")
    _add_space_flags(p)
    p.add_argument("--out", help="directory for cards.jsonl")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("count", help="closed-form space size")
    _add_space_flags(p)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("hash", help="graph hash of a model card JSON file")
    p.add_argument("card")
    p.set_defaults(func=cmd_hash)

    p = sub.add_parser("ged", help="build the pairwise distance cache")
    _add_space_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=default_workers)
    p.add_argument("--clique-size", type=int, default=32,
                   help="anchor window size for pair sampling")
    p.add_argument("--landmarks", type=int, default=32,
                   help="graphs paired against the whole space to pin the global layout")
    p.add_argument("--max-pairs", type=int, default=DEFAULT_PAIR_BUDGET)
    p.add_argument("--budget", type=int, default=1000, help="expansion budget per pair")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ged)

    p = sub.add_parser("embed", help="train the embedding table from a cache")
    _add_space_flags(p)
    p.add_argument("--cache", required=True, help="ged_cache.jsonl path")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--knee", type=int, nargs="+", help="candidate dims for knee selection")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("search", help="run an architecture search")
    _add_space_flags(p)
    p.add_argument("--algo", choices=["boshnas", "random", "evolutionary"], default="boshnas")
    p.add_argument("--oracle", choices=["synthetic", "replay", "external"], default="synthetic")
    p.add_argument("--oracle-params", help="synthetic oracle parameter JSON")
    p.add_argument("--replay-file", help="replay ledger for --oracle replay")
    p.add_argument("--command", nargs="+", help="external oracle argv for --oracle external")
    p.add_argument("--table", help="embedding table JSON (required for boshnas)")
    p.add_argument("--search-config", help="SearchConfig JSON overriding flags")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=default_workers)
    p.add_argument("--budget", type=int, help="max evaluations")
    p.add_argument("--seed-defaults", action="store_true",
                   help="seed from the standard starter models instead of random picks")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("simulate", help="forward pass and parameter count of a card")
    p.add_argument("card")
    p.add_argument("--tokens", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--with-vocab", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="ledger summary and frontier CSV")
    p.add_argument("--ledger", required=True)
    p.add_argument("--cards", help="cards.jsonl for parameter counts")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("seeds", help="print the starter model hashes")
    p.set_defaults(func=cmd_seeds)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BoshnasError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
