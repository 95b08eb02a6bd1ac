"""End-to-end tests for the command-line pipeline."""

import json

import pytest

from boshnas.cli import main
from boshnas.space import bert_tiny, save_config

BERT_TINY_HASH = "c87f9617fea746136cc5c26dc9ed97b21466da871d07d81403af21f47eafede8"


@pytest.fixture
def tiny_config_path(tiny_config, tmp_path):
    path = tmp_path / "space.json"
    save_config(tiny_config, path)
    return str(path)


class TestBasicCommands:
    def test_enumerate_full_level1(self, capsys):
        assert main(["enumerate", "--level", "1"]) == 0
        assert capsys.readouterr().out.strip() == "9312"

    def test_count_matches_enumerate(self, capsys, tiny_config_path):
        main(["count", "--config", tiny_config_path])
        counted = capsys.readouterr().out.strip()
        main(["enumerate", "--config", tiny_config_path])
        assert capsys.readouterr().out.strip() == counted == "8"

    def test_hash_is_stable(self, capsys, tmp_path):
        card_path = tmp_path / "card.json"
        card_path.write_text(json.dumps(bert_tiny().to_dict()))
        for _ in range(2):
            assert main(["hash", str(card_path)]) == 0
            assert capsys.readouterr().out.strip() == BERT_TINY_HASH

    def test_simulate_reports_shape_and_params(self, capsys, tmp_path):
        card_path = tmp_path / "card.json"
        card_path.write_text(json.dumps(bert_tiny().to_dict()))
        assert main(["simulate", str(card_path), "--tokens", "4"]) == 0
        out = capsys.readouterr().out
        assert "4x128" in out and "parameters" in out

    def test_seeds_prints_twelve_hashes(self, capsys):
        assert main(["seeds"]) == 0
        lines = capsys.readouterr().out.split()
        assert len(lines) == 12
        assert len(set(lines)) == 12

    def test_missing_card_file_fails_cleanly(self, capsys, tmp_path):
        assert main(["hash", str(tmp_path / "nope.json")]) == 1
        assert "error:" in capsys.readouterr().err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("pipeline")


@pytest.fixture(scope="module")
def config_path(workdir):
    from boshnas.space import DesignSpaceConfig

    path = workdir / "space.json"
    save_config(
        DesignSpaceConfig(
            layer_counts=(2,),
            ops=("SA", "LT"),
            op_params={"SA": ("SDP",), "LT": ("DFT",)},
            heads=(2,),
            hidden=(128, 256),
            ff_dims=(512,),
            ff_depths=(1, 3),
            stack_size=2,
            hetero_ff=False,
        ),
        path,
    )
    return str(path)


@pytest.fixture(scope="module")
def artifacts(workdir, config_path):
    """Run every stage once; later tests inspect the outputs."""
    out = str(workdir / "run")
    assert main(["enumerate", "--config", config_path, "--out", out]) == 0
    assert main([
        "ged", "--config", config_path, "--out", out,
        "--clique-size", "8", "--budget", "2000",
    ]) == 0
    assert main([
        "embed", "--config", config_path, "--cache", f"{out}/ged_cache.jsonl",
        "--dim", "4", "--epochs", "150", "--out", out,
    ]) == 0
    assert main([
        "search", "--config", config_path, "--table", f"{out}/table.json",
        "--algo", "boshnas", "--seed", "7", "--out", out,
    ]) == 0
    assert main([
        "report", "--ledger", f"{out}/ledger.jsonl",
        "--cards", f"{out}/cards.jsonl", "--out", out,
    ]) == 0
    return workdir / "run"


class TestPipeline:
    """enumerate -> ged -> embed -> search -> report on the 8-card space."""

    def test_all_stage_outputs_exist(self, artifacts):
        for name in ("cards.jsonl", "ged_cache.jsonl", "table.json",
                     "ledger.jsonl", "result.json", "summary.json",
                     "frontier.csv", "run_manifest.json"):
            assert (artifacts / name).exists(), name

    def test_manifest_hashes_outputs_per_stage(self, artifacts):
        manifest = json.loads((artifacts / "run_manifest.json").read_text())
        stages = [s["stage"] for s in manifest["stages"]]
        assert stages == ["enumerate", "ged", "embed", "search", "report"]
        last = manifest["stages"][-1]["outputs"]
        assert "ledger.jsonl" in last and len(last["ledger.jsonl"]) == 64

    def test_search_rerun_is_byte_identical(self, artifacts, workdir, config_path):
        out2 = str(workdir / "run2")
        assert main([
            "search", "--config", config_path, "--table", f"{artifacts}/table.json",
            "--algo", "boshnas", "--seed", "7", "--out", out2,
        ]) == 0
        first = (artifacts / "ledger.jsonl").read_bytes()
        assert (workdir / "run2" / "ledger.jsonl").read_bytes() == first

    def test_report_frontier_is_monotone(self, artifacts):
        import csv as csv_mod

        with open(artifacts / "frontier.csv", encoding="utf-8") as fh:
            rows = list(csv_mod.DictReader(fh))
        assert rows, "frontier should not be empty"
        frontier = [r for r in rows if r["on_frontier"] == "1"]
        scores = [float(r["score"]) for r in frontier]
        params = [int(r["params"]) for r in frontier]
        assert scores == sorted(scores)
        assert params == sorted(params)

    def test_result_best_is_ledger_max(self, artifacts):
        result = json.loads((artifacts / "result.json").read_text())
        scores = []
        with open(artifacts / "ledger.jsonl", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["score"] is not None:
                    scores.append(rec["score"])
        assert result["best_score"] == pytest.approx(max(scores))


class TestSearchVariants:
    def test_random_algo(self, capsys, tiny_config_path, tmp_path):
        out = str(tmp_path / "rand")
        assert main([
            "search", "--config", tiny_config_path, "--algo", "random",
            "--budget", "5", "--seed", "3", "--out", out,
        ]) == 0
        with open(f"{out}/ledger.jsonl", encoding="utf-8") as fh:
            assert sum(1 for _ in fh) == 5

    def test_evolutionary_algo(self, tiny_config_path, tmp_path):
        out = str(tmp_path / "evo")
        assert main([
            "search", "--config", tiny_config_path, "--algo", "evolutionary",
            "--budget", "8", "--seed", "3", "--out", out,
        ]) == 0
        assert json.loads((tmp_path / "evo" / "result.json").read_text())["evaluations"] <= 8

    def test_boshnas_requires_matching_table(self, capsys, tiny_config_path, tmp_path):
        table = tmp_path / "table.json"
        table.write_text(json.dumps({"d": 2, "seed": 0, "vectors": {"deadbeef": [0.0, 0.0]}}))
        code = main([
            "search", "--config", tiny_config_path, "--table", str(table),
            "--algo", "boshnas", "--out", str(tmp_path / "o"),
        ])
        assert code == 1
        assert "lacks" in capsys.readouterr().err

    def test_workers_env_var_sets_default(self, tiny_config_path, tmp_path, monkeypatch):
        monkeypatch.setenv("BOSHNAS_WORKERS", "3")
        from boshnas.cli import build_parser

        args = build_parser().parse_args(
            ["search", "--config", tiny_config_path, "--out", str(tmp_path)]
        )
        assert args.workers == 3

    def test_replay_oracle_requires_file(self, capsys, tiny_config_path, tmp_path):
        code = main([
            "search", "--config", tiny_config_path, "--algo", "random",
            "--oracle", "replay", "--budget", "2", "--out", str(tmp_path / "o"),
        ])
        assert code == 1
        assert "replay-file" in capsys.readouterr().err
