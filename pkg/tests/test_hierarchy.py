"""Crossover space derivation and level transitions.

Counting oracle: every closed-form count is checked against brute-force
enumeration, and every parent set is checked for closure (each parent is a
member of the space it spans).
"""

import json

import numpy as np
import pytest

from boshnas.errors import EnumerationCapError
from boshnas.hierarchy import (
    CrossoverSpace,
    LevelResult,
    crossover_space,
    next_level,
    read_manifest,
    select_parents,
    write_manifest,
)
from boshnas.space import ModelCard, enumerate_cards


def homo(l, op, param, n, h, ff_stack):
    return ModelCard(
        l=l, o=(op,) * l, n=(n,) * l, h=(h,) * l, f=(tuple(ff_stack),) * l, p=(param,) * l
    )


SA_CARD = homo(2, "SA", "SDP", 2, 128, (512,))
LT_CARD = homo(2, "LT", "DFT", 2, 256, (512,))
DSC_CARD = homo(4, "DSC", 5, 2, 128, (1024,))


class TestNextLevel:
    def test_chain(self):
        assert next_level(1) == 2
        assert next_level(2) == 3

    def test_terminal_and_unknown(self):
        with pytest.raises(ValueError, match="terminal"):
            next_level(3)
        with pytest.raises(ValueError, match="unknown"):
            next_level(0)


class TestCrossoverSpace:
    def test_identical_parents_collapse_to_singleton(self):
        space = crossover_space([SA_CARD, SA_CARD, SA_CARD], 2)
        assert space.count_cards() == 1
        assert list(space.enumerate_cards()) == [SA_CARD]

    def test_two_parent_worked_example(self):
        # two ops and two hidden widths at each depth, everything else
        # shared: four combinations per layer, sixteen two-layer children
        space = crossover_space([SA_CARD, LT_CARD], 2)
        for d in space.depths:
            assert d.ops == (("LT", "DFT"), ("SA", "SDP"))
            assert d.hidden == (128, 256)
            assert d.combinations(hetero_ff=False) == 4
        children = list(space.enumerate_cards())
        assert space.count_cards() == len(children) == 16
        assert SA_CARD in children and LT_CARD in children

    def test_mixed_layer_count_parents(self):
        space = crossover_space([SA_CARD, DSC_CARD], 2)
        assert space.layer_counts == (2, 4)
        # depths 2-3 exist only in the four-layer parent
        assert space.depths[2].ops == (("DSC", 5),)
        children = list(space.enumerate_cards())
        assert space.count_cards() == len(children) == 16 + 16
        assert {c.l for c in children} == {2, 4}
        assert SA_CARD in children and DSC_CARD in children

    def test_hetero_level_frees_widths_inside_stacks(self):
        a = homo(2, "SA", "SDP", 2, 128, (512,))
        b = homo(2, "SA", "SDP", 2, 128, (1024, 1024, 1024))
        flat = crossover_space([a, b], 2)
        deep = crossover_space([a, b], 3)
        assert flat.count_cards() == 4 * 4  # homogeneous: widths x depths
        assert deep.count_cards() == 10 * 10  # 2^1 + 2^3 stacks per layer
        mixed = [c for c in deep.enumerate_cards() if c.f[0] == (512, 1024, 512)]
        assert mixed
        assert all(c in list(deep.enumerate_cards()) for c in (a, b))

    def test_validation_errors(self):
        with pytest.raises(ValueError, match="at least one parent"):
            crossover_space([], 2)
        with pytest.raises(ValueError, match="level 2 or 3"):
            crossover_space([SA_CARD], 1)
        broken = ModelCard(2, ("SA",), (2, 2), (128, 128), ((512,), (512,)), ("SDP", "SDP"))
        with pytest.raises(ValueError, match="malformed"):
            crossover_space([broken], 2)

    def test_enumeration_cap(self):
        space = crossover_space([SA_CARD, LT_CARD], 2)
        with pytest.raises(EnumerationCapError):
            list(space.enumerate_cards(cap=10))

    def test_random_parent_sweeps_count_and_closure(self, tiny_config):
        library = list(enumerate_cards(tiny_config))
        rng = np.random.default_rng(0)
        for trial in range(10):
            picks = rng.choice(len(library), size=3, replace=False)
            parents = [library[int(i)] for i in picks]
            space = crossover_space(parents, 2)
            children = list(space.enumerate_cards())
            assert len(children) == space.count_cards()
            assert len({c.canonical_json() for c in children}) == len(children)
            for parent in parents:
                assert parent in children

    def test_level_three_closure_over_level_two_cards(self, tiny_config):
        level2 = list(crossover_space(list(enumerate_cards(tiny_config))[:4], 2).enumerate_cards())
        rng = np.random.default_rng(1)
        picks = rng.choice(len(level2), size=3, replace=False)
        parents = [level2[int(i)] for i in picks]
        space = crossover_space(parents, 3)
        assert space.hetero_ff
        children = list(space.enumerate_cards())
        assert len(children) == space.count_cards()
        for parent in parents:
            assert parent in children


class FakeTable:
    def __init__(self, neighborhoods):
        self.neighborhoods = neighborhoods

    def knn(self, h, k):
        return self.neighborhoods[h][:k]


class TestParentSelection:
    def test_top_m_with_hash_tiebreak(self):
        scores = {"cc": 0.9, "aa": 0.9, "bb": 0.5, "dd": 0.1}
        table = FakeTable({h: [("bb", 0.1), ("dd", 0.2)] for h in scores})
        result = select_parents(1, scores, table, top_m=2, neighbor_k=1)
        assert result.best == ("aa", "cc")
        assert result.neighbors == {"aa": ("bb",), "cc": ("bb",)}

    def test_parent_hashes_dedup_in_rank_order(self):
        result = LevelResult(
            level=1,
            best=("aa", "bb"),
            neighbors={"aa": ("bb", "cc"), "bb": ("cc", "dd")},
        )
        assert result.parent_hashes() == ["aa", "bb", "cc", "dd"]

    def test_empty_scores_rejected(self):
        with pytest.raises(ValueError, match="no scored"):
            select_parents(1, {}, FakeTable({}))


class TestManifest:
    def test_roundtrip_and_layout(self, tmp_path):
        space = crossover_space([SA_CARD, LT_CARD], 2)
        path = tmp_path / "level2.json"
        write_manifest(path, 2, [SA_CARD, LT_CARD], space)
        raw = json.loads(path.read_text())
        assert set(raw) == {"level", "parent_cards", "child_space_summary", "child_count"}
        assert raw["level"] == 2
        assert raw["child_count"] == 16
        assert raw["child_space_summary"]["stack_size"] == 1
        blob = read_manifest(path)
        assert blob["parent_cards"] == [SA_CARD, LT_CARD]
