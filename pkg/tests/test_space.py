import dataclasses
import itertools

import pytest

from boshnas.errors import EnumerationCapError
from boshnas.space import (
    DesignSpaceConfig,
    ModelCard,
    bert_tiny,
    count_cards,
    enumerate_cards,
    seed_cards,
    validate_card,
)


def brute_force_count(config, layer_count):
    """Independent oracle: product over per-layer choices, filtered by the
    validator.  Only feasible for small spaces; keeps no shared code with
    the closed-form counter."""
    layer_choices = []
    for op in config.ops:
        for param in config.op_params[op]:
            for heads in config.heads:
                for hidden in config.hidden:
                    for depth in config.ff_depths:
                        for widths in itertools.product(config.ff_dims, repeat=depth):
                            layer_choices.append((op, param, heads, hidden, widths))
    count = 0
    for combo in itertools.product(layer_choices, repeat=layer_count):
        card = ModelCard(
            l=layer_count,
            o=tuple(c[0] for c in combo),
            p=tuple(c[1] for c in combo),
            n=tuple(c[2] for c in combo),
            h=tuple(c[3] for c in combo),
            f=tuple(c[4] for c in combo),
        )
        if not validate_card(card, config):
            count += 1
    return count


class TestCountCards:
    def test_level1_full_space(self, table2_config):
        assert count_cards(table2_config, level=1) == 9312

    def test_level2_full_space(self, table2_config):
        assert count_cards(table2_config, level=2) == 84_943_872

    def test_level3_full_space(self, table2_config):
        assert count_cards(table2_config, level=3) == 3_317_817_600

    def test_restricted_hidden(self, table2_config):
        # hidden {128} halves the per-stack choice count: 48 + 48**2
        restricted = dataclasses.replace(table2_config, hidden=(128,))
        assert count_cards(restricted, level=1) == 48 + 48**2 == 2352

    def test_matches_brute_force_two_layers(self, table2_config):
        cfg = dataclasses.replace(table2_config, layer_counts=(2,))
        for level in (1, 2, 3):
            leveled = cfg.at_level(level)
            assert count_cards(leveled) == brute_force_count(leveled, 2)

    def test_matches_brute_force_four_layers(self):
        cfg = DesignSpaceConfig(
            layer_counts=(4,),
            ops=("SA", "LT"),
            op_params={"SA": ("SDP", "WMA"), "LT": ("DFT",)},
            heads=(2,),
            hidden=(128,),
            ff_dims=(512,),
            ff_depths=(1,),
        )
        for level in (1, 2):
            leveled = cfg.at_level(level)
            assert count_cards(leveled) == brute_force_count(leveled, 4)

    def test_empty_ops_counts_zero(self, table2_config):
        cfg = dataclasses.replace(table2_config, ops=(), op_params={})
        assert count_cards(cfg) == 0


class TestEnumerateCards:
    def test_full_level1_stream(self, table2_config):
        cards = list(enumerate_cards(table2_config, level=1))
        assert len(cards) == 9312
        keys = [c.canonical_json() for c in cards]
        assert len(set(keys)) == 9312
        assert keys == sorted(keys)

    def test_stream_is_reproducible(self, tiny_config):
        first = [c.canonical_json() for c in enumerate_cards(tiny_config)]
        second = [c.canonical_json() for c in enumerate_cards(tiny_config)]
        assert first == second

    def test_all_cards_validate(self, table2_config):
        level1 = table2_config.at_level(1)
        for card in enumerate_cards(level1):
            assert validate_card(card, level1) == []

    def test_cap_enforced(self, table2_config):
        with pytest.raises(EnumerationCapError):
            list(enumerate_cards(table2_config, level=1, cap=100))
        with pytest.raises(EnumerationCapError):
            list(enumerate_cards(table2_config, level=3))

    def test_invalid_config_rejected(self, table2_config):
        cfg = dataclasses.replace(table2_config, layer_counts=(3,))  # not a multiple of 2
        with pytest.raises(ValueError):
            list(enumerate_cards(cfg, level=1))

    def test_matches_brute_force_membership(self, tiny_config):
        enumerated = {c.canonical_json() for c in enumerate_cards(tiny_config)}
        layer_choices = []
        for op in tiny_config.ops:
            for param in tiny_config.op_params[op]:
                for depth in tiny_config.ff_depths:
                    for hidden in tiny_config.hidden:
                        layer_choices.append((op, param, 2, hidden, (512,) * depth))
        expected = set()
        for combo in itertools.product(layer_choices, repeat=2):
            card = ModelCard(
                l=2,
                o=tuple(c[0] for c in combo),
                p=tuple(c[1] for c in combo),
                n=tuple(c[2] for c in combo),
                h=tuple(c[3] for c in combo),
                f=tuple(c[4] for c in combo),
            )
            if not validate_card(card, tiny_config):
                expected.add(card.canonical_json())
        assert enumerated == expected


class TestValidateCard:
    def test_seed_cards_are_level1_members(self, table2_config):
        level1 = table2_config.at_level(1)
        for card in seed_cards():
            assert validate_card(card, level1) == []

    def test_bad_layer_count(self, table2_config):
        card = dataclasses.replace(bert_tiny(), l=3)
        assert any("length" in v for v in validate_card(card, table2_config))

    def test_op_param_mismatch(self, table2_config):
        card = dataclasses.replace(bert_tiny(), p=("DFT", "DFT"))
        violations = validate_card(card, table2_config)
        assert any("invalid for op" in v for v in violations)

    def test_mixed_ff_needs_hetero_level(self, table2_config):
        card = dataclasses.replace(bert_tiny(), f=((512, 1024, 512), (512, 1024, 512)))
        assert any("hetero" in v for v in validate_card(card, table2_config.at_level(1)))
        assert validate_card(card, table2_config.at_level(3)) == []

    def test_stack_constraint(self, table2_config):
        card = dataclasses.replace(bert_tiny(), h=(128, 256))
        violations = validate_card(card, table2_config.at_level(1))
        assert any("stack" in v for v in violations)
        assert validate_card(card, table2_config.at_level(2)) == []

    def test_heads_must_divide_hidden(self):
        cfg = DesignSpaceConfig(
            layer_counts=(2,),
            ops=("SA",),
            op_params={"SA": ("SDP",)},
            heads=(3,),
            hidden=(128,),
            ff_dims=(512,),
            ff_depths=(1,),
        )
        card = ModelCard(
            l=2, o=("SA", "SA"), n=(3, 3), h=(128, 128), f=((512,), (512,)), p=("SDP", "SDP")
        )
        assert any("divide" in v for v in validate_card(card, cfg))


class TestCardSerialization:
    def test_roundtrip(self):
        card = bert_tiny()
        assert ModelCard.from_dict(card.to_dict()) == card

    def test_canonical_json_is_compact_and_sorted(self):
        text = bert_tiny().canonical_json()
        assert " " not in text
        assert text.index('"f"') < text.index('"h"') < text.index('"l"') < text.index('"o"')

    def test_seed_cards_are_twelve_distinct(self):
        cards = seed_cards()
        assert len(cards) == 12
        assert len({c.canonical_json() for c in cards}) == 12
