import random

import pytest

from dialog_esp.matching import (
    Gazetteer,
    edit_distance,
    is_match,
    normalize,
    similarity,
    soft_match,
)


def test_normalize_case_and_whitespace():
    assert normalize("  Boston ") == "boston"


def test_normalize_strips_trailing_punctuation():
    assert normalize("Washington DC.") == "washington dc"


def test_normalize_keeps_internal_punctuation():
    assert normalize("Magic Hat #9") == "magic hat #9"


def test_normalize_collapses_inner_runs():
    assert normalize("green \t tea   latte") == "green tea latte"


def test_normalize_empty_and_punct_only():
    assert normalize("") == ""
    assert normalize("  ?! .") == ""


def test_normalize_idempotent_on_random_strings():
    rng = random.Random(42)
    pool = "AbC xyZ \t\n.,!?#'-_09éÉΩß中 ", "  "
    chars = pool[0]
    for _ in range(2000):
        s = "".join(rng.choice(chars) for _ in range(rng.randrange(0, 24)))
        once = normalize(s)
        assert normalize(once) == once


def test_is_match_examples():
    assert is_match("Boston", "boston")
    assert not is_match("Denver", "Boston")
    assert not is_match("", " ")


def test_is_match_symmetric():
    rng = random.Random(7)
    words = ["Boston", "boston ", "denver", "", "  ", "bubble tea", "Bubble  Tea"]
    for _ in range(200):
        a, b = rng.choice(words), rng.choice(words)
        assert is_match(a, b) == is_match(b, a)


def test_match_equivalence_on_nonempty():
    # Reflexive, symmetric, transitive over non-empty normalized strings.
    values = ["boston", "bubble tea", "denver"]
    for a in values:
        assert is_match(a, a)
    assert is_match("bubble tea", "Bubble Tea") and is_match("Bubble Tea", "BUBBLE TEA")
    assert is_match("bubble tea", "BUBBLE TEA")


def test_edit_distance_basics():
    assert edit_distance("latte", "latter") == 1
    assert edit_distance("boston", "boston") == 0
    assert edit_distance("boston", "denver") == 6


def test_soft_match_token_containment():
    g = Gazetteer.from_strings(["washington dc", "boston"])
    assert soft_match("washington", g) == "washington dc"


def test_soft_match_multitoken_superset():
    g = Gazetteer.from_strings(["stew pork over rice"])
    assert soft_match("rice", g) == "stew pork over rice"


def test_soft_match_rejects_unrelated():
    g = Gazetteer.from_strings(["denver"])
    assert soft_match("boston", g) is None


def test_soft_match_exact_entry_always_wins():
    # "dc" ties at similarity 1.0 via containment but must not shadow the
    # exact entry.
    g = Gazetteer.from_strings(["washington dc", "dc"])
    assert soft_match("washington dc", g) == "washington dc"
    for entry in g.entries:
        assert soft_match(entry, g) == entry


def test_soft_match_tie_breaks_lexicographically():
    g = Gazetteer.from_strings(["boston north", "boston east"])
    # Both share the single token "boston": identical containment scores.
    assert similarity("boston", "boston north") == similarity("boston", "boston east")
    assert soft_match("boston", g) == "boston east"


def test_soft_match_empty_pred():
    g = Gazetteer.from_strings(["boston"])
    assert soft_match("", g) is None


def test_gazetteer_requires_normalized_entries():
    with pytest.raises(ValueError):
        Gazetteer(entries=frozenset({"Boston"}))
    with pytest.raises(ValueError):
        Gazetteer(entries=frozenset(), similarity_threshold=1.5)


def test_gazetteer_from_file(tmp_path):
    path = tmp_path / "cities.txt"
    path.write_text("Boston\nWashington DC.\n\n", encoding="utf-8")
    g = Gazetteer.from_file(path)
    assert g.entries == frozenset({"boston", "washington dc"})
