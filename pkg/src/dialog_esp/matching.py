"""Answer normalization, the exact cross-worker match predicate, and gazetteer
soft matching.

This module is the single normalization authority: every other component
(corpus loading, live matching, scoring) funnels strings through
``normalize`` so that matching and evaluation can never drift apart.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from pathlib import Path


def _strippable(ch: str) -> bool:
    # End-of-string strip set: whitespace plus Unicode punctuation (category P*).
    return ch.isspace() or unicodedata.category(ch).startswith("P")


def normalize(raw: str) -> str:
    """Canonicalize an answer string.

    Lowercases by code point (no locale tailoring), trims leading/trailing
    whitespace and punctuation, and collapses internal whitespace runs to a
    single space. Internal punctuation is preserved ("magic hat #9" keeps
    its "#"). Idempotent.
    """
    s = raw.lower()
    start, end = 0, len(s)
    while start < end and _strippable(s[start]):
        start += 1
    while end > start and _strippable(s[end - 1]):
        end -= 1
    return " ".join(s[start:end].split())


def is_match(a: str, b: str) -> bool:
    """True iff the two answers agree after normalization and are non-empty.

    Empty answers never match anything, including each other.
    """
    na = normalize(a)
    return bool(na) and na == normalize(b)


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance (insert/delete/substitute, unit costs)."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def similarity(a: str, b: str) -> float:
    """Similarity in [0, 1] between two normalized strings.

    The max of a token-containment score (shared tokens over the token count
    of the shorter string) and normalized character-edit similarity.
    """
    if not a or not b:
        return 0.0
    tokens_a, tokens_b = set(a.split()), set(b.split())
    shorter = min(len(a.split()), len(b.split()))
    containment = len(tokens_a & tokens_b) / shorter if shorter else 0.0
    edit_sim = 1.0 - edit_distance(a, b) / max(len(a), len(b))
    return max(containment, edit_sim)


@dataclass(frozen=True)
class Gazetteer:
    """Canonical entity list used only for scoring and post-processing.

    Never consulted for live game matching: a soft match still counts as an
    error in live play, so resolving it silently would corrupt the match
    signal.
    """

    entries: frozenset[str] = field(default_factory=frozenset)
    similarity_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.similarity_threshold <= 1.0:
            raise ValueError("similarity_threshold must be in [0, 1]")
        for entry in self.entries:
            if normalize(entry) != entry:
                raise ValueError(f"gazetteer entry not normalized: {entry!r}")

    @classmethod
    def from_strings(cls, raw_entries, similarity_threshold: float = 0.5) -> "Gazetteer":
        entries = frozenset(normalize(e) for e in raw_entries if normalize(e))
        return cls(entries=entries, similarity_threshold=similarity_threshold)

    @classmethod
    def from_file(cls, path: str | Path, similarity_threshold: float = 0.5) -> "Gazetteer":
        """Load a gazetteer file: one canonical entry per line, UTF-8."""
        with open(path, encoding="utf-8") as fh:
            return cls.from_strings(fh, similarity_threshold=similarity_threshold)


def soft_match(pred: str, gazetteer: Gazetteer) -> str | None:
    """Resolve a normalized prediction to the most similar gazetteer entry.

    Returns the highest-similarity entry at or above the gazetteer threshold,
    or None. An exact entry always wins; remaining ties break toward the
    lexicographically smallest entry.
    """
    if not pred:
        return None
    if pred in gazetteer.entries:
        return pred
    best: str | None = None
    best_sim = 0.0
    for entry in sorted(gazetteer.entries):
        sim = similarity(pred, entry)
        if sim >= gazetteer.similarity_threshold and sim > best_sim:
            best, best_sim = entry, sim
    return best
