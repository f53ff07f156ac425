"""Token-level text comparison shared by search scoring and novelty checks."""
from __future__ import annotations

import re

_PUNCT = re.compile(r"[^\w\s]", re.UNICODE)

STOPWORDS = frozenset(
    "a an the of to in on at is are was were and or it its as be this that".split()
)


def normalize_tokens(text: str, drop_stopwords: bool = False) -> list[str]:
    """Case-insensitive, punctuation-stripped tokens, order preserved."""
    cleaned = _PUNCT.sub(" ", text.lower())
    tokens = cleaned.split()
    if drop_stopwords:
        tokens = [t for t in tokens if t not in STOPWORDS]
    return tokens


def containment(query_text: str, entry_text: str) -> float:
    """Fraction of the query's content tokens present in the entry."""
    query = set(normalize_tokens(query_text, drop_stopwords=True))
    if not query:
        return 0.0
    entry = set(normalize_tokens(entry_text, drop_stopwords=True))
    return len(query & entry) / len(query)


def token_levenshtein(a: str, b: str) -> float:
    """Order-preserving token edit distance, normalised to [0, 1]."""
    ta = normalize_tokens(a)
    tb = normalize_tokens(b)
    if not ta and not tb:
        return 0.0
    if not ta or not tb:
        return 1.0
    prev = list(range(len(tb) + 1))
    for i, tok_a in enumerate(ta, start=1):
        row = [i] + [0] * len(tb)
        for j, tok_b in enumerate(tb, start=1):
            cost = 0 if tok_a == tok_b else 1
            row[j] = min(prev[j] + 1, row[j - 1] + 1, prev[j - 1] + cost)
        prev = row
    return prev[-1] / max(len(ta), len(tb))
