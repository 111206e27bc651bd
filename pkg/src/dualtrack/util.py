"""Small deterministic helpers shared across the engine: token accounting,
term-frequency cosine similarity, seed derivation, and percentile math."""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from typing import Mapping, Sequence

_TOKEN_RE = re.compile(r"[a-z0-9']+")

# function words excluded from term-frequency vectors so similarity reflects
# content overlap, not shared articles/prepositions
_STOPWORDS = frozenset((
    "a", "an", "the", "and", "or", "for", "to", "in", "on", "of", "with",
    "about", "my", "me", "i", "you", "your", "is", "are", "was", "it", "this",
    "that", "any", "can", "could", "please", "what", "what's", "how", "do",
    "does", "from",
))


def token_estimate(text: str) -> int:
    """Whitespace word count scaled by 1.3, rounded up.

    Backend-free proxy; good enough for budget and fold accounting.
    """
    words = len(text.split())
    return math.ceil(words * 1.3)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def tf_vector(text: str) -> Counter:
    return Counter(tok for tok in tokenize(text) if tok not in _STOPWORDS)


def cosine(a: Mapping[str, float], b: Mapping[str, float]) -> float:
    """Cosine similarity over normalized term-frequency vectors."""
    if not a or not b:
        return 0.0
    dot = sum(count * b.get(tok, 0) for tok, count in a.items())
    if dot == 0:
        return 0.0
    norm_a = math.sqrt(sum(c * c for c in a.values()))
    norm_b = math.sqrt(sum(c * c for c in b.values()))
    return dot / (norm_a * norm_b)


def normalize_text(text: str) -> str:
    """Lowercase and collapse whitespace; the dedup/matching normal form."""
    return " ".join(text.lower().split())


def stable_hash(text: str) -> int:
    """Platform-stable 64-bit hash (Python's hash() is salted per process)."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")


def derive_seed(master: int, label: str) -> int:
    """Child seed for an independently-streamed RNG."""
    return stable_hash(f"{master}:{label}")


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile; q in (0, 100]."""
    if not values:
        raise ValueError("percentile of empty sequence")
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100.0 * len(ordered)))
    return ordered[rank - 1]
