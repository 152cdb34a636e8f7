"""
retrieval.py - Ranking registered resources against a free-text query

The default scorer is a case-folded token-set Jaccard overlap over the
resource's name, description and exported text. Embedding-backed scorers
plug in through the RetrievalScorer protocol.
"""

import re
from typing import Iterable, Protocol

from app.models.resource import RegistrationRecord

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokens(text: str) -> set[str]:
    return set(_TOKEN_RE.findall(text.casefold()))


def document_text(record: RegistrationRecord) -> str:
    parts = [record.entity.name, record.entity.description]
    parts.extend(e.body for e in record.exports)
    return " ".join(parts)


class RetrievalScorer(Protocol):
    def score(self, query: str, document: str) -> float: ...


class LexicalScorer:
    """|Q ∩ D| / |Q ∪ D| over token sets."""

    def score(self, query: str, document: str) -> float:
        q, d = tokens(query), tokens(document)
        union = q | d
        if not union:
            return 0.0
        return len(q & d) / len(union)


def rank(
    query: str,
    records: Iterable[RegistrationRecord],
    k: int,
    scorer: RetrievalScorer,
) -> list[tuple[str, float]]:
    """Top-k (name, score), descending score then ascending name; zero scores dropped."""
    if k < 1:
        raise ValueError("k must be at least 1")
    scored = [(r.entity.name, scorer.score(query, document_text(r))) for r in records]
    scored = [(name, s) for name, s in scored if s > 0]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]
