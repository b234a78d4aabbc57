"""In-memory lexical retrieval over preloaded guideline chunks.

Deterministic TF-IDF (log-scaled term frequency, smoothed IDF) with cosine
similarity; no embeddings. An empty index is a valid state and retrieval
then returns nothing, letting the planner run on patient context alone.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .canonical import fnv1a_64_hex


class DuplicateChunkId(ValueError):
    pass


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class GuidelineChunk:
    chunk_id: str
    text: str
    source_label: str = ""

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError(f"chunk {self.chunk_id!r} has empty text")


@dataclass
class RetrievalIndex:
    chunks: list[GuidelineChunk] = field(default_factory=list)
    doc_freq: dict[str, int] = field(default_factory=dict)
    chunk_weights: list[dict[str, float]] = field(default_factory=list)
    chunk_norms: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def fingerprint(self) -> str:
        return fnv1a_64_hex("index", *sorted(c.chunk_id for c in self.chunks))

    def idf(self, term: str) -> float:
        n = len(self.chunks)
        return math.log((1 + n) / (1 + self.doc_freq.get(term, 0))) + 1.0

    def weights_for(self, tokens: list[str]) -> dict[str, float]:
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        return {
            term: (1.0 + math.log(count)) * self.idf(term)
            for term, count in counts.items()
        }


def index_chunks(chunks: list[GuidelineChunk]) -> RetrievalIndex:
    """Build term statistics; raises DuplicateChunkId on id collisions."""
    seen: set[str] = set()
    for chunk in chunks:
        if chunk.chunk_id in seen:
            raise DuplicateChunkId(chunk.chunk_id)
        seen.add(chunk.chunk_id)

    index = RetrievalIndex(chunks=list(chunks))
    for chunk in chunks:
        for term in set(tokenize(chunk.text)):
            index.doc_freq[term] = index.doc_freq.get(term, 0) + 1
    for chunk in chunks:
        weights = index.weights_for(tokenize(chunk.text))
        index.chunk_weights.append(weights)
        index.chunk_norms.append(math.sqrt(sum(w * w for w in weights.values())))
    return index


def retrieve(
    index: RetrievalIndex, query: str, k: int
) -> list[tuple[GuidelineChunk, float]]:
    """Top-k chunks by descending cosine score; ties break on chunk_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not index.chunks:
        return []

    query_weights = index.weights_for(tokenize(query))
    query_norm = math.sqrt(sum(w * w for w in query_weights.values()))

    scored: list[tuple[float, str, GuidelineChunk]] = []
    for chunk, weights, norm in zip(index.chunks, index.chunk_weights, index.chunk_norms):
        if query_norm > 0 and norm > 0:
            dot = sum(
                weight * weights[term]
                for term, weight in query_weights.items()
                if term in weights
            )
            score = dot / (query_norm * norm)
        else:
            score = 0.0
        scored.append((score, chunk.chunk_id, chunk))

    scored.sort(key=lambda item: (-item[0], item[1]))
    return [(chunk, score) for score, _cid, chunk in scored[:k]]


def load_chunks(path: str | Path) -> list[GuidelineChunk]:
    """Load chunks from a JSON array of {chunk_id, text, source_label}."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(payload, list):
        raise ValueError("guideline file must contain a JSON array")
    return [
        GuidelineChunk(
            chunk_id=str(entry["chunk_id"]),
            text=str(entry["text"]),
            source_label=str(entry.get("source_label", "")),
        )
        for entry in payload
    ]
