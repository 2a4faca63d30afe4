"""Retrieval orchestration: fast-only, cascaded, and full-classifier modes.

The cascade runs the fast encoder over the query, takes the top-K candidates
from the dense index, and lets the match classifier rerank just those K.
Candidates beyond K keep their fast-stage order after the reranked block, so
recall at depths greater than K stays well defined. Fast scores (cosines)
and rerank scores (probabilities) are never mixed numerically: ordering is
block-wise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import BimodalPair, Mode
from .index import VectorIndex, top_k
from .model import ModelError, SearchModel

MODE_FAST = "fast"
MODE_CASCADE = "cascade"
MODE_SLOW_FULL = "slow_full"
RETRIEVAL_MODES = (MODE_FAST, MODE_CASCADE, MODE_SLOW_FULL)


class CascadeError(Exception):
    """Raised for invalid cascade configuration or usage."""


@dataclass(frozen=True)
class CascadeConfig:
    k: int = 10
    rerank_batch_size: int = 32
    mode: str = MODE_CASCADE

    def __post_init__(self):
        if self.k < 1:
            raise CascadeError("k must be >= 1")
        if self.rerank_batch_size < 1:
            raise CascadeError("rerank_batch_size must be >= 1")
        if self.mode not in RETRIEVAL_MODES:
            raise CascadeError(f"unknown retrieval mode {self.mode!r}")


@dataclass(frozen=True)
class RankEntry:
    candidate_id: str
    fast_score: float | None
    rerank_score: float | None
    final_rank: int


@dataclass(frozen=True)
class StageTimings:
    encode_ms: float = 0.0
    lookup_ms: float = 0.0
    rerank_ms: float = 0.0

    @property
    def total_ms(self) -> float:
        return self.encode_ms + self.lookup_ms + self.rerank_ms


@dataclass
class RankedList:
    query_id: str | None
    entries: list[RankEntry]
    timings: StageTimings = field(default_factory=StageTimings)

    def ids(self) -> list[str]:
        return [e.candidate_id for e in self.entries]

    def rank_of(self, candidate_id: str) -> int | None:
        for entry in self.entries:
            if entry.candidate_id == candidate_id:
                return entry.final_rank
        return None


class CandidateStore(Mapping):
    """Read-only id -> BimodalPair lookup for rerank and display."""

    def __init__(self, pairs: Mapping[str, BimodalPair]):
        self._pairs = dict(pairs)

    @classmethod
    def from_pairs(cls, pairs: Iterable[BimodalPair]) -> "CandidateStore":
        return cls({p.id: p for p in pairs})

    def __getitem__(self, candidate_id: str) -> BimodalPair:
        return self._pairs[candidate_id]

    def __iter__(self):
        return iter(self._pairs)

    def __len__(self) -> int:
        return len(self._pairs)

    def pl_tokens(self, candidate_id: str) -> tuple[int, ...]:
        return self._pairs[candidate_id].pl_tokens


def retrieve_fast(
    model: SearchModel,
    index: VectorIndex,
    nl_tokens: Sequence[int],
    query_id: str | None = None,
    limit: int | None = None,
) -> RankedList:
    """Encode the query (unbatched) and rank candidates by cosine."""
    t0 = time.perf_counter()
    query = np.asarray(model.encode(nl_tokens, Mode.NL), dtype=np.float32)
    t1 = time.perf_counter()
    ranked = top_k(index, query, limit if limit is not None else len(index))
    t2 = time.perf_counter()
    entries = [
        RankEntry(candidate_id=cid, fast_score=score, rerank_score=None, final_rank=i + 1)
        for i, (cid, score) in enumerate(ranked)
    ]
    return RankedList(
        query_id=query_id,
        entries=entries,
        timings=StageTimings(
            encode_ms=(t1 - t0) * 1e3, lookup_ms=(t2 - t1) * 1e3, rerank_ms=0.0
        ),
    )


def _classify_probs(
    model: SearchModel,
    nl_tokens: Sequence[int],
    pl_seqs: list[Sequence[int]],
    batch_size: int,
) -> list[float]:
    probs: list[float] = []
    for lo in range(0, len(pl_seqs), batch_size):
        chunk = pl_seqs[lo : lo + batch_size]
        probs.extend(float(p) for p in model.classify_batch(nl_tokens, chunk))
    return probs


def rerank(
    model: SearchModel,
    nl_tokens: Sequence[int],
    shortlist: RankedList,
    k: int,
    rerank_batch_size: int,
    store: Mapping[str, BimodalPair],
) -> RankedList:
    """Refine the top min(k, len) entries with the match classifier.

    The reranked block is ordered by descending probability (ties by
    ascending id); the tail keeps its fast order after the block.
    """
    if not shortlist.entries:
        raise CascadeError("shortlist must contain at least one entry")
    if not model.has_classifier:
        raise ModelError("rerank requires a model with a classifier head")
    cut = min(k, len(shortlist.entries))
    block = shortlist.entries[:cut]
    tail = shortlist.entries[cut:]
    t0 = time.perf_counter()
    pl_seqs = [store[e.candidate_id].pl_tokens for e in block]
    probs = _classify_probs(model, nl_tokens, pl_seqs, rerank_batch_size)
    rerank_ms = (time.perf_counter() - t0) * 1e3
    scored = sorted(
        zip(block, probs), key=lambda item: (-item[1], item[0].candidate_id)
    )
    entries: list[RankEntry] = []
    for rank, (entry, prob) in enumerate(scored, start=1):
        entries.append(replace(entry, rerank_score=prob, final_rank=rank))
    for rank, entry in enumerate(tail, start=len(block) + 1):
        entries.append(replace(entry, final_rank=rank))
    return RankedList(
        query_id=shortlist.query_id,
        entries=entries,
        timings=replace(shortlist.timings, rerank_ms=rerank_ms),
    )


def _retrieve_slow_full(
    model: SearchModel,
    index: VectorIndex,
    store: Mapping[str, BimodalPair],
    nl_tokens: Sequence[int],
    config: CascadeConfig,
    query_id: str | None,
) -> RankedList:
    if not model.has_classifier:
        raise ModelError("slow_full retrieval requires a model with a classifier head")
    t0 = time.perf_counter()
    ids = list(index.ids)
    pl_seqs = [store[cid].pl_tokens for cid in ids]
    probs = _classify_probs(model, nl_tokens, pl_seqs, config.rerank_batch_size)
    rerank_ms = (time.perf_counter() - t0) * 1e3
    order = sorted(range(len(ids)), key=lambda i: (-probs[i], ids[i]))
    entries = [
        RankEntry(
            candidate_id=ids[i],
            fast_score=None,
            rerank_score=probs[i],
            final_rank=rank,
        )
        for rank, i in enumerate(order, start=1)
    ]
    return RankedList(
        query_id=query_id,
        entries=entries,
        timings=StageTimings(encode_ms=0.0, lookup_ms=0.0, rerank_ms=rerank_ms),
    )


def retrieve(
    model: SearchModel,
    index: VectorIndex,
    store: Mapping[str, BimodalPair],
    nl_tokens: Sequence[int],
    config: CascadeConfig,
    query_id: str | None = None,
) -> RankedList:
    """Run retrieval in the configured mode and return the full ordering."""
    if config.mode == MODE_FAST:
        return retrieve_fast(model, index, nl_tokens, query_id=query_id)
    if config.mode == MODE_SLOW_FULL:
        return _retrieve_slow_full(model, index, store, nl_tokens, config, query_id)
    shortlist = retrieve_fast(model, index, nl_tokens, query_id=query_id)
    return rerank(
        model, nl_tokens, shortlist, config.k, config.rerank_batch_size, store
    )
