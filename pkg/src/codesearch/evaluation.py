"""Retrieval metrics (MRR, Recall@K) and the speed benchmark harness.

Queries are processed strictly one at a time in bench mode: no cross-query
batching, only the within-query rerank block is batched. Index build time is
reported separately and never folded into per-query figures.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

from .cascade import CascadeConfig, RankedList, retrieve
from .corpus import BimodalPair
from .index import VectorIndex


class EvalError(Exception):
    """Raised for invalid metric inputs or unusable query sets."""


def mrr(ranks: Sequence[int]) -> float:
    """Mean reciprocal rank of 1-based integer ranks."""
    if len(ranks) == 0:
        raise EvalError("mrr requires at least one rank")
    total = 0.0
    for r in ranks:
        if r < 1:
            raise EvalError(f"ranks must be >= 1, got {r}")
        total += 1.0 / r
    return total / len(ranks)


def mrr_at_k(ranks: Sequence[int], k: int) -> float:
    """MRR truncated at depth k: ranks beyond k contribute zero.

    With an oracle reranker this equals Recall@k of the first stage exactly,
    because the gold lands at rank 1 precisely when the shortlist contains it.
    """
    if len(ranks) == 0:
        raise EvalError("mrr_at_k requires at least one rank")
    if k < 1:
        raise EvalError("k must be >= 1")
    total = 0.0
    for r in ranks:
        if r < 1:
            raise EvalError(f"ranks must be >= 1, got {r}")
        if r <= k:
            total += 1.0 / r
    return total / len(ranks)


def recall_at_k(ranks: Sequence[int], k: int) -> float:
    """Fraction of ranks at or above position k."""
    if len(ranks) == 0:
        raise EvalError("recall_at_k requires at least one rank")
    if k < 1:
        raise EvalError("k must be >= 1")
    hits = 0
    for r in ranks:
        if r < 1:
            raise EvalError(f"ranks must be >= 1, got {r}")
        if r <= k:
            hits += 1
    return hits / len(ranks)


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float
    median_ms: float
    p95_ms: float

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "LatencyStats":
        if len(values) == 0:
            return cls(0.0, 0.0, 0.0)
        ordered = sorted(values)
        # nearest-rank p95; single sample degenerates to itself
        idx = min(len(ordered) - 1, max(0, math.ceil(0.95 * len(ordered)) - 1))
        return cls(
            mean_ms=statistics.fmean(ordered),
            median_ms=statistics.median(ordered),
            p95_ms=ordered[idx],
        )

    def to_dict(self) -> dict:
        return {
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "p95_ms": self.p95_ms,
        }


@dataclass
class EvalReport:
    mode: str
    k: int
    n_queries: int
    mrr: float
    recall_at: dict[int, float]
    ranks: dict[str, int]
    skipped: list[str]
    latency: dict[str, LatencyStats]
    queries_per_second: float
    wall_seconds: float

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "k": self.k,
            "n_queries": self.n_queries,
            "mrr": self.mrr,
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "ranks": dict(self.ranks),
            "skipped": list(self.skipped),
            "latency": {stage: s.to_dict() for stage, s in self.latency.items()},
            "queries_per_second": self.queries_per_second,
            "wall_seconds": self.wall_seconds,
        }


def _gold_rank(ranking: RankedList, gold_id: str) -> int:
    rank = ranking.rank_of(gold_id)
    if rank is None:
        raise EvalError(f"gold id {gold_id!r} missing from ranking")
    return rank


def evaluate(
    model,
    index: VectorIndex,
    store: Mapping[str, BimodalPair],
    queries: Sequence[BimodalPair],
    config: CascadeConfig,
    ks: Sequence[int] = (1, 5, 10),
) -> EvalReport:
    """Rank every query's gold candidate and aggregate MRR / Recall@K.

    A query whose gold id is absent from the index is excluded and listed
    in the report's ``skipped`` field rather than failing the whole run.
    """
    if len(queries) == 0:
        raise EvalError("evaluate requires at least one query")
    for k in ks:
        if k < 1:
            raise EvalError("every requested recall depth must be >= 1")
    ranks: dict[str, int] = {}
    skipped: list[str] = []
    encode_ms: list[float] = []
    lookup_ms: list[float] = []
    rerank_ms: list[float] = []
    total_ms: list[float] = []
    t_start = time.perf_counter()
    for query in queries:
        if query.id not in index:
            skipped.append(query.id)
            continue
        ranking = retrieve(
            model, index, store, query.nl_tokens, config, query_id=query.id
        )
        ranks[query.id] = _gold_rank(ranking, query.id)
        encode_ms.append(ranking.timings.encode_ms)
        lookup_ms.append(ranking.timings.lookup_ms)
        rerank_ms.append(ranking.timings.rerank_ms)
        total_ms.append(ranking.timings.total_ms)
    wall = time.perf_counter() - t_start
    if not ranks:
        raise EvalError("no query had its gold id in the index")
    rank_values = list(ranks.values())
    return EvalReport(
        mode=config.mode,
        k=config.k,
        n_queries=len(rank_values),
        mrr=mrr(rank_values),
        recall_at={k: recall_at_k(rank_values, k) for k in ks},
        ranks=ranks,
        skipped=skipped,
        latency={
            "encode": LatencyStats.from_values(encode_ms),
            "lookup": LatencyStats.from_values(lookup_ms),
            "rerank": LatencyStats.from_values(rerank_ms),
            "total": LatencyStats.from_values(total_ms),
        },
        queries_per_second=len(rank_values) / wall if wall > 0 else float("inf"),
        wall_seconds=wall,
    )


@dataclass(frozen=True)
class BenchRow:
    label: str
    mode: str
    k: int
    n_queries: int
    duration_s: float
    mean_query_s: float
    queries_per_second: float
    mrr: float

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "mode": self.mode,
            "k": self.k,
            "n_queries": self.n_queries,
            "duration_s": self.duration_s,
            "mean_query_s": self.mean_query_s,
            "queries_per_second": self.queries_per_second,
            "mrr": self.mrr,
        }


@dataclass
class BenchReport:
    rows: list[BenchRow]
    index_build_seconds: float
    params: str
    pool_size: int

    def to_dict(self) -> dict:
        return {
            "rows": [row.to_dict() for row in self.rows],
            "index_build_seconds": self.index_build_seconds,
            "params": self.params,
            "pool_size": self.pool_size,
        }


def _params_label(model) -> str:
    counts = getattr(model, "param_counts", None)
    if counts is None:
        return "n/a"
    trunk, head = counts()
    return f"{trunk + head} ({trunk} trunk + {head} head)"


def bench(
    model,
    index: VectorIndex,
    store: Mapping[str, BimodalPair],
    queries: Sequence[BimodalPair],
    runs: Sequence[tuple[str, CascadeConfig, int]],
    warmup: int = 5,
) -> BenchReport:
    """Time each configured mode over its own query budget.

    ``runs`` holds (label, config, n_queries) triples so expensive modes can
    be measured over fewer queries. Each run performs ``warmup`` untimed
    queries first, then times a strictly sequential loop.
    """
    if len(queries) == 0:
        raise EvalError("bench requires at least one query")
    rows: list[BenchRow] = []
    for label, config, n_queries in runs:
        if n_queries < 1:
            raise EvalError(f"run {label!r}: n_queries must be >= 1")
        subset = [q for q in queries if q.id in index][:n_queries]
        if not subset:
            raise EvalError(f"run {label!r}: no usable queries")
        for query in subset[: min(warmup, len(subset))]:
            retrieve(model, index, store, query.nl_tokens, config, query_id=query.id)
        ranks: list[int] = []
        t0 = time.perf_counter()
        for query in subset:
            ranking = retrieve(
                model, index, store, query.nl_tokens, config, query_id=query.id
            )
            ranks.append(_gold_rank(ranking, query.id))
        duration = time.perf_counter() - t0
        rows.append(
            BenchRow(
                label=label,
                mode=config.mode,
                k=config.k,
                n_queries=len(subset),
                duration_s=duration,
                mean_query_s=duration / len(subset),
                queries_per_second=len(subset) / duration if duration > 0 else float("inf"),
                mrr=mrr(ranks),
            )
        )
    return BenchReport(
        rows=rows,
        index_build_seconds=index.build_seconds,
        params=_params_label(model),
        pool_size=len(index),
    )


def write_eval_json(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_bench_json(report: BenchReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_bench_csv(report: BenchReport, path) -> None:
    """One row per benchmarked mode: method, params, duration, MRR, speed."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "params", "duration_s", "mrr", "queries_per_s"])
        for row in report.rows:
            writer.writerow(
                [
                    row.label,
                    report.params,
                    f"{row.duration_s:.4f}",
                    f"{row.mrr:.4f}",
                    f"{row.queries_per_second:.4f}",
                ]
            )
