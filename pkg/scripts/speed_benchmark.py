"""Throughput benchmark across retrieval modes on a few-thousand-snippet pool.

Builds a random-init model with the desk geometry (throughput does not depend
on the weights), indexes a large synthetic pool, and times each mode over a
strictly sequential query loop. Index build time is reported separately and
never folded into per-query numbers.

Usage:
    python scripts/speed_benchmark.py --pool 4000 --out artifacts/bench
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from codesearch import (
    CandidateStore,
    CascadeConfig,
    SearchModel,
    Tokenizer,
    build_index,
    build_vocab,
    bench,
    split_dataset,
    synth_corpus,
    write_bench_csv,
    write_bench_json,
)

from desk_experiment import DESK_TOKENIZER, desk_model_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--pool", type=int, default=4000)
    parser.add_argument("--n-queries", type=int, default=100)
    parser.add_argument("--slow-queries", type=int, default=20)
    parser.add_argument("--warmup", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="artifacts/bench")
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    n_pairs = args.pool + 300  # pool + query headroom
    raw = synth_corpus(n_pairs=n_pairs, n_concepts=max(40, n_pairs // 12),
                       seed=args.seed)
    vocab = build_vocab(raw)
    tokenizer = Tokenizer(vocab, DESK_TOKENIZER)
    pairs = [tokenizer.encode_pair(r) for r in raw]
    ds = split_dataset(pairs, n_dev=100, n_test=args.n_queries,
                       pool_size=args.pool, seed=args.seed)
    model = SearchModel(desk_model_config(len(vocab)), variant="shared",
                        seed=args.seed)

    index = build_index(model, ds.candidates, batch_size=64,
                        corpus_hash=ds.corpus_hash())
    store = CandidateStore.from_pairs(ds.candidates)
    print(f"pool {len(index)} candidates, dim {index.dim}, "
          f"index build {index.build_seconds:.2f}s (reported separately)")

    runs = [
        ("fast", CascadeConfig(mode="fast"), args.n_queries),
        ("cascade-10", CascadeConfig(mode="cascade", k=10), args.n_queries),
        ("cascade-100", CascadeConfig(mode="cascade", k=100), args.n_queries),
        ("slow-full", CascadeConfig(mode="slow_full"), args.slow_queries),
    ]
    report = bench(model, index, store, ds.test, runs, warmup=args.warmup)

    print(f"{'method':<12} {'queries':>7} {'duration_s':>10} {'mrr':>7} {'queries/s':>10}")
    for row in report.rows:
        print(f"{row.label:<12} {row.n_queries:>7} {row.duration_s:>10.2f} "
              f"{row.mrr:>7.4f} {row.queries_per_second:>10.2f}")

    write_bench_json(report, out / "bench.json")
    write_bench_csv(report, out / "bench.csv")
    qps = [row.queries_per_second for row in report.rows]
    ordered = all(a > b for a, b in zip(qps, qps[1:]))
    print(f"strict speed ordering fast > cascade(10) > cascade(100) > slow_full: {ordered}")
    (out / "ordering.json").write_text(json.dumps({"ordered": ordered, "qps": qps}) + "\n")
    return 0 if ordered else 1


if __name__ == "__main__":
    raise SystemExit(main())
