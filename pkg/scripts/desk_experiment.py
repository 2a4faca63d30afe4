"""Desk-scale end-to-end run: synthesize, train jointly, evaluate both stages.

Produces the reference numbers for the small-corpus experiment: a shared
trunk trained with the joint objective, then fast vs cascade(K=10) MRR on a
held-out query set against a 500-candidate pool.

Usage:
    python scripts/desk_experiment.py --out artifacts/desk
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from codesearch import (
    CandidateStore,
    CascadeConfig,
    ModelConfig,
    SearchModel,
    Tokenizer,
    TokenizerConfig,
    TrainConfig,
    build_index,
    build_vocab,
    evaluate,
    split_dataset,
    synth_corpus,
    train,
)

DESK_TOKENIZER = TokenizerConfig(max_nl_len=16, max_pl_len=48)


def desk_dataset(seed: int = 0):
    # 50 concepts over 2400 pairs: ~10 same-concept confusables per
    # 500-candidate pool, and same-concept negative pairs occur densely
    # in-batch, which is what trains the classifier's within-concept
    # (verb/noun) discrimination.
    raw = synth_corpus(n_pairs=2400, n_concepts=50, distractor_rate=0.3, seed=seed)
    vocab = build_vocab(raw)
    tokenizer = Tokenizer(vocab, DESK_TOKENIZER)
    pairs = [tokenizer.encode_pair(r) for r in raw]
    ds = split_dataset(pairs, n_dev=200, n_test=200, pool_size=500, seed=seed)
    return ds, vocab


def desk_model_config(vocab_size: int) -> ModelConfig:
    # head_hidden 256 adds capacity only to the classifier head (the fast
    # path is trunk CLS + unit norm); dropout 0.15 closes the classifier's
    # dev->test generalization gap, which the fast stage does not have.
    return ModelConfig(
        vocab_size=vocab_size,
        hidden_dim=64,
        num_layers=2,
        num_heads=4,
        ff_dim=256,
        head_hidden=256,
        max_nl_len=DESK_TOKENIZER.max_nl_len,
        max_pl_len=DESK_TOKENIZER.max_pl_len,
        max_pair_len=2 + DESK_TOKENIZER.max_nl_len + DESK_TOKENIZER.max_pl_len,
        dropout=0.15,
    )


def desk_train_config(seed: int = 0, max_epochs: int = 22) -> TrainConfig:
    # lr 1e-3: the fresh-init model sits near a collapsed saddle (all CLS
    # embeddings nearly input-independent), and smaller steps take many more
    # epochs to escape it at this scale.
    # batch 10 + bce_all_negatives: a small batch keeps the contrastive task
    # mild (9 in-batch negatives) while all B(B-1) pair labels per batch keep
    # the classifier's pairwise signal dense; with this balance the cascade
    # leads the fast stage on dev from mid-training onward.
    return TrainConfig(
        batch_size=10,
        learning_rate=1e-3,
        max_epochs=max_epochs,
        early_stop_patience=5,
        loss_mode="joint",
        seed=seed,
        dev_eval_k=10,
        eval_every=0,
        bce_all_negatives=True,
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="artifacts/desk", help="artifact directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--max-epochs", type=int, default=22)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    ds, vocab = desk_dataset(seed=args.seed)
    print(
        f"dataset: train {len(ds.train)}, dev {len(ds.dev)}, test {len(ds.test)}, "
        f"pool {len(ds.candidates)}, vocab {len(vocab)} "
        f"({time.perf_counter() - t0:.1f}s)"
    )

    model = SearchModel(desk_model_config(len(vocab)), variant="shared", seed=args.seed)
    trunk, head = model.param_counts()
    print(f"model: shared, {trunk + head} params ({trunk} trunk + {head} head)")

    def progress(record: dict) -> None:
        if "dev_mrr_fast" in record or record.get("step", 0) % 20 == 0:
            print("  " + json.dumps(record))

    t1 = time.perf_counter()
    result = train(
        model, ds, desk_train_config(seed=args.seed, max_epochs=args.max_epochs),
        log_path=out / "train_log.jsonl", progress=progress,
    )
    train_seconds = time.perf_counter() - t1
    print(
        f"training: {result.steps} steps in {train_seconds:.1f}s, "
        f"best dev MRR {result.best_dev_mrr:.4f}, early stop {result.stopped_early}"
    )

    model.save(out / "model.bin")
    index = build_index(model, ds.candidates, batch_size=64, corpus_hash=ds.corpus_hash())
    store = CandidateStore.from_pairs(ds.candidates)

    fast = evaluate(model, index, store, ds.test, CascadeConfig(mode="fast"), ks=(1, 5, 10))
    casc = evaluate(
        model, index, store, ds.test, CascadeConfig(mode="cascade", k=10), ks=(1, 5, 10)
    )
    print(f"fast     MRR {fast.mrr:.4f}  R@1 {fast.recall_at[1]:.3f} "
          f"R@5 {fast.recall_at[5]:.3f} R@10 {fast.recall_at[10]:.3f}")
    print(f"cascade  MRR {casc.mrr:.4f}  R@1 {casc.recall_at[1]:.3f} "
          f"R@5 {casc.recall_at[5]:.3f} R@10 {casc.recall_at[10]:.3f}")

    summary = {
        "seed": args.seed,
        "train_seconds": train_seconds,
        "steps": result.steps,
        "best_dev_mrr": result.best_dev_mrr,
        "fast_mrr": fast.mrr,
        "cascade_mrr": casc.mrr,
        "fast_recall": {str(k): v for k, v in fast.recall_at.items()},
        "cascade_recall": {str(k): v for k, v in casc.recall_at.items()},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"wrote {out / 'summary.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
