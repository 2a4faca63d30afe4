"""Command-line entry points for the full search lifecycle.

Subcommands: synth, ingest, train, build-index, search, eval, bench, serve.
Configuration precedence everywhere: explicit flags > --config file > built-in
defaults. Errors print a message to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .cascade import (
    CandidateStore,
    CascadeConfig,
    CascadeError,
    MODE_CASCADE,
    MODE_FAST,
    MODE_SLOW_FULL,
)
from .corpus import (
    CorpusError,
    DatasetSplit,
    Mode,
    RawPair,
    Tokenizer,
    TokenizerConfig,
    TokenizationError,
    build_vocab,
    load_jsonl,
    split_dataset,
    synth_corpus,
    write_jsonl,
)
from .evaluation import (
    EvalError,
    bench,
    evaluate,
    write_bench_csv,
    write_bench_json,
    write_eval_json,
)
from .index import (
    IndexFormatError,
    VectorIndexError,
    build_index,
    load_index,
    save_index,
)
from .model import ModelConfig, ModelError, ModelFormatError, SearchModel
from .training import TrainingError, train, train_config_from_dict

CLI_MODES = {"fast": MODE_FAST, "cascade": MODE_CASCADE, "slow": MODE_SLOW_FULL}

_USER_ERRORS = (
    CorpusError,
    TokenizationError,
    TrainingError,
    ModelError,
    ModelFormatError,
    VectorIndexError,
    IndexFormatError,
    CascadeError,
    EvalError,
    ValueError,
    OSError,
)


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _load_dataset(path: str):
    ds, vocab, tok_cfg = DatasetSplit.load(path)
    return ds, vocab, tok_cfg


def _read_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return data


# ---------------------------------------------------------------- synth


def _cmd_synth(args: argparse.Namespace) -> int:
    pairs = synth_corpus(
        n_pairs=args.n_pairs,
        n_concepts=args.n_concepts,
        distractor_rate=args.distractor_rate,
        seed=args.seed,
    )
    write_jsonl(pairs, args.out)
    print(f"wrote {len(pairs)} synthetic pairs to {args.out}")
    return 0


# ---------------------------------------------------------------- ingest


def _cmd_ingest(args: argparse.Namespace) -> int:
    result = load_jsonl(args.corpus)
    for err in result.errors:
        print(f"warn: {args.corpus}:{err.line_no}: {err.message}", file=sys.stderr)
    if not result.records:
        return _fail(f"no usable records in {args.corpus}")
    vocab = build_vocab(result.records, min_count=args.min_count)
    tok_cfg = TokenizerConfig(max_nl_len=args.max_nl_len, max_pl_len=args.max_pl_len)
    tokenizer = Tokenizer(vocab, tok_cfg)
    pairs = [tokenizer.encode_pair(r) for r in result.records]
    ds = split_dataset(
        pairs,
        n_dev=args.n_dev,
        n_test=args.n_test,
        pool_size=args.pool_size,
        seed=args.seed,
    )
    ds.save(args.out, vocab, tok_cfg)
    print(
        f"ingested {len(pairs)} pairs -> {args.out} "
        f"(train {len(ds.train)}, dev {len(ds.dev)}, test {len(ds.test)}, "
        f"pool {len(ds.candidates)}, vocab {len(vocab)})"
    )
    return 0


# ---------------------------------------------------------------- train

_TRAIN_FLAG_KEYS = {
    "batch_size": "batch_size",
    "lr": "learning_rate",
    "max_epochs": "max_epochs",
    "patience": "early_stop_patience",
    "loss_mode": "loss_mode",
    "seed": "seed",
    "dev_eval_k": "dev_eval_k",
    "eval_every": "eval_every",
}

_MODEL_FLAG_KEYS = ("hidden_dim", "num_layers", "num_heads", "ff_dim", "temperature", "dropout")


def merge_train_config(file_cfg: dict, args: argparse.Namespace):
    """Apply precedence flags > config file > defaults.

    The config file may use a nested {"train": ..., "model": ..., "variant":
    ...} layout or flat TrainConfig keys. Returns (TrainConfig, model kwarg
    dict, variant name).
    """
    train_section = dict(
        file_cfg.get(
            "train",
            {k: v for k, v in file_cfg.items() if k not in ("model", "variant")},
        )
    )
    model_section = dict(file_cfg.get("model", {}))
    variant = file_cfg.get("variant", "shared")
    for flag, key in _TRAIN_FLAG_KEYS.items():
        value = getattr(args, flag)
        if value is not None:
            train_section[key] = value
    for flag in _MODEL_FLAG_KEYS:
        value = getattr(args, flag)
        if value is not None:
            model_section[flag] = value
    if args.variant is not None:
        variant = args.variant
    return train_config_from_dict(train_section), model_section, variant


def _cmd_train(args: argparse.Namespace) -> int:
    ds, vocab, tok_cfg = _load_dataset(args.corpus)
    file_cfg = _read_config_file(args.config)
    train_cfg, model_section, variant = merge_train_config(file_cfg, args)
    model_section.setdefault("max_nl_len", tok_cfg.max_nl_len)
    model_section.setdefault("max_pl_len", tok_cfg.max_pl_len)
    model_section.setdefault(
        "max_pair_len", 2 + model_section["max_nl_len"] + model_section["max_pl_len"]
    )
    model_cfg = ModelConfig(vocab_size=len(vocab), **model_section)
    model = SearchModel(model_cfg, variant=variant, seed=train_cfg.seed)
    trunk, head = model.param_counts()
    print(
        f"training {variant} model ({trunk + head} params) in {train_cfg.loss_mode} mode "
        f"on {len(ds.train)} pairs"
    )
    result = train(model, ds, train_cfg, log_path=args.log)
    if result.aborted:
        print("warn: training aborted on non-finite loss; saving last good checkpoint", file=sys.stderr)
    result.model.save(args.out)
    print(
        f"saved model to {args.out} "
        f"(steps {result.steps}, best dev MRR {result.best_dev_mrr:.4f}, "
        f"early stop {result.stopped_early})"
    )
    return 0


# ---------------------------------------------------------------- build-index


def _cmd_build_index(args: argparse.Namespace) -> int:
    model = SearchModel.load(args.model)
    ds, _, _ = _load_dataset(args.corpus)
    index = build_index(
        model, ds.candidates, batch_size=args.batch_size, corpus_hash=ds.corpus_hash()
    )
    save_index(index, args.out)
    print(
        f"indexed {len(index)} candidates (dim {index.dim}) in "
        f"{index.build_seconds:.2f}s -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------- search


def _load_stack(args: argparse.Namespace):
    model = SearchModel.load(args.model)
    index = load_index(args.index)
    ds, vocab, tok_cfg = _load_dataset(args.corpus)
    index.check_provenance(model)
    store = CandidateStore.from_pairs(ds.candidates)
    tokenizer = Tokenizer(vocab, tok_cfg)
    return model, index, ds, store, tokenizer


def _cmd_search(args: argparse.Namespace) -> int:
    model, index, ds, store, tokenizer = _load_stack(args)
    nl_tokens = tokenizer.tokenize(args.query, Mode.NL)
    config = CascadeConfig(k=args.k, mode=CLI_MODES[args.mode])
    from .cascade import retrieve

    ranking = retrieve(model, index, store, nl_tokens, config)
    shown = ranking.entries[: args.n_results]
    print(f"query: {args.query!r}  mode: {args.mode}  pool: {len(index)}")
    print(f"{'rank':>4}  {'id':<12} {'fast':>8} {'rerank':>8}  docstring")
    for entry in shown:
        fast = f"{entry.fast_score:.4f}" if entry.fast_score is not None else "-"
        rr = f"{entry.rerank_score:.4f}" if entry.rerank_score is not None else "-"
        doc = store[entry.candidate_id].nl_raw
        if len(doc) > 60:
            doc = doc[:57] + "..."
        print(f"{entry.final_rank:>4}  {entry.candidate_id:<12} {fast:>8} {rr:>8}  {doc}")
    t = ranking.timings
    print(
        f"timings: encode {t.encode_ms:.1f}ms lookup {t.lookup_ms:.1f}ms "
        f"rerank {t.rerank_ms:.1f}ms"
    )
    return 0


# ---------------------------------------------------------------- eval


def _cmd_eval(args: argparse.Namespace) -> int:
    model, index, ds, store, _ = _load_stack(args)
    queries = ds.test if args.split == "test" else ds.dev
    if not queries:
        return _fail(f"dataset has no {args.split} queries")
    ks = tuple(int(x) for x in args.ks.split(","))
    config = CascadeConfig(k=args.k, mode=CLI_MODES[args.mode])
    report = evaluate(model, index, store, queries, config, ks=ks)
    payload = report.to_dict()
    if args.out:
        write_eval_json(report, args.out)
        print(f"wrote report to {args.out}")
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        print()
    if report.skipped:
        print(f"warn: skipped {len(report.skipped)} queries missing from pool", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- bench


def _parse_bench_modes(spec: str, slow_queries: int, n_queries: int):
    runs = []
    for label in spec.split(","):
        label = label.strip()
        if not label:
            continue
        if label == "fast":
            runs.append((label, CascadeConfig(mode=MODE_FAST), n_queries))
        elif label == "slow":
            runs.append((label, CascadeConfig(mode=MODE_SLOW_FULL), min(slow_queries, n_queries)))
        elif label.startswith("cascade"):
            k = int(label[len("cascade"):] or 10)
            runs.append((label, CascadeConfig(k=k, mode=MODE_CASCADE), n_queries))
        else:
            raise ValueError(f"unknown bench mode {label!r}")
    if not runs:
        raise ValueError("no bench modes given")
    return runs


def _cmd_bench(args: argparse.Namespace) -> int:
    model, index, ds, store, _ = _load_stack(args)
    queries = ds.test or ds.dev
    if not queries:
        return _fail("dataset has no test or dev queries to benchmark")
    runs = _parse_bench_modes(args.modes, args.slow_queries, args.n_queries)
    report = bench(model, index, store, queries, runs, warmup=args.warmup)
    print(f"pool {report.pool_size} candidates | params {report.params}")
    print(f"index build time (excluded from per-query figures): {report.index_build_seconds:.2f}s")
    print(f"{'method':<12} {'queries':>7} {'duration_s':>10} {'mrr':>7} {'queries/s':>10}")
    for row in report.rows:
        print(
            f"{row.label:<12} {row.n_queries:>7} {row.duration_s:>10.2f} "
            f"{row.mrr:>7.4f} {row.queries_per_second:>10.2f}"
        )
    if args.out:
        write_bench_json(report, args.out)
        print(f"wrote JSON to {args.out}")
    if args.csv:
        write_bench_csv(report, args.csv)
        print(f"wrote CSV to {args.csv}")
    return 0


# ---------------------------------------------------------------- serve


def _cmd_serve(args: argparse.Namespace) -> int:
    from .service import create_app, make_state

    model, index, ds, store, tokenizer = _load_stack(args)
    state = make_state(model, index, store, tokenizer, default_k=args.k)
    static_dir = args.static_dir
    if static_dir is not None and not Path(static_dir).is_dir():
        return _fail(f"static dir {static_dir} does not exist")
    app = create_app(state, static_dir=static_dir)
    import uvicorn

    port = args.port if args.port is not None else int(os.environ.get("CODESEARCH_PORT", "8080"))
    print(f"serving {len(index)} candidates on http://{args.host}:{port}")
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codesearch",
        description="Two-stage semantic code search over docstring/code pairs.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic bimodal corpus",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--n-pairs", type=int, default=2000)
    p.add_argument("--n-concepts", type=int, default=40)
    p.add_argument("--distractor-rate", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="tokenize a JSONL corpus into a dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--corpus", required=True, help="input JSONL path")
    p.add_argument("--out", required=True, help="output dataset JSON path")
    p.add_argument("--n-dev", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--pool-size", type=int, default=None,
                   help="candidate pool size (default: all dev/test golds plus train fill)")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--max-nl-len", type=int, default=64)
    p.add_argument("--max-pl-len", type=int, default=192)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="train a model on an ingested dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--corpus", required=True, help="dataset JSON path")
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--config", default=None, help="JSON config file (train/model/variant sections)")
    p.add_argument("--variant", choices=["fast_only", "shared", "separate"], default=None)
    p.add_argument("--loss-mode", choices=["fast_only", "slow_only", "joint"], default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dev-eval-k", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--num-layers", type=int, default=None)
    p.add_argument("--num-heads", type=int, default=None)
    p.add_argument("--ff-dim", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--log", default=None, help="JSONL training log path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("build-index", help="encode the candidate pool into an index",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True, help="dataset JSON path")
    p.add_argument("--out", required=True, help="output index path")
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=_cmd_build_index)

    def add_stack_args(p):
        p.add_argument("--model", required=True)
        p.add_argument("--index", required=True)
        p.add_argument("--corpus", required=True, help="dataset JSON path")

    p = sub.add_parser("search", help="run one query and print a ranked table",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    add_stack_args(p)
    p.add_argument("--query", "-q", required=True)
    p.add_argument("--mode", choices=sorted(CLI_MODES), default="cascade")
    p.add_argument("--k", type=int, default=10, help="rerank depth for cascade mode")
    p.add_argument("--n-results", type=int, default=10)
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("eval", help="compute MRR / Recall@K over a split",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    add_stack_args(p)
    p.add_argument("--split", choices=["test", "dev"], default="test")
    p.add_argument("--mode", choices=sorted(CLI_MODES), default="cascade")
    p.add_argument("--k", type=int, default=10, help="rerank depth for cascade mode")
    p.add_argument("--ks", default="1,5,10", help="comma-separated recall depths")
    p.add_argument("--out", default=None, help="write JSON report here instead of stdout")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="speed benchmark across modes",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    add_stack_args(p)
    p.add_argument("--modes", default="fast,cascade10,cascade100,slow",
                   help="comma list: fast, cascadeN, slow")
    p.add_argument("--n-queries", type=int, default=100)
    p.add_argument("--slow-queries", type=int, default=20,
                   help="query cap for the slow (full classification) mode")
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--out", default=None, help="JSON output path")
    p.add_argument("--csv", default=None, help="CSV output path")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("serve", help="start the HTTP search service",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    add_stack_args(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None,
                   help="port (default: $CODESEARCH_PORT or 8080)")
    p.add_argument("--k", type=int, default=10, help="default rerank depth")
    p.add_argument("--static-dir", default=None, help="optional directory of UI assets to mount at /")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
