"""Two-stage semantic code search: fast dense retrieval plus slow reranking."""

from .cascade import (
    CascadeConfig,
    CascadeError,
    CandidateStore,
    RankedList,
    RankEntry,
    StageTimings,
    retrieve,
    retrieve_fast,
    rerank,
)
from .corpus import (
    BimodalPair,
    CorpusError,
    DatasetSplit,
    LoadResult,
    Mode,
    RawPair,
    Tokenizer,
    TokenizerConfig,
    TokenizationError,
    TrainBatch,
    Vocabulary,
    build_vocab,
    load_jsonl,
    make_batches,
    split_dataset,
    synth_corpus,
)
from .evaluation import (
    BenchReport,
    BenchRow,
    EvalError,
    EvalReport,
    LatencyStats,
    bench,
    evaluate,
    mrr,
    mrr_at_k,
    recall_at_k,
    write_bench_csv,
    write_bench_json,
    write_eval_json,
)
from .index import (
    IndexFormatError,
    VectorIndex,
    VectorIndexError,
    build_index,
    load_index,
    save_index,
    top_k,
)
from .model import (
    ModelConfig,
    ModelError,
    ModelFormatError,
    SearchModel,
)
from .training import (
    Adam,
    GradCheckReport,
    TrainConfig,
    TrainResult,
    TrainingError,
    batch_losses,
    bce_loss,
    grad_check,
    info_nce_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BenchReport",
    "BenchRow",
    "BimodalPair",
    "CandidateStore",
    "CascadeConfig",
    "CascadeError",
    "CorpusError",
    "DatasetSplit",
    "EvalError",
    "EvalReport",
    "GradCheckReport",
    "IndexFormatError",
    "LatencyStats",
    "LoadResult",
    "Mode",
    "ModelConfig",
    "ModelError",
    "ModelFormatError",
    "RankEntry",
    "RankedList",
    "RawPair",
    "SearchModel",
    "StageTimings",
    "Tokenizer",
    "TokenizerConfig",
    "TokenizationError",
    "TrainBatch",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "VectorIndex",
    "VectorIndexError",
    "Vocabulary",
    "batch_losses",
    "bce_loss",
    "bench",
    "build_index",
    "build_vocab",
    "evaluate",
    "grad_check",
    "info_nce_loss",
    "load_index",
    "load_jsonl",
    "make_batches",
    "mrr",
    "mrr_at_k",
    "recall_at_k",
    "rerank",
    "retrieve",
    "retrieve_fast",
    "save_index",
    "split_dataset",
    "synth_corpus",
    "top_k",
    "train",
    "write_bench_csv",
    "write_bench_json",
    "write_eval_json",
]
