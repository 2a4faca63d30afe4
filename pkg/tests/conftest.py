"""Shared fixtures: a small synthetic dataset and tiny model geometries."""

from __future__ import annotations

import numpy as np
import pytest

from codesearch import (
    ModelConfig,
    SearchModel,
    Tokenizer,
    TokenizerConfig,
    build_vocab,
    split_dataset,
    synth_corpus,
)

MICRO_TOK_CFG = TokenizerConfig(max_nl_len=16, max_pl_len=40)


@pytest.fixture(scope="session")
def micro_raw():
    return synth_corpus(n_pairs=120, n_concepts=12, seed=7)


@pytest.fixture(scope="session")
def micro_dataset(micro_raw):
    """(DatasetSplit, Vocabulary, TokenizerConfig) over 120 synthetic pairs."""
    vocab = build_vocab(micro_raw)
    tokenizer = Tokenizer(vocab, MICRO_TOK_CFG)
    pairs = [tokenizer.encode_pair(r) for r in micro_raw]
    ds = split_dataset(pairs, n_dev=12, n_test=12, seed=0)
    ds.validate()
    return ds, vocab, MICRO_TOK_CFG


@pytest.fixture(scope="session")
def micro_vocab(micro_dataset):
    return micro_dataset[1]


def tiny_model_config(vocab_size: int, **overrides) -> ModelConfig:
    base = dict(
        vocab_size=vocab_size,
        num_layers=2,
        hidden_dim=16,
        num_heads=2,
        ff_dim=32,
        head_hidden=8,
        max_nl_len=16,
        max_pl_len=40,
        max_pair_len=58,
        dropout=0.1,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture()
def tiny_config(micro_vocab):
    return tiny_model_config(len(micro_vocab))


@pytest.fixture()
def tiny_model(tiny_config):
    return SearchModel(tiny_config, variant="shared", seed=0)


@pytest.fixture()
def tiny_separate_model(tiny_config):
    return SearchModel(tiny_config, variant="separate", seed=0)


@pytest.fixture()
def tiny_fast_model(tiny_config):
    return SearchModel(tiny_config, variant="fast_only", seed=0)


def unit_rows(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    mat = rng.standard_normal((n, d)).astype(np.float32)
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    return mat


def check_cascade_invariants(fast_list, ranked_list, k: int) -> None:
    """Structural checks every cascade result must satisfy relative to its
    fast shortlist: ranks are 1..n with no gaps, the reranked block is a
    reordering of the fast top-K sorted by (descending prob, ascending id),
    scored entries precede unscored ones, and the tail is untouched."""
    n = len(fast_list.entries)
    assert len(ranked_list.entries) == n
    ranks = [e.final_rank for e in ranked_list.entries]
    assert ranks == list(range(1, n + 1))
    assert sorted(ranked_list.ids()) == sorted(fast_list.ids())
    cut = min(k, n)
    block = ranked_list.entries[:cut]
    tail = ranked_list.entries[cut:]
    assert all(e.rerank_score is not None for e in block)
    assert all(e.rerank_score is None for e in tail)
    assert {e.candidate_id for e in block} == set(fast_list.ids()[:cut])
    keys = [(-e.rerank_score, e.candidate_id) for e in block]
    assert keys == sorted(keys)
    fast_tail = fast_list.entries[cut:]
    assert [e.candidate_id for e in tail] == [e.candidate_id for e in fast_tail]
    assert [e.fast_score for e in tail] == [e.fast_score for e in fast_tail]
