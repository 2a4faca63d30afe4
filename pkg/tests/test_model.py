"""Encoder model: forward oracle, norms, modes, sharing, persistence."""

from __future__ import annotations

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erf

from codesearch import Mode, ModelConfig, ModelError, ModelFormatError, SearchModel
from codesearch.corpus import CLS_ID, PAD_ID, SEP_ID
from codesearch.model import _MODE_IDS

from conftest import tiny_model_config

VOCAB = 31


def small_model(variant="shared", seed=0, **overrides) -> SearchModel:
    cfg = tiny_model_config(VOCAB, **overrides)
    return SearchModel(cfg, variant=variant, seed=seed)


# ------------------------------------------------------- independent oracle


def _np_layer_norm(x, weight, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * weight + bias


def _np_gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _np_softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def numpy_trunk_forward(model: SearchModel, ids_row, length, mode: Mode, trunk="fast_trunk"):
    """Step-by-step re-implementation of the trunk forward pass in float64."""
    cfg = model.config
    sd = {k: v.detach().numpy().astype(np.float64) for k, v in model.state_dict().items()}
    p = lambda name: sd[f"{trunk}.{name}"]

    seq_len = len(ids_row)
    x = p("tok_emb.weight")[ids_row] + p("pos_emb.weight")[:seq_len]
    if cfg.mode_embeddings:
        x = x + p("mode_emb.weight")[_MODE_IDS[mode]]
    x = _np_layer_norm(x, p("emb_norm.weight"), p("emb_norm.bias"))
    mask = np.arange(seq_len) < length

    n_heads = cfg.num_heads
    head_dim = cfg.hidden_dim // n_heads
    for layer in range(cfg.num_layers):
        lp = lambda name: sd[f"{trunk}.layers.{layer}.{name}"]
        q = x @ lp("q_proj.weight").T + lp("q_proj.bias")
        k = x @ lp("k_proj.weight").T + lp("k_proj.bias")
        v = x @ lp("v_proj.weight").T + lp("v_proj.bias")
        # (L, H, hd) -> (H, L, hd)
        q = q.reshape(seq_len, n_heads, head_dim).transpose(1, 0, 2)
        k = k.reshape(seq_len, n_heads, head_dim).transpose(1, 0, 2)
        v = v.reshape(seq_len, n_heads, head_dim).transpose(1, 0, 2)
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(head_dim)
        scores[:, :, ~mask] = -np.inf
        attn = _np_softmax(scores)
        context = (attn @ v).transpose(1, 0, 2).reshape(seq_len, cfg.hidden_dim)
        context = context @ lp("o_proj.weight").T + lp("o_proj.bias")
        x = _np_layer_norm(x + context, lp("attn_norm.weight"), lp("attn_norm.bias"))
        ff = _np_gelu(x @ lp("ff_in.weight").T + lp("ff_in.bias"))
        ff = ff @ lp("ff_out.weight").T + lp("ff_out.bias")
        x = _np_layer_norm(x + ff, lp("ff_norm.weight"), lp("ff_norm.bias"))
    return x[0]


def numpy_encode(model: SearchModel, tokens, mode: Mode):
    padded = model.config.padded_len(mode)
    ids_row = [CLS_ID] + list(tokens) + [PAD_ID] * (padded - 1 - len(tokens))
    cls = numpy_trunk_forward(model, ids_row, 1 + len(tokens), mode)
    return cls / np.linalg.norm(cls)


def numpy_classify(model: SearchModel, nl_tokens, pl_tokens):
    sd = {k: v.detach().numpy().astype(np.float64) for k, v in model.state_dict().items()}
    seq = model.pair_sequence(nl_tokens, pl_tokens)
    padded = model.config.max_pair_len
    ids_row = seq + [PAD_ID] * (padded - len(seq))
    trunk = "slow_trunk" if model.variant == "separate" else "fast_trunk"
    cls = numpy_trunk_forward(model, ids_row, len(seq), Mode.PAIR, trunk=trunk)
    hidden = np.tanh(cls @ sd["head.dense.weight"].T + sd["head.dense.bias"])
    logit = (hidden @ sd["head.out.weight"].T + sd["head.out.bias"]).item()
    return 1.0 / (1.0 + np.exp(-logit))


def test_encode_matches_independent_forward_oracle():
    model = small_model(seed=11)
    for tokens, mode in [
        ((4, 9, 17, 5), Mode.NL),
        ((6, 30, 12), Mode.PL),
        ((8,), Mode.NL),
        (tuple(range(4, 20)), Mode.NL),
    ]:
        got = model.encode(tokens, mode).numpy()
        want = numpy_encode(model, tokens, mode)
        np.testing.assert_allclose(got, want, atol=1e-5, rtol=0)


def test_classify_matches_independent_forward_oracle():
    for variant in ("shared", "separate"):
        model = small_model(variant=variant, seed=13)
        for nl, pl in [((4, 7), (9, 10, 11)), ((5,), (6,)), ((8, 9, 10), (22, 23))]:
            got = model.classify(nl, pl)
            want = numpy_classify(model, nl, pl)
            assert got == pytest.approx(want, abs=1e-5)


# ------------------------------------------------------- encode contracts


@given(
    st.lists(st.integers(min_value=0, max_value=VOCAB - 1), min_size=1, max_size=16),
    st.sampled_from([Mode.NL, Mode.PL]),
)
@settings(max_examples=60, deadline=None)
def test_encode_unit_norm(tokens, mode):
    model = small_model(seed=2)
    vec = model.encode(tokens, mode)
    assert abs(float(vec.norm()) - 1.0) <= 1e-6


def test_encode_deterministic():
    model = small_model(seed=3)
    a = model.encode((4, 5, 6), Mode.NL)
    b = model.encode((4, 5, 6), Mode.NL)
    assert torch.equal(a, b)


def test_encode_batch_independent_of_batch_size():
    model = small_model(seed=4)
    seqs = [(4 + i, 5, 6 + i) for i in range(8)]
    batched = model.encode_batch(seqs, Mode.PL)
    for i, seq in enumerate(seqs):
        alone = model.encode(seq, Mode.PL)
        assert torch.equal(batched[i], alone)


def test_encode_rejects_empty_and_overlength():
    model = small_model()
    with pytest.raises(ValueError):
        model.encode((), Mode.NL)
    with pytest.raises(ValueError):
        model.encode(tuple(range(4, 4 + model.config.max_nl_len + 1)), Mode.NL)


def test_mode_separation():
    model = small_model(seed=5)
    tokens = (7, 8, 9)
    nl = model.encode(tokens, Mode.NL)
    pl = model.encode(tokens, Mode.PL)
    assert not torch.allclose(nl, pl)


def test_dropout_active_only_in_training():
    model = small_model(seed=6)
    model.train()
    a = model.embed([(4, 5, 6)], Mode.NL)
    b = model.embed([(4, 5, 6)], Mode.NL)
    assert not torch.equal(a, b)
    model.eval()
    c = model.embed([(4, 5, 6)], Mode.NL)
    d = model.embed([(4, 5, 6)], Mode.NL)
    assert torch.equal(c, d)


# ------------------------------------------------------- classify contracts


def test_classify_zero_head_gives_exact_half():
    model = small_model(seed=7)
    with torch.no_grad():
        for param in model.head.parameters():
            param.zero_()
    assert model.classify((4, 5), (6, 7)) == 0.5


def test_classify_strictly_open_interval():
    model = small_model(seed=8)
    for nl in [(4,), (5, 6), (7, 8, 9)]:
        p = model.classify(nl, (10, 11))
        assert 0.0 < p < 1.0


def test_classify_deterministic():
    model = small_model(seed=9)
    assert model.classify((4, 5), (6, 7)) == model.classify((4, 5), (6, 7))


def test_classify_requires_head():
    model = small_model(variant="fast_only")
    assert not model.has_classifier
    with pytest.raises(ModelError):
        model.pair_logits((4,), [(5,)])


def test_pair_sequence_structure_and_truncation():
    model = small_model()
    cfg = model.config
    nl = tuple(range(4, 4 + cfg.max_nl_len + 5))
    pl = tuple(range(4, 4 + cfg.max_pl_len + 5))
    seq = model.pair_sequence(nl, pl)
    assert seq[0] == CLS_ID
    assert seq[1 + cfg.max_nl_len] == SEP_ID
    assert len(seq) <= cfg.max_pair_len


def test_pair_overlength_budget_error():
    cfg = tiny_model_config(VOCAB, max_pair_len=18, max_nl_len=16)
    model = SearchModel(cfg, variant="shared", seed=0)
    with pytest.raises(ValueError):
        model.pair_sequence(tuple(range(4, 20)), (5, 6))


# ------------------------------------------------------- sharing semantics


def test_shared_variant_mutation_changes_both_paths():
    model = small_model(variant="shared", seed=10)
    nl, pl = (4, 5), (6, 7)
    before_vec = model.encode(nl, Mode.NL).clone()
    before_p = model.classify(nl, pl)
    with torch.no_grad():
        model.fast_trunk.layers[0].ff_in.weight[0, 0] += 0.5
    assert not torch.equal(model.encode(nl, Mode.NL), before_vec)
    assert model.classify(nl, pl) != before_p


def test_separate_variant_fast_mutation_leaves_classifier_unchanged():
    model = small_model(variant="separate", seed=10)
    nl, pl = (4, 5), (6, 7)
    before_vec = model.encode(nl, Mode.NL).clone()
    before_p = model.classify(nl, pl)
    with torch.no_grad():
        model.fast_trunk.layers[0].ff_in.weight[0, 0] += 0.5
    assert not torch.equal(model.encode(nl, Mode.NL), before_vec)
    assert model.classify(nl, pl) == before_p


def test_param_counts_by_variant():
    shared = small_model(variant="shared")
    separate = small_model(variant="separate")
    fast = small_model(variant="fast_only")
    s_trunk, s_head = shared.param_counts()
    p_trunk, p_head = separate.param_counts()
    f_trunk, f_head = fast.param_counts()
    assert f_head == 0
    assert s_head == p_head > 0
    assert p_trunk == 2 * s_trunk
    assert f_trunk == s_trunk


# ------------------------------------------------------- attention / grads


def test_attention_rows_sum_to_one():
    model = small_model(seed=12)
    maps = model.attention_maps([(4, 5, 6, 7), (8, 9)], Mode.NL)
    assert len(maps) == model.config.num_layers
    for attn in maps:
        sums = attn.sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


def test_embedding_gradient_sparsity():
    model = small_model(seed=14)
    model.eval()
    tokens = (5, 9, 9, 12)
    out = model.embed([tokens], Mode.NL)
    # asymmetric weights: a plain sum of a zero-mean normalized vector has a
    # constant upstream gradient that dies in the last LayerNorm's null space
    weights = torch.arange(1.0, out.shape[-1] + 1.0)
    (out * weights).sum().backward()
    grad = model.fast_trunk.tok_emb.weight.grad
    present = {CLS_ID, *tokens}
    for token_id in range(VOCAB):
        row_nonzero = bool(grad[token_id].abs().sum() > 0)
        if token_id in present:
            assert row_nonzero
        else:
            assert not row_nonzero


def test_gradients_helper_fills_missing_with_zeros():
    model = small_model(seed=15)
    model.eval()
    out = model.embed([(4, 5)], Mode.NL)
    (out * torch.arange(1.0, out.shape[-1] + 1.0)).sum().backward()
    grads = model.gradients()
    assert set(grads) == {n for n, _ in model.named_parameters()}
    # classifier head is off the fast path: zero gradient
    assert torch.equal(grads["head.dense.weight"],
                       torch.zeros_like(model.head.dense.weight))


# ------------------------------------------------------- config


def test_config_validation_errors():
    with pytest.raises(ModelError):
        ModelConfig(vocab_size=VOCAB, hidden_dim=10, num_heads=4).validate()
    with pytest.raises(ModelError):
        ModelConfig(vocab_size=VOCAB, temperature=0.0).validate()
    with pytest.raises(ModelError):
        ModelConfig(vocab_size=3).validate()


def test_config_hash_tracks_fields():
    a = tiny_model_config(VOCAB)
    b = tiny_model_config(VOCAB)
    c = tiny_model_config(VOCAB, hidden_dim=32)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_max_positions_derived():
    cfg = tiny_model_config(VOCAB)
    assert cfg.max_positions >= cfg.padded_len(Mode.NL)
    assert cfg.max_positions >= cfg.padded_len(Mode.PL)
    assert cfg.max_positions >= cfg.max_pair_len


# ------------------------------------------------------- persistence


def test_save_load_round_trip_bit_exact(tmp_path):
    model = small_model(variant="shared", seed=16)
    path = tmp_path / "model.bin"
    model.save(path)
    loaded = SearchModel.load(path)
    for (name, a), (name2, b) in zip(
        sorted(model.state_dict().items()), sorted(loaded.state_dict().items())
    ):
        assert name == name2
        assert torch.equal(a, b)
    nl, pl = (4, 5, 6), (7, 8)
    assert torch.equal(model.encode(nl, Mode.NL), loaded.encode(nl, Mode.NL))
    assert model.classify(nl, pl) == loaded.classify(nl, pl)


def test_save_load_separate_variant(tmp_path):
    model = small_model(variant="separate", seed=17)
    path = tmp_path / "model.bin"
    model.save(path)
    loaded = SearchModel.load(path)
    assert loaded.variant == "separate"
    assert loaded.classify((4,), (5,)) == model.classify((4,), (5,))


def test_load_truncated_file_fails(tmp_path):
    model = small_model(seed=18)
    path = tmp_path / "model.bin"
    model.save(path)
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(ModelFormatError, match="truncated"):
        SearchModel.load(path)


def test_load_wrong_magic_names_format(tmp_path):
    model = small_model(seed=19)
    path = tmp_path / "model.bin"
    model.save(path)
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(ModelFormatError, match="CSMD"):
        SearchModel.load(path)


def test_load_config_hash_mismatch_names_both_hashes(tmp_path):
    model = small_model(seed=20)
    path = tmp_path / "model.bin"
    model.save(path)
    data = bytearray(path.read_bytes())
    # flip one byte inside the JSON header so the stored hash stops matching
    header_start = 4 + 4 + 4
    idx = data.index(b'"variant"', header_start)
    data[idx + 1] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(ModelFormatError, match="stored .* != computed"):
        SearchModel.load(path)


def test_load_trailing_bytes_rejected(tmp_path):
    model = small_model(seed=21)
    path = tmp_path / "model.bin"
    model.save(path)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ModelFormatError, match="trailing"):
        SearchModel.load(path)
