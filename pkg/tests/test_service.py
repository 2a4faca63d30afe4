"""HTTP API contract: status codes, payload shapes, CLI parity."""

from __future__ import annotations

import re

import pytest
from fastapi.testclient import TestClient

from codesearch import (
    CandidateStore,
    SearchModel,
    Tokenizer,
    build_index,
)
from codesearch.corpus import TokenizationError
from codesearch.service import create_app, make_state

from conftest import MICRO_TOK_CFG, tiny_model_config


@pytest.fixture(scope="module")
def stack(micro_dataset):
    ds, vocab, tok_cfg = micro_dataset
    model = SearchModel(tiny_model_config(len(vocab)), variant="shared", seed=0)
    index = build_index(model, ds.candidates, batch_size=32)
    store = CandidateStore.from_pairs(ds.candidates)
    tokenizer = Tokenizer(vocab, tok_cfg)
    return model, index, store, tokenizer, ds


@pytest.fixture(scope="module")
def client(stack):
    model, index, store, tokenizer, _ = stack
    state = make_state(model, index, store, tokenizer, default_k=10)
    return TestClient(create_app(state))


@pytest.fixture()
def unready_client():
    return TestClient(create_app(None))


def _search(client, **body):
    body.setdefault("query", "find the maximum value")
    return client.post("/api/search", json=body)


# ----------------------------------------------------------------- health


def test_health_is_ok_when_ready(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.text == "ok"


def test_health_is_ok_even_without_state(unready_client):
    resp = unready_client.get("/health")
    assert resp.status_code == 200
    assert resp.text == "ok"


# ----------------------------------------------------------------- meta


def test_meta_shape(client, stack):
    _, index, _, _, _ = stack
    resp = client.get("/api/meta")
    assert resp.status_code == 200
    payload = resp.json()
    assert payload["index_size"] == len(index)
    assert payload["default_k"] == 10
    assert payload["uptime_seconds"] >= 0
    assert payload["model_config"]["hidden_dim"] == 16
    assert payload["model_config"]["variant"] == "shared"


def test_meta_is_stable_across_calls(client):
    a = client.get("/api/meta").json()
    b = client.get("/api/meta").json()
    a.pop("uptime_seconds")
    b.pop("uptime_seconds")
    assert a == b


def test_meta_unready_gives_503(unready_client):
    resp = unready_client.get("/api/meta")
    assert resp.status_code == 503
    assert "not ready" in resp.json()["error"]


# ----------------------------------------------------------------- search 4xx/5xx


def test_search_unready_gives_503(unready_client):
    resp = unready_client.post("/api/search", json={"query": "x"})
    assert resp.status_code == 503


def test_search_rejects_unknown_mode(client):
    resp = _search(client, mode="turbo")
    assert resp.status_code == 400
    assert "mode" in resp.json()["error"]


@pytest.mark.parametrize("bad_k", [0, -3, 101, 500])
def test_search_rejects_out_of_range_k_results(client, bad_k):
    resp = _search(client, k_results=bad_k)
    assert resp.status_code == 400
    assert "k_results" in resp.json()["error"]


def test_search_rejects_blank_query(client):
    resp = _search(client, query="   ")
    assert resp.status_code == 400
    assert "empty" in resp.json()["error"]


def test_search_rejects_missing_query_field(client):
    resp = client.post("/api/search", json={"mode": "fast"})
    assert resp.status_code == 400
    assert "invalid request" in resp.json()["error"]


def test_search_rejects_bad_k_rerank(client):
    resp = _search(client, k_rerank=0)
    assert resp.status_code == 400


def test_search_rejects_wrong_types(client):
    resp = _search(client, k_results="plenty")
    assert resp.status_code == 400


def test_non_fast_mode_needs_classifier(micro_dataset):
    ds, vocab, tok_cfg = micro_dataset
    model = SearchModel(tiny_model_config(len(vocab)), variant="fast_only", seed=0)
    index = build_index(model, ds.candidates, batch_size=32)
    state = make_state(model, index, CandidateStore.from_pairs(ds.candidates),
                       Tokenizer(vocab, tok_cfg))
    local = TestClient(create_app(state))
    for mode in ("cascade", "slow"):
        resp = local.post("/api/search", json={"query": "x y", "mode": mode})
        assert resp.status_code == 400
        assert "classifier" in resp.json()["error"]
    assert local.post("/api/search",
                      json={"query": "x y", "mode": "fast"}).status_code == 200


def test_tokenizer_failure_maps_to_400(stack):
    model, index, store, _, _ = stack

    class ExplodingTokenizer:
        def tokenize(self, text, mode):
            raise TokenizationError("boom")

    state = make_state(model, index, store, ExplodingTokenizer())
    local = TestClient(create_app(state))
    resp = local.post("/api/search", json={"query": "anything"})
    assert resp.status_code == 400
    assert "tokenization failed" in resp.json()["error"]


# ----------------------------------------------------------------- search 200


def test_fast_search_payload(client, stack):
    _, index, _, _, _ = stack
    resp = _search(client, mode="fast", k_results=5)
    assert resp.status_code == 200
    payload = resp.json()
    assert payload["mode"] == "fast"
    assert payload["pool_size"] == len(index)
    assert set(payload["timings"]) == {"encode_ms", "lookup_ms", "rerank_ms"}
    results = payload["results"]
    assert len(results) == 5
    assert [r["rank"] for r in results] == [1, 2, 3, 4, 5]
    scores = [r["fast_score"] for r in results]
    assert scores == sorted(scores, reverse=True)
    assert all("rerank_score" not in r for r in results)
    assert all({"id", "docstring", "code"} <= set(r) for r in results)


def test_cascade_block_structure(client):
    resp = _search(client, mode="cascade", k_rerank=4, k_results=8)
    assert resp.status_code == 200
    payload = resp.json()
    assert payload["k_rerank"] == 4
    results = payload["results"]
    assert len(results) == 8
    assert all("rerank_score" in r for r in results[:4])
    assert all("rerank_score" not in r for r in results[4:])
    block = [r["rerank_score"] for r in results[:4]]
    assert block == sorted(block, reverse=True)
    tail_fast = [r["fast_score"] for r in results[4:]]
    assert tail_fast == sorted(tail_fast, reverse=True)


def test_cascade_uses_default_k_when_unset(client):
    payload = _search(client, mode="cascade", k_results=12).json()
    assert payload["k_rerank"] == 10
    assert sum("rerank_score" in r for r in payload["results"]) == 10


def test_slow_search_has_probabilities_only(client):
    payload = _search(client, mode="slow", k_results=6).json()
    results = payload["results"]
    assert len(results) == 6
    assert all(r["fast_score"] is None for r in results)
    probs = [r["rerank_score"] for r in results]
    assert probs == sorted(probs, reverse=True)
    assert all(0.0 < p < 1.0 for p in probs)


def test_repeated_search_is_identical(client):
    body = {"query": "sort the items ascending", "mode": "cascade",
            "k_rerank": 6, "k_results": 10}
    a = client.post("/api/search", json=body).json()
    b = client.post("/api/search", json=body).json()
    assert a["results"] == b["results"]


def test_k_results_beyond_pool_returns_pool(client, stack):
    _, index, _, _, _ = stack
    assert len(index) < 100  # the micro pool fits under the API cap
    payload = _search(client, mode="fast", k_results=100).json()
    assert len(payload["results"]) == len(index)


# ----------------------------------------------------------------- static UI


def test_static_dir_mount(stack, tmp_path):
    model, index, store, tokenizer, _ = stack
    (tmp_path / "index.html").write_text("<html><body>console</body></html>")
    state = make_state(model, index, store, tokenizer)
    local = TestClient(create_app(state, static_dir=str(tmp_path)))
    page = local.get("/")
    assert page.status_code == 200
    assert "console" in page.text
    assert local.get("/health").text == "ok"
    assert local.post("/api/search", json={"query": "x"}).status_code == 200


# ----------------------------------------------------------------- CLI parity


def test_http_and_cli_agree_on_fast_ranking(stack, micro_dataset, tmp_path, capsys):
    from codesearch import save_index
    from codesearch.cli import main

    model, index, store, tokenizer, ds = stack
    _, vocab, tok_cfg = micro_dataset
    model_path = tmp_path / "model.bin"
    index_path = tmp_path / "index.bin"
    data_path = tmp_path / "dataset.json"
    model.save(model_path)
    save_index(index, index_path)
    ds.save(data_path, vocab, tok_cfg)

    query = "find the maximum value"
    state = make_state(model, index, store, tokenizer)
    http = TestClient(create_app(state))
    api_ids = [
        r["id"]
        for r in http.post(
            "/api/search", json={"query": query, "mode": "fast", "k_results": 5}
        ).json()["results"]
    ]

    assert main([
        "search", "--model", str(model_path), "--index", str(index_path),
        "--corpus", str(data_path), "--query", query, "--mode", "fast",
        "--n-results", "5",
    ]) == 0
    out = capsys.readouterr().out
    cli_ids = [
        line.split()[1]
        for line in out.splitlines()
        if re.match(r"\s*\d+\s", line)
    ]
    assert cli_ids == api_ids
