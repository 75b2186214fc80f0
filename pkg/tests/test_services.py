"""Embedding/generation backends, stubs, caching, and token accounting."""

from __future__ import annotations

import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tablescout import (
    BackendError,
    BackendMismatchError,
    CachingEmbedder,
    GenerationRequest,
    HashingEmbedder,
    HttpEmbeddingClient,
    HttpGenerationClient,
    ScriptedGenerator,
    TokenLedger,
    cosine,
)
from tablescout.services import stub_embedder


# ---------------------------------------------------------------------------
# Stub embedder
# ---------------------------------------------------------------------------


class TestHashingEmbedder:
    def test_identical_input_identical_vector(self):
        e = HashingEmbedder()
        assert np.array_equal(e.embed("abc"), e.embed("abc"))

    def test_unit_norm(self):
        e = HashingEmbedder()
        for text in ("abc", "a longer sentence about tables", "x"):
            assert abs(np.linalg.norm(e.embed(text)) - 1.0) < 1e-9

    def test_empty_string_rejected(self):
        with pytest.raises(ValueError):
            HashingEmbedder().embed("")

    def test_identity_cosine(self):
        e = HashingEmbedder()
        assert cosine(e.embed("buildings"), e.embed("buildings")) == pytest.approx(1.0)

    def test_shared_ngrams_score_higher_than_disjoint(self):
        e = HashingEmbedder()
        a = e.embed("building museum")
        b = e.embed("museum building")
        c = e.embed("tax rates")
        assert cosine(a, b) > cosine(a, c)

    def test_dimension_controls_output_length(self):
        assert len(HashingEmbedder(dimension=64).embed("abc")) == 64

    def test_rejects_bad_dimension(self):
        with pytest.raises(ValueError):
            HashingEmbedder(dimension=0)

    def test_one_shot_helper_matches_class(self):
        assert np.array_equal(stub_embedder("abc", 64), HashingEmbedder(64).embed("abc"))

    def test_backend_id_names_configuration(self):
        assert HashingEmbedder(dimension=128).backend_id != HashingEmbedder(dimension=64).backend_id

    @given(st.text(min_size=1, max_size=40), st.text(min_size=1, max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_cosine_symmetric_and_bounded(self, a, b):
        e = HashingEmbedder(dimension=32)
        va, vb = e.embed(a), e.embed(b)
        assert cosine(va, vb) == pytest.approx(cosine(vb, va))
        assert -1.0 - 1e-9 <= cosine(va, vb) <= 1.0 + 1e-9


class TestCosine:
    def test_zero_vector_scores_zero(self):
        assert cosine(np.zeros(4), np.ones(4)) == 0.0

    def test_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.0)


# ---------------------------------------------------------------------------
# Scripted generator and token ledger
# ---------------------------------------------------------------------------


class TestScriptedGenerator:
    def test_replays_responses_with_token_counts(self):
        gen = ScriptedGenerator(responses=['{"ok": true}'])
        resp = gen.generate(GenerationRequest(prompt="one two three"))
        assert resp.text == '{"ok": true}'
        assert resp.input_tokens == 3
        assert resp.output_tokens == 2
        assert gen.calls == ["one two three"]

    def test_exhaustion_is_a_backend_error(self):
        gen = ScriptedGenerator(responses=[])
        with pytest.raises(BackendError):
            gen.generate(GenerationRequest(prompt="p"))

    def test_fail_sentinel_raises(self):
        gen = ScriptedGenerator(responses=[ScriptedGenerator.FAIL, "ok"])
        with pytest.raises(BackendError):
            gen.generate(GenerationRequest(prompt="p"))
        assert gen.generate(GenerationRequest(prompt="p")).text == "ok"

    def test_reply_callable_mode(self):
        gen = ScriptedGenerator(reply=lambda prompt: prompt.upper())
        assert gen.generate(GenerationRequest(prompt="abc")).text == "ABC"

    def test_empty_prompt_rejected(self):
        with pytest.raises(ValueError):
            ScriptedGenerator(responses=["x"]).generate(GenerationRequest(prompt=""))

    def test_requires_exactly_one_mode(self):
        with pytest.raises(ValueError):
            ScriptedGenerator()
        with pytest.raises(ValueError):
            ScriptedGenerator(responses=["x"], reply=lambda p: p)


class TestTokenLedger:
    def test_two_calls_accumulate(self):
        ledger = TokenLedger()
        ledger.record("selection", 10, 2)
        ledger.record("selection", 5, 1)
        assert ledger.input_tokens == 15
        assert ledger.output_tokens == 3
        assert ledger.stage_totals() == {"selection": (15, 3)}

    def test_stages_tracked_separately(self):
        ledger = TokenLedger()
        ledger.record("purpose", 7, 3)
        ledger.record("sql", 1, 1)
        totals = ledger.stage_totals()
        assert totals["purpose"] == (7, 3)
        assert totals["sql"] == (1, 1)
        assert ledger.input_tokens == 8

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            TokenLedger().record("s", -1, 0)

    def test_concurrent_recording_is_exact(self):
        ledger = TokenLedger()

        def work():
            for _ in range(500):
                ledger.record("selection", 1, 2)

        threads = [threading.Thread(target=work) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert ledger.input_tokens == 4000
        assert ledger.output_tokens == 8000

    def test_monotone_totals(self):
        ledger = TokenLedger()
        seen = []
        for _ in range(5):
            ledger.record("s", 3, 4)
            seen.append((ledger.input_tokens, ledger.output_tokens))
        assert seen == sorted(seen)


# ---------------------------------------------------------------------------
# HTTP clients with injected transport
# ---------------------------------------------------------------------------


def make_transport(script):
    """script: list of (status, body) or Exception instances, consumed in order."""
    calls = []

    def transport(url, payload, headers, timeout):
        calls.append({"url": url, "payload": payload, "headers": headers})
        step = script.pop(0)
        if isinstance(step, Exception):
            raise step
        return step

    return transport, calls


class TestHttpEmbeddingClient:
    def test_success_path(self):
        transport, calls = make_transport([(200, {"embedding": [1.0, 0.0]})])
        client = HttpEmbeddingClient("http://svc", "m1", transport=transport, sleep=lambda s: None)
        vec = client.embed("hello")
        assert list(vec) == [1.0, 0.0]
        assert client.dimension == 2
        assert calls[0]["url"] == "http://svc/v1/embeddings"
        assert calls[0]["payload"] == {"model": "m1", "input": "hello"}

    def test_retries_transient_failures_with_backoff(self):
        transport, _ = make_transport(
            [ConnectionError("down"), (503, {}), (200, {"embedding": [1.0]})]
        )
        sleeps = []
        client = HttpEmbeddingClient(
            "http://svc", "m", transport=transport, sleep=sleeps.append
        )
        assert list(client.embed("x")) == [1.0]
        assert sleeps == [1.0, 2.0]

    def test_gives_up_after_three_attempts(self):
        transport, calls = make_transport([(500, {})] * 5)
        client = HttpEmbeddingClient("http://svc", "m", transport=transport, sleep=lambda s: None)
        with pytest.raises(BackendError, match="after 3 attempts"):
            client.embed("x")
        assert len(calls) == 3

    def test_client_errors_fail_immediately(self):
        transport, calls = make_transport([(401, {})])
        client = HttpEmbeddingClient("http://svc", "m", transport=transport, sleep=lambda s: None)
        with pytest.raises(BackendError, match="401"):
            client.embed("x")
        assert len(calls) == 1

    def test_dimension_mismatch_detected(self):
        transport, _ = make_transport(
            [(200, {"embedding": [1.0, 2.0]}), (200, {"embedding": [1.0]})]
        )
        client = HttpEmbeddingClient("http://svc", "m", transport=transport, sleep=lambda s: None)
        client.embed("a")
        with pytest.raises(BackendError, match="dimension"):
            client.embed("b")

    def test_malformed_reply_rejected(self):
        transport, _ = make_transport([(200, {"not_embedding": []})])
        client = HttpEmbeddingClient("http://svc", "m", transport=transport, sleep=lambda s: None)
        with pytest.raises(BackendError, match="malformed"):
            client.embed("x")

    def test_api_key_header_from_environment(self, monkeypatch):
        monkeypatch.setenv("TABLESCOUT_API_KEY", "sekrit")
        transport, calls = make_transport([(200, {"embedding": [1.0]})])
        client = HttpEmbeddingClient("http://svc", "m", transport=transport, sleep=lambda s: None)
        client.embed("x")
        assert calls[0]["headers"]["Authorization"] == "Bearer sekrit"


class TestHttpGenerationClient:
    def test_success_path(self):
        transport, calls = make_transport(
            [(200, {"text": "hi", "input_tokens": 4, "output_tokens": 1})]
        )
        client = HttpGenerationClient("http://svc/", "g", transport=transport, sleep=lambda s: None)
        resp = client.generate(GenerationRequest(prompt="p", max_tokens=99, temperature=0.0))
        assert (resp.text, resp.input_tokens, resp.output_tokens) == ("hi", 4, 1)
        assert calls[0]["url"] == "http://svc/v1/generate"
        assert calls[0]["payload"]["max_tokens"] == 99
        assert calls[0]["payload"]["temperature"] == 0.0

    def test_malformed_reply_is_backend_error(self):
        transport, _ = make_transport([(200, {"text": "hi"})])
        client = HttpGenerationClient("http://svc", "g", transport=transport, sleep=lambda s: None)
        with pytest.raises(BackendError, match="malformed"):
            client.generate(GenerationRequest(prompt="p"))

    def test_backend_down_errors_after_retries(self):
        transport, calls = make_transport([ConnectionError("x")] * 3)
        client = HttpGenerationClient("http://svc", "g", transport=transport, sleep=lambda s: None)
        with pytest.raises(BackendError):
            client.generate(GenerationRequest(prompt="p"))
        assert len(calls) == 3

    def test_temperature_defaults_to_zero(self):
        assert GenerationRequest(prompt="p").temperature == 0.0


# ---------------------------------------------------------------------------
# Caching embedder
# ---------------------------------------------------------------------------


class TestCachingEmbedder:
    def test_caches_and_persists(self, tmp_path):
        path = tmp_path / "cache.json"
        backend = HashingEmbedder(dimension=16)
        cached = CachingEmbedder(backend, path)
        v1 = cached.embed("text")
        v2 = cached.embed("text")
        assert np.array_equal(v1, v2)
        assert cached.backend_calls == 1
        cached.save()

        reloaded = CachingEmbedder(HashingEmbedder(dimension=16), path)
        v3 = reloaded.embed("text")
        assert np.array_equal(v1, v3)
        assert reloaded.backend_calls == 0

    def test_backend_mismatch_refused(self, tmp_path):
        path = tmp_path / "cache.json"
        cached = CachingEmbedder(HashingEmbedder(dimension=16), path)
        cached.embed("t")
        cached.save()
        with pytest.raises(BackendMismatchError):
            CachingEmbedder(HashingEmbedder(dimension=32), path)

    def test_passthrough_properties(self):
        backend = HashingEmbedder(dimension=16)
        cached = CachingEmbedder(backend)
        assert cached.dimension == 16
        assert cached.backend_id == backend.backend_id
