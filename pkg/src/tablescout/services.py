"""Clients for the two model services (embedding, generation) plus offline stubs.

The HTTP clients speak a small JSON protocol (documented in the README) with
bounded retries. The stubs are deterministic and network-free: the hashing
embedder maps character n-grams to a fixed-dimension unit vector, and the
scripted generator replays canned responses with exact token accounting.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import BackendError, BackendMismatchError

logger = logging.getLogger(__name__)

DEFAULT_STUB_DIMENSION = 256
DEFAULT_RETRIES = 3
DEFAULT_BACKOFF_SECONDS = 1.0


# ---------------------------------------------------------------------------
# Vector helpers
# ---------------------------------------------------------------------------


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


class Embedder(Protocol):
    backend_id: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class Generator(Protocol):
    def generate(self, request: "GenerationRequest") -> "GenerationResponse": ...


# ---------------------------------------------------------------------------
# Deterministic stub embedder
# ---------------------------------------------------------------------------


class HashingEmbedder:
    """Deterministic embedding from hashed character trigrams, L2-normalized.

    Texts sharing n-grams land in shared hash buckets, so lexically similar
    strings score higher cosine than disjoint ones. Pure function of the
    input; safe for concurrent use.
    """

    def __init__(self, dimension: int = DEFAULT_STUB_DIMENSION, ngram: int = 3):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        if ngram <= 0:
            raise ValueError("ngram must be positive")
        self.dimension = dimension
        self.ngram = ngram
        self.backend_id = f"stub-ngram{ngram}-d{dimension}"

    def embed(self, text: str) -> np.ndarray:
        if text == "":
            raise ValueError("cannot embed an empty string")
        padded = f" {text.casefold()} "
        vec = np.zeros(self.dimension, dtype=np.float64)
        n = self.ngram
        grams = [padded[i : i + n] for i in range(max(1, len(padded) - n + 1))]
        for gram in grams:
            digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
            h = int.from_bytes(digest, "big")
            sign = 1.0 if h & 1 else -1.0
            vec[(h >> 1) % self.dimension] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return vec / norm


def stub_embedder(text: str, dimension: int = DEFAULT_STUB_DIMENSION) -> np.ndarray:
    """One-shot convenience wrapper around :class:`HashingEmbedder`."""
    return HashingEmbedder(dimension=dimension).embed(text)


# ---------------------------------------------------------------------------
# Persistent embedding cache
# ---------------------------------------------------------------------------

_CACHE_FORMAT_VERSION = 1


class CachingEmbedder:
    """Wrap an embedder with an in-memory cache that can persist to JSON.

    Cache entries are keyed by the hash of the input text and are only valid
    for the backend that produced them; loading a cache written under a
    different backend id is refused. ``backend_calls`` counts actual backend
    invocations, which makes resumability measurable in tests.
    """

    def __init__(self, backend: Embedder, path: str | Path | None = None):
        self._backend = backend
        self._path = Path(path) if path is not None else None
        self._entries: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self.backend_calls = 0
        if self._path is not None and self._path.exists():
            self._load(self._path)

    @property
    def backend_id(self) -> str:
        return self._backend.backend_id

    @property
    def dimension(self) -> int:
        return self._backend.dimension

    @staticmethod
    def _key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def _load(self, path: Path) -> None:
        data = json.loads(path.read_text(encoding="utf-8"))
        if data.get("backend_id") != self._backend.backend_id:
            raise BackendMismatchError(
                f"embedding cache {path} was built with backend "
                f"{data.get('backend_id')!r}, configured {self._backend.backend_id!r}"
            )
        self._entries = {
            key: np.asarray(vec, dtype=np.float64)
            for key, vec in data.get("entries", {}).items()
        }

    def save(self) -> None:
        if self._path is None:
            return
        payload = {
            "version": _CACHE_FORMAT_VERSION,
            "backend_id": self._backend.backend_id,
            "dimension": self._backend.dimension,
            "entries": {k: v.tolist() for k, v in self._entries.items()},
        }
        self._path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    def embed(self, text: str) -> np.ndarray:
        key = self._key(text)
        with self._lock:
            hit = self._entries.get(key)
        if hit is not None:
            return hit
        vec = self._backend.embed(text)
        if len(vec) != self._backend.dimension:
            raise BackendError(
                f"backend returned dimension {len(vec)}, expected {self._backend.dimension}"
            )
        with self._lock:
            self._entries[key] = vec
            self.backend_calls += 1
        return vec


# ---------------------------------------------------------------------------
# Generation contracts and stubs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_tokens: int = 1024
    temperature: float = 0.0


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    input_tokens: int
    output_tokens: int


def _count_tokens(text: str) -> int:
    return len(text.split())


class ScriptedGenerator:
    """Replay canned responses in call order; the offline test backend.

    ``responses`` may contain plain strings or the :data:`FAIL` sentinel,
    which makes that call raise :class:`BackendError`. Alternatively pass
    ``reply``, a callable mapping the prompt to a response string. Prompts are
    recorded in ``calls``.
    """

    FAIL = object()

    def __init__(
        self,
        responses: list[object] | None = None,
        reply: Callable[[str], str] | None = None,
    ):
        if (responses is None) == (reply is None):
            raise ValueError("provide exactly one of responses or reply")
        self._responses = list(responses) if responses is not None else None
        self._reply = reply
        self._cursor = 0
        self.calls: list[str] = []

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        if request.prompt == "":
            raise ValueError("cannot generate from an empty prompt")
        self.calls.append(request.prompt)
        if self._reply is not None:
            text = self._reply(request.prompt)
        else:
            if self._cursor >= len(self._responses):
                raise BackendError("scripted generator exhausted")
            slot = self._responses[self._cursor]
            self._cursor += 1
            if slot is ScriptedGenerator.FAIL:
                raise BackendError("scripted generator failure")
            text = str(slot)
        return GenerationResponse(
            text=text,
            input_tokens=_count_tokens(request.prompt),
            output_tokens=_count_tokens(text),
        )


# ---------------------------------------------------------------------------
# Token ledger
# ---------------------------------------------------------------------------


class TokenLedger:
    """Thread-safe per-stage token accounting."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._stages: dict[str, list[int]] = {}

    def record(self, stage: str, input_tokens: int, output_tokens: int) -> None:
        if input_tokens < 0 or output_tokens < 0:
            raise ValueError("token counts must be nonnegative")
        with self._lock:
            bucket = self._stages.setdefault(stage, [0, 0])
            bucket[0] += input_tokens
            bucket[1] += output_tokens

    @property
    def input_tokens(self) -> int:
        with self._lock:
            return sum(b[0] for b in self._stages.values())

    @property
    def output_tokens(self) -> int:
        with self._lock:
            return sum(b[1] for b in self._stages.values())

    def stage_totals(self) -> dict[str, tuple[int, int]]:
        with self._lock:
            return {stage: (b[0], b[1]) for stage, b in self._stages.items()}


# ---------------------------------------------------------------------------
# HTTP clients
# ---------------------------------------------------------------------------

#: transport(url, payload, headers, timeout) -> (status_code, parsed_json)
Transport = Callable[[str, dict, dict, float], tuple[int, dict]]


def _requests_transport(url: str, payload: dict, headers: dict, timeout: float) -> tuple[int, dict]:
    import requests

    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except requests.RequestException as exc:
        raise ConnectionError(str(exc)) from exc
    try:
        body = resp.json()
    except ValueError:
        body = {}
    return resp.status_code, body


class _HttpClient:
    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key_env: str = "TABLESCOUT_API_KEY",
        timeout: float = 60.0,
        retries: int = DEFAULT_RETRIES,
        backoff: float = DEFAULT_BACKOFF_SECONDS,
        sleep: Callable[[float], None] = time.sleep,
        transport: Transport | None = None,
        log_bodies: bool = False,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self._api_key_env = api_key_env
        self._timeout = timeout
        self._retries = max(1, retries)
        self._backoff = backoff
        self._sleep = sleep
        self._transport = transport or _requests_transport
        self._log_bodies = log_bodies

    def _headers(self) -> dict:
        import os

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self._api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.base_url}{path}"
        prompt_hash = hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode("utf-8")
        ).hexdigest()[:12]
        if self._log_bodies:
            logger.debug("POST %s payload=%s", url, payload)
        else:
            logger.debug("POST %s payload-hash=%s", url, prompt_hash)
        last_error: str = "no attempts made"
        for attempt in range(self._retries):
            if attempt > 0:
                self._sleep(self._backoff * (2 ** (attempt - 1)))
            try:
                status, body = self._transport(url, payload, self._headers(), self._timeout)
            except (ConnectionError, TimeoutError) as exc:
                last_error = f"transport failure: {exc}"
                continue
            if 200 <= status < 300:
                if self._log_bodies:
                    logger.debug("reply %s body=%s", url, body)
                else:
                    logger.debug("reply %s status=%d", url, status)
                return body
            if status >= 500 or status == 429:
                last_error = f"server status {status}"
                continue
            raise BackendError(f"{url} returned status {status}")
        raise BackendError(f"{url} failed after {self._retries} attempts: {last_error}")


class HttpEmbeddingClient(_HttpClient):
    """Text-embedding service client.

    POSTs ``{"model", "input"}`` to ``{base_url}/v1/embeddings`` and expects
    ``{"embedding": [...]}``. The first reply fixes the dimension unless one
    was configured; later mismatches raise :class:`BackendError`.
    """

    def __init__(self, base_url: str, model: str, dimension: int | None = None, **kwargs):
        super().__init__(base_url, model, **kwargs)
        self._dimension = dimension
        self.backend_id = f"http:{model}"

    @property
    def dimension(self) -> int:
        if self._dimension is None:
            raise BackendError("embedding dimension unknown before the first call")
        return self._dimension

    def embed(self, text: str) -> np.ndarray:
        if text == "":
            raise ValueError("cannot embed an empty string")
        body = self._post("/v1/embeddings", {"model": self.model, "input": text})
        values = body.get("embedding")
        if not isinstance(values, list) or not values:
            raise BackendError("malformed embedding reply: missing 'embedding'")
        vec = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(vec)):
            raise BackendError("embedding reply contains non-finite components")
        if self._dimension is None:
            self._dimension = len(vec)
        elif len(vec) != self._dimension:
            raise BackendError(
                f"embedding dimension {len(vec)} does not match configured {self._dimension}"
            )
        return vec


class HttpGenerationClient(_HttpClient):
    """Text-generation service client.

    POSTs ``{"model", "prompt", "max_tokens", "temperature"}`` to
    ``{base_url}/v1/generate`` and expects ``{"text", "input_tokens",
    "output_tokens"}``. Failures after the configured retries surface as
    :class:`BackendError`, never as silently empty text.
    """

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        if request.prompt == "":
            raise ValueError("cannot generate from an empty prompt")
        body = self._post(
            "/v1/generate",
            {
                "model": self.model,
                "prompt": request.prompt,
                "max_tokens": request.max_tokens,
                "temperature": request.temperature,
            },
        )
        try:
            return GenerationResponse(
                text=str(body["text"]),
                input_tokens=int(body["input_tokens"]),
                output_tokens=int(body["output_tokens"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed generation reply: {exc}") from exc
