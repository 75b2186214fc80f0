"""Offline enrichment and the dense retrieval index.

Enrichment asks the generation backend for a one-paragraph purpose per table,
then composes the text that gets embedded: table name, purpose (omitted when
the generator declined), and a Markdown sample of the contents. The dense
index is an exact cosine scan over those embeddings, persisted to ``.npz``
together with the backend id so a stale index cannot be queried silently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .corpus import DEFAULT_SAMPLE_ROWS, DEFAULT_SEED, Table, markdown_grid, sample_rows, serialize_markdown
from .errors import BackendMismatchError, CorpusError
from .services import Embedder, GenerationRequest, Generator, TokenLedger, cosine

PURPOSE_PROMPT = (
    "Given the following table, describe the purpose of this table in "
    "layman's terms in one paragraph. If you do not think the text is "
    "semantically meaningful, output None.\n{table}"
)
PURPOSE_MAX_TOKENS = 256
PURPOSE_STAGE = "purpose"

ENRICHMENT_FORMAT_VERSION = 1


def generate_purpose(
    table: Table,
    generator: Generator,
    *,
    seed: int = DEFAULT_SEED,
    n_rows: int = DEFAULT_SAMPLE_ROWS,
    max_tokens: int = PURPOSE_MAX_TOKENS,
    ledger: TokenLedger | None = None,
) -> str:
    """Ask the generator for the table's purpose; '' when it answers None.

    The prompt embeds the Markdown serialization of a deterministic row
    sample, so repeated calls for the same table send identical bytes.
    """
    sample = sample_rows(table, n=n_rows, seed=seed)
    rendered = serialize_markdown(table, sample)
    prompt = PURPOSE_PROMPT.replace("{table}", rendered)
    response = generator.generate(
        GenerationRequest(prompt=prompt, max_tokens=max_tokens, temperature=0.0)
    )
    if ledger is not None:
        ledger.record(PURPOSE_STAGE, response.input_tokens, response.output_tokens)
    purpose = response.text.strip()
    return "" if purpose == "None" else purpose


def enriched_text(table: Table, purpose: str, sample: tuple[int, ...]) -> str:
    """Compose the text that represents a table in the dense index.

    Three labeled sections: name, purpose (omitted when empty), content. The
    content is the sampled Markdown grid without a repeated name line.
    """
    grid = markdown_grid(table, sample)
    lines = [f"Table name: {table.name}"]
    if purpose:
        lines.append(f"Table purpose: {purpose}")
    lines.append(f"Table content: {grid}")
    return "\n".join(lines)


@dataclass(frozen=True)
class EnrichedTable:
    table_id: str
    purpose: str
    text: str


class EnrichmentStore:
    """Persisted table-id -> enriched-record map; makes enrichment resumable."""

    def __init__(self, path: str | Path | None = None):
        self._path = Path(path) if path is not None else None
        self._entries: dict[str, EnrichedTable] = {}
        if self._path is not None and self._path.exists():
            self._load(self._path)

    def _load(self, path: Path) -> None:
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorpusError(f"cannot read enrichment store {path}: {exc}") from exc
        for table_id, record in data.get("entries", {}).items():
            self._entries[table_id] = EnrichedTable(
                table_id=table_id,
                purpose=record["purpose"],
                text=record["text"],
            )

    def save(self) -> None:
        if self._path is None:
            return
        payload = {
            "version": ENRICHMENT_FORMAT_VERSION,
            "entries": {
                e.table_id: {"purpose": e.purpose, "text": e.text}
                for e in self._entries.values()
            },
        }
        self._path.write_text(
            json.dumps(payload, sort_keys=True, ensure_ascii=False), encoding="utf-8"
        )

    def __contains__(self, table_id: str) -> bool:
        return table_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, table_id: str) -> EnrichedTable:
        return self._entries[table_id]

    def put(self, record: EnrichedTable) -> None:
        self._entries[record.table_id] = record

    def ids(self) -> list[str]:
        return sorted(self._entries)

    def texts(self) -> dict[str, str]:
        return {e.table_id: e.text for e in self._entries.values()}


def enrich_tables(
    tables: Iterable[Table],
    generator: Generator,
    *,
    store: EnrichmentStore | None = None,
    seed: int = DEFAULT_SEED,
    n_rows: int = DEFAULT_SAMPLE_ROWS,
    max_tokens: int = PURPOSE_MAX_TOKENS,
    ledger: TokenLedger | None = None,
) -> EnrichmentStore:
    """Enrich every table not already present in the store.

    Tables are processed in sorted-id order so generator call order (and any
    scripted backend) is reproducible. Returns the store, saving it after
    each new record when it is file-backed.
    """
    if store is None:
        store = EnrichmentStore()
    for table in sorted(tables, key=lambda t: t.id):
        if table.id in store:
            continue
        purpose = generate_purpose(
            table,
            generator,
            seed=seed,
            n_rows=n_rows,
            max_tokens=max_tokens,
            ledger=ledger,
        )
        sample = sample_rows(table, n=n_rows, seed=seed)
        store.put(
            EnrichedTable(
                table_id=table.id,
                purpose=purpose,
                text=enriched_text(table, purpose, sample),
            )
        )
        store.save()
    return store


class DenseIndex:
    """Exact cosine-similarity index over per-table embedding vectors.

    Rows are stored in sorted table-id order. Queries return the top ``k``
    pairs ordered by descending score with ties broken by ascending id, so
    results are stable across runs and across save/load round trips.
    """

    INDEX_FORMAT_VERSION = 1

    def __init__(self, ids: list[str], vectors: np.ndarray, backend_id: str):
        if len(ids) != vectors.shape[0]:
            raise ValueError("one vector per table id required")
        if len(set(ids)) != len(ids):
            raise ValueError("table ids must be unique")
        order = sorted(range(len(ids)), key=lambda i: ids[i])
        self.ids: tuple[str, ...] = tuple(str(ids[i]) for i in order)
        self.vectors: np.ndarray = np.asarray(vectors, dtype=np.float64)[order]
        self.backend_id = backend_id

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    @classmethod
    def build(cls, texts: Mapping[str, str], embedder: Embedder) -> "DenseIndex":
        """Embed each table text (in sorted-id order) into an index."""
        if not texts:
            return cls(ids=[], vectors=np.zeros((0, 0)), backend_id=embedder.backend_id)
        ids = sorted(texts)
        vectors = np.stack([np.asarray(embedder.embed(texts[i]), dtype=np.float64) for i in ids])
        return cls(ids=ids, vectors=vectors, backend_id=embedder.backend_id)

    def search(self, query_vector: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Top-k (table_id, cosine) pairs; k is clipped to the index size.

        The scan scores each row with the scalar ``cosine`` helper rather
        than one matrix product: accumulation order then matches any
        row-by-row reimplementation bit for bit, so rankings are exactly
        reproducible. Ties break by ascending table id.
        """
        if k <= 0:
            raise ValueError("k must be positive")
        if len(self.ids) == 0:
            return []
        q = np.asarray(query_vector, dtype=np.float64)
        if q.shape != (self.dimension,):
            raise ValueError(
                f"query vector has shape {q.shape}, index dimension is {self.dimension}"
            )
        scores = [cosine(row, q) for row in self.vectors]
        order = sorted(range(len(scores)), key=lambda i: (-scores[i], self.ids[i]))
        return [(self.ids[i], scores[i]) for i in order[:k]]

    def save(self, path: str | Path) -> None:
        meta = json.dumps(
            {
                "version": self.INDEX_FORMAT_VERSION,
                "backend_id": self.backend_id,
                "dimension": self.dimension,
            },
            sort_keys=True,
        )
        np.savez(
            Path(path),
            ids=np.asarray(self.ids),
            vectors=self.vectors,
            meta=np.asarray(meta),
        )

    @classmethod
    def load(cls, path: str | Path, expected_backend_id: str | None = None) -> "DenseIndex":
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            ids = [str(i) for i in data["ids"]]
            vectors = np.asarray(data["vectors"], dtype=np.float64)
        backend_id = meta.get("backend_id", "")
        if expected_backend_id is not None and backend_id != expected_backend_id:
            raise BackendMismatchError(
                f"index {path} was built with backend {backend_id!r}, "
                f"configured {expected_backend_id!r}"
            )
        return cls(ids=ids, vectors=vectors, backend_id=backend_id)
