"""Online retrieval: dense top-k, one selection call, join-aware restoration.

A query is answered in three stages. Dense retrieval ranks the k most similar
tables by cosine. A single generation call, prompted with the candidates and
their cached compatibility evidence, picks a joinable subset. Restoration
then adds back, for each chosen table, its most compatible unchosen candidate
when that score clears a threshold, so the final set can only gain recall
over the model's choice. Any generation or parsing failure falls back to the
full top-k set rather than guessing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .compatibility import CompatibilityCache
from .errors import BackendError, SelectionParseError
from .indexing import DenseIndex
from .prompts import SELECTION_PROMPT_TEMPLATE
from .services import Embedder, GenerationRequest, Generator, TokenLedger

DEFAULT_TOP_K = 10
DEFAULT_RESTORE_THRESHOLD = 0.3
SELECTION_MAX_TOKENS = 2048
SELECTION_STAGE = "selection"


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Ranked dense-retrieval output: (table_id, cosine) in descending order,
    cosine ties broken by ascending table id."""

    query: str
    query_vector: np.ndarray
    ranked: tuple[tuple[str, float], ...]

    def __len__(self) -> int:
        return len(self.ranked)

    def ids(self) -> tuple[str, ...]:
        return tuple(tid for tid, _ in self.ranked)

    def rs(self, table_id: str) -> float:
        for tid, score in self.ranked:
            if tid == table_id:
                return score
        raise KeyError(f"{table_id!r} is not a candidate")


@dataclass(frozen=True, eq=False)
class SelectionResult:
    """Everything the pipeline decided for one query.

    ``selected`` is the model's choice, ``restored`` what restoration added,
    and ``final`` their union; all three are in candidate rank order and are
    subsets of the candidate ids. When ``fallback_used`` is set, ``final`` is
    the entire candidate list.
    """

    query: str
    candidates: CandidateSet
    selected: tuple[str, ...]
    restored: tuple[str, ...]
    final: tuple[str, ...]
    tau: float
    fallback_used: bool
    groups: tuple[tuple[int, ...], ...]
    selected_group_index: int | None
    input_tokens: int
    output_tokens: int


def retrieve_topk(
    query: str,
    index: DenseIndex,
    embedder: Embedder,
    k: int = DEFAULT_TOP_K,
) -> CandidateSet:
    """Embed the query and rank the k nearest tables (clamped to the index)."""
    vector = np.asarray(embedder.embed(query), dtype=np.float64)
    return CandidateSet(query=query, query_vector=vector, ranked=tuple(index.search(vector, k)))


# ---------------------------------------------------------------------------
# Selection prompt and response parsing
# ---------------------------------------------------------------------------


def build_selection_prompt(
    query: str,
    candidates: CandidateSet,
    cache: CompatibilityCache,
    texts: Mapping[str, str],
    *,
    max_tokens: int = SELECTION_MAX_TOKENS,
) -> GenerationRequest:
    """Instantiate the selection template for one query.

    Candidates appear as ``Table 0`` .. ``Table k-1`` in rank order with
    their enriched text; the compatibility section carries one line per
    candidate pair with a positive cached score, using those same indices.
    """
    blocks = []
    for i, (tid, _) in enumerate(candidates.ranked):
        if tid not in texts:
            raise KeyError(f"no enriched text for candidate table {tid!r}")
        blocks.append(f"Table {i}:\n{texts[tid]}")
    tables_content = "\n" + "\n\n".join(blocks) if blocks else ""

    ids = candidates.ids()
    lines = []
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            cs = cache.score(ids[i], ids[j])
            if cs <= 0.0:
                continue
            col_i, col_j = cache.best_join(ids[i], ids[j])
            lines.append(
                f"Pair (Table {i} <-> Table {j}): "
                f"overall_compatibility: {cs:.2f}; "
                f'best_join_columns: "{col_i} <-> {col_j}"'
            )
    compatibility_analysis = "\n" + "\n".join(lines) if lines else ""

    prompt = SELECTION_PROMPT_TEMPLATE.format(
        query=query,
        tables_content=tables_content,
        compatibility_analysis=compatibility_analysis,
    )
    return GenerationRequest(prompt=prompt, max_tokens=max_tokens, temperature=0.0)


@dataclass(frozen=True)
class ParsedSelection:
    groups: tuple[tuple[int, ...], ...]
    selected_group_index: int
    selected_indices: tuple[int, ...]


def _extract_json_object(text: str, strict: bool) -> dict:
    if strict:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SelectionParseError(f"response is not a JSON document: {exc}") from exc
        if not isinstance(obj, dict):
            raise SelectionParseError("response JSON is not an object")
        return obj
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            return obj
        pos = text.find("{", pos + 1)
    raise SelectionParseError("no JSON object found in response")


def _as_index(value: object, what: str, upper: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SelectionParseError(f"{what} must be an integer, got {value!r}")
    if value < 0 or (upper is not None and value >= upper):
        raise SelectionParseError(f"{what} {value} is out of range")
    return value


def parse_selection(
    response_text: str,
    candidates: CandidateSet,
    *,
    strict: bool = False,
) -> ParsedSelection:
    """Extract the chosen table indices from a selection response.

    By default the first JSON object in the text is used, so code fences and
    surrounding prose are tolerated; ``strict`` requires the response to be
    exactly one JSON document. Any deviation from the expected shape raises
    :class:`SelectionParseError`; callers treat that as the fallback signal.
    Rationale fields are ignored.
    """
    obj = _extract_json_object(response_text, strict)

    formation = obj.get("group_formation", obj)
    groups_raw = formation.get("groups_formed") if isinstance(formation, dict) else None
    if not isinstance(groups_raw, list) or not groups_raw:
        raise SelectionParseError("response lacks a non-empty groups_formed list")

    selection = obj.get("group_selection", obj)
    raw_index = selection.get("selected_group_index") if isinstance(selection, dict) else None
    if raw_index is None:
        raise SelectionParseError("response lacks selected_group_index")
    selected_index = _as_index(raw_index, "selected_group_index")

    by_index: dict[int, tuple[int, ...]] = {}
    ordered: list[tuple[int, ...]] = []
    for group in groups_raw:
        if not isinstance(group, dict):
            raise SelectionParseError(f"group entry is not an object: {group!r}")
        gi = _as_index(group.get("group_index"), "group_index")
        if gi in by_index:
            raise SelectionParseError(f"duplicate group_index {gi}")
        raw_indices = group.get("table_indices")
        if not isinstance(raw_indices, list):
            raise SelectionParseError(f"group {gi} lacks a table_indices list")
        indices = tuple(
            dict.fromkeys(_as_index(v, "table index", upper=len(candidates)) for v in raw_indices)
        )
        by_index[gi] = indices
        ordered.append(indices)

    if selected_index not in by_index:
        raise SelectionParseError(f"selected_group_index {selected_index} names no group")
    return ParsedSelection(
        groups=tuple(ordered),
        selected_group_index=selected_index,
        selected_indices=by_index[selected_index],
    )


# ---------------------------------------------------------------------------
# Restoration
# ---------------------------------------------------------------------------


def adjust(
    selected: tuple[str, ...] | set[str],
    candidates: CandidateSet,
    cache: CompatibilityCache,
    tau: float = DEFAULT_RESTORE_THRESHOLD,
) -> tuple[str, ...]:
    """Restore, per selected table, its best unchosen neighbor at score >= tau.

    One pass over the original selection: restored tables never trigger
    further lookups. Only neighbors with a positive cached score compete;
    argmax ties go to the neighbor with higher retrieval score, then lower
    table id. The result is returned in candidate rank order.
    """
    ids = candidates.ids()
    selected_set = set(selected)
    if not selected_set <= set(ids):
        raise ValueError("selected tables must all be candidates")
    unchosen = [tid for tid in ids if tid not in selected_set]
    restored: set[str] = set()
    for t in (tid for tid in ids if tid in selected_set):
        best_id: str | None = None
        best_cs = 0.0
        # rank order is rs-descending with id tie-break, so the first
        # strict maximum seen is the tie-break winner
        for u in unchosen:
            cs = cache.score(t, u)
            if cs > 0.0 and cs > best_cs:
                best_cs, best_id = cs, u
        if best_id is not None and best_cs >= tau:
            restored.add(best_id)
    return tuple(tid for tid in ids if tid in restored)


# ---------------------------------------------------------------------------
# The pipeline
# ---------------------------------------------------------------------------


class OnlinePipeline:
    """Immutable index/cache plus backends; safe for concurrent queries.

    ``texts`` maps table id to the enriched text shown in selection prompts
    and must cover every table in the index unless ``fallback_only`` is set.
    The ledger, when given, accumulates selection-stage token usage.
    """

    def __init__(
        self,
        index: DenseIndex,
        cache: CompatibilityCache,
        embedder: Embedder,
        generator: Generator | None,
        texts: Mapping[str, str] | None = None,
        *,
        k: int = DEFAULT_TOP_K,
        tau: float = DEFAULT_RESTORE_THRESHOLD,
        ledger: TokenLedger | None = None,
        strict_parse: bool = False,
        fallback_only: bool = False,
        selection_max_tokens: int = SELECTION_MAX_TOKENS,
    ):
        if k <= 0:
            raise ValueError("k must be positive")
        if not fallback_only and generator is None:
            raise ValueError("a generator is required unless fallback_only is set")
        if not fallback_only and texts is None:
            raise ValueError("enriched texts are required unless fallback_only is set")
        self.index = index
        self.cache = cache
        self.embedder = embedder
        self.generator = generator
        self.texts = texts
        self.k = k
        self.tau = tau
        self.ledger = ledger
        self.strict_parse = strict_parse
        self.fallback_only = fallback_only
        self.selection_max_tokens = selection_max_tokens

    def _fallback(self, candidates: CandidateSet, input_tokens: int, output_tokens: int) -> SelectionResult:
        return SelectionResult(
            query=candidates.query,
            candidates=candidates,
            selected=(),
            restored=(),
            final=candidates.ids(),
            tau=self.tau,
            fallback_used=True,
            groups=(),
            selected_group_index=None,
            input_tokens=input_tokens,
            output_tokens=output_tokens,
        )

    def run_query(self, query: str) -> SelectionResult:
        """Run all stages for one query.

        Embedding failures propagate (the query cannot be answered at all);
        generation and parsing failures degrade to the fallback result.
        """
        if len(self.index) == 0:
            empty = CandidateSet(query=query, query_vector=np.zeros(0), ranked=())
            return SelectionResult(
                query=query,
                candidates=empty,
                selected=(),
                restored=(),
                final=(),
                tau=self.tau,
                fallback_used=False,
                groups=(),
                selected_group_index=None,
                input_tokens=0,
                output_tokens=0,
            )
        candidates = retrieve_topk(query, self.index, self.embedder, self.k)
        if self.fallback_only:
            return self._fallback(candidates, 0, 0)

        request = build_selection_prompt(
            query, candidates, self.cache, self.texts, max_tokens=self.selection_max_tokens
        )
        try:
            response = self.generator.generate(request)
        except BackendError:
            return self._fallback(candidates, 0, 0)
        if self.ledger is not None:
            self.ledger.record(SELECTION_STAGE, response.input_tokens, response.output_tokens)

        try:
            parsed = parse_selection(response.text, candidates, strict=self.strict_parse)
        except SelectionParseError:
            return self._fallback(candidates, response.input_tokens, response.output_tokens)

        ids = candidates.ids()
        selected_set = {ids[i] for i in parsed.selected_indices}
        selected = tuple(tid for tid in ids if tid in selected_set)
        restored = adjust(selected, candidates, self.cache, self.tau)
        final_set = selected_set | set(restored)
        final = tuple(tid for tid in ids if tid in final_set)
        return SelectionResult(
            query=query,
            candidates=candidates,
            selected=selected,
            restored=restored,
            final=final,
            tau=self.tau,
            fallback_used=False,
            groups=parsed.groups,
            selected_group_index=parsed.selected_group_index,
            input_tokens=response.input_tokens,
            output_tokens=response.output_tokens,
        )


def result_record(query_id: str, result: SelectionResult) -> dict:
    """The per-query record written to results files (one JSON line each)."""
    return {
        "query_id": query_id,
        "topk": list(result.candidates.ids()),
        "selected": list(result.selected),
        "restored": list(result.restored),
        "final": list(result.final),
        "fallback_used": result.fallback_used,
        "input_tokens": result.input_tokens,
        "output_tokens": result.output_tokens,
    }


def record_line(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False)
