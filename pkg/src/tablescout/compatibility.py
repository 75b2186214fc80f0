"""Join-compatibility scoring between tables, and the pairwise score cache.

A column pair is a plausible join only when at least one side is a key
(unique non-NULL values) and one side's distinct values are contained in the
other's. Qualifying pairs are scored by value overlap (Jaccard) blended with
header-name agreement (exact match plus embedding similarity); a table pair's
compatibility is the best score over its column pairs. Scores are symmetric
by construction: every pair is computed with the tables in sorted-id order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Column, Table, TableCorpus
from .errors import BackendMismatchError, CorpusError
from .services import Embedder, cosine

JOINABILITY_THRESHOLD = 0.5
CACHE_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Column-level signals
# ---------------------------------------------------------------------------


def column_uniqueness(column: Column) -> float:
    """1.0 when the column's normalized non-NULL values are all distinct.

    Columns with no non-NULL values score 0.0: an all-NULL column gives no
    evidence of being a key.
    """
    values = column.non_null_values()
    if not values:
        return 0.0
    return 1.0 if len(set(values)) == len(values) else 0.0


def subset_relation(a: Column, b: Column) -> float:
    """1.0 when either distinct value set contains the other, else 0.0.

    Empty sets never qualify; containment of nothing is not evidence of a
    foreign-key relationship.
    """
    sa = a.distinct_values()
    sb = b.distinct_values()
    if not sa or not sb:
        return 0.0
    return 1.0 if sa <= sb or sb <= sa else 0.0


def jaccard(a: Column, b: Column) -> float:
    """Jaccard overlap of the distinct value sets; 0.0 on an empty union."""
    sa = a.distinct_values()
    sb = b.distinct_values()
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)


def _name_key(name: str) -> str:
    return name.casefold().replace("-", "_").replace(" ", "_")


def exact_name_match(a: Column, b: Column) -> float:
    """1.0 when the header names agree up to case and -/space vs underscore."""
    return 1.0 if _name_key(a.name) == _name_key(b.name) else 0.0


def header_text(column: Column) -> str:
    """The text embedded for a column header: ``table.column``."""
    return f"{column.table_name}.{column.name}"


def header_semantic_score(a: Column, b: Column, embedder: Embedder) -> float:
    """Cosine similarity of the header embeddings, clamped at zero."""
    sim = cosine(embedder.embed(header_text(a)), embedder.embed(header_text(b)))
    return max(0.0, sim)


def header_name_score(a: Column, b: Column, embedder: Embedder) -> tuple[float, float, float]:
    """(ex, sem, name): exact and semantic header agreement, evenly blended."""
    ex = exact_name_match(a, b)
    sem = header_semantic_score(a, b, embedder)
    return ex, sem, 0.5 * sem + 0.5 * ex


@dataclass(frozen=True)
class ColumnPairScore:
    """All signals behind one cross-table column pair's join score.

    The pair is valid only when at least one side is unique and one side's
    distinct values contain the other's; s = valid * (jac + name) / 2.
    """

    jac: float
    ex: float
    sem: float
    name: float
    sub: float
    valid: float
    s: float


def _pair_score(
    a: Column,
    b: Column,
    vec_a: np.ndarray | None,
    vec_b: np.ndarray | None,
    embedder: Embedder,
) -> float:
    if subset_relation(a, b) == 0.0:
        return 0.0
    if column_uniqueness(a) == 0.0 and column_uniqueness(b) == 0.0:
        return 0.0
    if vec_a is None:
        vec_a = embedder.embed(header_text(a))
    if vec_b is None:
        vec_b = embedder.embed(header_text(b))
    sem = max(0.0, cosine(vec_a, vec_b))
    name = 0.5 * sem + 0.5 * exact_name_match(a, b)
    return 0.5 * jaccard(a, b) + 0.5 * name


def column_pair_score(a: Column, b: Column, embedder: Embedder) -> ColumnPairScore:
    """All join signals for one cross-table column pair."""
    if a.table_name == b.table_name:
        raise ValueError("column pair must come from two different tables")
    sub = subset_relation(a, b)
    valid = 1.0 if sub == 1.0 and (column_uniqueness(a) == 1.0 or column_uniqueness(b) == 1.0) else 0.0
    jac = jaccard(a, b)
    ex, sem, name = header_name_score(a, b, embedder)
    return ColumnPairScore(
        jac=jac,
        ex=ex,
        sem=sem,
        name=name,
        sub=sub,
        valid=valid,
        s=valid * (0.5 * jac + 0.5 * name),
    )


# ---------------------------------------------------------------------------
# Table-level compatibility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JoinEdge:
    """Best join between two tables; sides are held in sorted-id order."""

    score: float
    left_table: str
    left_column: str
    right_table: str
    right_column: str

    def oriented(self, first_table: str) -> tuple[str, str]:
        """(column in first_table, column in the other table)."""
        if first_table == self.left_table:
            return self.left_column, self.right_column
        if first_table == self.right_table:
            return self.right_column, self.left_column
        raise KeyError(f"{first_table!r} is not part of this edge")


def table_compatibility(
    ti: Table,
    tj: Table,
    embedder: Embedder,
    *,
    _vectors: Mapping[tuple[str, int], np.ndarray] | None = None,
) -> JoinEdge | None:
    """Best-scoring plausible join between two tables, or None.

    The argument order never matters: scoring always runs with the tables
    arranged by ascending id, and score ties resolve to the lowest column
    position pair in that arrangement.
    """
    if ti.id == tj.id:
        raise ValueError("table compatibility requires two distinct tables")
    a, b = (ti, tj) if ti.id < tj.id else (tj, ti)
    best: tuple[float, int, int] | None = None
    for ca in a.columns:
        for cb in b.columns:
            va = _vectors.get((a.id, ca.position)) if _vectors is not None else None
            vb = _vectors.get((b.id, cb.position)) if _vectors is not None else None
            s = _pair_score(ca, cb, va, vb, embedder)
            if s <= 0.0:
                continue
            if best is None or s > best[0]:
                best = (s, ca.position, cb.position)
    if best is None:
        return None
    score, pos_a, pos_b = best
    return JoinEdge(
        score=score,
        left_table=a.id,
        left_column=a.columns[pos_a].name,
        right_table=b.id,
        right_column=b.columns[pos_b].name,
    )


# ---------------------------------------------------------------------------
# The pairwise cache
# ---------------------------------------------------------------------------


class CompatibilityCache:
    """All positive-score table pairs with their best join columns.

    Pairs scoring zero are simply absent; ``score`` returns 0.0 for them, for
    unknown ids, and for a table paired with itself.
    """

    def __init__(self, edges: Iterable[JoinEdge] = (), backend_id: str = ""):
        self._pairs: dict[tuple[str, str], JoinEdge] = {}
        self.backend_id = backend_id
        for edge in edges:
            self.add(edge)

    def add(self, edge: JoinEdge) -> None:
        if edge.left_table >= edge.right_table:
            raise ValueError("edge sides must be in ascending id order")
        if edge.score <= 0.0:
            raise ValueError("only positive-score pairs belong in the cache")
        self._pairs[(edge.left_table, edge.right_table)] = edge

    def __len__(self) -> int:
        return len(self._pairs)

    def __iter__(self):
        return iter(self._pairs.values())

    def edge(self, ti: str, tj: str) -> JoinEdge | None:
        if ti == tj:
            return None
        key = (ti, tj) if ti < tj else (tj, ti)
        return self._pairs.get(key)

    def score(self, ti: str, tj: str) -> float:
        edge = self.edge(ti, tj)
        return edge.score if edge is not None else 0.0

    def best_join(self, ti: str, tj: str) -> tuple[str, str] | None:
        """Join columns oriented as (column of ti, column of tj), or None."""
        edge = self.edge(ti, tj)
        return edge.oriented(ti) if edge is not None else None

    def neighbors(self, ti: str) -> list[tuple[str, float]]:
        """(other_id, score) for every cached pair involving ti, best first."""
        found = [
            (right if left == ti else left, e.score)
            for (left, right), e in self._pairs.items()
            if left == ti or right == ti
        ]
        found.sort(key=lambda item: (-item[1], item[0]))
        return found

    def save(self, path: str | Path) -> None:
        pairs = {}
        for (left, right), e in self._pairs.items():
            pairs[f"{left}|{right}"] = {
                "cs": e.score,
                "join": [f"{e.left_table}.{e.left_column}", f"{e.right_table}.{e.right_column}"],
            }
        payload = {
            "version": CACHE_FORMAT_VERSION,
            "backend_id": self.backend_id,
            "pairs": pairs,
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, ensure_ascii=False), encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path, expected_backend_id: str | None = None) -> "CompatibilityCache":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorpusError(f"cannot read compatibility cache {path}: {exc}") from exc
        backend_id = data.get("backend_id", "")
        if expected_backend_id is not None and backend_id != expected_backend_id:
            raise BackendMismatchError(
                f"compatibility cache {path} was built with backend {backend_id!r}, "
                f"configured {expected_backend_id!r}"
            )
        cache = cls(backend_id=backend_id)
        for key, record in data.get("pairs", {}).items():
            left, sep, right = key.partition("|")
            if not sep:
                raise CorpusError(f"malformed pair key {key!r} in {path}")
            join = record.get("join", [])
            if len(join) != 2:
                raise CorpusError(f"malformed join entry for {key!r} in {path}")
            left_col = _strip_table_prefix(join[0], left, path)
            right_col = _strip_table_prefix(join[1], right, path)
            cache.add(
                JoinEdge(
                    score=float(record["cs"]),
                    left_table=left,
                    left_column=left_col,
                    right_table=right,
                    right_column=right_col,
                )
            )
        return cache


def _strip_table_prefix(qualified: str, table_id: str, path: str | Path) -> str:
    prefix = f"{table_id}."
    if not qualified.startswith(prefix):
        raise CorpusError(f"join column {qualified!r} does not belong to {table_id!r} in {path}")
    return qualified[len(prefix) :]


def build_cache(corpus: TableCorpus, embedder: Embedder) -> CompatibilityCache:
    """Score every unordered table pair; embed each column header once."""
    tables = sorted(corpus, key=lambda t: t.id)
    vectors: dict[tuple[str, int], np.ndarray] = {}
    for table in tables:
        for col in table.columns:
            vectors[(table.id, col.position)] = embedder.embed(header_text(col))
    cache = CompatibilityCache(backend_id=embedder.backend_id)
    for i, ti in enumerate(tables):
        for tj in tables[i + 1 :]:
            edge = table_compatibility(ti, tj, embedder, _vectors=vectors)
            if edge is not None:
                cache.add(edge)
    return cache


# ---------------------------------------------------------------------------
# Evaluating a cache against gold join annotations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GoldJoin:
    """One annotated table pair: joinable or not, and optionally how."""

    table_a: str
    table_b: str
    joinable: bool
    gold_columns: tuple[str, str] | None = None  # (column of table_a, column of table_b)


def gold_joins_from_records(records: Sequence[dict]) -> list[GoldJoin]:
    """Parse gold annotations: {table_a, table_b, joinable, gold_columns?}."""
    gold = []
    for record in records:
        if not isinstance(record, dict) or "table_a" not in record or "table_b" not in record:
            raise CorpusError(f"gold record needs table_a and table_b: {record!r}")
        columns = record.get("gold_columns")
        if columns is not None:
            if not isinstance(columns, (list, tuple)) or len(columns) != 2:
                raise CorpusError(f"gold_columns must list two column names: {record!r}")
            columns = (str(columns[0]), str(columns[1]))
        gold.append(
            GoldJoin(
                table_a=str(record["table_a"]),
                table_b=str(record["table_b"]),
                joinable=bool(record.get("joinable")),
                gold_columns=columns,
            )
        )
    return gold


def evaluate_cache(
    cache: CompatibilityCache,
    gold: Sequence[GoldJoin],
    corpus: TableCorpus | None = None,
    threshold: float = JOINABILITY_THRESHOLD,
) -> dict[str, float]:
    """Compare cached scores against gold pair annotations.

    Joinability accuracy treats score > threshold as the joinable prediction.
    Column accuracy, over gold-joinable pairs with annotated columns, checks
    that the cached best join names the same column pair (side order
    ignored). The score error averages |score - label| with the label 1 or 0,
    and an absent pair scoring 0. A corpus, when given, validates that the
    annotations reference real tables and columns.
    """
    if not gold:
        raise ValueError("gold annotations must be non-empty")
    if corpus is not None:
        known = set(corpus.ids())
        for g in gold:
            missing = {g.table_a, g.table_b} - known
            if missing:
                raise CorpusError(f"gold annotation references unknown tables: {sorted(missing)}")
            if g.gold_columns is not None:
                for tid, col in zip((g.table_a, g.table_b), g.gold_columns):
                    if col not in corpus.get(tid).column_names():
                        raise CorpusError(f"gold annotation references unknown column {tid}.{col}")
    join_hits = 0
    col_total = 0
    col_hits = 0
    err_total = 0.0
    for g in gold:
        cs = cache.score(g.table_a, g.table_b)
        if (cs > threshold) == g.joinable:
            join_hits += 1
        if g.joinable and g.gold_columns is not None:
            col_total += 1
            best = cache.best_join(g.table_a, g.table_b)
            if best is not None:
                want = {(g.table_a, g.gold_columns[0]), (g.table_b, g.gold_columns[1])}
                got = {(g.table_a, best[0]), (g.table_b, best[1])}
                if want == got:
                    col_hits += 1
        err_total += abs(cs - (1.0 if g.joinable else 0.0))
    return {
        "joinability_accuracy": join_hits / len(gold),
        "column_accuracy": (col_hits / col_total) if col_total else 0.0,
        "avg_score_error": err_total / len(gold),
        "pairs": float(len(gold)),
        "joinable_pairs": float(sum(1 for g in gold if g.joinable)),
    }
