"""Selection metrics, execution-match harness, and token cost accounting.

Selection quality is scored per query with set precision/recall/F1 plus a
perfect-recall indicator, then macro-averaged. The execution harness runs
predicted and gold SQL against a read-only SQLite file under a wall-clock
timeout and compares result multisets. Costs are linear in token counts at
per-million-token rates.
"""

from __future__ import annotations

import json
import sqlite3
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import CorpusError
from .services import GenerationRequest, Generator, TokenLedger

EXECUTION_TIMEOUT_SECONDS = 60.0
INPUT_RATE_PER_MILLION = 0.15
OUTPUT_RATE_PER_MILLION = 0.60
SQL_STAGE = "sql"


# ---------------------------------------------------------------------------
# Selection metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    query_id: str
    gold: frozenset[str]
    predicted: frozenset[str]
    precision: float
    recall: float
    f1: float
    perfect_recall: int


def selection_metrics(predicted: Iterable[str], gold: Iterable[str], query_id: str = "") -> EvalRecord:
    """Set precision/recall/F1 and the perfect-recall indicator (gold ⊆ predicted).

    An empty prediction scores zero across the board; empty gold is a caller
    error because such queries are excluded before scoring.
    """
    pred = frozenset(predicted)
    gold_set = frozenset(gold)
    if not gold_set:
        raise ValueError("gold table set must be non-empty")
    hits = len(pred & gold_set)
    precision = hits / len(pred) if pred else 0.0
    recall = hits / len(gold_set)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return EvalRecord(
        query_id=query_id,
        gold=gold_set,
        predicted=pred,
        precision=precision,
        recall=recall,
        f1=f1,
        perfect_recall=1 if gold_set <= pred else 0,
    )


def aggregate_metrics(records: Sequence[EvalRecord]) -> dict[str, float]:
    """Macro-averages on the percent scale, plus average predicted-set size."""
    if not records:
        raise ValueError("cannot aggregate zero records")
    n = len(records)
    return {
        "queries": float(n),
        "avg_tables": sum(len(r.predicted) for r in records) / n,
        "precision": 100.0 * sum(r.precision for r in records) / n,
        "recall": 100.0 * sum(r.recall for r in records) / n,
        "f1": 100.0 * sum(r.f1 for r in records) / n,
        "perfect_recall": 100.0 * sum(r.perfect_recall for r in records) / n,
    }


def render_metrics_table(summary: Mapping[str, float]) -> str:
    """One-row text table: Avg #tab., P, R, F1, PR, all to one decimal."""
    header = "| Avg #tab. | P | R | F1 | PR |"
    rule = "|----------:|--:|--:|---:|---:|"
    row = (
        f"| {summary['avg_tables']:.1f} "
        f"| {summary['precision']:.1f} "
        f"| {summary['recall']:.1f} "
        f"| {summary['f1']:.1f} "
        f"| {summary['perfect_recall']:.1f} |"
    )
    return "\n".join([header, rule, row])


# ---------------------------------------------------------------------------
# Gold data and result records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GoldQuery:
    query_id: str
    question: str
    gold_tables: frozenset[str]
    gold_sql: str | None = None


def load_gold_queries(path: str | Path) -> list[GoldQuery]:
    """Read gold annotations from JSON lines: {query_id, question, gold_tables, gold_sql?}."""
    gold = []
    try:
        raw_lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read gold file {path}: {exc}") from exc
    for lineno, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        try:
            gold.append(
                GoldQuery(
                    query_id=str(record["query_id"]),
                    question=str(record.get("question", "")),
                    gold_tables=frozenset(str(t) for t in record["gold_tables"]),
                    gold_sql=record.get("gold_sql"),
                )
            )
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing field {exc}") from exc
    return gold


def load_result_records(path: str | Path) -> list[dict]:
    """Read per-query result records from JSON lines."""
    records = []
    try:
        raw_lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read results file {path}: {exc}") from exc
    for lineno, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if "query_id" not in record or "final" not in record:
            raise CorpusError(f"{path}:{lineno}: record needs query_id and final")
        records.append(record)
    return records


def evaluate_selection(
    records: Sequence[dict],
    gold: Sequence[GoldQuery],
) -> tuple[list[EvalRecord], dict[str, float]]:
    """Score result records against gold tables, matching on query_id.

    Queries with empty gold sets are excluded; records without gold (or the
    reverse) are an input error so mismatched files fail loudly.
    """
    by_id = {g.query_id: g for g in gold}
    evaluated = []
    for record in records:
        qid = str(record["query_id"])
        if qid not in by_id:
            raise CorpusError(f"no gold annotation for query {qid!r}")
        g = by_id[qid]
        if not g.gold_tables:
            continue
        evaluated.append(selection_metrics(record["final"], g.gold_tables, query_id=qid))
    if not evaluated:
        raise CorpusError("no queries left to evaluate (all gold sets empty?)")
    return evaluated, aggregate_metrics(evaluated)


# ---------------------------------------------------------------------------
# Execution match
# ---------------------------------------------------------------------------


def _canonical_cell(value: object) -> str:
    if value is None:
        return "NULL"
    if isinstance(value, float):
        return f"{value:.12g}"
    if isinstance(value, bytes):
        return value.hex()
    return str(value)


def _execute_sql(
    db_path: str | Path,
    sql: str,
    timeout: float,
) -> tuple[str, Counter | None, str]:
    """Run one statement read-only. Returns (status, row multiset, detail)."""
    uri = f"file:{Path(db_path).as_posix()}?mode=ro"
    try:
        conn = sqlite3.connect(uri, uri=True, check_same_thread=False)
    except sqlite3.Error as exc:
        return "error", None, f"cannot open database: {exc}"
    interrupted = threading.Event()

    def _interrupt() -> None:
        interrupted.set()
        conn.interrupt()

    timer = threading.Timer(timeout, _interrupt)
    timer.start()
    try:
        rows = conn.execute(sql).fetchall()
    except sqlite3.Error as exc:
        if interrupted.is_set():
            return "timeout", None, f"exceeded {timeout:g}s"
        return "error", None, str(exc)
    finally:
        timer.cancel()
        conn.close()
    return "ok", Counter(tuple(_canonical_cell(v) for v in row) for row in rows), ""


@dataclass(frozen=True)
class ExecutionOutcome:
    status: str  # match | mismatch | error | timeout | gold_error
    detail: str = ""

    @property
    def correct(self) -> bool:
        return self.status == "match"


def execution_match(
    db_path: str | Path,
    pred_sql: str,
    gold_sql: str,
    timeout: float = EXECUTION_TIMEOUT_SECONDS,
) -> ExecutionOutcome:
    """Execute both statements; match means equal result multisets.

    Row order is ignored, column order respected, cells compared after
    canonical string rendering (floats via %.12g). A prediction that errors
    or exceeds the timeout is incorrect; a failing gold statement is a
    dataset problem reported as gold_error so callers can exclude it.
    """
    gold_status, gold_rows, gold_detail = _execute_sql(db_path, gold_sql, timeout)
    if gold_status != "ok":
        return ExecutionOutcome("gold_error", gold_detail)
    pred_status, pred_rows, pred_detail = _execute_sql(db_path, pred_sql, timeout)
    if pred_status != "ok":
        return ExecutionOutcome(pred_status, pred_detail)
    if pred_rows == gold_rows:
        return ExecutionOutcome("match")
    return ExecutionOutcome("mismatch", f"{sum(pred_rows.values())} vs {sum(gold_rows.values())} rows")


def stratified_execution_summary(
    results: Sequence[tuple[ExecutionOutcome, int]],
) -> dict[str, float]:
    """Execution-match rates overall and split by gold-table count (1 vs 2+).

    ``results`` pairs each outcome with its query's gold-table count.
    Queries whose gold SQL failed are excluded from every rate.
    """
    def rate(pairs: list[tuple[ExecutionOutcome, int]]) -> float:
        counted = [o for o, _ in pairs if o.status != "gold_error"]
        if not counted:
            return 0.0
        return 100.0 * sum(1 for o in counted if o.correct) / len(counted)

    usable = [(o, n) for o, n in results]
    return {
        "queries": float(sum(1 for o, _ in usable if o.status != "gold_error")),
        "gold_errors": float(sum(1 for o, _ in usable if o.status == "gold_error")),
        "em_all": rate(usable),
        "em_single": rate([(o, n) for o, n in usable if n == 1]),
        "em_multi": rate([(o, n) for o, n in usable if n >= 2]),
    }


def render_execution_table(summary: Mapping[str, float]) -> str:
    header = "| EM | EM =1T | EM >=2T |"
    rule = "|---:|-------:|--------:|"
    row = f"| {summary['em_all']:.1f} | {summary['em_single']:.1f} | {summary['em_multi']:.1f} |"
    return "\n".join([header, rule, row])


# ---------------------------------------------------------------------------
# SQL generation (end-to-end harness)
# ---------------------------------------------------------------------------

SQL_PROMPT_TEMPLATE = (
    "You are a SQL expert. Given the question and the tables below, write one "
    "SQLite query that answers the question. Reply with only the SQL.\n\n"
    "Question: {question}\n\nTables:\n{tables_content}\n\nSQL:"
)
SQL_MAX_TOKENS = 512


def generate_sql(
    question: str,
    tables: Sequence[tuple[str, str]],
    generator: Generator,
    *,
    ledger: TokenLedger | None = None,
    max_tokens: int = SQL_MAX_TOKENS,
) -> str:
    """One generation call turning the retrieved tables into a SQL string.

    ``tables`` pairs table ids with their serialized content. The reply is
    stripped of a surrounding code fence if present.
    """
    tables_content = "\n\n".join(text for _, text in tables)
    prompt = SQL_PROMPT_TEMPLATE.format(question=question, tables_content=tables_content)
    response = generator.generate(
        GenerationRequest(prompt=prompt, max_tokens=max_tokens, temperature=0.0)
    )
    if ledger is not None:
        ledger.record(SQL_STAGE, response.input_tokens, response.output_tokens)
    text = response.text.strip()
    if text.startswith("```"):
        text = text.split("\n", 1)[1] if "\n" in text else ""
        if text.rstrip().endswith("```"):
            text = text.rstrip()[:-3]
    return text.strip()


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostLedger:
    """Token totals plus dollar rates per million tokens."""

    input_tokens: int
    output_tokens: int
    input_rate_per_million: float = INPUT_RATE_PER_MILLION
    output_rate_per_million: float = OUTPUT_RATE_PER_MILLION

    def __post_init__(self) -> None:
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be nonnegative")

    @classmethod
    def from_token_ledger(
        cls,
        ledger: TokenLedger,
        input_rate_per_million: float = INPUT_RATE_PER_MILLION,
        output_rate_per_million: float = OUTPUT_RATE_PER_MILLION,
    ) -> "CostLedger":
        return cls(
            input_tokens=ledger.input_tokens,
            output_tokens=ledger.output_tokens,
            input_rate_per_million=input_rate_per_million,
            output_rate_per_million=output_rate_per_million,
        )


def cost_estimate(ledger: CostLedger) -> float:
    """Dollars: input_tokens/1e6 * in_rate + output_tokens/1e6 * out_rate."""
    return (
        ledger.input_tokens / 1e6 * ledger.input_rate_per_million
        + ledger.output_tokens / 1e6 * ledger.output_rate_per_million
    )
