"""Score selections, check SQL answers by execution, and price the run.

Selection quality is plain set precision and recall against gold tables.
SQL quality is execution match: both queries run against the database
read-only and their result multisets are compared after canonicalizing
cells. Token counts turn into dollars through two flat per-million rates.
"""

import sqlite3
import tempfile
from pathlib import Path

from tablescout import (
    CostLedger,
    ExecutionOutcome,
    ScriptedGenerator,
    TokenLedger,
    aggregate_metrics,
    cost_estimate,
    execution_match,
    generate_sql,
    render_execution_table,
    render_metrics_table,
    selection_metrics,
    stratified_execution_summary,
)

# --- selection metrics -----------------------------------------------------

per_query = [
    selection_metrics({"flights", "airports"}, {"flights", "airports"}, query_id="q0"),
    selection_metrics({"flights", "menus"}, {"flights", "airports"}, query_id="q1"),
    selection_metrics({"crews"}, {"crews", "airports"}, query_id="q2"),
]
for m in per_query:
    print(f"{m.query_id}: P={m.precision:.2f} R={m.recall:.2f} F1={m.f1:.2f} PR={m.perfect_recall}")

print()
print(render_metrics_table(aggregate_metrics(per_query)))

# --- execution match -------------------------------------------------------

db_path = Path(tempfile.mkdtemp()) / "demo.sqlite"
with sqlite3.connect(db_path) as conn:
    conn.execute("CREATE TABLE flights (flight_id INT, airport_code TEXT)")
    conn.executemany(
        "INSERT INTO flights VALUES (?, ?)", [(1, "OSL"), (2, "TRN"), (3, "OSL")]
    )

gold_sql = "SELECT airport_code, count(*) FROM flights GROUP BY airport_code"
pred_sql = (
    "SELECT airport_code, count(*) AS n FROM flights "
    "GROUP BY airport_code ORDER BY n DESC"
)
outcome = execution_match(db_path, pred_sql, gold_sql)
print(f"\nreordered but equal: {outcome.status}")

outcome = execution_match(db_path, "SELECT airport_code FROM flights", gold_sql)
print(f"different shape:     {outcome.status} ({outcome.detail})")

# Aggregate outcomes stratified by gold table count. gold_error rows are
# excluded from every bucket.
summary = stratified_execution_summary(
    [
        (ExecutionOutcome("match"), 1),
        (ExecutionOutcome("match"), 2),
        (ExecutionOutcome("mismatch"), 2),
        (ExecutionOutcome("gold_error"), 1),
    ]
)
print()
print(render_execution_table(summary))

# --- SQL generation and cost -----------------------------------------------

ledger = TokenLedger()
generator = ScriptedGenerator(responses=["```sql\nSELECT count(*) FROM flights\n```"])
sql = generate_sql(
    "how many flights are there",
    [("flights", "Table name: flights\nTable content: ...")],
    generator,
    ledger=ledger,
)
print(f"\ngenerated SQL: {sql}")
print("stage totals:", ledger.stage_totals())

# Price a full benchmark run from its token ledger.
costs = CostLedger(input_tokens=51_700_000, output_tokens=730_000)
print(f"51.7M in + 0.73M out -> ${cost_estimate(costs):.2f}")
print(f"this demo run        -> ${cost_estimate(CostLedger.from_token_ledger(ledger)):.6f}")
