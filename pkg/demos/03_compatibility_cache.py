"""Score join compatibility between table pairs and cache the results.

A pair of columns is a join candidate only when one side holds unique values
and one side's value set contains the other's. Candidates are then ranked by
a blend of value overlap and header similarity. The best column pair per
table pair lands in a reusable cache.
"""

import tempfile
from pathlib import Path

from tablescout import (
    CompatibilityCache,
    HashingEmbedder,
    Table,
    TableCorpus,
    build_cache,
    column_pair_score,
)

orders = Table.build(
    "orders",
    "orders",
    ["order_id", "customer_id", "total"],
    [
        ["100", "1", "9.50"],
        ["101", "2", "12.00"],
        ["102", "1", "3.25"],
        ["103", "4", "8.00"],
    ],
)
customers = Table.build(
    "customers",
    "customers",
    ["customer_id", "name"],
    [["1", "Ada"], ["2", "Bo"], ["3", "Cy"], ["4", "Di"]],
)
payments = Table.build(
    "payments",
    "payments",
    ["pay_code", "memo"],
    [["a1", "wire"], ["a2", "card"]],
)

embedder = HashingEmbedder(dimension=128)

# Inspect one column pair directly. orders.customer_id values are a subset of
# the unique customers.customer_id values, so the pair is valid.
fk = orders.columns[1]
pk = customers.columns[0]
score = column_pair_score(fk, pk, embedder)
print("customer_id <-> customer_id")
print(f"  unique-side ok: {score.valid}")
print(f"  value jaccard:  {score.jac:.3f}")
print(f"  header exact:   {score.ex}")
print(f"  header cosine:  {score.sem:.3f}")
print(f"  combined score: {score.s:.3f}")

# Totals column against the key. No containment, so it scores zero.
bad = column_pair_score(orders.columns[2], pk, embedder)
print(f"\ntotal <-> customer_id valid={bad.valid} s={bad.s}")

corpus = TableCorpus(tables=(orders, customers, payments), provenance={})
cache = build_cache(corpus, embedder)
print(f"\ncache holds {len(cache)} pair(s) out of 3 possible")
for edge in cache:
    print(
        f"  {edge.left_table} <-> {edge.right_table}: "
        f"cs={edge.score:.3f} join on {edge.left_column}={edge.right_column}"
    )
# payments shares no values with anything, so it never appears.

print("\nstrongest partners of orders:", cache.neighbors("orders"))

# Round-trip through JSON. Loading checks the embedding backend id so a cache
# built under one embedder cannot silently serve another.
path = Path(tempfile.mkdtemp()) / "compat_cache.json"
cache.save(path)
reloaded = CompatibilityCache.load(path, expected_backend_id=embedder.backend_id)
print("reloaded cs(orders, customers):", reloaded.score("orders", "customers"))
