"""Command-line front end: batch commands over a pooled table corpus.

Commands: ingest, enrich, cache, retrieve, eval, e2e. Each reads and writes
artifacts in an output directory (corpus.json, enriched.json, index.npz,
embedding_cache.json, compat_cache.json, results.jsonl, report files) so runs
are resumable and byte-reproducible with the offline stub backends.

Exit codes: 0 success, 2 configuration problem, 3 input problem, 4 backend
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .compatibility import (
    JOINABILITY_THRESHOLD,
    CompatibilityCache,
    build_cache,
    evaluate_cache,
    gold_joins_from_records,
)
from .corpus import (
    DEFAULT_SAMPLE_ROWS,
    DEFAULT_SEED,
    TableCorpus,
    load_corpus,
    load_tables,
    pool_corpora,
    save_corpus,
)
from .errors import BackendError, BackendMismatchError, ConfigError, CorpusError
from .evaluation import (
    INPUT_RATE_PER_MILLION,
    OUTPUT_RATE_PER_MILLION,
    CostLedger,
    cost_estimate,
    evaluate_selection,
    execution_match,
    generate_sql,
    load_gold_queries,
    load_result_records,
    render_execution_table,
    render_metrics_table,
    stratified_execution_summary,
)
from .indexing import PURPOSE_MAX_TOKENS, DenseIndex, EnrichmentStore, enrich_tables
from .pipeline import (
    DEFAULT_RESTORE_THRESHOLD,
    DEFAULT_TOP_K,
    OnlinePipeline,
    record_line,
    result_record,
)
from .services import (
    CachingEmbedder,
    Embedder,
    Generator,
    HashingEmbedder,
    HttpEmbeddingClient,
    HttpGenerationClient,
    ScriptedGenerator,
    TokenLedger,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_BACKEND = 4


# ---------------------------------------------------------------------------
# Configuration and backend specs
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "k": DEFAULT_TOP_K,
    "tau": DEFAULT_RESTORE_THRESHOLD,
    "seed": DEFAULT_SEED,
    "sample_rows": DEFAULT_SAMPLE_ROWS,
    "joinability_threshold": JOINABILITY_THRESHOLD,
    "input_rate": INPUT_RATE_PER_MILLION,
    "output_rate": OUTPUT_RATE_PER_MILLION,
    "embedder": "stub",
    "generator": None,
}


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def _setting(args: argparse.Namespace, config: dict, key: str):
    """Flag value if given, else config file value, else built-in default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return _DEFAULTS.get(key)


def parse_embedder_spec(spec: str) -> Embedder:
    """stub | stub:<dim> | http:<base_url>,<model>"""
    if spec == "stub":
        return HashingEmbedder()
    if spec.startswith("stub:"):
        try:
            return HashingEmbedder(dimension=int(spec.split(":", 1)[1]))
        except ValueError as exc:
            raise ConfigError(f"bad stub embedder spec {spec!r}: {exc}") from exc
    if spec.startswith("http:"):
        rest = spec[len("http:") :]
        url, sep, model = rest.rpartition(",")
        if not sep or not url or not model:
            raise ConfigError(f"http embedder spec must be http:<base_url>,<model>: {spec!r}")
        return HttpEmbeddingClient(url, model)
    raise ConfigError(f"unknown embedder spec {spec!r}")


def parse_generator_spec(spec: str) -> Generator:
    """scripted:<responses.json> | http:<base_url>,<model>"""
    if spec.startswith("scripted:"):
        path = spec[len("scripted:") :]
        try:
            responses = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read scripted responses {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scripted responses {path} are not valid JSON: {exc}") from exc
        if not isinstance(responses, list):
            raise ConfigError(f"scripted responses {path} must be a JSON list")
        return ScriptedGenerator(responses=responses)
    if spec.startswith("http:"):
        rest = spec[len("http:") :]
        url, sep, model = rest.rpartition(",")
        if not sep or not url or not model:
            raise ConfigError(f"http generator spec must be http:<base_url>,<model>: {spec!r}")
        return HttpGenerationClient(url, model)
    raise ConfigError(f"unknown generator spec {spec!r}")


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_artifact(path: Path, hint: str) -> Path:
    if not path.exists():
        raise CorpusError(f"missing {path.name} in {path.parent} (run `{hint}` first)")
    return path


def _embedder_with_cache(spec: str, out: Path) -> CachingEmbedder:
    return CachingEmbedder(parse_embedder_spec(spec), out / "embedding_cache.json")


def _load_queries(path: str | Path) -> list[tuple[str, str]]:
    """JSON lines {query_id, question} -> [(query_id, question)]."""
    pairs = []
    try:
        raw_lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read queries file {path}: {exc}") from exc
    for lineno, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            pairs.append((str(record["query_id"]), str(record["question"])))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorpusError(f"{path}:{lineno}: bad query record: {exc}") from exc
    if not pairs:
        raise CorpusError(f"queries file {path} holds no queries")
    return pairs


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace, config: dict) -> int:
    out = _out_dir(args)
    sources = []
    seen_labels = set()
    for item in args.sources:
        label, sep, path = item.partition("=")
        if not sep:
            label, path = Path(item).stem, item
        if label in seen_labels:
            raise ConfigError(f"duplicate source label {label!r}")
        seen_labels.add(label)
        source = Path(path)
        if args.format:
            fmt = args.format
        elif source.is_dir():
            fmt = "csv-dir"
        else:
            fmt = "sqlite-file"
        sources.append((label, load_tables(source, fmt)))
    corpus = pool_corpora(sources)
    save_corpus(corpus, out / "corpus.json")
    manifest = {
        "version": 1,
        "sources": sorted(seen_labels),
        "tables": [
            {
                "id": t.id,
                "name": t.name,
                "source": corpus.provenance.get(t.id, ""),
                "columns": len(t.columns),
                "rows": t.row_count,
            }
            for t in sorted(corpus, key=lambda t: t.id)
        ],
    }
    _write_json(out / "manifest.json", manifest)
    logger.info("pooled %d tables from %d sources into %s", len(corpus), len(sources), out)
    print(f"ingested {len(corpus)} tables -> {out / 'corpus.json'}")
    return EXIT_OK


def cmd_enrich(args: argparse.Namespace, config: dict) -> int:
    out = _out_dir(args)
    corpus = load_corpus(_require_artifact(out / "corpus.json", "ingest"))
    embedder = _embedder_with_cache(_setting(args, config, "embedder"), out)
    generator_spec = _setting(args, config, "generator")
    if generator_spec is None:
        raise ConfigError("enrich needs --generator (purpose generation)")
    generator = parse_generator_spec(generator_spec)
    ledger = TokenLedger()
    store = EnrichmentStore(out / "enriched.json")
    already = len(store)
    enrich_tables(
        corpus,
        generator,
        store=store,
        seed=int(_setting(args, config, "seed")),
        n_rows=int(_setting(args, config, "sample_rows")),
        max_tokens=PURPOSE_MAX_TOKENS,
        ledger=ledger,
    )
    index = DenseIndex.build(store.texts(), embedder)
    index.save(out / "index.npz")
    embedder.save()
    tokens = ledger.stage_totals().get("purpose", (0, 0))
    logger.info(
        "enriched %d tables (%d already cached), purpose tokens in/out = %d/%d",
        len(store) - already, already, tokens[0], tokens[1],
    )
    print(f"enriched {len(store)} tables -> {out / 'index.npz'}")
    return EXIT_OK


def cmd_cache(args: argparse.Namespace, config: dict) -> int:
    out = _out_dir(args)
    corpus = load_corpus(_require_artifact(out / "corpus.json", "ingest"))
    embedder = _embedder_with_cache(_setting(args, config, "embedder"), out)
    cache = build_cache(corpus, embedder)
    cache.save(out / "compat_cache.json")
    embedder.save()
    logger.info("cached %d compatible pairs", len(cache))
    print(f"cached {len(cache)} table pairs -> {out / 'compat_cache.json'}")
    return EXIT_OK


def _build_pipeline(args: argparse.Namespace, config: dict, out: Path) -> tuple[OnlinePipeline, EnrichmentStore, TokenLedger]:
    embedder = _embedder_with_cache(_setting(args, config, "embedder"), out)
    index = DenseIndex.load(
        _require_artifact(out / "index.npz", "enrich"), embedder.backend_id
    )
    cache = CompatibilityCache.load(
        _require_artifact(out / "compat_cache.json", "cache"), embedder.backend_id
    )
    store = EnrichmentStore(_require_artifact(out / "enriched.json", "enrich"))
    fallback_only = bool(getattr(args, "fallback_only", False))
    generator = None
    if not fallback_only:
        generator_spec = _setting(args, config, "generator")
        if generator_spec is None:
            raise ConfigError("a generator is required unless --fallback-only is set")
        generator = parse_generator_spec(generator_spec)
    k = int(_setting(args, config, "k"))
    tau = float(_setting(args, config, "tau"))
    if k < 1:
        raise ConfigError(f"k must be at least 1, got {k}")
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    ledger = TokenLedger()
    pipeline = OnlinePipeline(
        index,
        cache,
        embedder,
        generator,
        store.texts(),
        k=k,
        tau=tau,
        ledger=ledger,
        strict_parse=bool(getattr(args, "strict_parse", False)),
        fallback_only=fallback_only,
    )
    return pipeline, store, ledger


def cmd_retrieve(args: argparse.Namespace, config: dict) -> int:
    out = _out_dir(args)
    pipeline, _, ledger = _build_pipeline(args, config, out)
    queries = _load_queries(args.queries)
    lines = []
    for query_id, question in queries:
        result = pipeline.run_query(question)
        lines.append(record_line(result_record(query_id, result)))
    (out / "results.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(
        "retrieved %d queries, selection tokens in/out = %d/%d",
        len(queries), ledger.input_tokens, ledger.output_tokens,
    )
    print(f"wrote {len(queries)} records -> {out / 'results.jsonl'}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, config: dict) -> int:
    out = _out_dir(args)
    did_something = False
    if args.gold is not None:
        results_path = args.results or (out / "results.jsonl")
        records = load_result_records(_require_artifact(Path(results_path), "retrieve"))
        gold = load_gold_queries(args.gold)
        per_query, summary = evaluate_selection(records, gold)
        report = {
            "summary": summary,
            "per_query": [
                {
                    "query_id": r.query_id,
                    "precision": r.precision,
                    "recall": r.recall,
                    "f1": r.f1,
                    "perfect_recall": r.perfect_recall,
                }
                for r in per_query
            ],
        }
        _write_json(out / "eval_report.json", report)
        print(render_metrics_table(summary))
        did_something = True
    if args.gold_joins is not None:
        cache = CompatibilityCache.load(_require_artifact(out / "compat_cache.json", "cache"))
        try:
            raw = json.loads(Path(args.gold_joins).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CorpusError(f"cannot read gold joins {args.gold_joins}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CorpusError(f"gold joins {args.gold_joins} are not valid JSON: {exc}") from exc
        corpus = None
        if (out / "corpus.json").exists():
            corpus = load_corpus(out / "corpus.json")
        metrics = evaluate_cache(
            cache,
            gold_joins_from_records(raw),
            corpus=corpus,
            threshold=float(_setting(args, config, "joinability_threshold")),
        )
        _write_json(out / "compat_report.json", metrics)
        print(
            f"joinability_accuracy: {100 * metrics['joinability_accuracy']:.1f}\n"
            f"column_accuracy: {100 * metrics['column_accuracy']:.1f}\n"
            f"avg_score_error: {metrics['avg_score_error']:.3f}"
        )
        did_something = True
    if not did_something:
        raise ConfigError("eval needs --gold and/or --gold-joins")
    return EXIT_OK


def cmd_e2e(args: argparse.Namespace, config: dict) -> int:
    out = _out_dir(args)
    pipeline, store, ledger = _build_pipeline(args, config, out)
    gold = load_gold_queries(args.gold)
    sql_generator = pipeline.generator
    if sql_generator is None:
        raise ConfigError("e2e needs a generator (it writes SQL)")
    lines = []
    eval_pairs = []
    em_results = []
    for g in gold:
        result = pipeline.run_query(g.question)
        lines.append(record_line(result_record(g.query_id, result)))
        if g.gold_tables:
            eval_pairs.append((result_record(g.query_id, result), g))
        if g.gold_sql:
            tables = [(tid, store.get(tid).text) for tid in result.final if tid in store]
            pred_sql = generate_sql(g.question, tables, sql_generator, ledger=ledger)
            outcome = execution_match(args.db, pred_sql, g.gold_sql)
            em_results.append((outcome, len(g.gold_tables)))
    (out / "results.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    report: dict = {}
    if eval_pairs:
        _, summary = evaluate_selection([r for r, _ in eval_pairs], gold)
        report["selection"] = summary
        print(render_metrics_table(summary))
    if em_results:
        em_summary = stratified_execution_summary(em_results)
        report["execution"] = em_summary
        print(render_execution_table(em_summary))
    cost = CostLedger.from_token_ledger(
        ledger,
        input_rate_per_million=float(_setting(args, config, "input_rate")),
        output_rate_per_million=float(_setting(args, config, "output_rate")),
    )
    report["cost"] = {
        "input_tokens": cost.input_tokens,
        "output_tokens": cost.output_tokens,
        "stages": {s: list(t) for s, t in ledger.stage_totals().items()},
        "dollars": cost_estimate(cost),
    }
    _write_json(out / "e2e_report.json", report)
    print(f"estimated cost: ${cost_estimate(cost):.2f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tablescout",
        description="Join-aware multi-table retrieval over a pooled corpus.",
    )
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--log-level", default="WARNING", help="stderr log level")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", required=True, help="artifact directory")
    common.add_argument("--embedder", help="stub | stub:<dim> | http:<base_url>,<model>")
    common.add_argument("--generator", help="scripted:<responses.json> | http:<base_url>,<model>")
    common.add_argument("--seed", type=int, help="sampling seed (default 42)")

    p = sub.add_parser("ingest", parents=[common], help="pool table sources into one corpus")
    p.add_argument("sources", nargs="+", help="source path or label=path")
    p.add_argument("--format", choices=["csv-dir", "sqlite-file"], help="force source format")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("enrich", parents=[common], help="generate purposes and build the dense index")
    p.add_argument("--sample-rows", type=int, dest="sample_rows", help="rows per table sample (default 5)")
    p.set_defaults(func=cmd_enrich)

    p = sub.add_parser("cache", parents=[common], help="build the pairwise compatibility cache")
    p.set_defaults(func=cmd_cache)

    p = sub.add_parser("retrieve", parents=[common], help="answer a batch of queries")
    p.add_argument("--queries", required=True, help="JSON lines {query_id, question}")
    p.add_argument("--k", type=int, help="candidates per query (default 10)")
    p.add_argument("--tau", type=float, help="restoration threshold (default 0.3)")
    p.add_argument("--fallback-only", action="store_true", help="skip selection; emit top-k sets")
    p.add_argument("--strict-parse", action="store_true", help="require pure-JSON selection replies")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", parents=[common], help="score results and/or the compatibility cache")
    p.add_argument("--results", help="results file (default <out-dir>/results.jsonl)")
    p.add_argument("--gold", help="gold JSON lines {query_id, question, gold_tables, gold_sql?}")
    p.add_argument("--gold-joins", dest="gold_joins", help="gold join annotations (JSON list)")
    p.add_argument("--joinability-threshold", type=float, dest="joinability_threshold")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("e2e", parents=[common], help="retrieve, write SQL, and check execution")
    p.add_argument("--gold", required=True, help="gold JSON lines with gold_sql")
    p.add_argument("--db", required=True, help="SQLite database file")
    p.add_argument("--k", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--fallback-only", action="store_true")
    p.add_argument("--strict-parse", action="store_true")
    p.add_argument("--input-rate", type=float, dest="input_rate", help="$ per 1M input tokens")
    p.add_argument("--output-rate", type=float, dest="output_rate", help="$ per 1M output tokens")
    p.set_defaults(func=cmd_e2e)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _load_config_file(args.config)
        return args.func(args, config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CorpusError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (BackendError, BackendMismatchError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    raise SystemExit(main())
