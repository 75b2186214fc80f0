"""Tests for join-compatibility scoring and the pairwise cache."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tablescout import (
    NULL,
    BackendMismatchError,
    CompatibilityCache,
    CorpusError,
    GoldJoin,
    HashingEmbedder,
    JoinEdge,
    Table,
    TableCorpus,
    build_cache,
    column_pair_score,
    column_uniqueness,
    evaluate_cache,
    exact_name_match,
    gold_joins_from_records,
    header_name_score,
    header_semantic_score,
    header_text,
    jaccard,
    subset_relation,
    table_compatibility,
)
from tablescout.compatibility import JOINABILITY_THRESHOLD
from tablescout.corpus import Column

from synth import MappedEmbedder, oracle_pair_score, oracle_table_compatibility, random_corpus


def col(values, name="c", table="t", position=0):
    return Column(table_name=table, name=name, position=position, values=tuple(values))


def make_table(table_id, column_names, rows):
    return Table.build(table_id, table_id, column_names, rows)


class CountingEmbedder(HashingEmbedder):
    def __init__(self, dimension=64):
        super().__init__(dimension=dimension)
        self.calls = 0

    def embed(self, text):
        self.calls += 1
        return super().embed(text)


# ---------------------------------------------------------------------------
# Column-level signals
# ---------------------------------------------------------------------------


class TestColumnUniqueness:
    def test_all_distinct(self):
        assert column_uniqueness(col(["1", "2", "3"])) == 1.0

    def test_repeated_value(self):
        assert column_uniqueness(col(["1", "1", "2"])) == 0.0

    def test_nulls_ignored(self):
        assert column_uniqueness(col(["1", NULL, "2", NULL])) == 1.0

    def test_all_null_is_not_a_key(self):
        assert column_uniqueness(col([NULL, NULL])) == 0.0

    def test_empty_column(self):
        assert column_uniqueness(col([])) == 0.0

    def test_normalization_collapses_duplicates(self):
        assert column_uniqueness(col([" A ", "a"])) == 0.0


class TestSubsetRelation:
    def test_contained(self):
        assert subset_relation(col(["1", "2"]), col(["1", "2", "3"])) == 1.0

    def test_contained_other_direction(self):
        assert subset_relation(col(["1", "2", "3"]), col(["1", "2"])) == 1.0

    def test_partial_overlap_fails(self):
        assert subset_relation(col(["1", "4"]), col(["1", "2", "3"])) == 0.0

    def test_empty_side_fails(self):
        assert subset_relation(col([]), col(["1", "2"])) == 0.0
        assert subset_relation(col([NULL]), col(["1", "2"])) == 0.0

    def test_duplicates_do_not_matter(self):
        assert subset_relation(col(["1", "1", "2"]), col(["2", "1"])) == 1.0


class TestJaccard:
    def test_half_overlap(self):
        assert jaccard(col(["1", "2", "3"]), col(["2", "3", "4"])) == 0.5

    def test_identical_sets(self):
        assert jaccard(col(["1", "2"]), col(["2", "1", "1"])) == 1.0

    def test_disjoint_sets(self):
        assert jaccard(col(["1"]), col(["2"])) == 0.0

    def test_empty_union(self):
        assert jaccard(col([NULL]), col([])) == 0.0

    def test_distinct_sets_not_multisets(self):
        # {1} vs {1}: overlap 1.0 regardless of repetition counts
        assert jaccard(col(["1", "1", "1"]), col(["1"])) == 1.0


class TestHeaderSignals:
    def test_exact_match_tolerates_case_and_separators(self):
        assert exact_name_match(col([], name="museum_id"), col([], name="Museum-ID")) == 1.0
        assert exact_name_match(col([], name="city name"), col([], name="CITY_NAME")) == 1.0

    def test_exact_match_rejects_different_names(self):
        assert exact_name_match(col([], name="id"), col([], name="name")) == 0.0

    def test_header_text(self):
        assert header_text(col([], name="id", table="museums")) == "museums.id"

    def test_semantic_score_identical_headers(self):
        emb = HashingEmbedder(dimension=64)
        a = col([], name="id", table="m")
        b = col([], name="id", table="m")
        assert header_semantic_score(a, b, emb) == pytest.approx(1.0)

    def test_semantic_score_clamped_at_zero(self):
        emb = MappedEmbedder({"t1.a": [1.0, 0.0], "t2.b": [-1.0, 0.0]})
        a = col([], name="a", table="t1")
        b = col([], name="b", table="t2")
        assert header_semantic_score(a, b, emb) == 0.0

    def test_name_score_blend(self):
        emb = MappedEmbedder({"t1.a": [1.0, 0.0], "t2.b": [0.6, 0.8]})
        ex, sem, name = header_name_score(
            col([], name="a", table="t1"), col([], name="b", table="t2"), emb
        )
        assert ex == 0.0
        assert sem == pytest.approx(0.6, abs=1e-12)
        assert name == pytest.approx(0.3, abs=1e-12)

    def test_name_score_full_agreement(self):
        emb = HashingEmbedder(dimension=64)
        ex, sem, name = header_name_score(
            col([], name="id", table="m"), col([], name="id", table="m"), emb
        )
        assert (ex, name) == (1.0, pytest.approx(1.0))
        assert sem == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# Column pair scores
# ---------------------------------------------------------------------------


class TestColumnPairScore:
    def test_worked_example(self):
        # unique parent key, child subset of 4 of its 5 values, same header
        # name, header similarity 0.9: s = 1 * (0.5*0.8 + 0.5*0.95) = 0.875
        emb = MappedEmbedder(
            {
                "t1.museum_id": [1.0, 0.0],
                "t2.museum_id": [0.9, math.sqrt(1.0 - 0.81)],
            }
        )
        parent = col(["1", "2", "3", "4", "5"], name="museum_id", table="t1")
        child = col(["1", "2", "3", "4", "1"], name="museum_id", table="t2")
        score = column_pair_score(parent, child, emb)
        assert score.sub == 1.0
        assert score.valid == 1.0
        assert score.jac == pytest.approx(0.8, abs=1e-12)
        assert score.ex == 1.0
        assert score.sem == pytest.approx(0.9, abs=1e-12)
        assert score.name == pytest.approx(0.95, abs=1e-12)
        assert score.s == pytest.approx(0.875, abs=1e-12)

    def test_same_table_rejected(self):
        emb = HashingEmbedder(dimension=16)
        with pytest.raises(ValueError):
            column_pair_score(col([], table="t"), col([], table="t"), emb)

    def test_neither_side_unique_scores_zero(self):
        emb = HashingEmbedder(dimension=16)
        a = col(["1", "1", "2"], name="x", table="t1")
        b = col(["1", "2", "2"], name="x", table="t2")
        score = column_pair_score(a, b, emb)
        assert score.valid == 0.0
        assert score.s == 0.0
        assert score.jac == 1.0  # signals still reported

    def test_no_containment_scores_zero(self):
        emb = HashingEmbedder(dimension=16)
        a = col(["1", "4"], name="x", table="t1")
        b = col(["1", "2", "3"], name="x", table="t2")
        score = column_pair_score(a, b, emb)
        assert score.sub == 0.0
        assert score.valid == 0.0
        assert score.s == 0.0

    def test_valid_pair_scores_positive(self):
        emb = HashingEmbedder(dimension=16)
        a = col(["1", "2", "3"], name="a", table="t1")
        b = col(["2"], name="b", table="t2")
        score = column_pair_score(a, b, emb)
        assert score.valid == 1.0
        assert score.s > 0.0

    @given(
        va=st.lists(st.sampled_from(["1", "2", "3", "b", " 1 ", NULL]), max_size=10),
        vb=st.lists(st.sampled_from(["1", "2", "3", "b", " 1 ", NULL]), max_size=10),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_independent_oracle(self, va, vb):
        emb = HashingEmbedder(dimension=32)
        a = col(va, name="alpha", table="t1")
        b = col(vb, name="beta", table="t2")
        score = column_pair_score(a, b, emb)
        assert 0.0 <= score.s <= 1.0
        assert score.valid in (0.0, 1.0)
        if score.valid == 0.0:
            assert score.s == 0.0
        else:
            assert score.s > 0.0
        assert score.s == pytest.approx(oracle_pair_score(a, b, emb), abs=1e-12)


# ---------------------------------------------------------------------------
# Table-level compatibility
# ---------------------------------------------------------------------------


def two_table_fixture():
    """Two valid column pairs scoring 0.875 and 0.6; cross pairs disjoint."""
    emb = MappedEmbedder(
        {
            "t1.museum_id": [1.0, 0.0],
            "t2.museum_id": [0.9, math.sqrt(1.0 - 0.81)],
            "t1.city": [0.0, 1.0],
            "t2.town": [math.sqrt(1.0 - 0.04), 0.2],
        }
    )
    t1 = make_table(
        "t1",
        ["museum_id", "city"],
        [
            ["1", "rome"],
            ["2", "oslo"],
            ["3", "bern"],
            ["4", "kyiv"],
            ["5", "lima"],
        ],
    )
    t2 = make_table(
        "t2",
        ["museum_id", "town"],
        [
            ["1", "rome"],
            ["2", "oslo"],
            ["3", "bern"],
            ["4", "rome"],
            ["1", "oslo"],
        ],
    )
    return t1, t2, emb


class TestTableCompatibility:
    def test_takes_max_over_column_pairs(self):
        t1, t2, emb = two_table_fixture()
        # city/town: {rome,oslo,bern,kyiv,lima} vs {rome,oslo,bern}: jac 0.6,
        # ex 0, sem 0.2, name 0.1 -> s = 0.35; museum_id pair scores 0.875
        edge = table_compatibility(t1, t2, emb)
        assert edge is not None
        assert edge.score == pytest.approx(0.875, abs=1e-12)
        assert (edge.left_table, edge.left_column) == ("t1", "museum_id")
        assert (edge.right_table, edge.right_column) == ("t2", "museum_id")

    def test_argument_order_is_irrelevant(self):
        t1, t2, emb = two_table_fixture()
        assert table_compatibility(t1, t2, emb) == table_compatibility(t2, t1, emb)

    def test_no_valid_pair_returns_none(self):
        emb = HashingEmbedder(dimension=16)
        t1 = make_table("t1", ["a"], [["1"], ["2"]])
        t2 = make_table("t2", ["b"], [["9"], ["8"]])
        assert table_compatibility(t1, t2, emb) is None

    def test_same_table_rejected(self):
        emb = HashingEmbedder(dimension=16)
        t1 = make_table("t1", ["a"], [["1"]])
        with pytest.raises(ValueError):
            table_compatibility(t1, t1, emb)

    def test_tie_breaks_to_lowest_position_pair(self):
        # all four cross pairs carry identical signals, so the winner must be
        # the (0, 0) position pair of the lower-id table ordering
        emb = MappedEmbedder(
            {
                "ta.a": [1.0, 0.0],
                "ta.b": [1.0, 0.0],
                "tb.x": [1.0, 0.0],
                "tb.y": [1.0, 0.0],
            }
        )
        ta = make_table("ta", ["a", "b"], [["1", "1"], ["2", "2"]])
        tb = make_table("tb", ["x", "y"], [["1", "1"], ["2", "2"]])
        edge = table_compatibility(tb, ta, emb)
        assert edge is not None
        assert (edge.left_column, edge.right_column) == ("a", "x")

    def test_matches_oracle_on_random_corpora(self):
        emb = HashingEmbedder(dimension=48)
        rng = np.random.default_rng(7)
        checked = 0
        for _ in range(30):
            corpus = random_corpus(rng, max_tables=4, max_cols=5, max_rows=40)
            tables = sorted(corpus, key=lambda t: t.id)
            for i, ti in enumerate(tables):
                for tj in tables[i + 1 :]:
                    edge = table_compatibility(ti, tj, emb)
                    want = oracle_table_compatibility(ti, tj, emb)
                    if want is None:
                        assert edge is None
                        continue
                    assert edge is not None
                    want_score, want_cols = want
                    assert edge.score == pytest.approx(want_score, abs=1e-12)
                    assert (edge.left_column, edge.right_column) == want_cols
                    checked += 1
        assert checked > 20  # the corpora actually exercised scoring


# ---------------------------------------------------------------------------
# The cache
# ---------------------------------------------------------------------------


def small_corpus():
    t1 = make_table("t1", ["id", "city"], [["1", "rome"], ["2", "oslo"], ["3", "bern"]])
    t2 = make_table("t2", ["id", "pop"], [["1", "100"], ["2", "100"], ["1", "50"]])
    t3 = make_table("t3", ["code"], [["zz"], ["yy"]])
    t4 = make_table("t4", ["city"], [["rome"], ["oslo"]])
    return TableCorpus(tables=(t1, t2, t3, t4), provenance={})


class TestCompatibilityCache:
    def test_build_skips_incompatible_pairs(self):
        corpus = small_corpus()
        emb = HashingEmbedder(dimension=64)
        cache = build_cache(corpus, emb)
        assert len(cache) <= 6  # at most C(4, 2) pairs
        assert cache.score("t1", "t2") > 0.0
        assert cache.score("t1", "t4") > 0.0  # city values contained, t4 unique
        assert cache.score("t1", "t3") == 0.0
        assert cache.edge("t2", "t3") is None
        assert cache.score("t1", "t1") == 0.0
        assert cache.score("t1", "nowhere") == 0.0

    def test_scores_and_joins_are_orientation_safe(self):
        cache = build_cache(small_corpus(), HashingEmbedder(dimension=64))
        assert cache.score("t2", "t1") == cache.score("t1", "t2")
        ab = cache.best_join("t1", "t2")
        ba = cache.best_join("t2", "t1")
        assert ab == ("id", "id")
        assert ba == (ab[1], ab[0])

    def test_neighbors_sorted_best_first(self):
        cache = build_cache(small_corpus(), HashingEmbedder(dimension=64))
        neighbors = cache.neighbors("t1")
        scores = [s for _, s in neighbors]
        assert scores == sorted(scores, reverse=True)
        assert {n for n, _ in neighbors} == {"t2", "t4"}
        assert cache.neighbors("t3") == []

    def test_single_table_corpus_gives_empty_cache(self):
        corpus = TableCorpus(tables=(make_table("t1", ["a"], [["1"]]),), provenance={})
        cache = build_cache(corpus, HashingEmbedder(dimension=16))
        assert len(cache) == 0

    def test_each_header_embedded_once(self):
        emb = CountingEmbedder(dimension=64)
        corpus = small_corpus()
        build_cache(corpus, emb)
        total_columns = sum(len(t.columns) for t in corpus)
        assert emb.calls == total_columns

    def test_round_trip_preserves_everything(self, tmp_path):
        emb = HashingEmbedder(dimension=64)
        cache = build_cache(small_corpus(), emb)
        path = tmp_path / "cache.json"
        cache.save(path)
        loaded = CompatibilityCache.load(path, expected_backend_id=emb.backend_id)
        assert loaded.backend_id == cache.backend_id
        assert len(loaded) == len(cache)
        for edge in cache:
            other = loaded.edge(edge.left_table, edge.right_table)
            assert other == edge

    def test_rebuild_writes_identical_bytes(self, tmp_path):
        emb = HashingEmbedder(dimension=64)
        p1 = tmp_path / "one.json"
        p2 = tmp_path / "two.json"
        build_cache(small_corpus(), emb).save(p1)
        build_cache(small_corpus(), emb).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_load_rejects_backend_mismatch(self, tmp_path):
        cache = build_cache(small_corpus(), HashingEmbedder(dimension=64))
        path = tmp_path / "cache.json"
        cache.save(path)
        with pytest.raises(BackendMismatchError):
            CompatibilityCache.load(path, expected_backend_id="http:other-model")

    def test_load_rejects_malformed_payloads(self, tmp_path):
        path = tmp_path / "cache.json"
        path.write_text(json.dumps({"version": 1, "backend_id": "x", "pairs": {"a": {}}}))
        with pytest.raises(CorpusError):
            CompatibilityCache.load(path)
        path.write_text(
            json.dumps(
                {
                    "version": 1,
                    "backend_id": "x",
                    "pairs": {"a|b": {"cs": 0.5, "join": ["z.c1", "b.c2"]}},
                }
            )
        )
        with pytest.raises(CorpusError):
            CompatibilityCache.load(path)
        path.write_text("{not json")
        with pytest.raises(CorpusError):
            CompatibilityCache.load(path)

    def test_add_validates_edges(self):
        cache = CompatibilityCache()
        with pytest.raises(ValueError):
            cache.add(JoinEdge(0.5, "b", "x", "a", "y"))
        with pytest.raises(ValueError):
            cache.add(JoinEdge(0.0, "a", "x", "b", "y"))

    def test_cache_agrees_with_oracle_on_random_corpora(self):
        emb = HashingEmbedder(dimension=48)
        rng = np.random.default_rng(11)
        for _ in range(10):
            corpus = random_corpus(rng, max_tables=4, max_cols=5, max_rows=30)
            cache = build_cache(corpus, emb)
            tables = sorted(corpus, key=lambda t: t.id)
            for i, ti in enumerate(tables):
                for tj in tables[i + 1 :]:
                    want = oracle_table_compatibility(ti, tj, emb)
                    if want is None:
                        assert cache.edge(ti.id, tj.id) is None
                    else:
                        assert cache.score(ti.id, tj.id) == pytest.approx(want[0], abs=1e-12)
                        assert cache.best_join(ti.id, tj.id) == want[1]


# ---------------------------------------------------------------------------
# Gold-join evaluation
# ---------------------------------------------------------------------------


def fixed_cache():
    return CompatibilityCache(
        edges=[JoinEdge(0.6, "a", "k", "b", "fk")],
        backend_id="stub",
    )


class TestEvaluateCache:
    def test_correct_pair_above_threshold(self):
        gold = [GoldJoin("a", "b", True, ("k", "fk"))]
        report = evaluate_cache(fixed_cache(), gold)
        assert report["joinability_accuracy"] == 1.0
        assert report["column_accuracy"] == 1.0
        assert report["avg_score_error"] == pytest.approx(0.4, abs=1e-12)
        assert report["pairs"] == 1.0
        assert report["joinable_pairs"] == 1.0

    def test_absent_pair_counts_as_zero_score(self):
        gold = [
            GoldJoin("a", "b", True, ("k", "fk")),
            GoldJoin("a", "c", False),
        ]
        report = evaluate_cache(fixed_cache(), gold)
        assert report["joinability_accuracy"] == 1.0
        assert report["avg_score_error"] == pytest.approx(0.2, abs=1e-12)

    def test_missing_joinable_pair_is_an_error(self):
        gold = [GoldJoin("a", "c", True)]
        report = evaluate_cache(fixed_cache(), gold)
        assert report["joinability_accuracy"] == 0.0
        assert report["avg_score_error"] == 1.0

    def test_score_below_threshold_counts_as_not_joinable(self):
        cache = CompatibilityCache(edges=[JoinEdge(0.3, "a", "k", "b", "fk")])
        report = evaluate_cache(cache, [GoldJoin("a", "b", True)])
        assert report["joinability_accuracy"] == 0.0
        report = evaluate_cache(cache, [GoldJoin("a", "b", True)], threshold=0.25)
        assert report["joinability_accuracy"] == 1.0

    def test_column_match_ignores_side_order(self):
        gold = [GoldJoin("b", "a", True, ("fk", "k"))]
        report = evaluate_cache(fixed_cache(), gold)
        assert report["column_accuracy"] == 1.0

    def test_wrong_columns_fail_column_accuracy(self):
        gold = [GoldJoin("a", "b", True, ("k", "other"))]
        report = evaluate_cache(fixed_cache(), gold)
        assert report["joinability_accuracy"] == 1.0
        assert report["column_accuracy"] == 0.0

    def test_column_accuracy_scope(self):
        # only gold-joinable pairs with annotated columns enter the denominator
        gold = [
            GoldJoin("a", "b", True, ("k", "fk")),
            GoldJoin("a", "c", False, ("k", "x")),
            GoldJoin("b", "c", True),
        ]
        report = evaluate_cache(fixed_cache(), gold)
        assert report["column_accuracy"] == 1.0
        assert report["joinable_pairs"] == 2.0

    def test_empty_gold_rejected(self):
        with pytest.raises(ValueError):
            evaluate_cache(fixed_cache(), [])

    def test_corpus_validation(self):
        corpus = TableCorpus(
            tables=(
                make_table("a", ["k"], [["1"]]),
                make_table("b", ["fk"], [["1"]]),
            ),
            provenance={},
        )
        good = [GoldJoin("a", "b", True, ("k", "fk"))]
        evaluate_cache(fixed_cache(), good, corpus=corpus)
        with pytest.raises(CorpusError):
            evaluate_cache(fixed_cache(), [GoldJoin("a", "zzz", True)], corpus=corpus)
        with pytest.raises(CorpusError):
            evaluate_cache(
                fixed_cache(), [GoldJoin("a", "b", True, ("nope", "fk"))], corpus=corpus
            )

    def test_gold_joins_from_records(self):
        records = [
            {"table_a": "a", "table_b": "b", "joinable": True, "gold_columns": ["k", "fk"]},
            {"table_a": "a", "table_b": "c", "joinable": False},
        ]
        gold = gold_joins_from_records(records)
        assert gold[0] == GoldJoin("a", "b", True, ("k", "fk"))
        assert gold[1] == GoldJoin("a", "c", False, None)
        with pytest.raises(CorpusError):
            gold_joins_from_records([{"table_a": "a"}])
        with pytest.raises(CorpusError):
            gold_joins_from_records(
                [{"table_a": "a", "table_b": "b", "joinable": True, "gold_columns": ["k"]}]
            )

    def test_default_threshold_constant(self):
        assert JOINABILITY_THRESHOLD == 0.5
