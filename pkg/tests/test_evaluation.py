"""Filtered ranking, MRR/Precision@K, ANOVA, and stage timing."""

import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from walklift.evaluation import (
    RankQuery,
    anova_one_way,
    evaluate_link_prediction,
    mrr,
    precision_at_k,
    rank_candidates,
)
from walklift.graphs import Graph, Triple, split_edges, to_triples
from walklift.kgembed import (
    EntityAuxParams,
    KgModelKind,
    init_relation_params,
    score,
    zero_relation,
)
from walklift.timing import StageTiming, time_stage
from walklift.walkembed import EmbeddingMatrix

ALL_KINDS = list(KgModelKind)


def oracle_rank(q, emb, aux, kind, rel, filter_triples):
    """Brute force: score one by one, sort descending, mid-rank ties."""
    n = emb.node_count
    predict_tail = q.direction == "predict_tail"
    scored = []
    for c in range(n):
        if c == q.known_entity:
            continue
        completed = (
            Triple(q.known_entity, 0, c) if predict_tail else Triple(c, 0, q.known_entity)
        )
        if c != q.true_answer and completed in filter_triples:
            continue
        if kind is KgModelKind.TRANSD:
            h_aux, t_aux = aux.projection[completed.head], aux.projection[completed.tail]
        elif kind is KgModelKind.SIMPLE:
            h_aux, t_aux = aux.second[completed.head], aux.second[completed.tail]
        else:
            h_aux = t_aux = None
        s = score(
            kind,
            emb.values[completed.head],
            emb.values[completed.tail],
            rel,
            h_aux,
            t_aux,
        )
        scored.append((s, c))
    scored.sort(key=lambda t: -t[0])
    s_true = next(s for s, c in scored if c == q.true_answer)
    positions = [i for i, (s, _) in enumerate(scored) if s == s_true]
    # mid-rank over the tied stretch, 1-indexed
    return 1.0 + (positions[0] + positions[-1]) / 2.0


class TestRankCandidates:
    def test_top_scored_is_rank_one(self):
        emb = EmbeddingMatrix(np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [9.0, 9.0]]))
        q = RankQuery(known_entity=0, direction="predict_tail", true_answer=1)
        rank = rank_candidates(q, emb, None, KgModelKind.TRANSE, zero_relation(2), set())
        assert rank == 1.0

    def test_all_tied_gives_mid_rank(self):
        emb = EmbeddingMatrix(np.tile([1.0, 2.0], (4, 1)))
        q = RankQuery(known_entity=0, direction="predict_tail", true_answer=2)
        rank = rank_candidates(q, emb, None, KgModelKind.TRANSE, zero_relation(2), set())
        assert rank == 2.0  # 1 + 2 * 0.5 among 3 tied candidates

    def test_filter_removes_known_better_candidate(self):
        # Candidate 1 scores above the true answer 2 but is a known triple,
        # so filtering restores rank 1.
        emb = EmbeddingMatrix(
            np.array([[0.0, 0.0], [0.1, 0.0], [0.3, 0.0], [5.0, 0.0], [9.0, 0.0]])
        )
        q = RankQuery(known_entity=0, direction="predict_tail", true_answer=2)
        kind, rel = KgModelKind.TRANSE, zero_relation(2)
        unfiltered = rank_candidates(q, emb, None, kind, rel, set())
        filtered = rank_candidates(q, emb, None, kind, rel, {Triple(0, 0, 1)})
        assert unfiltered == 2.0
        assert filtered == 1.0

    def test_filtered_rank_never_worse(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(3, 9))
            emb = EmbeddingMatrix(rng.normal(0, 1, (n, 3)))
            known, true = 0, 1
            q = RankQuery(known_entity=known, direction="predict_tail", true_answer=true)
            flt = {
                Triple(known, 0, int(c))
                for c in rng.integers(0, n, size=3)
                if int(c) not in (known, true)
            }
            kind, rel = KgModelKind.TRANSE, zero_relation(3)
            assert rank_candidates(q, emb, None, kind, rel, flt) <= rank_candidates(
                q, emb, None, kind, rel, set()
            )

    def test_agrees_with_bruteforce_oracle(self):
        rng = np.random.default_rng(1)
        for trial in range(300):
            n = int(rng.integers(3, 9))
            d = 3
            kind = ALL_KINDS[trial % len(ALL_KINDS)]
            # quantized entries force score ties with positive probability
            emb = EmbeddingMatrix(np.round(rng.normal(0, 1, (n, d)), 1))
            aux = None
            if kind is KgModelKind.TRANSD:
                aux = EntityAuxParams(kind=kind, projection=np.round(rng.normal(0, 1, (n, d)), 1))
            elif kind is KgModelKind.SIMPLE:
                aux = EntityAuxParams(kind=kind, second=np.round(rng.normal(0, 1, (n, d)), 1))
            rel = init_relation_params(kind, d, seed=trial)
            known = int(rng.integers(n))
            true = int(rng.integers(n))
            while true == known:
                true = int(rng.integers(n))
            direction = "predict_tail" if rng.random() < 0.5 else "predict_head"
            q = RankQuery(known_entity=known, direction=direction, true_answer=true)
            flt = set()
            for _ in range(int(rng.integers(0, 5))):
                c = int(rng.integers(n))
                if c != known and c != true:
                    flt.add(Triple(known, 0, c) if direction == "predict_tail" else Triple(c, 0, known))
            got = rank_candidates(q, emb, aux, kind, rel, flt)
            want = oracle_rank(q, emb, aux, kind, rel, flt)
            assert got == want

    def test_query_validation(self):
        with pytest.raises(ValueError):
            RankQuery(known_entity=1, direction="predict_tail", true_answer=1)
        with pytest.raises(ValueError):
            RankQuery(known_entity=0, direction="sideways", true_answer=1)


class TestMrr:
    def test_perfect(self):
        assert mrr([1, 1, 1]) == 1.0

    def test_direct_formula(self):
        assert mrr([1, 2, 4]) == pytest.approx((1 + 0.5 + 0.25) / 3)

    def test_single(self):
        assert mrr([10]) == pytest.approx(0.1)

    def test_empty(self):
        with pytest.raises(ValueError):
            mrr([])

    def test_rejects_sub_one(self):
        with pytest.raises(ValueError):
            mrr([0.5])


class TestPrecisionAtK:
    def test_count(self):
        assert precision_at_k([1, 3, 7], 3) == pytest.approx(2 / 3)

    def test_saturates(self):
        assert precision_at_k([1, 3, 7], 100) == 1.0

    def test_miss(self):
        assert precision_at_k([2], 1) == 0.0

    def test_bad_k(self):
        with pytest.raises(ValueError):
            precision_at_k([1], 0)

    def test_empty(self):
        with pytest.raises(ValueError):
            precision_at_k([], 3)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(2)
        ranks = rng.integers(1, 30, size=40)
        vals = [precision_at_k(ranks, k) for k in range(1, 31)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))


def ring_graph(n):
    return Graph(node_count=n, edges=frozenset((i, (i + 1) % n) for i in range(n)))


class TestEvaluateLinkPrediction:
    def test_query_count_is_two_per_edge(self):
        g = ring_graph(10)
        split = split_edges(g, 0.3, seed=0)
        emb = EmbeddingMatrix(np.random.default_rng(1).normal(0, 1, (10, 4)))
        report = evaluate_link_prediction(
            split, emb, None, KgModelKind.TRANSE, zero_relation(4)
        )
        assert report.query_count == 2 * len(split.held_out_edges)
        assert set(report.precision_at_k) == {1, 3, 10}
        assert "evaluate" in report.timings

    def test_perfect_embeddings_reach_mrr_one(self):
        # Place each node at angle 2*pi*i/n on a circle: nearest nodes are the
        # ring neighbors, so every held-out ring edge ranks first after
        # filtering out the observed ones.
        n = 12
        g = ring_graph(n)
        split = split_edges(g, 0.25, seed=1)
        angles = 2 * np.pi * np.arange(n) / n
        emb = EmbeddingMatrix(np.stack([np.cos(angles), np.sin(angles)], axis=1))
        report = evaluate_link_prediction(
            split, emb, None, KgModelKind.TRANSE, zero_relation(2)
        )
        assert report.mrr == 1.0
        assert report.precision_at_k[1] == 1.0

    def test_random_embeddings_match_harmonic_oracle(self):
        # With iid random embeddings the true answer's rank is uniform over
        # the filtered candidates, so E[MRR] per query is H(c)/c.
        rng = np.random.default_rng(3)
        n = 20
        edges = set()
        while len(edges) < 20:
            u, v = rng.integers(n), rng.integers(n)
            if u != v:
                edges.add((min(int(u), int(v)), max(int(u), int(v))))
        g = Graph(node_count=n, edges=frozenset(edges))
        split = split_edges(g, 0.25, seed=4)

        # exact expectation from the per-query filtered candidate counts
        full = set(to_triples(g))
        expected = []
        for u, v in split.held_out_edges:
            for known in (u, v):
                c = sum(
                    1
                    for cand in range(n)
                    if cand != known
                    and (cand in (u, v) or Triple(known, 0, cand) not in full)
                )
                expected.append(sum(1.0 / k for k in range(1, c + 1)) / c)
        oracle = float(np.mean(expected))

        mrrs = []
        for seed in range(100):
            emb = EmbeddingMatrix(np.random.default_rng(1000 + seed).normal(0, 1, (n, 8)))
            mrrs.append(
                evaluate_link_prediction(
                    split, emb, None, KgModelKind.TRANSE, zero_relation(8)
                ).mrr
            )
        mean = float(np.mean(mrrs))
        assert mean == pytest.approx(oracle, abs=0.03)
        assert abs(mean - 0.187) <= 0.03

    def test_no_held_out_edges(self):
        g = ring_graph(5)
        split = split_edges(g, 0.0, seed=0)
        emb = EmbeddingMatrix(np.zeros((5, 2)))
        with pytest.raises(ValueError):
            evaluate_link_prediction(split, emb, None, KgModelKind.TRANSE, zero_relation(2))

    def test_node_count_mismatch(self):
        g = ring_graph(6)
        split = split_edges(g, 0.3, seed=0)
        emb = EmbeddingMatrix(np.zeros((5, 2)))
        with pytest.raises(ValueError):
            evaluate_link_prediction(split, emb, None, KgModelKind.TRANSE, zero_relation(2))


def f_density(x, d1, d2):
    c = (
        math.gamma((d1 + d2) / 2)
        / (math.gamma(d1 / 2) * math.gamma(d2 / 2))
        * (d1 / d2) ** (d1 / 2)
    )
    return c * x ** (d1 / 2 - 1) * (1 + d1 * x / d2) ** (-(d1 + d2) / 2)


class TestAnova:
    def test_identical_groups(self):
        res = anova_one_way([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert res.f_statistic == 0.0
        assert res.p_value == 1.0
        assert res.mean_difference == 0.0

    def test_hand_case_f(self):
        res = anova_one_way([1, 2, 3], [4, 5, 6])
        assert res.f_statistic == pytest.approx(13.5, abs=1e-9)
        assert res.mean_difference == pytest.approx(3.0)

    def test_hand_case_p_vs_quadrature(self):
        res = anova_one_way([1, 2, 3], [4, 5, 6])
        # independent oracle: integrate the F(1, 4) density over the tail
        tail, _ = integrate.quad(f_density, res.f_statistic, np.inf, args=(1, 4))
        assert res.p_value == pytest.approx(0.0213, abs=1e-3)
        assert res.p_value == pytest.approx(tail, abs=1e-7)

    def test_zero_within_variance_unequal_means(self):
        res = anova_one_way([1.0, 1.0], [2.0, 2.0])
        assert math.isinf(res.f_statistic)
        assert res.p_value == 0.0

    def test_f_equals_t_squared(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            n1, n2 = int(rng.integers(2, 12)), int(rng.integers(2, 12))
            g1 = rng.normal(0, 1, n1)
            g2 = rng.normal(0.5, 2, n2)
            res = anova_one_way(g1, g2)
            sp2 = (
                ((g1 - g1.mean()) ** 2).sum() + ((g2 - g2.mean()) ** 2).sum()
            ) / (n1 + n2 - 2)
            t = (g2.mean() - g1.mean()) / math.sqrt(sp2 * (1 / n1 + 1 / n2))
            assert abs(res.f_statistic - t * t) <= 1e-9 * max(1.0, t * t)

    def test_matches_scipy(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            g1 = rng.normal(0, 1, int(rng.integers(2, 20)))
            g2 = rng.normal(0.3, 1.5, int(rng.integers(2, 20)))
            res = anova_one_way(g1, g2)
            ref = stats.f_oneway(g1, g2)
            assert res.f_statistic == pytest.approx(ref.statistic, rel=1e-9)
            assert res.p_value == pytest.approx(ref.pvalue, rel=1e-7)

    def test_group_size_validation(self):
        with pytest.raises(ValueError):
            anova_one_way([1.0], [2.0, 3.0])


class TestTimeStage:
    def test_noop_bounds(self):
        _, cpu, wall = time_stage("noop", lambda: None)
        assert 0.0 <= cpu < 0.01
        assert wall >= 0.0

    def test_result_passthrough_and_accumulation(self):
        timings = {}
        out, _, _ = time_stage("stage", lambda: 41 + 1, timings)
        assert out == 42
        time_stage("stage", lambda: None, timings)
        assert timings["stage"].cpu_seconds >= 0.0

    def test_nested_stages_bounded_by_total(self):
        def inner():
            t0 = time.process_time()
            while time.process_time() - t0 < 0.02:
                pass

        timings = {}

        def outer():
            time_stage("a", inner, timings)
            time_stage("b", inner, timings)

        _, total_cpu, _ = time_stage("total", outer, timings)
        parts = timings["a"].cpu_seconds + timings["b"].cpu_seconds
        assert parts <= total_cpu * 1.05

    def test_spin_measurement_stability(self):
        def spin():
            acc = 0
            for i in range(10**6):
                acc += i
            return acc

        cpus = [time_stage("spin", spin)[1] for _ in range(8)]
        cv = np.std(cpus) / np.mean(cpus)
        assert cv < 0.25

    def test_stage_timing_add(self):
        a = StageTiming(cpu_seconds=1.0, wall_seconds=2.0)
        b = StageTiming(cpu_seconds=0.5, wall_seconds=0.25)
        assert (a + b) == StageTiming(1.5, 2.25)
