"""Filtered link-prediction ranking, MRR / Precision@K, and one-way ANOVA.

Every held-out edge is queried in both directions. The filtered protocol
removes candidates that complete a known-true triple (keeping the query's own
answer), and ties contribute half a rank each so results stay deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from .graphs import EdgeSplit, Triple, to_triples
from .kgembed import EntityAuxParams, KgModelKind, RelationParams, score_batch
from .timing import StageTiming, time_stage
from .walkembed import EmbeddingMatrix

__all__ = [
    "RankQuery",
    "MetricsReport",
    "AnovaResult",
    "rank_candidates",
    "mrr",
    "precision_at_k",
    "evaluate_link_prediction",
    "anova_one_way",
]

DIRECTIONS = ("predict_tail", "predict_head")
DEFAULT_PRECISION_KS = (1, 3, 10)


@dataclass(frozen=True)
class RankQuery:
    """One ranking task: complete (known, r, ?) or (?, r, known)."""

    known_entity: int
    direction: str
    true_answer: int

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if self.known_entity == self.true_answer:
            raise ValueError("known entity and true answer must differ")


@dataclass
class MetricsReport:
    """Per-graph ranking metrics plus stage timings."""

    mrr: float
    precision_at_k: dict[int, float]
    query_count: int
    timings: dict[str, StageTiming] = field(default_factory=dict)


@dataclass(frozen=True)
class AnovaResult:
    f_statistic: float
    p_value: float
    mean_difference: float  # mean(group2) - mean(group1)


def _aux_rows(kind: KgModelKind, aux: EntityAuxParams | None) -> np.ndarray | None:
    if kind is KgModelKind.TRANSD:
        if aux is None or aux.projection is None:
            raise ValueError("transd ranking requires projection aux vectors")
        return aux.projection
    if kind is KgModelKind.SIMPLE:
        if aux is None or aux.second is None:
            raise ValueError("simple ranking requires second-embedding aux vectors")
        return aux.second
    return None


def rank_candidates(
    q: RankQuery,
    emb: EmbeddingMatrix,
    aux: EntityAuxParams | None,
    kind: KgModelKind,
    rel: RelationParams,
    filter_triples: set[Triple],
    norm_order: int = 2,
) -> float:
    """Filtered rank of the true answer among all other entities.

    Candidates completing a triple in ``filter_triples`` are removed (the true
    answer always survives). Rank = 1 + #strictly-better + 0.5 * #tied.
    """
    kind = KgModelKind(kind)
    values = emb.values
    n = emb.node_count
    known = q.known_entity
    if not (0 <= known < n and 0 <= q.true_answer < n):
        raise ValueError("query entities outside the embedding's node range")

    predict_tail = q.direction == "predict_tail"
    survivors = []
    for c in range(n):
        if c == known:
            continue
        completed = Triple(known, 0, c) if predict_tail else Triple(c, 0, known)
        if c != q.true_answer and completed in filter_triples:
            continue
        survivors.append(c)
    cand = np.array(survivors, dtype=np.int64)

    aux_matrix = _aux_rows(kind, aux)
    known_row = np.broadcast_to(values[known], (cand.size, values.shape[1]))
    cand_rows = values[cand]
    if aux_matrix is not None:
        known_aux = np.broadcast_to(aux_matrix[known], known_row.shape)
        cand_aux = aux_matrix[cand]
    else:
        known_aux = cand_aux = None
    if predict_tail:
        scores = score_batch(
            kind, known_row, cand_rows, rel, known_aux, cand_aux, norm_order
        )
    else:
        scores = score_batch(
            kind, cand_rows, known_row, rel, cand_aux, known_aux, norm_order
        )

    true_pos = int(np.nonzero(cand == q.true_answer)[0][0])
    s_true = scores[true_pos]
    better = int((scores > s_true).sum())
    tied = int((scores == s_true).sum()) - 1
    return 1.0 + better + 0.5 * tied


def mrr(ranks) -> float:
    """Mean reciprocal rank."""
    arr = np.asarray(list(ranks), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("ranks must be non-empty")
    if np.any(arr < 1.0):
        raise ValueError("ranks must be >= 1")
    return float(np.mean(1.0 / arr))


def precision_at_k(ranks, k: int) -> float:
    """Fraction of queries whose true answer ranks within the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    arr = np.asarray(list(ranks), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("ranks must be non-empty")
    return float(np.mean(arr <= k))


def evaluate_link_prediction(
    split: EdgeSplit,
    emb: EmbeddingMatrix,
    aux: EntityAuxParams | None,
    kind: KgModelKind,
    rel: RelationParams,
    ks=DEFAULT_PRECISION_KS,
    norm_order: int = 2,
) -> MetricsReport:
    """Rank every held-out edge in both directions under the filtered protocol.

    The filter contains all train triples plus the held-out triples
    themselves, so other true answers never displace the queried one.
    """
    if not split.held_out_edges:
        raise ValueError("split has no held-out edges to evaluate")
    train_graph = split.train_graph
    if emb.node_count != train_graph.node_count:
        raise ValueError(
            f"embeddings have {emb.node_count} rows for a graph of "
            f"{train_graph.node_count} nodes"
        )

    filter_triples = set(to_triples(train_graph))
    for u, v in split.held_out_edges:
        filter_triples.add(Triple(u, 0, v))
        filter_triples.add(Triple(v, 0, u))

    def run() -> list[float]:
        ranks: list[float] = []
        for u, v in split.held_out_edges:
            tail_q = RankQuery(known_entity=u, direction="predict_tail", true_answer=v)
            head_q = RankQuery(known_entity=v, direction="predict_head", true_answer=u)
            ranks.append(
                rank_candidates(tail_q, emb, aux, kind, rel, filter_triples, norm_order)
            )
            ranks.append(
                rank_candidates(head_q, emb, aux, kind, rel, filter_triples, norm_order)
            )
        return ranks

    timings: dict[str, StageTiming] = {}
    ranks, _, _ = time_stage("evaluate", run, timings)
    return MetricsReport(
        mrr=mrr(ranks),
        precision_at_k={k: precision_at_k(ranks, k) for k in ks},
        query_count=len(ranks),
        timings=timings,
    )


def anova_one_way(group1, group2) -> AnovaResult:
    """Standard one-way ANOVA for two groups, df = (1, n1 + n2 - 2).

    The upper tail of the F distribution is evaluated through the regularized
    incomplete beta function. Zero within-group variance with unequal means
    maps to (inf, p=0); zero between-group variance to (0, p=1).
    """
    g1 = np.asarray(list(group1), dtype=np.float64)
    g2 = np.asarray(list(group2), dtype=np.float64)
    if g1.size < 2 or g2.size < 2:
        raise ValueError("each group needs at least 2 values")
    n1, n2 = g1.size, g2.size
    mean1, mean2 = float(g1.mean()), float(g2.mean())
    grand = float((g1.sum() + g2.sum()) / (n1 + n2))
    ss_between = n1 * (mean1 - grand) ** 2 + n2 * (mean2 - grand) ** 2
    ss_within = float(((g1 - mean1) ** 2).sum() + ((g2 - mean2) ** 2).sum())
    df2 = n1 + n2 - 2
    mean_diff = mean2 - mean1

    if ss_between == 0.0:
        return AnovaResult(f_statistic=0.0, p_value=1.0, mean_difference=mean_diff)
    if ss_within == 0.0:
        return AnovaResult(
            f_statistic=math.inf, p_value=0.0, mean_difference=mean_diff
        )
    f_stat = ss_between / (ss_within / df2)
    # P(F_{1,df2} > f) = I_x(df2/2, 1/2) with x = df2 / (df2 + f).
    p = float(betainc(df2 / 2.0, 0.5, df2 / (df2 + f_stat)))
    p = min(max(p, 0.0), 1.0)
    return AnovaResult(f_statistic=float(f_stat), p_value=p, mean_difference=mean_diff)
