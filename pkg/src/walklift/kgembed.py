"""Knowledge-graph embedding objectives over a single symmetric relation.

Six scorers (TransE, TransH, TransD, DistMult, RESCAL, SimplE) share one
margin-ranking SGD trainer. Relation parameters are frozen: drawn once and
never updated, since the single friendship-style relation carries no signal
worth learning. Training either starts from scratch (provenance "target") or
warm-starts from walk-based source embeddings (provenance "finetuned").
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .graphs import Graph, Triple, to_triples
from .walkembed import EmbeddingMatrix

__all__ = [
    "KgModelKind",
    "RelationParams",
    "EntityAuxParams",
    "KgTrainConfig",
    "KgTrainResult",
    "init_relation_params",
    "zero_relation",
    "score",
    "score_batch",
    "margin_loss",
    "margin_loss_entity_gradients",
    "negative_sample",
    "train",
]

# L2 weight decay applied to non-translational kinds in place of the
# unit-ball projection used by the translational family.
WEIGHT_DECAY = 1e-5


class KgModelKind(str, Enum):
    TRANSE = "transe"
    TRANSH = "transh"
    TRANSD = "transd"
    DISTMULT = "distmult"
    RESCAL = "rescal"
    SIMPLE = "simple"


TRANSLATIONAL = frozenset(
    {KgModelKind.TRANSE, KgModelKind.TRANSH, KgModelKind.TRANSD}
)
AUX_KINDS = frozenset({KgModelKind.TRANSD, KgModelKind.SIMPLE})


def _frozen_array(values, shape) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite parameter values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RelationParams:
    """Frozen parameters of the single relation, per model kind.

    vector: translation (TransE/H/D), diagonal (DistMult) or forward vector
    (SimplE); normal: TransH hyperplane unit normal; projection: TransD
    relation projection; matrix: RESCAL bilinear form; inverse_vector: SimplE
    inverse-direction vector.
    """

    kind: KgModelKind
    vector: np.ndarray | None = None
    normal: np.ndarray | None = None
    projection: np.ndarray | None = None
    matrix: np.ndarray | None = None
    inverse_vector: np.ndarray | None = None

    def __post_init__(self) -> None:
        kind = KgModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        need_vector = kind is not KgModelKind.RESCAL
        if need_vector:
            if self.vector is None:
                raise ValueError(f"{kind.value} requires a relation vector")
            d = len(self.vector)
            object.__setattr__(self, "vector", _frozen_array(self.vector, (d,)))
        else:
            if self.matrix is None:
                raise ValueError("rescal requires a relation matrix")
            d = np.asarray(self.matrix).shape[0]
            object.__setattr__(self, "matrix", _frozen_array(self.matrix, (d, d)))
        if kind is KgModelKind.TRANSH:
            if self.normal is None:
                raise ValueError("transh requires a hyperplane normal")
            w = _frozen_array(self.normal, (d,))
            if abs(np.linalg.norm(w) - 1.0) > 1e-9:
                raise ValueError("transh normal must have unit L2 norm")
            object.__setattr__(self, "normal", w)
        if kind is KgModelKind.TRANSD:
            if self.projection is None:
                raise ValueError("transd requires a relation projection vector")
            object.__setattr__(
                self, "projection", _frozen_array(self.projection, (d,))
            )
        if kind is KgModelKind.SIMPLE:
            if self.inverse_vector is None:
                raise ValueError("simple requires an inverse-direction vector")
            object.__setattr__(
                self, "inverse_vector", _frozen_array(self.inverse_vector, (d,))
            )

    @property
    def dim(self) -> int:
        if self.kind is KgModelKind.RESCAL:
            return self.matrix.shape[0]
        return self.vector.shape[0]


@dataclass(frozen=True)
class EntityAuxParams:
    """Per-entity auxiliary vectors some scorers need.

    projection: TransD entity projection vectors (n x d); second: SimplE
    second (tail-role) embeddings (n x d). Empty for the other kinds.
    """

    kind: KgModelKind
    projection: np.ndarray | None = None
    second: np.ndarray | None = None

    def __post_init__(self) -> None:
        kind = KgModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is KgModelKind.TRANSD and self.projection is None:
            raise ValueError("transd aux requires projection vectors")
        if kind is KgModelKind.SIMPLE and self.second is None:
            raise ValueError("simple aux requires second embeddings")
        for name in ("projection", "second"):
            val = getattr(self, name)
            if val is not None:
                arr = np.array(val, dtype=np.float64)
                if arr.ndim != 2 or not np.all(np.isfinite(arr)):
                    raise ValueError(f"{name} must be a finite 2-D array")
                arr.setflags(write=False)
                object.__setattr__(self, name, arr)

    @property
    def node_count(self) -> int | None:
        for arr in (self.projection, self.second):
            if arr is not None:
                return arr.shape[0]
        return None


@dataclass(frozen=True)
class KgTrainConfig:
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 500
    negatives_per_positive: int = 1
    norm_order: int = 2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.norm_order not in (1, 2):
            raise ValueError("norm_order must be 1 or 2")


@dataclass(frozen=True)
class KgTrainResult:
    embeddings: EmbeddingMatrix
    relation: RelationParams
    aux: EntityAuxParams
    loss_history: tuple[float, ...]


def init_relation_params(kind: KgModelKind, d: int, seed: int) -> RelationParams:
    """Draw the frozen relation parameters.

    Translational kinds get a zero translation (a symmetric relation is best
    served by no shift); everything stochastic comes from uniform(-0.1, 0.1),
    with the TransH normal renormalized to unit length and the RESCAL matrix
    scaled by 1/sqrt(d) so its row action stays at the same magnitude.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    kind = KgModelKind(kind)
    rng = np.random.default_rng(seed)
    if kind in TRANSLATIONAL:
        vector = np.zeros(d)
        if kind is KgModelKind.TRANSE:
            return RelationParams(kind=kind, vector=vector)
        if kind is KgModelKind.TRANSH:
            w = rng.uniform(-0.1, 0.1, size=d)
            while np.linalg.norm(w) == 0.0:
                w = rng.uniform(-0.1, 0.1, size=d)
            return RelationParams(kind=kind, vector=vector, normal=w / np.linalg.norm(w))
        return RelationParams(
            kind=kind, vector=vector, projection=rng.uniform(-0.1, 0.1, size=d)
        )
    if kind is KgModelKind.DISTMULT:
        return RelationParams(kind=kind, vector=rng.uniform(-0.1, 0.1, size=d))
    if kind is KgModelKind.RESCAL:
        return RelationParams(
            kind=kind, matrix=rng.uniform(-0.1, 0.1, size=(d, d)) / math.sqrt(d)
        )
    return RelationParams(
        kind=kind,
        vector=rng.uniform(-0.1, 0.1, size=d),
        inverse_vector=rng.uniform(-0.1, 0.1, size=d),
    )


def zero_relation(d: int) -> RelationParams:
    """TransE relation with zero translation; plain negative-distance scoring."""
    return RelationParams(kind=KgModelKind.TRANSE, vector=np.zeros(d))


def _norms(diff: np.ndarray, order: int) -> np.ndarray:
    if order == 1:
        return np.abs(diff).sum(axis=1)
    return np.sqrt((diff * diff).sum(axis=1))


def score_batch(
    kind: KgModelKind,
    heads: np.ndarray,
    tails: np.ndarray,
    rel: RelationParams,
    head_aux: np.ndarray | None = None,
    tail_aux: np.ndarray | None = None,
    norm_order: int = 2,
) -> np.ndarray:
    """Plausibility scores for m (head, tail) vector rows; higher is better."""
    kind = KgModelKind(kind)
    heads = np.atleast_2d(np.asarray(heads, dtype=np.float64))
    tails = np.atleast_2d(np.asarray(tails, dtype=np.float64))
    if heads.shape != tails.shape:
        raise ValueError(f"head/tail shape mismatch: {heads.shape} vs {tails.shape}")
    if heads.shape[1] != rel.dim:
        raise ValueError(
            f"entity dim {heads.shape[1]} does not match relation dim {rel.dim}"
        )
    if kind in AUX_KINDS:
        if head_aux is None or tail_aux is None:
            raise ValueError(f"{kind.value} scoring requires auxiliary vectors")
        head_aux = np.atleast_2d(np.asarray(head_aux, dtype=np.float64))
        tail_aux = np.atleast_2d(np.asarray(tail_aux, dtype=np.float64))
        if head_aux.shape != heads.shape or tail_aux.shape != tails.shape:
            raise ValueError("auxiliary vector shape mismatch")

    if kind is KgModelKind.TRANSE:
        return -_norms(heads + rel.vector - tails, norm_order)
    if kind is KgModelKind.TRANSH:
        w = rel.normal
        hp = heads - np.outer(heads @ w, w)
        tp = tails - np.outer(tails @ w, w)
        return -_norms(hp + rel.vector - tp, norm_order)
    if kind is KgModelKind.TRANSD:
        rp = rel.projection
        hp = heads + np.outer((head_aux * heads).sum(axis=1), rp)
        tp = tails + np.outer((tail_aux * tails).sum(axis=1), rp)
        return -_norms(hp + rel.vector - tp, norm_order)
    if kind is KgModelKind.DISTMULT:
        return (heads * tails) @ rel.vector
    if kind is KgModelKind.RESCAL:
        return np.einsum("id,de,ie->i", heads, rel.matrix, tails)
    # SimplE: average of the forward and inverse trilinear products, with the
    # second (tail-role) embeddings supplying the primed vectors.
    return 0.5 * ((heads * tail_aux) @ rel.vector + (tails * head_aux) @ rel.inverse_vector)


def score(
    kind: KgModelKind,
    h_vec: np.ndarray,
    t_vec: np.ndarray,
    rel: RelationParams,
    h_aux: np.ndarray | None = None,
    t_aux: np.ndarray | None = None,
    norm_order: int = 2,
) -> float:
    """Scalar plausibility of one (head, tail) pair under the frozen relation."""
    out = score_batch(
        kind,
        np.asarray(h_vec, dtype=np.float64).reshape(1, -1),
        np.asarray(t_vec, dtype=np.float64).reshape(1, -1),
        rel,
        None if h_aux is None else np.asarray(h_aux, dtype=np.float64).reshape(1, -1),
        None if t_aux is None else np.asarray(t_aux, dtype=np.float64).reshape(1, -1),
        norm_order,
    )
    return float(out[0])


def _unit_residual(diff: np.ndarray, order: int) -> np.ndarray:
    if order == 1:
        return np.sign(diff)
    nrm = float(np.linalg.norm(diff))
    if nrm == 0.0:
        return np.zeros_like(diff)
    return diff / nrm


def _score_gradients(
    kind: KgModelKind,
    h: np.ndarray,
    t: np.ndarray,
    rel: RelationParams,
    h_aux: np.ndarray | None,
    t_aux: np.ndarray | None,
    norm_order: int,
) -> dict[str, np.ndarray]:
    """d(score)/d(entity vectors) for one triple.

    Keys: dh, dt and, for aux-carrying kinds, dh_aux / dt_aux.
    """
    if kind is KgModelKind.TRANSE:
        u = _unit_residual(h + rel.vector - t, norm_order)
        return {"dh": -u, "dt": u}
    if kind is KgModelKind.TRANSH:
        w = rel.normal
        hp = h - w * (w @ h)
        tp = t - w * (w @ t)
        u = _unit_residual(hp + rel.vector - tp, norm_order)
        pu = u - w * (w @ u)
        return {"dh": -pu, "dt": pu}
    if kind is KgModelKind.TRANSD:
        rp = rel.projection
        hp = h + rp * (h_aux @ h)
        tp = t + rp * (t_aux @ t)
        u = _unit_residual(hp + rel.vector - tp, norm_order)
        s = rp @ u
        return {
            "dh": -(u + h_aux * s),
            "dt": u + t_aux * s,
            "dh_aux": -s * h,
            "dt_aux": s * t,
        }
    if kind is KgModelKind.DISTMULT:
        return {"dh": rel.vector * t, "dt": rel.vector * h}
    if kind is KgModelKind.RESCAL:
        return {"dh": rel.matrix @ t, "dt": rel.matrix.T @ h}
    # SimplE
    return {
        "dh": 0.5 * rel.vector * t_aux,
        "dt": 0.5 * rel.inverse_vector * h_aux,
        "dh_aux": 0.5 * rel.inverse_vector * t,
        "dt_aux": 0.5 * rel.vector * h,
    }


def _vec_norm(diff: np.ndarray, order: int) -> float:
    if order == 1:
        return float(np.abs(diff).sum())
    return float(np.sqrt(diff @ diff))


def _triple_score(
    kind: KgModelKind,
    emb: np.ndarray,
    proj: np.ndarray | None,
    second: np.ndarray | None,
    rel: RelationParams,
    triple: Triple,
    norm_order: int,
) -> float:
    """Scalar fast path of score_batch for the training loop."""
    h, t = emb[triple.head], emb[triple.tail]
    if kind is KgModelKind.TRANSE:
        return -_vec_norm(h + rel.vector - t, norm_order)
    if kind is KgModelKind.TRANSH:
        w = rel.normal
        hp = h - w * (w @ h)
        tp = t - w * (w @ t)
        return -_vec_norm(hp + rel.vector - tp, norm_order)
    if kind is KgModelKind.TRANSD:
        rp = rel.projection
        hp = h + rp * (proj[triple.head] @ h)
        tp = t + rp * (proj[triple.tail] @ t)
        return -_vec_norm(hp + rel.vector - tp, norm_order)
    if kind is KgModelKind.DISTMULT:
        return float((h * t) @ rel.vector)
    if kind is KgModelKind.RESCAL:
        return float(h @ rel.matrix @ t)
    return float(
        0.5 * ((h * second[triple.tail]) @ rel.vector
               + (t * second[triple.head]) @ rel.inverse_vector)
    )


def _hinge_row_grads(
    kind: KgModelKind,
    emb: np.ndarray,
    proj: np.ndarray | None,
    second: np.ndarray | None,
    rel: RelationParams,
    pos: Triple,
    neg: Triple,
    margin: float,
    norm_order: int,
) -> tuple[float, dict[tuple[str, int], np.ndarray]]:
    """Hinge loss max(0, margin - s(pos) + s(neg)) and its row gradients.

    Gradient keys are (matrix, row) with matrix in {"emb", "projection",
    "second"}; an inactive hinge yields an empty map.
    """
    s_pos = _triple_score(kind, emb, proj, second, rel, pos, norm_order)
    s_neg = _triple_score(kind, emb, proj, second, rel, neg, norm_order)
    loss = margin - s_pos + s_neg
    if loss <= 0.0:
        return 0.0, {}

    aux = proj if kind is KgModelKind.TRANSD else second
    aux_name = "projection" if kind is KgModelKind.TRANSD else "second"
    grads: dict[tuple[str, int], np.ndarray] = {}

    def accumulate(triple: Triple, sign: float) -> None:
        h, t = triple.head, triple.tail
        h_aux = aux[h] if aux is not None else None
        t_aux = aux[t] if aux is not None else None
        parts = _score_gradients(kind, emb[h], emb[t], rel, h_aux, t_aux, norm_order)
        for key, row in (("dh", h), ("dt", t)):
            slot = ("emb", row)
            grads[slot] = grads.get(slot, 0.0) + sign * parts[key]
        if aux is not None:
            for key, row in (("dh_aux", h), ("dt_aux", t)):
                slot = (aux_name, row)
                grads[slot] = grads.get(slot, 0.0) + sign * parts[key]

    # d(loss)/d(params) = -d s(pos) + d s(neg) on the active hinge.
    accumulate(pos, -1.0)
    accumulate(neg, +1.0)
    return float(loss), grads


def margin_loss(
    kind: KgModelKind,
    emb: np.ndarray,
    rel: RelationParams,
    pos: Triple,
    neg: Triple,
    margin: float,
    aux: EntityAuxParams | None = None,
    norm_order: int = 2,
) -> float:
    """Hinge loss of one (positive, corrupted) pair; the training objective unit."""
    kind = KgModelKind(kind)
    proj = aux.projection if aux is not None else None
    second = aux.second if aux is not None else None
    emb = np.asarray(emb, dtype=np.float64)
    s_pos = _triple_score(kind, emb, proj, second, rel, pos, norm_order)
    s_neg = _triple_score(kind, emb, proj, second, rel, neg, norm_order)
    return max(0.0, margin - s_pos + s_neg)


def margin_loss_entity_gradients(
    kind: KgModelKind,
    emb: np.ndarray,
    rel: RelationParams,
    pos: Triple,
    neg: Triple,
    margin: float,
    aux: EntityAuxParams | None = None,
    norm_order: int = 2,
) -> dict[tuple[str, int], np.ndarray]:
    """Analytic row gradients of margin_loss w.r.t. entity (and aux) vectors."""
    kind = KgModelKind(kind)
    proj = aux.projection if aux is not None else None
    second = aux.second if aux is not None else None
    _, grads = _hinge_row_grads(
        kind, np.asarray(emb, dtype=np.float64), proj, second, rel, pos, neg,
        margin, norm_order,
    )
    return grads


def negative_sample(
    t: Triple, n: int, known: set[Triple], rng: np.random.Generator
) -> Triple:
    """Corrupt the head or tail (coin flip) with a uniform random entity.

    Rejects corruptions that reproduce the input, collapse head and tail, or
    appear in ``known``; after 4n failed attempts falls back to any corruption
    that differs from the input (needed for tiny graphs where every clean
    corruption is exhausted).
    """
    if n < 2:
        raise ValueError("need at least 2 entities to corrupt")
    for _ in range(4 * n):
        cand = int(rng.integers(n))
        if rng.random() < 0.5:
            trial = Triple(t.head, t.relation, cand)
        else:
            trial = Triple(cand, t.relation, t.tail)
        if trial == t or trial.head == trial.tail or trial in known:
            continue
        return trial
    return Triple(t.head, t.relation, (t.tail + 1) % n)


def _project_rows_to_ball(arr: np.ndarray, rows=None) -> None:
    if rows is None:
        norms = np.linalg.norm(arr, axis=1)
        mask = norms > 1.0
        if mask.any():
            arr[mask] /= norms[mask, None]
        return
    for r in rows:
        nrm = float(np.linalg.norm(arr[r]))
        if nrm > 1.0:
            arr[r] /= nrm


def train(
    g: Graph,
    kind: KgModelKind,
    cfg: KgTrainConfig,
    init: EmbeddingMatrix | None = None,
    dim: int | None = None,
    rel: RelationParams | None = None,
) -> KgTrainResult:
    """Margin-ranking SGD over both orientations of the graph's edges.

    ``init=None`` draws fresh uniform(-6/sqrt(d), 6/sqrt(d)) embeddings and
    returns provenance "target"; a provided matrix is warm-started and comes
    back as "finetuned". Relation parameters are drawn once (or taken from
    ``rel``) and returned bit-identical. epochs=0 returns the initialization
    untouched. Translational kinds keep every entity row inside the unit ball;
    the other kinds get L2 weight decay on touched rows instead.
    """
    kind = KgModelKind(kind)
    if g.edge_count < 1:
        raise ValueError("graph has no edges to train on")
    n = g.node_count
    rng = np.random.default_rng(cfg.seed)

    if init is not None:
        if init.node_count != n:
            raise ValueError(
                f"init has {init.node_count} rows but graph has {n} nodes"
            )
        d = init.dim
        values = np.array(init.values, dtype=np.float64)
        out_provenance = "finetuned"
    else:
        if dim is None:
            raise ValueError("dim is required when init is not given")
        d = int(dim)
        bound = 6.0 / math.sqrt(d)
        values = rng.uniform(-bound, bound, size=(n, d))
        out_provenance = "target"

    if rel is None:
        rel = init_relation_params(kind, d, seed=cfg.seed)
    elif rel.kind is not kind or rel.dim != d:
        raise ValueError("relation parameters do not match the model kind/dim")

    # Aux vectors are always freshly drawn: source embeddings supply only one
    # vector per node, so there is nothing to warm-start them from.
    bound = 6.0 / math.sqrt(d)
    proj = rng.uniform(-bound, bound, size=(n, d)) if kind is KgModelKind.TRANSD else None
    second = rng.uniform(-bound, bound, size=(n, d)) if kind is KgModelKind.SIMPLE else None

    def result(history: tuple[float, ...]) -> KgTrainResult:
        return KgTrainResult(
            embeddings=EmbeddingMatrix(values=values, provenance=out_provenance),
            relation=rel,
            aux=EntityAuxParams(kind=kind, projection=proj, second=second),
            loss_history=history,
        )

    if cfg.epochs == 0:
        return result(())

    triples = to_triples(g)
    known = frozenset(triples)
    translational = kind in TRANSLATIONAL
    lr = cfg.learning_rate
    matrices = {"emb": values, "projection": proj, "second": second}
    aux_arr = proj if kind is KgModelKind.TRANSD else second
    decay = 1.0 - lr * WEIGHT_DECAY

    history: list[float] = []
    for _ in range(cfg.epochs):
        if translational:
            _project_rows_to_ball(values)
        epoch_loss = 0.0
        samples = 0
        for idx in rng.permutation(len(triples)):
            pos = triples[int(idx)]
            for _ in range(cfg.negatives_per_positive):
                neg = negative_sample(pos, n, known, rng)
                loss, grads = _hinge_row_grads(
                    kind, values, proj, second, rel, pos, neg,
                    cfg.margin, cfg.norm_order,
                )
                epoch_loss += loss
                samples += 1
                touched_emb = {pos.head, pos.tail, neg.head, neg.tail}
                if loss > 0.0:
                    for (name, row), grad in grads.items():
                        matrices[name][row] -= lr * grad
                if translational:
                    _project_rows_to_ball(values, touched_emb)
                else:
                    for row in touched_emb:
                        values[row] *= decay
                        if aux_arr is not None:
                            aux_arr[row] *= decay
        history.append(epoch_loss / samples)
    return result(tuple(history))
