"""Source node embeddings from random walks plus skip-gram training.

Walks follow second-order biased transitions (unnormalized weight 1/p to
return to the previous node, 1 to a common neighbor, 1/q otherwise); p = q = 1
reduces to plain uniform walks. Embeddings come from skip-gram with negative
sampling over the walk corpus, with the center vectors returned as the
embedding matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .graphs import Graph

PROVENANCE_TAGS = ("source", "initial", "target", "finetuned", "transformed")

# Linear learning-rate decay floor, as in classic skip-gram trainers.
MIN_LEARNING_RATE = 1e-4

__all__ = [
    "EmbeddingMatrix",
    "WalkConfig",
    "SkipGramConfig",
    "generate_walks",
    "train_skipgram",
    "embed",
]


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Immutable n x d matrix of node embeddings tagged with its provenance."""

    values: np.ndarray
    provenance: str = "source"

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"embeddings must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embeddings contain non-finite entries")
        if self.provenance not in PROVENANCE_TAGS:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def node_count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def with_provenance(self, tag: str) -> "EmbeddingMatrix":
        return EmbeddingMatrix(values=self.values, provenance=tag)


@dataclass(frozen=True)
class WalkConfig:
    """Random-walk corpus settings. return_param/inout_param are the usual p/q."""

    walks_per_node: int = 10
    walk_length: int = 40
    return_param: float = 1.0
    inout_param: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.walks_per_node < 1:
            raise ValueError("walks_per_node must be >= 1")
        if self.walk_length < 1:
            raise ValueError("walk_length must be >= 1")
        if self.return_param <= 0 or self.inout_param <= 0:
            raise ValueError("return_param and inout_param must be positive")

    @classmethod
    def deepwalk(cls, walks_per_node: int = 10, walk_length: int = 40, seed: int = 0) -> "WalkConfig":
        """Uniform-walk preset (p = q = 1)."""
        return cls(
            walks_per_node=walks_per_node,
            walk_length=walk_length,
            return_param=1.0,
            inout_param=1.0,
            seed=seed,
        )


@dataclass(frozen=True)
class SkipGramConfig:
    dim: int = 32
    window: int = 5
    negatives_per_positive: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def _biased_step(
    cand: np.ndarray,
    prev: int,
    adj: np.ndarray,
    return_param: float,
    inout_param: float,
    rng: np.random.Generator,
) -> int:
    weights = np.where(
        cand == prev,
        1.0 / return_param,
        np.where(adj[prev, cand], 1.0, 1.0 / inout_param),
    )
    cum = np.cumsum(weights)
    idx = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return int(cand[min(idx, cand.size - 1)])


def generate_walks(g: Graph, cfg: WalkConfig) -> list[np.ndarray]:
    """walks_per_node walks from every node, visiting start order per pass.

    Walks stop early at dead ends; an isolated node yields a length-1 walk.
    """
    if g.node_count < 1:
        raise ValueError("graph must have at least one node")
    rng = np.random.default_rng(cfg.seed)
    nbrs = g.neighbor_lists
    uniform = cfg.return_param == 1.0 and cfg.inout_param == 1.0
    adj_bool: np.ndarray | None = None
    if not uniform:
        adj_bool = np.zeros((g.node_count, g.node_count), dtype=bool)
        for u, v in g.edges:
            adj_bool[u, v] = True
            adj_bool[v, u] = True

    walks: list[np.ndarray] = []
    buf = np.empty(cfg.walk_length, dtype=np.int64)
    for _ in range(cfg.walks_per_node):
        for start in rng.permutation(g.node_count):
            cur = int(start)
            buf[0] = cur
            length = 1
            prev = -1
            while length < cfg.walk_length:
                cand = nbrs[cur]
                if cand.size == 0:
                    break
                if uniform or prev < 0:
                    nxt = int(cand[rng.integers(cand.size)])
                else:
                    nxt = _biased_step(
                        cand, prev, adj_bool, cfg.return_param, cfg.inout_param, rng
                    )
                buf[length] = nxt
                prev, cur = cur, nxt
                length += 1
            walks.append(buf[:length].copy())
    return walks


def _noise_cumulative(walks: list[np.ndarray], n: int) -> np.ndarray:
    """Cumulative distribution over nodes: within-walk unigram counts ** 0.75."""
    counts = np.zeros(n, dtype=np.float64)
    for walk in walks:
        np.add.at(counts, walk, 1.0)
    weights = counts**0.75
    total = weights.sum()
    if total <= 0:
        raise ValueError("walks visit no nodes")
    return np.cumsum(weights / total)


def train_skipgram(
    walks: list[np.ndarray], n: int, cfg: SkipGramConfig
) -> EmbeddingMatrix:
    """Skip-gram with negative sampling over a walk corpus.

    Every (center, context) pair within the window contributes one positive
    term and ``negatives_per_positive`` negatives drawn from the unigram^0.75
    distribution over walk occurrences; gradients are applied walk by walk.
    The learning rate decays linearly to MIN_LEARNING_RATE over all epochs.
    epochs=0 returns the seeded random initialization unchanged.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not walks:
        raise ValueError("walks must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dim
    w_in = (rng.random((n, d)) - 0.5) / d
    w_out = np.zeros((n, d), dtype=np.float64)
    if cfg.epochs == 0:
        return EmbeddingMatrix(values=w_in, provenance="source")

    cum = _noise_cumulative(walks, n)
    k = cfg.negatives_per_positive
    window = cfg.window
    total_tokens = cfg.epochs * sum(len(w) for w in walks)
    processed = 0

    # (center position, context position) index pairs for a walk of a given
    # length; cached since most walks share the full length.
    pair_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def window_pairs(length: int) -> tuple[np.ndarray, np.ndarray]:
        if length not in pair_cache:
            centers, contexts = [], []
            for i in range(length):
                lo = 0 if i < window else i - window
                hi = min(length, i + window + 1)
                for j in range(lo, hi):
                    if j != i:
                        centers.append(i)
                        contexts.append(j)
            pair_cache[length] = (
                np.array(centers, dtype=np.int64),
                np.array(contexts, dtype=np.int64),
            )
        return pair_cache[length]

    for _ in range(cfg.epochs):
        for wi in rng.permutation(len(walks)):
            walk = walks[wi]
            length = len(walk)
            lr = max(
                MIN_LEARNING_RATE,
                cfg.learning_rate * (1.0 - processed / total_tokens),
            )
            processed += length
            if length < 2:
                continue
            ci, xi = window_pairs(length)
            negs_walk = np.minimum(
                np.searchsorted(cum, rng.random((ci.size, k))), n - 1
            )
            # Updates are applied center by center: batching a whole walk
            # lets stale negative gradients pile up and blow norms on the
            # tiny vocabularies these graphs have.
            offset = 0
            for i in range(length):
                lo = offset
                while offset < ci.size and ci[offset] == i:
                    offset += 1
                count = offset - lo
                if count == 0:
                    continue
                center = int(walk[i])
                # Positive contexts and their negatives share one gather,
                # one matvec and one scatter; the first `count` rows are the
                # positives (label 1), the rest negatives (label 0).
                rows = np.concatenate(
                    (walk[xi[lo:offset]], negs_walk[lo:offset].ravel())
                )
                v = w_in[center]
                out_rows = w_out[rows]
                err = expit(out_rows @ v)
                err[:count] -= 1.0
                grad_v = err @ out_rows
                np.subtract.at(w_out, rows, (lr * err)[:, None] * v)
                w_in[center] = v - lr * grad_v
    return EmbeddingMatrix(values=w_in, provenance="source")


def embed(g: Graph, wcfg: WalkConfig, scfg: SkipGramConfig) -> EmbeddingMatrix:
    """Walk corpus + skip-gram in one call."""
    walks = generate_walks(g, wcfg)
    return train_skipgram(walks, g.node_count, scfg)
