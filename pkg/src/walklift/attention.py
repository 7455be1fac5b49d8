"""Adjacency-reinforced self-attention that maps source embeddings to
finetuned-quality embeddings.

The forward pass is deliberately bare: three affine maps produce K/Q/V, the
raw 0/1 adjacency matrix is added to the attention logits, and the attended
logits multiply V directly. No softmax, no scaling, single head, no residual.
Because the parameters are shaped only by the embedding width d, one trained
model applies to graphs of any node count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .graphs import Graph, adjacency
from .walkembed import EmbeddingMatrix

__all__ = [
    "AttentionParams",
    "TrainPair",
    "TransformTrainConfig",
    "EpochLoss",
    "init_params",
    "self_attention_forward",
    "embedding_error",
    "batch_loss",
    "loss_gradient",
    "train_transformer",
    "evaluate_loss",
    "apply",
]


@dataclass(frozen=True)
class AttentionParams:
    """Three affine maps (d x d weights + d biases) for keys, queries, values.

    Also used as the gradient container, since gradients share the shape.
    """

    w_key: np.ndarray
    w_query: np.ndarray
    w_value: np.ndarray
    b_key: np.ndarray
    b_query: np.ndarray
    b_value: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.w_key).shape[0]
        for name in ("w_key", "w_query", "w_value"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != (d, d) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be a finite {d}x{d} matrix")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("b_key", "b_query", "b_value"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != (d,) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be a finite length-{d} vector")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.w_key.shape[0]

    def step(self, grad: "AttentionParams", lr: float) -> "AttentionParams":
        """One SGD update: params - lr * grad."""
        return AttentionParams(
            w_key=self.w_key - lr * grad.w_key,
            w_query=self.w_query - lr * grad.w_query,
            w_value=self.w_value - lr * grad.w_value,
            b_key=self.b_key - lr * grad.b_key,
            b_query=self.b_query - lr * grad.b_query,
            b_value=self.b_value - lr * grad.b_value,
        )


@dataclass(frozen=True)
class TrainPair:
    """One training example: a graph with its source and finetuned embeddings."""

    graph: Graph
    source: EmbeddingMatrix
    finetuned: EmbeddingMatrix

    def __post_init__(self) -> None:
        n = self.graph.node_count
        if self.source.values.shape != self.finetuned.values.shape:
            raise ValueError("source and finetuned embeddings must share a shape")
        if self.source.node_count != n:
            raise ValueError(
                f"embeddings have {self.source.node_count} rows for a graph of {n} nodes"
            )

    @cached_property
    def adjacency(self) -> np.ndarray:
        return adjacency(self.graph)

    @property
    def dim(self) -> int:
        return self.source.dim


@dataclass(frozen=True)
class TransformTrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.001
    epochs: int = 300
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass(frozen=True)
class EpochLoss:
    epoch: int
    train_loss: float
    val_loss: float


def init_params(d: int, seed: int) -> AttentionParams:
    """Uniform(-sqrt(6/2d), sqrt(6/2d)) weights, zero biases."""
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = np.random.default_rng(seed)
    limit = math.sqrt(6.0 / (2.0 * d))
    return AttentionParams(
        w_key=rng.uniform(-limit, limit, size=(d, d)),
        w_query=rng.uniform(-limit, limit, size=(d, d)),
        w_value=rng.uniform(-limit, limit, size=(d, d)),
        b_key=np.zeros(d),
        b_query=np.zeros(d),
        b_value=np.zeros(d),
    )


def _as_values(emb) -> np.ndarray:
    if isinstance(emb, EmbeddingMatrix):
        return emb.values
    return np.asarray(emb, dtype=np.float64)


def _forward(
    adj: np.ndarray, emb: np.ndarray, params: AttentionParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (output, K, Q, V, attended logits)."""
    n, d = emb.shape
    if adj.shape != (n, n):
        raise ValueError(
            f"adjacency shape {adj.shape} does not match {n} embedding rows"
        )
    if params.dim != d:
        raise ValueError(f"params have dim {params.dim}, embeddings have {d}")
    keys = emb @ params.w_key + params.b_key
    queries = emb @ params.w_query + params.b_query
    values = emb @ params.w_value + params.b_value
    attended = queries @ keys.T + adj
    return attended @ values, keys, queries, values, attended


def self_attention_forward(
    adj: np.ndarray, emb: EmbeddingMatrix | np.ndarray, params: AttentionParams
) -> EmbeddingMatrix:
    """Single attention pass with the adjacency matrix added to the logits."""
    out, *_ = _forward(np.asarray(adj, dtype=np.float64), _as_values(emb), params)
    return EmbeddingMatrix(values=out, provenance="transformed")


def embedding_error(t, f) -> float:
    """Mean per-node squared euclidean distance between two embedding matrices."""
    a, b = _as_values(t), _as_values(f)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float((diff * diff).sum() / a.shape[0])


def batch_loss(pairs) -> float:
    """Mean embedding_error over (transformed, finetuned) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("batch must be non-empty")
    return float(np.mean([embedding_error(t, f) for t, f in pairs]))


def _loss_and_gradient(
    batch: list[TrainPair], params: AttentionParams
) -> tuple[float, AttentionParams]:
    """Batch loss plus its exact gradient w.r.t. every parameter block."""
    if not batch:
        raise ValueError("batch must be non-empty")
    d = params.dim
    gw_k = np.zeros((d, d))
    gw_q = np.zeros((d, d))
    gw_v = np.zeros((d, d))
    gb_k = np.zeros(d)
    gb_q = np.zeros(d)
    gb_v = np.zeros(d)
    total = 0.0
    b = len(batch)
    for pair in batch:
        if pair.dim != d:
            raise ValueError("all pairs must share the parameter dimension")
        emb = pair.source.values
        target = pair.finetuned.values
        n = emb.shape[0]
        out, keys, queries, values, attended = _forward(pair.adjacency, emb, params)
        diff = out - target
        total += float((diff * diff).sum() / n)
        # Reverse pass through out = attended @ V, attended = Q K^T + A,
        # and the three affine maps; mean over the batch folds in 1/b.
        g_out = (2.0 / (n * b)) * diff
        g_values = attended.T @ g_out
        g_attended = g_out @ values.T
        g_queries = g_attended @ keys
        g_keys = g_attended.T @ queries
        gw_k += emb.T @ g_keys
        gw_q += emb.T @ g_queries
        gw_v += emb.T @ g_values
        gb_k += g_keys.sum(axis=0)
        gb_q += g_queries.sum(axis=0)
        gb_v += g_values.sum(axis=0)
    grads = AttentionParams(
        w_key=gw_k, w_query=gw_q, w_value=gw_v,
        b_key=gb_k, b_query=gb_q, b_value=gb_v,
    )
    return total / b, grads


def loss_gradient(batch: list[TrainPair], params: AttentionParams) -> AttentionParams:
    """Gradient of batch_loss(self-attention outputs vs finetuned targets)."""
    _, grads = _loss_and_gradient(list(batch), params)
    return grads


def evaluate_loss(pairs: list[TrainPair], params: AttentionParams) -> float:
    """batch_loss of a pair list under the given parameters (no updates)."""
    outs = [
        (_forward(p.adjacency, p.source.values, params)[0], p.finetuned.values)
        for p in pairs
    ]
    return batch_loss(outs)


def train_transformer(
    train: list[TrainPair],
    val: list[TrainPair],
    cfg: TransformTrainConfig,
) -> tuple[AttentionParams, list[EpochLoss]]:
    """Shuffled mini-batch SGD; returns the parameters with best validation loss.

    The per-epoch train loss is the mean of batch losses as seen during the
    epoch; validation loss is evaluated after the epoch's updates. With no
    validation pairs, selection falls back to train loss.
    """
    train = list(train)
    val = list(val)
    if not train:
        raise ValueError("train pairs must be non-empty")
    dims = {p.dim for p in train} | {p.dim for p in val}
    if len(dims) != 1:
        raise ValueError(f"pairs have inconsistent dimensions: {sorted(dims)}")
    d = dims.pop()

    params = init_params(d, cfg.seed)
    history: list[EpochLoss] = []
    if cfg.epochs == 0:
        return params, history

    rng = np.random.default_rng(cfg.seed)
    best_params = params
    best_val = math.inf
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        batch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train[int(i)] for i in order[lo : lo + cfg.batch_size]]
            loss, grads = _loss_and_gradient(batch, params)
            params = params.step(grads, cfg.learning_rate)
            batch_losses.append(loss)
        train_loss = float(np.mean(batch_losses))
        val_loss = evaluate_loss(val, params) if val else train_loss
        history.append(EpochLoss(epoch=epoch, train_loss=train_loss, val_loss=val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_params = params
    return best_params, history


def apply(g: Graph, source: EmbeddingMatrix, params: AttentionParams) -> EmbeddingMatrix:
    """Transform a graph's source embeddings; the whole inference cost."""
    return self_attention_forward(adjacency(g), source, params)
