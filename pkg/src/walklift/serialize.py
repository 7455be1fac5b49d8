"""On-disk formats for embeddings and model parameters.

Text embeddings: first line ``n d``, then n lines of d space-separated
decimals (shortest round-trip repr).

Binary embedding container (all integers and floats little-endian):

    magic b"EMBV1"
    u16 length + UTF-8 provenance tag
    u32 n, u32 d
    n*d float64 row-major values
    zero or more trailing blocks until EOF:
        b"RELP"  relation parameters: u16+UTF-8 kind, u8 array count,
                 then arrays in a fixed per-kind order
        b"EAUX"  entity aux parameters: u16+UTF-8 kind, u8 presence flags
                 (bit 0 projection, bit 1 second), then the present arrays
    array encoding: u8 ndim, u32 per dimension, float64 payload

Attention parameters: magic b"EMBR1", u32 d, then the six tensors
W_K, W_Q, W_V (d x d) and b_K, b_Q, b_V (d) as row-major little-endian
float64, plus a side-car JSON debug dump.

Every writer is byte-deterministic: identical inputs produce identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .attention import AttentionParams
from .kgembed import EntityAuxParams, KgModelKind, RelationParams
from .walkembed import EmbeddingMatrix

__all__ = [
    "save_embedding_text",
    "load_embedding_text",
    "save_embedding",
    "load_embedding",
    "save_attention_params",
    "load_attention_params",
    "attention_params_to_json",
    "save_attention_debug_json",
]

EMBEDDING_MAGIC = b"EMBV1"
ATTENTION_MAGIC = b"EMBR1"
_RELATION_BLOCK = b"RELP"
_AUX_BLOCK = b"EAUX"

# Per-kind relation array order inside a RELP block.
_RELATION_FIELDS: dict[KgModelKind, tuple[str, ...]] = {
    KgModelKind.TRANSE: ("vector",),
    KgModelKind.TRANSH: ("vector", "normal"),
    KgModelKind.TRANSD: ("vector", "projection"),
    KgModelKind.DISTMULT: ("vector",),
    KgModelKind.RESCAL: ("matrix",),
    KgModelKind.SIMPLE: ("vector", "inverse_vector"),
}


class FormatError(ValueError):
    """A serialized artifact is malformed or has the wrong magic bytes."""


def save_embedding_text(path: str | Path, emb: EmbeddingMatrix) -> None:
    lines = [f"{emb.node_count} {emb.dim}"]
    for row in emb.values:
        lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embedding_text(path: str | Path, provenance: str = "source") -> EmbeddingMatrix:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not text:
        raise FormatError(f"{path}: empty embedding file")
    try:
        n, d = (int(tok) for tok in text[0].split())
    except ValueError as exc:
        raise FormatError(f"{path}: bad header line {text[0]!r}") from exc
    if len(text) != n + 1:
        raise FormatError(f"{path}: expected {n} rows, found {len(text) - 1}")
    values = np.array(
        [[float(tok) for tok in line.split()] for line in text[1:]], dtype=np.float64
    )
    if values.shape != (n, d):
        raise FormatError(f"{path}: row width does not match header")
    return EmbeddingMatrix(values=values, provenance=provenance)


def _write_str(fh: BinaryIO, s: str) -> None:
    data = s.encode("utf-8")
    fh.write(struct.pack("<H", len(data)))
    fh.write(data)


def _read_str(fh: BinaryIO) -> str:
    (length,) = struct.unpack("<H", fh.read(2))
    return fh.read(length).decode("utf-8")


def _write_array(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    fh.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(arr.astype("<f8").tobytes())


def _read_array(fh: BinaryIO) -> np.ndarray:
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(8 * count), dtype="<f8")
    return data.reshape(shape).astype(np.float64)


def save_embedding(
    path: str | Path,
    emb: EmbeddingMatrix,
    relation: RelationParams | None = None,
    aux: EntityAuxParams | None = None,
) -> None:
    """Write the binary container, optionally with relation / aux blocks."""
    with Path(path).open("wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        _write_str(fh, emb.provenance)
        fh.write(struct.pack("<II", emb.node_count, emb.dim))
        fh.write(np.ascontiguousarray(emb.values).astype("<f8").tobytes())
        if relation is not None:
            fh.write(_RELATION_BLOCK)
            _write_str(fh, relation.kind.value)
            fields = _RELATION_FIELDS[relation.kind]
            fh.write(struct.pack("<B", len(fields)))
            for name in fields:
                _write_array(fh, getattr(relation, name))
        if aux is not None and (aux.projection is not None or aux.second is not None):
            fh.write(_AUX_BLOCK)
            _write_str(fh, aux.kind.value)
            flags = (1 if aux.projection is not None else 0) | (
                2 if aux.second is not None else 0
            )
            fh.write(struct.pack("<B", flags))
            if aux.projection is not None:
                _write_array(fh, aux.projection)
            if aux.second is not None:
                _write_array(fh, aux.second)


def load_embedding(
    path: str | Path,
) -> tuple[EmbeddingMatrix, RelationParams | None, EntityAuxParams | None]:
    with Path(path).open("rb") as fh:
        magic = fh.read(len(EMBEDDING_MAGIC))
        if magic != EMBEDDING_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        provenance = _read_str(fh)
        n, d = struct.unpack("<II", fh.read(8))
        values = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d)
        emb = EmbeddingMatrix(values=values.astype(np.float64), provenance=provenance)
        relation: RelationParams | None = None
        aux: EntityAuxParams | None = None
        while True:
            tag = fh.read(4)
            if not tag:
                break
            if tag == _RELATION_BLOCK:
                kind = KgModelKind(_read_str(fh))
                (count,) = struct.unpack("<B", fh.read(1))
                fields = _RELATION_FIELDS[kind]
                if count != len(fields):
                    raise FormatError(f"{path}: relation block has {count} arrays")
                arrays = {name: _read_array(fh) for name in fields}
                relation = RelationParams(kind=kind, **arrays)
            elif tag == _AUX_BLOCK:
                kind = KgModelKind(_read_str(fh))
                (flags,) = struct.unpack("<B", fh.read(1))
                projection = _read_array(fh) if flags & 1 else None
                second = _read_array(fh) if flags & 2 else None
                aux = EntityAuxParams(kind=kind, projection=projection, second=second)
            else:
                raise FormatError(f"{path}: unknown block tag {tag!r}")
    return emb, relation, aux


def save_attention_params(path: str | Path, params: AttentionParams) -> None:
    with Path(path).open("wb") as fh:
        fh.write(ATTENTION_MAGIC)
        fh.write(struct.pack("<I", params.dim))
        for tensor in (
            params.w_key,
            params.w_query,
            params.w_value,
            params.b_key,
            params.b_query,
            params.b_value,
        ):
            fh.write(np.ascontiguousarray(tensor).astype("<f8").tobytes())


def load_attention_params(path: str | Path) -> AttentionParams:
    with Path(path).open("rb") as fh:
        magic = fh.read(len(ATTENTION_MAGIC))
        if magic != ATTENTION_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (d,) = struct.unpack("<I", fh.read(4))

        def tensor(*shape: int) -> np.ndarray:
            count = int(np.prod(shape))
            return (
                np.frombuffer(fh.read(8 * count), dtype="<f8")
                .reshape(shape)
                .astype(np.float64)
            )

        return AttentionParams(
            w_key=tensor(d, d),
            w_query=tensor(d, d),
            w_value=tensor(d, d),
            b_key=tensor(d),
            b_query=tensor(d),
            b_value=tensor(d),
        )


def attention_params_to_json(params: AttentionParams) -> str:
    doc = {
        "dim": params.dim,
        "w_key": params.w_key.tolist(),
        "w_query": params.w_query.tolist(),
        "w_value": params.w_value.tolist(),
        "b_key": params.b_key.tolist(),
        "b_query": params.b_query.tolist(),
        "b_value": params.b_value.tolist(),
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def save_attention_debug_json(path: str | Path, params: AttentionParams) -> None:
    Path(path).write_text(attention_params_to_json(params) + "\n", encoding="utf-8")
