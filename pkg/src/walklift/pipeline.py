"""Pipeline stages wiring the library into a reproducible experiment.

Each stage reads its upstream artifacts from the output directory, writes its
own, and appends a record to ``manifest.json``. Artifacts are byte-identical
across reruns with the same config and seed (timestamps live only in the
manifest). One transformation model is trained per size bucket.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from . import __version__ as _version
from .attention import (
    AttentionParams,
    TrainPair,
    TransformTrainConfig,
    apply as apply_attention,
    train_transformer,
)
from .evaluation import anova_one_way, evaluate_link_prediction
from .graphs import (
    EdgeSplit,
    Graph,
    GraphDataset,
    load_communities,
    partition_indices,
    split_edges,
)
from .kgembed import (
    EntityAuxParams,
    KgModelKind,
    KgTrainConfig,
    RelationParams,
    init_relation_params,
    train as train_kg_model,
    zero_relation,
)
from .seeding import subseed
from .serialize import (
    load_attention_params,
    load_embedding,
    save_attention_debug_json,
    save_attention_params,
    save_embedding,
)
from .synthetic import synthetic_communities
from .timing import time_stage
from .walkembed import EmbeddingMatrix, SkipGramConfig, WalkConfig, embed

__all__ = [
    "ConfigError",
    "MissingArtifactError",
    "DataError",
    "DEFAULT_CONFIG",
    "load_config",
    "flatten_config",
    "Manifest",
    "stage_prepare",
    "stage_embed",
    "stage_train_kg",
    "stage_train_transform",
    "stage_apply",
    "stage_evaluate",
    "stage_bench",
    "stage_report",
]

SPLIT_NAMES = ("train", "val", "test")
METHODS = ("source", "target", "finetuned", "transformed")
METRICS_COLUMNS = [
    "dataset",
    "size_bucket",
    "method",
    "graph_id",
    "mrr",
    "p_at_1",
    "p_at_3",
    "p_at_10",
    "cpu_seconds",
    "wall_seconds",
]


class ConfigError(ValueError):
    """Bad configuration file or flag value (exit code 2)."""


class MissingArtifactError(FileNotFoundError):
    """An upstream artifact is absent; run the earlier stage (exit code 3)."""


class DataError(ValueError):
    """Input data is unusable: parse failures, empty buckets (exit code 4)."""


DEFAULT_CONFIG: dict[str, Any] = {
    "seed": 0,
    "dim": 32,
    "out": "runs/default",
    "jobs": 1,
    "dataset": {
        "name": "synthetic",
        "synthetic": True,
        "synthetic_graphs": 200,
        "edge_file": None,
        "community_file": None,
        "size_buckets": [[16, 21]],
        "holdout_fraction": 0.2,
        "split_ratios": [0.64, 0.16, 0.20],
        "intra_edge_prob": 0.3,
        "inter_edge_prob": 0.02,
        "degree_exponent": 1.3,
        "nodes_per_block": 17,
    },
    "source": {
        "method": "node2vec",
        "walks_per_node": 10,
        "walk_length": 40,
        "return_param": 1.0,
        "inout_param": 1.0,
        "window": 5,
        "negatives_per_positive": 5,
        "epochs": 5,
        "learning_rate": 0.025,
    },
    "target": {
        "model": "transe",
        "margin": 1.0,
        "learning_rate": 0.01,
        "epochs": 500,
        "negatives_per_positive": 1,
        "norm_order": 2,
    },
    "transform": {
        "batch_size": 4,
        "learning_rate": 0.0003,
        "epochs": 4000,
    },
    "evaluate": {
        "split": "test",
        "methods": list(METHODS),
    },
    "bench": {
        "graphs_per_bucket": 12,
        "size_buckets": [[16, 21], [51, 55]],
    },
}


def flatten_config(config: dict, prefix: str = "") -> dict[str, Any]:
    """{'dataset.holdout_fraction': 0.2, ...} view of a nested config."""
    flat: dict[str, Any] = {}
    for key, value in config.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten_config(value, prefix=dotted + "."))
        else:
            flat[dotted] = value
    return flat


def _set_dotted(config: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = config
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config section {dotted!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def _coerce_like(dotted: str, raw: str, template: Any) -> Any:
    """Parse a flag string according to the default value's type."""
    if isinstance(template, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{dotted}: expected a boolean, got {raw!r}")
    try:
        if isinstance(template, int) and not isinstance(template, bool):
            return int(raw)
        if isinstance(template, float):
            return float(raw)
        if isinstance(template, (list, type(None))):
            return json.loads(raw)
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{dotted}: cannot parse {raw!r}") from exc
    return raw


def load_config(
    path: str | Path | None = None, overrides: dict[str, str] | None = None
) -> dict[str, Any]:
    """Defaults, overlaid by a JSON config file, overlaid by dotted flags."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            document = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(document, dict):
            raise ConfigError(f"{path}: top level must be an object")
        defaults_flat = flatten_config(DEFAULT_CONFIG)
        for dotted, value in flatten_config(document).items():
            if dotted not in defaults_flat:
                raise ConfigError(f"{path}: unknown config key {dotted!r}")
            _set_dotted(config, dotted, value)
    templates = flatten_config(DEFAULT_CONFIG)
    for dotted, raw in (overrides or {}).items():
        if dotted not in templates:
            raise ConfigError(f"unknown config key {dotted!r}")
        value = raw if not isinstance(raw, str) else _coerce_like(dotted, raw, templates[dotted])
        _set_dotted(config, dotted, value)
    validate_config(config)
    return config


def validate_config(config: dict[str, Any]) -> None:
    ds = config["dataset"]
    ratios = ds["split_ratios"]
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split_ratios must be three values summing to 1, got {ratios}")
    if not (0.0 <= ds["holdout_fraction"] < 1.0):
        raise ConfigError("holdout_fraction must be in [0, 1)")
    if config["dim"] < 1:
        raise ConfigError("dim must be >= 1")
    if config["jobs"] < 1:
        raise ConfigError("jobs must be >= 1")
    if not ds["size_buckets"]:
        raise ConfigError("at least one size bucket is required")
    for bucket in ds["size_buckets"]:
        if len(bucket) != 2 or bucket[0] > bucket[1] or bucket[0] < 2:
            raise ConfigError(f"bad size bucket {bucket}")
    if config["source"]["method"] not in ("node2vec", "deepwalk"):
        raise ConfigError(f"unknown source method {config['source']['method']!r}")
    try:
        KgModelKind(config["target"]["model"])
    except ValueError as exc:
        raise ConfigError(f"unknown target model {config['target']['model']!r}") from exc
    if not ds["synthetic"]:
        if not ds["edge_file"] or not ds["community_file"]:
            raise ConfigError("non-synthetic runs need dataset.edge_file and dataset.community_file")
    for name in config["evaluate"]["methods"]:
        if name not in METHODS:
            raise ConfigError(f"unknown evaluate method {name!r}")


def bucket_tag(bucket: Iterable[int]) -> str:
    lo, hi = bucket
    return f"{lo}-{hi}"


class Manifest:
    """Append-only record of configuration, seeds, and artifacts per stage."""

    def __init__(self, out_dir: Path, config: dict[str, Any] | None = None):
        self.path = Path(out_dir) / "manifest.json"
        if self.path.exists():
            self.doc = json.loads(self.path.read_text(encoding="utf-8"))
            if config is not None:
                self.doc["config"] = config
        else:
            self.doc = {
                "tool": "walklift",
                "version": _version,
                "created_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
                "config": config or {},
                "stages": {},
            }

    def record(
        self,
        stage: str,
        artifacts: list[Path],
        seeds: dict[str, int] | None = None,
        extra: dict[str, Any] | None = None,
    ) -> None:
        base = self.path.parent
        rels = []
        for artifact in artifacts:
            artifact = Path(artifact)
            if not artifact.exists():
                raise MissingArtifactError(f"manifest lists missing artifact {artifact}")
            rels.append(str(artifact.relative_to(base)))
        self.doc["stages"][stage] = {
            "artifacts": sorted(rels),
            "seeds": seeds or {},
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
            **(extra or {}),
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def require_stage(self, stage: str) -> dict[str, Any]:
        if stage not in self.doc["stages"]:
            raise MissingArtifactError(
                f"stage {stage!r} has not been run (no manifest entry); run it first"
            )
        return self.doc["stages"][stage]


@dataclass(frozen=True)
class BucketRecord:
    """In-memory view of one bucket's prepared dataset."""

    bucket: tuple[int, int]
    splits: list[EdgeSplit]
    membership: list[str]  # per-graph: train / val / test

    def indices(self, split: str) -> list[int]:
        return [i for i, member in enumerate(self.membership) if member == split]


def _bucket_dir(out: Path, bucket) -> Path:
    return out / "buckets" / bucket_tag(bucket)


def _dataset_file(out: Path, bucket) -> Path:
    return _bucket_dir(out, bucket) / "dataset.json"


def _embedding_file(out: Path, bucket, method: str, graph_id: int) -> Path:
    return _bucket_dir(out, bucket) / "embeddings" / method / f"g{graph_id:04d}.emb"


def _timings_file(out: Path, bucket, method: str) -> Path:
    return _bucket_dir(out, bucket) / "timings" / f"{method}.json"


def _load_timings(out: Path, bucket, method: str) -> dict[int, dict[str, float]]:
    path = _timings_file(out, bucket, method)
    if not path.exists():
        raise MissingArtifactError(f"missing timing artifact {path}; rerun the {method} stage")
    doc = json.loads(path.read_text(encoding="utf-8"))
    return {int(k): v for k, v in doc.items()}


def _write_timings(out: Path, bucket, method: str, timings: dict[int, dict[str, float]]) -> Path:
    path = _timings_file(out, bucket, method)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {str(k): timings[k] for k in sorted(timings)}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_dataset_file(path: Path, bucket, splits: list[EdgeSplit], membership: list[str], meta: dict) -> None:
    doc = {
        "bucket": list(bucket),
        "graphs": [
            {
                "id": i,
                "node_count": sp.train_graph.node_count,
                "community_id": sp.train_graph.community_id,
                "train_edges": [list(e) for e in sp.train_graph.sorted_edges],
                "held_out_edges": [list(e) for e in sp.held_out_edges],
                "split": membership[i],
                "holdout_seed": sp.seed,
            }
            for i, sp in enumerate(splits)
        ],
        **meta,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_bucket_record(out: Path, bucket) -> BucketRecord:
    path = _dataset_file(out, bucket)
    if not path.exists():
        raise MissingArtifactError(f"missing dataset artifact {path}; run the prepare stage")
    doc = json.loads(path.read_text(encoding="utf-8"))
    splits: list[EdgeSplit] = []
    membership: list[str] = []
    for g in doc["graphs"]:
        graph = Graph(
            node_count=g["node_count"],
            edges=frozenset((int(u), int(v)) for u, v in g["train_edges"]),
            community_id=g["community_id"],
        )
        splits.append(
            EdgeSplit(
                train_graph=graph,
                held_out_edges=tuple((int(u), int(v)) for u, v in g["held_out_edges"]),
                seed=g["holdout_seed"],
            )
        )
        membership.append(g["split"])
    return BucketRecord(bucket=(doc["bucket"][0], doc["bucket"][1]), splits=splits, membership=membership)


def _build_bucket_dataset(config: dict, bucket, bucket_index: int) -> GraphDataset:
    ds_cfg = config["dataset"]
    lo, hi = bucket
    if ds_cfg["synthetic"]:
        dataset = synthetic_communities(
            count=ds_cfg["synthetic_graphs"],
            min_size=lo,
            max_size=hi,
            seed=subseed(config["seed"], "synthetic", bucket_index),
            p_in=ds_cfg["intra_edge_prob"],
            p_out=ds_cfg["inter_edge_prob"],
            degree_exponent=ds_cfg["degree_exponent"],
            nodes_per_block=ds_cfg["nodes_per_block"],
        )
    else:
        dataset = load_communities(ds_cfg["edge_file"], ds_cfg["community_file"], lo, hi)
    if len(dataset) < 3:
        raise DataError(
            f"bucket {bucket_tag(bucket)} has {len(dataset)} usable graphs; need at least 3"
        )
    return dataset


def stage_prepare(config: dict, out: Path) -> None:
    """Extract bucketed graphs, hold out edges, and assign train/val/test."""
    out = Path(out)
    seed = config["seed"]
    ds_cfg = config["dataset"]
    manifest = Manifest(out, config)
    artifacts = []
    counts = {}
    for b_idx, bucket in enumerate(ds_cfg["size_buckets"]):
        dataset = _build_bucket_dataset(config, bucket, b_idx)
        splits = [
            split_edges(g, ds_cfg["holdout_fraction"], subseed(seed, "holdout", b_idx, i))
            for i, g in enumerate(dataset)
        ]
        membership = [""] * len(dataset)
        parts = partition_indices(
            len(dataset), tuple(ds_cfg["split_ratios"]), subseed(seed, "dataset-split", b_idx)
        )
        for name, indices in zip(SPLIT_NAMES, parts):
            for i in indices:
                membership[i] = name
        path = _dataset_file(out, bucket)
        write_dataset_file(
            path,
            bucket,
            splits,
            membership,
            meta={
                "dataset_name": ds_cfg["name"],
                "skipped_members": dataset.skipped_members,
                "seed": seed,
            },
        )
        artifacts.append(path)
        counts[bucket_tag(bucket)] = len(dataset)
    manifest.record(
        "prepare",
        artifacts,
        seeds={"global": seed},
        extra={"graph_counts": counts},
    )


def _map_jobs(fn: Callable, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _embed_one(args) -> tuple[int, bytes, float, float]:
    graph, wcfg, scfg = args
    emb, cpu, wall = time_stage("embed", lambda: embed(graph, wcfg, scfg))
    buffer = io.BytesIO()
    np.save(buffer, emb.values, allow_pickle=False)
    return cpu, wall, emb.values


def stage_embed(config: dict, out: Path) -> None:
    """Source embeddings for every graph (train + val + test)."""
    out = Path(out)
    seed = config["seed"]
    src = config["source"]
    manifest = Manifest(out, config)
    manifest.require_stage("prepare")
    deepwalk = src["method"] == "deepwalk"
    artifacts = []
    for b_idx, bucket in enumerate(config["dataset"]["size_buckets"]):
        record = load_bucket_record(out, bucket)
        timings: dict[int, dict[str, float]] = {}
        for i, split in enumerate(record.splits):
            wcfg = WalkConfig(
                walks_per_node=src["walks_per_node"],
                walk_length=src["walk_length"],
                return_param=1.0 if deepwalk else src["return_param"],
                inout_param=1.0 if deepwalk else src["inout_param"],
                seed=subseed(seed, "walks", b_idx, i),
            )
            scfg = SkipGramConfig(
                dim=config["dim"],
                window=src["window"],
                negatives_per_positive=src["negatives_per_positive"],
                epochs=src["epochs"],
                learning_rate=src["learning_rate"],
                seed=subseed(seed, "skipgram", b_idx, i),
            )
            emb, cpu, wall = time_stage(
                "embed", lambda g=split.train_graph, w=wcfg, s=scfg: embed(g, w, s)
            )
            path = _embedding_file(out, bucket, "source", i)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_embedding(path, emb)
            artifacts.append(path)
            timings[i] = {"cpu_seconds": cpu, "wall_seconds": wall}
        artifacts.append(_write_timings(out, bucket, "source", timings))
    manifest.record("embed", artifacts, seeds={"global": seed}, extra={"method": src["method"]})


def _kg_config(config: dict, seed_value: int) -> KgTrainConfig:
    tgt = config["target"]
    return KgTrainConfig(
        margin=tgt["margin"],
        learning_rate=tgt["learning_rate"],
        epochs=tgt["epochs"],
        negatives_per_positive=tgt["negatives_per_positive"],
        norm_order=tgt["norm_order"],
        seed=seed_value,
    )


def _relation_for_run(config: dict) -> RelationParams:
    kind = KgModelKind(config["target"]["model"])
    return init_relation_params(
        kind, config["dim"], seed=subseed(config["seed"], "relation", kind.value)
    )


def stage_train_kg(config: dict, out: Path, family: str = "both") -> None:
    """Train KG embeddings from scratch (target) and/or warm-started (finetuned).

    The frozen relation parameters are drawn once per run and shared by every
    graph, so all graphs live in a comparable embedding space.
    """
    if family not in ("target", "finetuned", "both"):
        raise ConfigError(f"unknown kg family {family!r}")
    out = Path(out)
    seed = config["seed"]
    kind = KgModelKind(config["target"]["model"])
    manifest = Manifest(out, config)
    manifest.require_stage("prepare")
    families = ("target", "finetuned") if family == "both" else (family,)
    if "finetuned" in families:
        manifest.require_stage("embed")
    rel = _relation_for_run(config)
    artifacts = []
    for b_idx, bucket in enumerate(config["dataset"]["size_buckets"]):
        record = load_bucket_record(out, bucket)
        for fam in families:
            timings: dict[int, dict[str, float]] = {}
            for i, split in enumerate(record.splits):
                if fam == "finetuned":
                    src_path = _embedding_file(out, bucket, "source", i)
                    if not src_path.exists():
                        raise MissingArtifactError(f"missing {src_path}; run the embed stage")
                    init_emb, _, _ = load_embedding(src_path)
                    kcfg = _kg_config(config, subseed(seed, "kg-finetuned", b_idx, i))
                    result, cpu, wall = time_stage(
                        "kg",
                        lambda s=split, k=kcfg, e=init_emb: train_kg_model(
                            s.train_graph, kind, k, init=e, rel=rel
                        ),
                    )
                else:
                    kcfg = _kg_config(config, subseed(seed, "kg-target", b_idx, i))
                    result, cpu, wall = time_stage(
                        "kg",
                        lambda s=split, k=kcfg: train_kg_model(
                            s.train_graph, kind, k, dim=config["dim"], rel=rel
                        ),
                    )
                path = _embedding_file(out, bucket, fam, i)
                path.parent.mkdir(parents=True, exist_ok=True)
                save_embedding(path, result.embeddings, relation=result.relation, aux=result.aux)
                artifacts.append(path)
                timings[i] = {"cpu_seconds": cpu, "wall_seconds": wall}
            artifacts.append(_write_timings(out, bucket, fam, timings))
    manifest.record(
        f"train-kg-{family}", artifacts, seeds={"global": seed}, extra={"model": kind.value}
    )


def _load_pairs(out: Path, bucket, record: BucketRecord, indices: list[int]) -> list[TrainPair]:
    pairs = []
    for i in indices:
        src_path = _embedding_file(out, bucket, "source", i)
        ft_path = _embedding_file(out, bucket, "finetuned", i)
        for p in (src_path, ft_path):
            if not p.exists():
                raise MissingArtifactError(f"missing {p}; run embed/train-kg first")
        source, _, _ = load_embedding(src_path)
        finetuned, _, _ = load_embedding(ft_path)
        pairs.append(TrainPair(graph=record.splits[i].train_graph, source=source, finetuned=finetuned))
    return pairs


def stage_train_transform(config: dict, out: Path) -> None:
    """Fit the attention transformation on (source, finetuned) training pairs."""
    out = Path(out)
    seed = config["seed"]
    tf = config["transform"]
    manifest = Manifest(out, config)
    manifest.require_stage("prepare")
    artifacts = []
    for b_idx, bucket in enumerate(config["dataset"]["size_buckets"]):
        record = load_bucket_record(out, bucket)
        train_pairs = _load_pairs(out, bucket, record, record.indices("train"))
        val_pairs = _load_pairs(out, bucket, record, record.indices("val"))
        cfg = TransformTrainConfig(
            batch_size=tf["batch_size"],
            learning_rate=tf["learning_rate"],
            epochs=tf["epochs"],
            seed=subseed(seed, "transform", b_idx),
        )
        (params, history), cpu, wall = time_stage(
            "transform", lambda t=train_pairs, v=val_pairs, c=cfg: train_transformer(t, v, c)
        )
        tf_dir = _bucket_dir(out, bucket) / "transform"
        tf_dir.mkdir(parents=True, exist_ok=True)
        model_path = tf_dir / "model.bin"
        save_attention_params(model_path, params)
        save_attention_debug_json(tf_dir / "model.json", params)
        history_path = tf_dir / "history.csv"
        with history_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_loss", "val_loss"])
            for h in history:
                writer.writerow([h.epoch, repr(h.train_loss), repr(h.val_loss)])
        timing_doc = {
            0: {"cpu_seconds": cpu, "wall_seconds": wall, "pairs": len(train_pairs)}
        }
        artifacts += [model_path, tf_dir / "model.json", history_path]
        artifacts.append(_write_timings(out, bucket, "transform-train", timing_doc))
    manifest.record("train-transform", artifacts, seeds={"global": seed})


def stage_apply(config: dict, out: Path, split: str = "test") -> None:
    """Run the trained transformation over a split's source embeddings."""
    if split not in SPLIT_NAMES + ("all",):
        raise ConfigError(f"unknown split {split!r}")
    out = Path(out)
    manifest = Manifest(out, config)
    manifest.require_stage("prepare")
    manifest.require_stage("train-transform")
    artifacts = []
    for bucket in config["dataset"]["size_buckets"]:
        record = load_bucket_record(out, bucket)
        model_path = _bucket_dir(out, bucket) / "transform" / "model.bin"
        if not model_path.exists():
            raise MissingArtifactError(f"missing {model_path}; run train-transform")
        params = load_attention_params(model_path)
        indices = (
            list(range(len(record.splits))) if split == "all" else record.indices(split)
        )
        timings: dict[int, dict[str, float]] = {}
        for i in indices:
            src_path = _embedding_file(out, bucket, "source", i)
            if not src_path.exists():
                raise MissingArtifactError(f"missing {src_path}; run the embed stage")
            source, _, _ = load_embedding(src_path)
            transformed, cpu, wall = time_stage(
                "apply",
                lambda g=record.splits[i].train_graph, s=source: apply_attention(g, s, params),
            )
            path = _embedding_file(out, bucket, "transformed", i)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_embedding(path, transformed)
            artifacts.append(path)
            timings[i] = {"cpu_seconds": cpu, "wall_seconds": wall}
        artifacts.append(_write_timings(out, bucket, "transformed", timings))
    manifest.record("apply", artifacts, extra={"split": split})


def _method_embedding(
    out: Path, bucket, method: str, graph_id: int, config: dict
) -> tuple[EmbeddingMatrix, EntityAuxParams | None, KgModelKind, RelationParams]:
    """Load a family's embedding plus the scorer it is ranked under."""
    kind = KgModelKind(config["target"]["model"])
    path = _embedding_file(out, bucket, method, graph_id)
    if not path.exists():
        raise MissingArtifactError(f"missing {path}; run the producing stage first")
    emb, rel, aux = load_embedding(path)
    if method == "source":
        # No relation parameters of its own: plain negative-distance ranking.
        return emb, None, KgModelKind.TRANSE, zero_relation(emb.dim)
    if method == "transformed":
        rel = _relation_for_run(config)
        aux = None
        if kind is KgModelKind.TRANSD:
            # Zero projections make the scorer fall back to plain TransE
            # geometry; the transformation emits only the main matrix.
            aux = EntityAuxParams(kind=kind, projection=np.zeros((emb.node_count, emb.dim)))
        elif kind is KgModelKind.SIMPLE:
            aux = EntityAuxParams(kind=kind, second=emb.values)
        return emb, aux, kind, rel
    if rel is None:
        raise DataError(f"{path} lacks relation parameters")
    return emb, aux, kind, rel


def _path_cpu_seconds(
    out: Path, bucket, method: str, graph_id: int
) -> tuple[float, float]:
    """CPU/wall cost of producing this method's embedding for one graph.

    Warm-started and transformed paths include the source-embedding time, so
    the reported numbers are end-to-end per-graph costs.
    """
    if method == "source":
        t = _load_timings(out, bucket, "source")[graph_id]
        return t["cpu_seconds"], t["wall_seconds"]
    if method == "target":
        t = _load_timings(out, bucket, "target")[graph_id]
        return t["cpu_seconds"], t["wall_seconds"]
    if method == "finetuned":
        s = _load_timings(out, bucket, "source")[graph_id]
        k = _load_timings(out, bucket, "finetuned")[graph_id]
        return s["cpu_seconds"] + k["cpu_seconds"], s["wall_seconds"] + k["wall_seconds"]
    s = _load_timings(out, bucket, "source")[graph_id]
    a = _load_timings(out, bucket, "transformed")[graph_id]
    return s["cpu_seconds"] + a["cpu_seconds"], s["wall_seconds"] + a["wall_seconds"]


def stage_evaluate(config: dict, out: Path, split: str | None = None) -> Path:
    """Filtered link-prediction metrics for every requested embedding family."""
    out = Path(out)
    split = split or config["evaluate"]["split"]
    if split not in SPLIT_NAMES:
        raise ConfigError(f"unknown split {split!r}")
    methods = config["evaluate"]["methods"]
    norm_order = config["target"]["norm_order"]
    manifest = Manifest(out, config)
    manifest.require_stage("prepare")
    ds_name = config["dataset"]["name"]
    rows = []
    per_graph_json = []
    for bucket in config["dataset"]["size_buckets"]:
        record = load_bucket_record(out, bucket)
        # Leakage guard: only artifacts belonging to this split's graphs are
        # ever opened below.
        indices = record.indices(split)
        for method in methods:
            for i in indices:
                emb, aux, kind, rel = _method_embedding(out, bucket, method, i, config)
                report = evaluate_link_prediction(
                    record.splits[i], emb, aux, kind, rel, norm_order=norm_order
                )
                cpu, wall = _path_cpu_seconds(out, bucket, method, i)
                rows.append(
                    [
                        ds_name,
                        bucket_tag(bucket),
                        method,
                        i,
                        repr(report.mrr),
                        repr(report.precision_at_k[1]),
                        repr(report.precision_at_k[3]),
                        repr(report.precision_at_k[10]),
                        repr(cpu),
                        repr(wall),
                    ]
                )
                per_graph_json.append(
                    {
                        "dataset": ds_name,
                        "size_bucket": bucket_tag(bucket),
                        "method": method,
                        "graph_id": i,
                        "mrr": report.mrr,
                        "precision_at_k": {str(k): v for k, v in report.precision_at_k.items()},
                        "query_count": report.query_count,
                        "cpu_seconds": cpu,
                        "wall_seconds": wall,
                    }
                )
    metrics_dir = out / "metrics"
    metrics_dir.mkdir(parents=True, exist_ok=True)
    csv_path = metrics_dir / f"{split}.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        writer.writerows(rows)
    json_path = metrics_dir / f"{split}.json"
    json_path.write_text(
        json.dumps(per_graph_json, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    manifest.record(
        f"evaluate-{split}", [csv_path, json_path], extra={"methods": list(methods)}
    )
    return csv_path


def read_metrics(csv_path: Path) -> list[dict[str, Any]]:
    if not Path(csv_path).exists():
        raise MissingArtifactError(f"missing metrics file {csv_path}; run evaluate")
    with Path(csv_path).open("r", encoding="utf-8") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def stage_report(config: dict, out: Path, split: str | None = None) -> Path:
    """Aggregate metrics and pairwise significance tests across methods."""
    out = Path(out)
    split = split or config["evaluate"]["split"]
    rows = read_metrics(out / "metrics" / f"{split}.csv")
    manifest = Manifest(out, config)
    by_method: dict[str, list[float]] = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(float(row["mrr"]))
    report_dir = out / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    summary_path = report_dir / f"summary_{split}.csv"
    with summary_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "graphs", "mean_mrr", "std_mrr"])
        for method in METHODS:
            if method in by_method:
                vals = np.asarray(by_method[method])
                writer.writerow([method, len(vals), repr(float(vals.mean())), repr(float(vals.std()))])

    anova_path = report_dir / f"anova_{split}.csv"
    with anova_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method_1", "method_2", "f_statistic", "p_value", "mean_difference"])
        present = [m for m in METHODS if m in by_method]
        for i, m1 in enumerate(present):
            for m2 in present[i + 1 :]:
                if len(by_method[m1]) < 2 or len(by_method[m2]) < 2:
                    continue
                res = anova_one_way(by_method[m1], by_method[m2])
                writer.writerow(
                    [m1, m2, repr(res.f_statistic), repr(res.p_value), repr(res.mean_difference)]
                )
    manifest.record(f"report-{split}", [summary_path, anova_path])
    return anova_path


def stage_bench(config: dict, out: Path) -> Path:
    """Per-size-bucket CPU-time and MRR comparison of the two pipelines.

    For each bench bucket a small self-contained dataset is generated, the
    finetune path (source embed + warm-started KG training) and the transform
    path (source embed + attention forward, with the bucket's transformation
    model trained once on the train/val graphs) are both timed per test graph.
    Both path totals include the source-embedding time.
    """
    out = Path(out)
    seed = config["seed"]
    kind = KgModelKind(config["target"]["model"])
    bench_cfg = config["bench"]
    src = config["source"]
    deepwalk = src["method"] == "deepwalk"
    manifest = Manifest(out, config)
    rel = _relation_for_run(config)
    zero_rel = zero_relation(config["dim"])
    norm_order = config["target"]["norm_order"]

    detail_rows = []
    summary_rows = []
    for b_idx, bucket in enumerate(bench_cfg["size_buckets"]):
        lo, hi = bucket
        count = bench_cfg["graphs_per_bucket"]
        ds_cfg = config["dataset"]
        dataset = synthetic_communities(
            count,
            lo,
            hi,
            seed=subseed(seed, "bench-graphs", b_idx),
            p_in=ds_cfg["intra_edge_prob"],
            p_out=ds_cfg["inter_edge_prob"],
            degree_exponent=ds_cfg["degree_exponent"],
            nodes_per_block=ds_cfg["nodes_per_block"],
        )
        splits = [
            split_edges(g, ds_cfg["holdout_fraction"], subseed(seed, "bench-holdout", b_idx, i))
            for i, g in enumerate(dataset)
        ]
        parts = partition_indices(count, tuple(ds_cfg["split_ratios"]), subseed(seed, "bench-split", b_idx))
        train_idx, val_idx, test_idx = (list(p) for p in parts)

        sources: dict[int, EmbeddingMatrix] = {}
        finetuned: dict[int, Any] = {}
        src_cpu: dict[int, float] = {}
        kg_cpu: dict[int, float] = {}
        for i, split in enumerate(splits):
            wcfg = WalkConfig(
                walks_per_node=src["walks_per_node"],
                walk_length=src["walk_length"],
                return_param=1.0 if deepwalk else src["return_param"],
                inout_param=1.0 if deepwalk else src["inout_param"],
                seed=subseed(seed, "bench-walks", b_idx, i),
            )
            scfg = SkipGramConfig(
                dim=config["dim"],
                window=src["window"],
                negatives_per_positive=src["negatives_per_positive"],
                epochs=src["epochs"],
                learning_rate=src["learning_rate"],
                seed=subseed(seed, "bench-skipgram", b_idx, i),
            )
            emb, cpu, _ = time_stage("bench-embed", lambda g=split.train_graph: embed(g, wcfg, scfg))
            sources[i] = emb
            src_cpu[i] = cpu
            kcfg = _kg_config(config, subseed(seed, "bench-kg", b_idx, i))
            result, cpu, _ = time_stage(
                "bench-kg",
                lambda s=split, k=kcfg, e=emb: train_kg_model(s.train_graph, kind, k, init=e, rel=rel),
            )
            finetuned[i] = result
            kg_cpu[i] = cpu

        tf = config["transform"]
        tcfg = TransformTrainConfig(
            batch_size=tf["batch_size"],
            learning_rate=tf["learning_rate"],
            epochs=tf["epochs"],
            seed=subseed(seed, "bench-transform", b_idx),
        )
        train_pairs = [
            TrainPair(graph=splits[i].train_graph, source=sources[i], finetuned=finetuned[i].embeddings)
            for i in train_idx
        ]
        val_pairs = [
            TrainPair(graph=splits[i].train_graph, source=sources[i], finetuned=finetuned[i].embeddings)
            for i in val_idx
        ]
        params, _ = train_transformer(train_pairs, val_pairs, tcfg)

        bucket_detail = []
        for i in test_idx:
            split = splits[i]
            transformed, fwd_cpu, _ = time_stage(
                "bench-apply", lambda s=split, e=sources[i]: apply_attention(s.train_graph, e, params)
            )
            ft_aux = finetuned[i].aux if kind in (KgModelKind.TRANSD, KgModelKind.SIMPLE) else None
            mrr_ft = evaluate_link_prediction(
                split, finetuned[i].embeddings, ft_aux, kind, rel, norm_order=norm_order
            ).mrr
            tx_aux = None
            if kind is KgModelKind.TRANSD:
                tx_aux = EntityAuxParams(
                    kind=kind, projection=np.zeros((transformed.node_count, transformed.dim))
                )
            elif kind is KgModelKind.SIMPLE:
                tx_aux = EntityAuxParams(kind=kind, second=transformed.values)
            mrr_tx = evaluate_link_prediction(
                split, transformed, tx_aux, kind, rel, norm_order=norm_order
            ).mrr
            row = {
                "size_bucket": bucket_tag(bucket),
                "graph_id": i,
                "node_count": split.train_graph.node_count,
                "source_cpu": src_cpu[i],
                "kg_cpu": kg_cpu[i],
                "forward_cpu": fwd_cpu,
                "finetune_path_cpu": src_cpu[i] + kg_cpu[i],
                "transform_path_cpu": src_cpu[i] + fwd_cpu,
                "mrr_finetuned": mrr_ft,
                "mrr_transformed": mrr_tx,
            }
            bucket_detail.append(row)
            detail_rows.append(row)
        summary_rows.append(
            {
                "size_bucket": bucket_tag(bucket),
                "test_graphs": len(bucket_detail),
                "mean_node_count": float(np.mean([r["node_count"] for r in bucket_detail])),
                "mean_cpu_finetune_path": float(np.mean([r["finetune_path_cpu"] for r in bucket_detail])),
                "mean_cpu_transform_path": float(np.mean([r["transform_path_cpu"] for r in bucket_detail])),
                "mean_mrr_finetuned": float(np.mean([r["mrr_finetuned"] for r in bucket_detail])),
                "mean_mrr_transformed": float(np.mean([r["mrr_transformed"] for r in bucket_detail])),
            }
        )

    bench_dir = out / "bench"
    bench_dir.mkdir(parents=True, exist_ok=True)
    detail_path = bench_dir / "bench_detail.csv"
    with detail_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(detail_rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(detail_rows)
    summary_path = bench_dir / "bench.csv"
    with summary_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary_rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(summary_rows)
    manifest.record("bench", [detail_path, summary_path])
    return summary_path
