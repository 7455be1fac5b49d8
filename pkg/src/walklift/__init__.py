"""walklift: random-walk node embeddings lifted to knowledge-graph quality.

Pipeline: community graphs -> random-walk source embeddings -> KG-objective
training (from scratch or warm-started) -> an adjacency-reinforced attention
model that maps source embeddings straight to finetuned quality -> filtered
link-prediction evaluation with significance tests and CPU-time benchmarks.
"""

from .attention import (
    AttentionParams,
    EpochLoss,
    TrainPair,
    TransformTrainConfig,
    apply,
    batch_loss,
    embedding_error,
    init_params,
    loss_gradient,
    self_attention_forward,
    train_transformer,
)
from .evaluation import (
    AnovaResult,
    MetricsReport,
    RankQuery,
    anova_one_way,
    evaluate_link_prediction,
    mrr,
    precision_at_k,
    rank_candidates,
)
from .graphs import (
    EdgeListFormatError,
    EdgeSplit,
    EmptyGraphError,
    Graph,
    GraphDataset,
    Triple,
    adjacency,
    load_communities,
    load_edge_list,
    split_dataset,
    split_edges,
    to_triples,
)
from .kgembed import (
    EntityAuxParams,
    KgModelKind,
    KgTrainConfig,
    KgTrainResult,
    RelationParams,
    init_relation_params,
    margin_loss,
    margin_loss_entity_gradients,
    negative_sample,
    score,
    score_batch,
    train,
    zero_relation,
)
from .synthetic import planted_partition_graph, synthetic_communities
from .timing import StageTiming, time_stage
from .walkembed import (
    EmbeddingMatrix,
    SkipGramConfig,
    WalkConfig,
    embed,
    generate_walks,
    train_skipgram,
)

__version__ = "0.1.0"
