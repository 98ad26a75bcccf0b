"""News-image evidence retrieval: link a query image to relevant articles.

The engine retrieves articles whose metadata (publication date, geolocation
keywords) predict a news image's date and location, through three stages:
bi-encoder retrieval over projected frozen embeddings, location cross-encoder
reranking, and event-cluster reranking.  Includes corpus ingestion, weak
labeling, training for every stage, and the full evaluation metric suite.
"""

from .articles import Article, CorpusStore, CorpusVariant, apply_variant
from .biencoder import (
    BiEncoderTrainConfig,
    ProjectionHead,
    build_batch,
    info_nce_loss,
    load_heads,
    retrieve_event_candidates,
    save_heads,
    train_biencoder,
)
from .cluster_event import (
    ArticleCluster,
    form_clusters,
    make_event_template,
    rank_events,
    train_event_scorer,
)
from .config import Config, load_config
from .crossenc import CrossScorer, CrossTrainConfig, load_scorer, save_scorer
from .embedstore import (
    EmbeddingMatrix,
    FormatError,
    SearchHit,
    fake_embedding,
    fake_matrix,
    load_matrix,
    save_matrix,
    top_k,
)
from .labeling import (
    ImageRecord,
    RelevanceLabels,
    build_labels,
    label_event_relevant,
    label_location_relevant,
)
from .metrics import (
    Gazetteer,
    GeoPoint,
    HierLocation,
    MetricsReport,
    PartialDate,
    co_delta,
    delta_year,
    em_at_k,
    example_f1,
    geocode,
    great_date,
    great_loc,
    haversine_km,
)
from .pipeline import (
    RetrievalResult,
    Stores,
    TrainedModels,
    evaluate_run,
    render_evidence_prompt,
    run_inference,
    train_all,
)
from .rerank_loc import (
    ScoredArticle,
    make_loc_template,
    rerank_by_location,
    sample_loc_training_pairs,
    score_location,
    train_loc_scorer,
)
from .synthetic import SyntheticConfig, SyntheticWorld

__version__ = "0.1.0"
