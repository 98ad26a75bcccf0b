"""End-to-end orchestration: inference, training of all stages, evaluation.

Inference runs exactly: bi-encoder top-K retrieval, location reranking by
the product of bi-encoder and location scores, per-query clustering, then
event reranking (or the plain bi-encoder order when fewer than
``min_clusters`` clusters form).  Identical configuration, seed, and inputs
produce byte-identical rankings and reports.
"""

from __future__ import annotations

import datetime as dt
import json
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .articles import Article
from .biencoder import (
    BiEncoderTrainConfig,
    ProjectionHead,
    train_biencoder,
)
from .cluster_event import (
    ArticleCluster,
    event_recall_at_1,
    form_clusters,
    rank_events,
    sample_event_training_pairs,
    score_clusters,
    train_event_scorer,
)
from .config import Config
from .crossenc import CrossScorer, CrossTrainConfig
from .embedstore import EmbeddingMatrix, fake_embedding, load_matrix, top_k
from .labeling import ImageRecord, RelevanceLabels
from .metrics import (
    Gazetteer,
    MetricsReport,
    PartialDate,
    co_delta,
    date_example_f1,
    delta_year,
    em_at_k,
    example_f1,
    extract_predictions,
    geocode,
    great_date,
    great_loc,
    hier_location,
)
from .rerank_loc import (
    ScoredArticle,
    attach_location_scores,
    location_recall_at_1,
    rerank_by_location,
    sample_loc_training_pairs,
    train_loc_scorer,
)


class HashTextEmbedder:
    """Offline text embedder: deterministic hash-derived unit vectors."""

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def __call__(self, texts: list[str]) -> np.ndarray:
        return np.stack(
            [fake_embedding(t, self.dim, self.seed).astype(np.float64) for t in texts]
        )


class CachingTextEmbedder:
    """Memoizing wrapper around a pure text embedder."""

    def __init__(self, base: Callable[[list[str]], np.ndarray]):
        self.base = base
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, texts: list[str]) -> np.ndarray:
        missing = [t for t in texts if t not in self._cache]
        if missing:
            vectors = self.base(missing)
            for text, vec in zip(missing, vectors):
                self._cache[text] = np.asarray(vec, dtype=np.float64)
        return np.stack([self._cache[t] for t in texts])


class CommandTextEmbedder:
    """Embed texts by invoking an external embedder command.

    The command template receives ``{manifest}`` and ``{out}`` placeholders;
    the manifest is line-delimited ``{id, kind: "text", payload}`` and the
    output must be a valid embedding file.
    """

    def __init__(self, command_template: str):
        self.command_template = command_template

    def __call__(self, texts: list[str]) -> np.ndarray:
        with tempfile.TemporaryDirectory() as tmp:
            manifest = Path(tmp) / "manifest.jsonl"
            out = Path(tmp) / "vectors.nrec"
            with open(manifest, "w", encoding="utf-8") as fh:
                for i, text in enumerate(texts):
                    fh.write(
                        json.dumps({"id": f"q{i}", "kind": "text", "payload": text})
                    )
                    fh.write("\n")
            command = self.command_template.format(manifest=manifest, out=out)
            subprocess.run(command, shell=True, check=True, capture_output=True)
            matrix = load_matrix(out)
            order = {f"q{i}": i for i in range(len(texts))}
            data = np.empty((len(texts), matrix.dim), dtype=np.float64)
            for row, row_id in enumerate(matrix.ids):
                data[order[row_id]] = matrix.data[row]
            return data


@dataclass
class Stores:
    """Everything inference needs, loaded once and shared read-only."""

    articles: dict[str, Article]
    image_store: EmbeddingMatrix
    caption_store: EmbeddingMatrix
    template_store: EmbeddingMatrix | None = None
    gazetteer: Gazetteer | None = None
    embed_text: Callable[[list[str]], np.ndarray] | None = None
    image_head: ProjectionHead | None = None
    text_head: ProjectionHead | None = None
    loc_scorer: CrossScorer | None = None
    evt_scorer: CrossScorer | None = None
    _projected_captions: EmbeddingMatrix | None = None
    _projected_images: EmbeddingMatrix | None = None
    _projected_templates: EmbeddingMatrix | None = None
    _aligned_embed: Callable | None = None

    def __post_init__(self):
        dim = self.image_store.dim
        if self.image_head is None:
            self.image_head = ProjectionHead.identity(dim)
        if self.text_head is None:
            self.text_head = ProjectionHead.identity(self.caption_store.dim)
        if self.embed_text is None:
            self.embed_text = HashTextEmbedder(dim)
        # Retrieval must never surface an article outside the active corpus.
        from .embedstore import split_row_id

        keep = [
            i
            for i, row_id in enumerate(self.caption_store.ids)
            if split_row_id(row_id)[0] in self.articles
        ]
        if len(keep) != self.caption_store.rows:
            self.caption_store = EmbeddingMatrix(
                ids=[self.caption_store.ids[i] for i in keep],
                data=self.caption_store.data[keep],
            )

    def projected_captions(self) -> EmbeddingMatrix:
        if self._projected_captions is None:
            self._projected_captions = self.text_head.project_matrix(self.caption_store)
        return self._projected_captions

    def projected_images(self) -> EmbeddingMatrix:
        """Image store through the image head: the aligned retrieval space.

        Cross-encoders score in this space; once the heads are trained they
        are frozen, so this is still a fixed feature extractor.
        """
        if self._projected_images is None:
            self._projected_images = self.image_head.project_matrix(self.image_store)
        return self._projected_images

    def projected_templates(self) -> EmbeddingMatrix | None:
        if self.template_store is None:
            return None
        if self._projected_templates is None:
            self._projected_templates = self.text_head.project_matrix(
                self.template_store
            )
        return self._projected_templates

    def aligned_embed_text(self) -> Callable[[list[str]], np.ndarray]:
        """Query-time text embedder composed with the (frozen) text head."""
        if self._aligned_embed is None:
            base = self.embed_text
            head = self.text_head

            def embed(texts: list[str]) -> np.ndarray:
                return np.atleast_2d(head.project(base(texts)))

            self._aligned_embed = CachingTextEmbedder(embed)
        return self._aligned_embed

    def invalidate_caches(self) -> None:
        self._projected_captions = None
        self._projected_images = None
        self._projected_templates = None
        self._aligned_embed = None


@dataclass
class RetrievalResult:
    """Both rankings for one query, plus clusters and stage timings."""

    image_id: str
    location_ranking: list[ScoredArticle]
    event_ranking: list[str]
    clusters: list[ArticleCluster]
    timings: dict[str, float] = field(default_factory=dict)

    def to_record(self) -> dict:
        """Canonical serialization (timings excluded: they are not content)."""
        return {
            "image_id": self.image_id,
            "location_ranking": [
                {
                    "article_id": h.article_id,
                    "s_bi": h.s_bi,
                    "s_loc": h.s_loc,
                    "s_comb": h.s_comb,
                }
                for h in self.location_ranking
            ],
            "event_ranking": list(self.event_ranking),
            "clusters": [
                {
                    "article_ids": c.article_ids,
                    "start_date": c.start_date.isoformat(),
                    "end_date": c.end_date.isoformat(),
                    "shared_locations": sorted(c.shared_locations),
                    "representative_id": c.representative_id,
                    "s_evt": c.s_evt,
                }
                for c in self.clusters
            ],
        }


def run_inference(image_id: str, config: Config, stores: Stores) -> RetrievalResult:
    """Execute the full retrieval pipeline for one query image."""
    if image_id not in stores.image_store:
        raise KeyError(f"no embedding for image {image_id!r}")
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    query = stores.image_head.project(stores.image_store.row(image_id))
    hits = top_k(query, stores.projected_captions(), max(config.k_loc, config.k_evt))
    timings["biencoder"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    loc_hits = hits[: config.k_loc]
    if stores.loc_scorer is not None and stores.template_store is not None:
        scored = attach_location_scores(
            loc_hits,
            query,
            stores.articles,
            stores.projected_templates(),
            stores.loc_scorer,
        )
        location_ranking = rerank_by_location(scored)
    else:
        location_ranking = [
            ScoredArticle(article_id=h.article_id, s_bi=h.score) for h in loc_hits
        ]
    timings["location_rerank"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    evt_hits = [
        ScoredArticle(article_id=h.article_id, s_bi=h.score)
        for h in hits[: config.k_evt]
    ]
    clusters = form_clusters(
        evt_hits, stores.articles, config.n_window_days, config.n_min_size
    )
    timings["clustering"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if len(clusters) >= config.min_clusters:
        score_clusters(
            clusters,
            query,
            stores.evt_scorer,
            stores.aligned_embed_text(),
        )
    event_ranking = rank_events(evt_hits, clusters, config.min_clusters)
    timings["event_rerank"] = time.perf_counter() - t0

    return RetrievalResult(
        image_id=image_id,
        location_ranking=location_ranking,
        event_ranking=event_ranking,
        clusters=clusters,
        timings=timings,
    )


EVIDENCE_PROMPT_HEADER = (
    "You are a helpful assistant for journalism. Your task is to predict the "
    "{WHAT} of the given news image.\n\n"
    "Leverage the image's content and relevant additional information to "
    "predict the {WHAT}. The following news articles might be relevant to the "
    "events shown in the image. Use them to answer the question in addition "
    "to the image's content. They are sorted by order of relevance:\n"
)
LOCATION_QUESTION = (
    "Where was the image taken? Answer only with the city, region, and "
    "country, structured as a comma-separated list (city,region,country)."
)
DATE_QUESTION = (
    "When was the image taken? Answer only with a date (yyyy-mm-dd, yyyy-mm, "
    "or yyyy), as specific as possible. The date need to be included in the "
    "range [1900-01-01, {MAX_DATE}]."
)


def render_evidence_prompt(
    result: RetrievalResult,
    task: str,
    articles: dict[str, Article],
    max_date: dt.date,
    top_n: int = 3,
) -> str:
    """Fill the evidence-question template with the top-n ranked articles."""
    if task not in ("date", "location"):
        raise ValueError(f"task must be 'date' or 'location', got {task!r}")
    ranked_ids = (
        result.event_ranking
        if task == "date"
        else [h.article_id for h in result.location_ranking]
    )
    if not ranked_ids:
        raise ValueError(f"no ranked articles for image {result.image_id}")

    lines = [EVIDENCE_PROMPT_HEADER.replace("{WHAT}", task.upper())]
    for rank, article_id in enumerate(ranked_ids[:top_n], start=1):
        article = articles[article_id]
        lines.append(f"Article {rank}")
        lines.append(f"Headline: {article.headline}")
        lines.append(f"Abstract: {article.abstract}")
        lines.append(f"Publication date: {article.published_at.isoformat()}")
        lines.append(f"Location keywords: {', '.join(article.geo_keywords)}")
        lines.append("")
    if task == "location":
        lines.append(LOCATION_QUESTION)
    else:
        lines.append(DATE_QUESTION.replace("{MAX_DATE}", max_date.isoformat()))
    return "\n".join(lines)


@dataclass
class TrainedModels:
    image_head: ProjectionHead
    text_head: ProjectionHead
    loc_scorer: CrossScorer | None
    evt_scorer: CrossScorer | None
    logs: dict[str, list[dict]] = field(default_factory=dict)


def _hits_for(stores: Stores, image_ids: list[str], k: int):
    projected = stores.projected_captions()
    return {
        image_id: top_k(
            stores.image_head.project(stores.image_store.row(image_id)), projected, k
        )
        for image_id in image_ids
        if image_id in stores.image_store
    }


def train_biencoder_stage(
    stores: Stores,
    labels: dict[str, RelevanceLabels],
    train_ids: list[str],
    dev_ids: list[str],
    config: Config,
) -> tuple[ProjectionHead, ProjectionHead, list[dict]]:
    """Train the projection heads and install them on the stores."""
    bi_cfg = BiEncoderTrainConfig(
        epochs=config.bi_epochs,
        learning_rate=config.bi_learning_rate,
        batch_size=config.bi_batch_size,
        n_random=config.n_random,
        temperature=config.temperature,
        seed=config.seed,
        validation_k=config.bi_validation_k,
    )
    image_head, text_head, log = train_biencoder(
        stores.image_store, stores.caption_store, labels, train_ids, dev_ids, bi_cfg
    )
    stores.image_head = image_head
    stores.text_head = text_head
    stores.invalidate_caches()
    return image_head, text_head, log


def train_loc_stage(
    stores: Stores,
    labels: dict[str, RelevanceLabels],
    train_ids: list[str],
    dev_ids: list[str],
    config: Config,
) -> tuple[CrossScorer, list[dict]]:
    """Sample location pairs from current bi-encoder hits and fit the scorer."""
    if stores.template_store is None:
        raise ValueError("location training needs a template embedding store")
    rng = np.random.default_rng(config.seed)
    hits20 = _hits_for(stores, train_ids + dev_ids, config.k_loc)
    pairs = []
    for image_id in train_ids:
        if image_id in hits20 and image_id in labels:
            pairs.extend(
                sample_loc_training_pairs(
                    image_id,
                    hits20[image_id],
                    labels[image_id],
                    stores.articles,
                    config.n_negative,
                    rng,
                )
            )
    loc_cfg = CrossTrainConfig(
        epochs=config.loc_epochs,
        learning_rate=config.loc_learning_rate,
        weight_decay=config.loc_weight_decay,
        batch_size=config.loc_batch_size,
        n_negative=config.n_negative,
        seed=config.seed,
    )
    proj_images = stores.projected_images()
    proj_templates = stores.projected_templates()

    def dev_metric(scorer: CrossScorer) -> float:
        return location_recall_at_1(
            scorer,
            dev_ids,
            hits20,
            proj_images,
            proj_templates,
            stores.articles,
            labels,
        )

    scorer, log = train_loc_scorer(
        pairs,
        proj_images,
        proj_templates,
        loc_cfg,
        dev_metric=dev_metric,
        combiners=config.combiner_tuple("loc_combiners"),
    )
    stores.loc_scorer = scorer
    return scorer, log


def train_evt_stage(
    stores: Stores,
    labels: dict[str, RelevanceLabels],
    train_ids: list[str],
    dev_ids: list[str],
    config: Config,
) -> tuple[CrossScorer, list[dict]]:
    """Cluster per-image top-K hits, sample cluster pairs, fit the event scorer."""
    rng = np.random.default_rng(config.seed)
    hits50 = _hits_for(stores, train_ids + dev_ids, config.k_evt)
    scored_hits = {
        image_id: [ScoredArticle(h.article_id, h.score) for h in image_hits]
        for image_id, image_hits in hits50.items()
    }
    clusters_by_image = {
        image_id: form_clusters(
            image_hits, stores.articles, config.n_window_days, config.n_min_size
        )
        for image_id, image_hits in scored_hits.items()
    }
    pairs = []
    for image_id in train_ids:
        if image_id in clusters_by_image and image_id in labels:
            pairs.extend(
                sample_event_training_pairs(
                    image_id,
                    clusters_by_image[image_id],
                    labels[image_id],
                    config.n_negative,
                    rng,
                )
            )
    evt_cfg = CrossTrainConfig(
        epochs=config.evt_epochs,
        learning_rate=config.evt_learning_rate,
        weight_decay=config.evt_weight_decay,
        batch_size=config.evt_batch_size,
        n_negative=config.n_negative,
        seed=config.seed,
    )
    proj_images = stores.projected_images()
    aligned_embed = stores.aligned_embed_text()

    def dev_metric(scorer: CrossScorer) -> float:
        return event_recall_at_1(
            scorer,
            dev_ids,
            scored_hits,
            clusters_by_image,
            proj_images,
            aligned_embed,
            labels,
            config.min_clusters,
        )

    scorer, log = train_event_scorer(
        pairs,
        proj_images,
        aligned_embed,
        evt_cfg,
        dev_metric=dev_metric,
        combiners=config.combiner_tuple("evt_combiners"),
    )
    stores.evt_scorer = scorer
    return scorer, log


def train_all(
    stores: Stores,
    labels: dict[str, RelevanceLabels],
    train_ids: list[str],
    dev_ids: list[str],
    config: Config,
) -> TrainedModels:
    """Train bi-encoder heads, then both cross-encoders, per configuration.

    Bi-encoder hits are recomputed with the trained heads before sampling
    cross-encoder training pairs; both cross-encoders consume the frozen
    image embeddings, with best-epoch selection by dev recall@1.
    """
    image_head, text_head, bi_log = train_biencoder_stage(
        stores, labels, train_ids, dev_ids, config
    )
    logs = {"biencoder": bi_log}
    loc_scorer = None
    if stores.template_store is not None:
        loc_scorer, loc_log = train_loc_stage(
            stores, labels, train_ids, dev_ids, config
        )
        logs["location"] = loc_log
    evt_scorer, evt_log = train_evt_stage(stores, labels, train_ids, dev_ids, config)
    logs["event"] = evt_log
    return TrainedModels(
        image_head=image_head,
        text_head=text_head,
        loc_scorer=loc_scorer,
        evt_scorer=evt_scorer,
        logs=logs,
    )


def _result_rankings(result) -> tuple[str, list[str], list[str]]:
    if isinstance(result, RetrievalResult):
        return (
            result.image_id,
            [h.article_id for h in result.location_ranking],
            list(result.event_ranking),
        )
    loc = [h["article_id"] for h in result.get("location_ranking", [])]
    return result["image_id"], loc, list(result.get("event_ranking", []))


def evaluate_run(
    results: Sequence,
    gold: list[ImageRecord],
    config: Config,
    articles: dict[str, Article],
    gazetteer: Gazetteer | None = None,
) -> MetricsReport:
    """Score a batch of retrieval results against ground truth."""
    by_image = {}
    for result in results:
        image_id, loc_ids, evt_ids = _result_rankings(result)
        by_image[image_id] = (loc_ids, evt_ids)

    report = MetricsReport()
    for image in gold:
        record: dict = {"query_id": image.id}
        rankings = by_image.get(image.id)
        if rankings is None or (not rankings[0] and not rankings[1]):
            report.add_skip("empty_ranking")
            report.per_query.append(record)
            continue
        loc_ids, evt_ids = rankings
        loc_predictions, date_predictions = extract_predictions(
            loc_ids, evt_ids, articles, gazetteer
        )
        _score_date_task(record, image, date_predictions, config, report)
        _score_location_task(record, image, loc_predictions, config, gazetteer, report)
        gd, gl = record.get("great_date"), record.get("great_loc")
        if gd is not None and gl is not None:
            wd, wl = config.great_date_weight, config.great_loc_weight
            record["great"] = (wd * gd + wl * gl) / (wd + wl)
        else:
            record["great"] = None
        report.per_query.append(record)
    return report


def _score_date_task(record, image, date_predictions, config, report):
    if image.gt_date is None:
        report.add_skip("no_gt_date")
        return
    gt = image.gt_date
    record["date_em1"] = em_at_k(date_predictions, gt.isoformat(), 1, "date")
    record["date_em5"] = em_at_k(date_predictions, gt.isoformat(), 5, "date")
    if not date_predictions:
        return
    try:
        top1 = PartialDate.parse(date_predictions[0])
    except ValueError:
        report.add_skip("unparseable_date_prediction")
        return
    record["date_ef1"] = date_example_f1(top1, gt)
    record["delta"] = delta_year(top1, gt, form=config.delta_form)
    record["great_date"] = great_date(
        top1, gt, config.date_thresholds(), config.date_weights()
    )


def _score_location_task(record, image, loc_predictions, config, gazetteer, report):
    if not image.gt_location.strip():
        report.add_skip("no_gt_location")
        return
    gt_text = image.gt_location
    record["loc_em1"] = em_at_k(loc_predictions, gt_text, 1, "location")
    record["loc_em5"] = em_at_k(loc_predictions, gt_text, 5, "location")
    top1 = next((p for p in loc_predictions if p.strip()), None)
    if top1 is None:
        report.add_skip("empty_location_prediction")
        return
    record["loc_ef1"] = example_f1(
        hier_location(top1, gazetteer), hier_location(gt_text, gazetteer)
    )
    if image.gt_coordinates is not None:
        gt_point = _as_point(image.gt_coordinates)
    elif gazetteer is not None:
        gt_point = geocode(gt_text, gazetteer)
    else:
        gt_point = None
    if gt_point is None:
        report.add_skip("gt_geocode_miss")
        return
    pred_point = geocode(top1, gazetteer) if gazetteer else None
    if pred_point is None:
        report.add_skip("pred_geocode_miss")
        return
    record["co_delta"] = co_delta(pred_point, gt_point, form=config.co_delta_form)
    record["great_loc"] = great_loc(pred_point, gt_point)


def _as_point(coords):
    from .metrics import GeoPoint

    return GeoPoint(coords[0], coords[1])


def save_results(results: list[RetrievalResult], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for result in results:
            fh.write(json.dumps(result.to_record(), sort_keys=True))
            fh.write("\n")


def load_results(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def save_report(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in report.to_records():
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
