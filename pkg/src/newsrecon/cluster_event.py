"""Per-query event clustering and cluster-level reranking.

Top-K hits are grouped into event clusters under three rules: every member
shares at least one location keyword (non-empty common intersection), the
publication-date span covers at most 2*n_window+1 days inclusive, and a
cluster holds at least n_min_size articles.  Clusters are scored against
the query image through event templates; the final date ranking emits each
cluster's best article first and everything else in bi-encoder order.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .articles import Article
from .crossenc import CrossScorer, CrossTrainConfig, train_cross_scorer
from .embedstore import EmbeddingMatrix
from .labeling import RelevanceLabels, normalize_place
from .rerank_loc import ScoredArticle

log = logging.getLogger(__name__)

DEFAULT_EVT_COMBINERS = ("concatenation", "multiplication", "difference")


@dataclass
class ArticleCluster:
    """A group of articles plausibly covering one event."""

    article_ids: list[str]
    start_date: dt.date
    end_date: dt.date
    shared_locations: set[str]
    representative_id: str
    s_evt: float | None = None

    def span_days_inclusive(self) -> int:
        return (self.end_date - self.start_date).days + 1


def cluster_rules_ok(
    articles: Sequence[Article], n_window: int, n_min_size: int
) -> bool:
    """Check the three clustering rules on a candidate member set."""
    if len(articles) < n_min_size:
        return False
    shared = None
    for article in articles:
        keys = {normalize_place(k) for k in article.geo_keywords if normalize_place(k)}
        shared = keys if shared is None else shared & keys
        if not shared:
            return False
    dates = [a.published_at for a in articles]
    return (max(dates) - min(dates)).days <= 2 * n_window


class _Group:
    __slots__ = ("members", "shared", "raw_of", "min_date", "max_date")

    def __init__(self, article: Article):
        self.members: list[Article] = [article]
        self.raw_of: dict[str, str] = {}
        keys = set()
        for kw in article.geo_keywords:
            norm = normalize_place(kw)
            if norm:
                keys.add(norm)
                self.raw_of.setdefault(norm, kw)
        self.shared: set[str] = keys
        self.min_date = article.published_at
        self.max_date = article.published_at

    def compatible(self, article: Article, max_span_days: int) -> set[str] | None:
        keys = {normalize_place(k) for k in article.geo_keywords if normalize_place(k)}
        overlap = self.shared & keys
        if not overlap:
            return None
        lo = min(self.min_date, article.published_at)
        hi = max(self.max_date, article.published_at)
        if (hi - lo).days > max_span_days:
            return None
        return overlap

    def add(self, article: Article, overlap: set[str]) -> None:
        self.members.append(article)
        self.shared = overlap
        self.min_date = min(self.min_date, article.published_at)
        self.max_date = max(self.max_date, article.published_at)


def form_clusters(
    hits: Sequence[ScoredArticle],
    articles: dict[str, Article],
    n_window: int = 7,
    n_min_size: int = 3,
) -> list[ArticleCluster]:
    """Deterministic greedy agglomeration of top-K hits into event clusters.

    Hits are processed in ranking order (descending s_bi); each joins the
    first existing group it is compatible with, else seeds a new one.
    Groups below n_min_size dissolve, and their members get one sweep pass
    over the surviving clusters, so no emitted cluster can be extended by an
    unclustered article without breaking a rule.
    """
    max_span = 2 * n_window
    s_bi_of = {h.article_id: h.s_bi for h in hits}
    ordered = sorted(hits, key=lambda h: (-h.s_bi, h.article_id))
    groups: list[_Group] = []
    for hit in ordered:
        article = articles[hit.article_id]
        placed = False
        for group in groups:
            overlap = group.compatible(article, max_span)
            if overlap is not None:
                group.add(article, overlap)
                placed = True
                break
        if not placed:
            groups.append(_Group(article))

    survivors = [g for g in groups if len(g.members) >= n_min_size]
    dissolved = [g for g in groups if len(g.members) < n_min_size]
    strays = sorted(
        (a for g in dissolved for a in g.members),
        key=lambda a: (-s_bi_of[a.id], a.id),
    )
    for article in strays:
        for group in survivors:
            overlap = group.compatible(article, max_span)
            if overlap is not None:
                group.add(article, overlap)
                break

    clusters = []
    for group in survivors:
        representative = max(group.members, key=lambda a: (s_bi_of[a.id], a.id))
        clusters.append(
            ArticleCluster(
                article_ids=[a.id for a in group.members],
                start_date=group.min_date,
                end_date=group.max_date,
                shared_locations={group.raw_of[k] for k in group.shared},
                representative_id=representative.id,
            )
        )
    return clusters


def make_event_template(cluster: ArticleCluster) -> str:
    """"An image between START and END in LOCATION" with sorted keywords."""
    location = ", ".join(sorted(cluster.shared_locations))
    return (
        f"An image between {cluster.start_date.isoformat()} "
        f"and {cluster.end_date.isoformat()} in {location}"
    )


def score_clusters(
    clusters: list[ArticleCluster],
    image_vec: np.ndarray,
    scorer: CrossScorer | None,
    embed_text: Callable[[list[str]], np.ndarray],
) -> None:
    """Set s_evt on every cluster (0.5 uniform when no scorer is given)."""
    if not clusters:
        return
    if scorer is None:
        for cluster in clusters:
            cluster.s_evt = 0.5
        return
    templates = [make_event_template(c) for c in clusters]
    vectors = embed_text(templates)
    scores = scorer.score_batch(
        np.repeat(np.atleast_2d(image_vec), len(clusters), axis=0), vectors
    )
    for cluster, score in zip(clusters, scores):
        cluster.s_evt = float(score)


def rank_events(
    hits: Sequence[ScoredArticle],
    clusters: list[ArticleCluster],
    min_clusters: int = 2,
) -> list[str]:
    """Final date ranking over the top-K article set.

    With fewer than min_clusters clusters the bi-encoder ranking stands.
    Otherwise each cluster's representative leads, clusters ordered by
    descending s_evt (ties: earlier start date, then representative id);
    all remaining articles follow in decreasing bi-encoder score.  The
    result is a permutation of the input hits.
    """
    bi_order = [h.article_id for h in sorted(hits, key=lambda h: (-h.s_bi, h.article_id))]
    if len(clusters) < min_clusters:
        return bi_order
    for cluster in clusters:
        if cluster.s_evt is None:
            raise ValueError("clusters must be scored before ranking")
    ordered = sorted(
        clusters, key=lambda c: (-c.s_evt, c.start_date, c.representative_id)
    )
    ranking = [c.representative_id for c in ordered]
    emitted = set(ranking)
    ranking.extend(a for a in bi_order if a not in emitted)
    return ranking


def cluster_is_relevant(cluster: ArticleCluster, labels: RelevanceLabels) -> bool:
    """A cluster is relevant iff it contains an event-relevant article."""
    return any(a in labels.event_relevant for a in cluster.article_ids)


def sample_event_training_pairs(
    image_id: str,
    clusters: list[ArticleCluster],
    labels: RelevanceLabels,
    n_negative: int,
    rng: np.random.Generator,
) -> list[tuple[str, str, int]]:
    """(image, event template, 0/1) pairs from one image's clusters.

    Mirrors the location sampler: one uniformly-drawn relevant cluster as
    positive, up to n_negative irrelevant clusters with pairwise-distinct
    templates as negatives; images with no relevant cluster contribute
    nothing.
    """
    relevant = [c for c in clusters if cluster_is_relevant(c, labels)]
    if not relevant:
        return []
    positive = relevant[rng.integers(len(relevant))]
    pairs = [(image_id, make_event_template(positive), 1)]
    irrelevant = [c for c in clusters if not cluster_is_relevant(c, labels)]
    order = rng.permutation(len(irrelevant))
    taken: set[str] = set()
    for idx in order:
        if len(taken) >= n_negative:
            break
        template = make_event_template(irrelevant[idx])
        if template in taken:
            continue
        taken.add(template)
        pairs.append((image_id, template, 0))
    return pairs


def event_recall_at_1(
    scorer: CrossScorer | None,
    image_ids: list[str],
    hits_by_image: dict[str, list[ScoredArticle]],
    clusters_by_image: dict[str, list[ArticleCluster]],
    image_store: EmbeddingMatrix,
    embed_text: Callable[[list[str]], np.ndarray],
    labels: dict[str, RelevanceLabels],
    min_clusters: int = 2,
) -> float:
    """R@1 of event-relevant articles after event reranking."""
    evaluated = 0
    hits = 0
    for image_id in image_ids:
        image_labels = labels.get(image_id)
        if image_labels is None or not image_labels.event_relevant:
            continue
        candidates = hits_by_image.get(image_id)
        if not candidates:
            continue
        evaluated += 1
        clusters = clusters_by_image.get(image_id, [])
        score_clusters(clusters, image_store.row(image_id), scorer, embed_text)
        ranking = rank_events(candidates, clusters, min_clusters)
        if ranking and ranking[0] in image_labels.event_relevant:
            hits += 1
    return hits / evaluated if evaluated else 0.0


def train_event_scorer(
    pairs: list[tuple[str, str, int]],
    image_store: EmbeddingMatrix,
    embed_text: Callable[[list[str]], np.ndarray],
    cfg: CrossTrainConfig,
    dev_metric=None,
    combiners: tuple[str, ...] = DEFAULT_EVT_COMBINERS,
) -> tuple[CrossScorer, list[dict]]:
    """Fit the event scorer; identical procedure to the location scorer.

    With no training clusters at all, the zero-initialized scorer is
    returned with a warning.
    """
    scorer = CrossScorer.zeros(image_store.dim, combiners)
    if not pairs:
        log.warning("no event training pairs; returning untrained event scorer")
        return scorer, []
    X_img = np.stack([image_store.row(image_id) for image_id, _, _ in pairs])
    X_tpl = np.asarray(embed_text([text for _, text, _ in pairs]), dtype=np.float64)
    y = np.array([label for _, _, label in pairs], dtype=np.float64)
    return train_cross_scorer(scorer, X_img, X_tpl, y, cfg, dev_metric)


def dump_clusters(clusters: list[ArticleCluster], path) -> None:
    """Line-delimited cluster dump for debugging."""
    with open(path, "w", encoding="utf-8") as fh:
        for cluster in clusters:
            fh.write(
                json.dumps(
                    {
                        "article_ids": cluster.article_ids,
                        "start_date": cluster.start_date.isoformat(),
                        "end_date": cluster.end_date.isoformat(),
                        "shared_locations": sorted(cluster.shared_locations),
                        "representative_id": cluster.representative_id,
                        "s_evt": cluster.s_evt,
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")
