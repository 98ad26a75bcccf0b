"""Location reranking of bi-encoder hits.

Each candidate article is rendered as the template "An image from
LOCATION", scored against the query image by a linear cross-encoder over
frozen embeddings, and reranked by the product of bi-encoder and location
scores.  This product ranking is the pipeline's final location output.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .articles import Article
from .crossenc import CrossScorer, CrossTrainConfig, train_cross_scorer
from .embedstore import EmbeddingMatrix, SearchHit
from .labeling import RelevanceLabels, normalize_place

EMPTY_LOCATION_TEMPLATE = "An image from unknown location"

DEFAULT_LOC_COMBINERS = ("concatenation",)


@dataclass(frozen=True)
class ScoredArticle:
    """Ranking intermediate carrying both scores for one article."""

    article_id: str
    s_bi: float
    s_loc: float = 1.0

    @property
    def s_comb(self) -> float:
        # A negative cosine would let a high location score promote a bad
        # hit; clamp the bi-encoder factor at zero instead.
        return max(self.s_bi, 0.0) * self.s_loc


def make_loc_template(article: Article) -> str:
    """Deterministic location sentence for an article's keyword list."""
    if not article.geo_keywords:
        return EMPTY_LOCATION_TEMPLATE
    return "An image from " + ", ".join(article.geo_keywords)


def template_row_id(text: str) -> str:
    """Embedding-cache row id for a template: hash of its exact text."""
    return "tpl:" + hashlib.sha256(text.encode("utf-8")).hexdigest()


def collect_loc_templates(articles) -> list[tuple[str, str]]:
    """(row id, template text) pairs for an article collection, deduplicated."""
    seen = {}
    for article in articles:
        text = make_loc_template(article)
        seen.setdefault(template_row_id(text), text)
    return sorted(seen.items())


def score_location(
    image_vec: np.ndarray, template_vec: np.ndarray, scorer: CrossScorer
) -> float:
    """Relevance probability of (image, location template), strictly in (0,1)."""
    return scorer.score(image_vec, template_vec)


def sample_loc_training_pairs(
    image_id: str,
    topk_hits: list[SearchHit],
    labels: RelevanceLabels,
    articles: dict[str, Article],
    n_negative: int,
    rng: np.random.Generator,
) -> list[tuple[str, str, int]]:
    """(image, template text, 0/1) training pairs from one image's top-K.

    The image contributes nothing unless at least one hit is
    location-relevant.  One positive is drawn uniformly from the relevant
    hits; up to n_negative negatives come from irrelevant hits whose keyword
    sets are pairwise distinct.  Keyword-less articles are never negatives.
    """
    relevant = [h for h in topk_hits if h.article_id in labels.location_relevant]
    if not relevant:
        return []
    positive = relevant[rng.integers(len(relevant))]
    pairs = [(image_id, make_loc_template(articles[positive.article_id]), 1)]

    irrelevant = [
        h
        for h in topk_hits
        if h.article_id not in labels.location_relevant
        and articles[h.article_id].geo_keywords
    ]
    order = rng.permutation(len(irrelevant))
    taken_keywords: list[frozenset[str]] = []
    for idx in order:
        if len(taken_keywords) >= n_negative:
            break
        article = articles[irrelevant[idx].article_id]
        keyset = frozenset(normalize_place(k) for k in article.geo_keywords)
        if keyset in taken_keywords:
            continue
        taken_keywords.append(keyset)
        pairs.append((image_id, make_loc_template(article), 0))
    return pairs


def rerank_by_location(hits: list[ScoredArticle]) -> list[ScoredArticle]:
    """Sort by descending s_comb; ties by descending s_bi then ascending id."""
    return sorted(hits, key=lambda h: (-h.s_comb, -h.s_bi, h.article_id))


def attach_location_scores(
    hits: list[SearchHit],
    image_vec: np.ndarray,
    articles: dict[str, Article],
    template_store: EmbeddingMatrix,
    scorer: CrossScorer,
) -> list[ScoredArticle]:
    """Score every hit's location template against the image."""
    scored = []
    for hit in hits:
        template = make_loc_template(articles[hit.article_id])
        template_vec = template_store.row(template_row_id(template))
        scored.append(
            ScoredArticle(
                article_id=hit.article_id,
                s_bi=hit.score,
                s_loc=score_location(image_vec, template_vec, scorer),
            )
        )
    return scored


def location_recall_at_1(
    scorer: CrossScorer,
    image_ids: list[str],
    hits_by_image: dict[str, list[SearchHit]],
    image_store: EmbeddingMatrix,
    template_store: EmbeddingMatrix,
    articles: dict[str, Article],
    labels: dict[str, RelevanceLabels],
) -> float:
    """R@1 of location-relevant articles after combined-score reranking."""
    evaluated = 0
    hits = 0
    for image_id in image_ids:
        image_labels = labels.get(image_id)
        if image_labels is None or not image_labels.location_relevant:
            continue
        candidates = hits_by_image.get(image_id)
        if not candidates:
            continue
        evaluated += 1
        scored = attach_location_scores(
            candidates, image_store.row(image_id), articles, template_store, scorer
        )
        ranked = rerank_by_location(scored)
        if ranked[0].article_id in image_labels.location_relevant:
            hits += 1
    return hits / evaluated if evaluated else 0.0


def train_loc_scorer(
    pairs: list[tuple[str, str, int]],
    image_store: EmbeddingMatrix,
    template_store: EmbeddingMatrix,
    cfg: CrossTrainConfig,
    dev_metric=None,
    combiners: tuple[str, ...] = DEFAULT_LOC_COMBINERS,
) -> tuple[CrossScorer, list[dict]]:
    """Fit the location scorer on sampled pairs (binary cross-entropy)."""
    scorer = CrossScorer.zeros(image_store.dim, combiners)
    if not pairs:
        return scorer, []
    X_img = np.stack([image_store.row(image_id) for image_id, _, _ in pairs])
    X_tpl = np.stack(
        [template_store.row(template_row_id(text)) for _, text, _ in pairs]
    )
    y = np.array([label for _, _, label in pairs], dtype=np.float64)
    return train_cross_scorer(scorer, X_img, X_tpl, y, cfg, dev_metric)
