"""Article records, the line-delimited corpus store, and corpus variants."""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from typing import Iterable, Protocol

SOURCES = ("nytimes", "guardian")
MAX_CAPTIONS = 5


@dataclass
class Article:
    """One news item as stored in the corpus file.

    ``keep`` is the visualizable-event filter verdict (None until filtered);
    ``flags`` records enrichment failures such as ``filter-failed``.
    Fields not recognized by this schema round-trip through ``extra``.
    """

    id: str
    source: str
    headline: str
    abstract: str = ""
    published_at: dt.date = dt.date(1970, 1, 1)
    geo_keywords: list[str] = field(default_factory=list)
    news_captions: list[str] = field(default_factory=list)
    image_urls: list[str] = field(default_factory=list)
    keep: bool | None = None
    flags: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if len(self.news_captions) > MAX_CAPTIONS:
            raise ValueError(
                f"article {self.id}: {len(self.news_captions)} captions, max {MAX_CAPTIONS}"
            )
        if isinstance(self.published_at, str):
            self.published_at = dt.date.fromisoformat(self.published_at)

    def caption_row_ids(self) -> list[str]:
        """Embedding-row ids for this article's captions."""
        return [f"{self.id}#{i}" for i in range(len(self.news_captions))]

    def to_record(self) -> dict:
        record = {
            "id": self.id,
            "source": self.source,
            "headline": self.headline,
            "abstract": self.abstract,
            "published_at": self.published_at.isoformat(),
            "geo_keywords": list(self.geo_keywords),
            "news_captions": list(self.news_captions),
            "image_urls": list(self.image_urls),
            "keep": self.keep,
            "flags": list(self.flags),
        }
        record.update(self.extra)
        return record

    @classmethod
    def from_record(cls, record: dict) -> "Article":
        known = {
            "id",
            "source",
            "headline",
            "abstract",
            "published_at",
            "geo_keywords",
            "news_captions",
            "image_urls",
            "keep",
            "flags",
        }
        extra = {k: v for k, v in record.items() if k not in known}
        return cls(
            id=record["id"],
            source=record["source"],
            headline=record["headline"],
            abstract=record.get("abstract", ""),
            published_at=dt.date.fromisoformat(record["published_at"]),
            geo_keywords=list(record.get("geo_keywords", [])),
            news_captions=list(record.get("news_captions", [])),
            image_urls=list(record.get("image_urls", [])),
            keep=record.get("keep"),
            flags=list(record.get("flags", [])),
            extra=extra,
        )


class CorpusStore:
    """In-memory corpus keyed by article id, persisted as one record per line."""

    def __init__(self, articles: Iterable[Article] = ()):
        self.articles: dict[str, Article] = {}
        for article in articles:
            self.add(article)

    def add(self, article: Article, replace: bool = False) -> None:
        if not replace and article.id in self.articles:
            raise ValueError(f"duplicate article id {article.id}")
        self.articles[article.id] = article

    def __len__(self) -> int:
        return len(self.articles)

    def __iter__(self):
        return iter(self.articles.values())

    def get(self, article_id: str) -> Article | None:
        return self.articles.get(article_id)

    @classmethod
    def load(cls, path) -> "CorpusStore":
        store = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    store.add(Article.from_record(json.loads(line)))
                except (KeyError, ValueError) as exc:
                    raise ValueError(f"{path}:{line_no}: invalid article record: {exc}")
        return store

    def save(self, path) -> None:
        """Write sorted by id; identical stores produce identical bytes."""
        with open(path, "w", encoding="utf-8") as fh:
            for article_id in sorted(self.articles):
                record = self.articles[article_id].to_record()
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
                fh.write("\n")


@dataclass(frozen=True)
class CorpusVariant:
    """A named, reproducible selection over the corpus store."""

    name: str
    max_date: dt.date
    excluded_article_ids: frozenset[str] = frozenset()


def apply_variant(store: CorpusStore, variant: CorpusVariant) -> list[Article]:
    """Articles published on or before max_date and not excluded, sorted by id.

    Pure and idempotent; unknown excluded ids are simply never selected.
    """
    return [
        store.articles[article_id]
        for article_id in sorted(store.articles)
        if store.articles[article_id].published_at <= variant.max_date
        and article_id not in variant.excluded_article_ids
    ]


class KeywordProvider(Protocol):
    """Pluggable extraction of location-ish keywords from free text."""

    def extract(self, text: str) -> list[str]: ...


class CapitalizedKeywordProvider:
    """Fallback provider: runs of capitalized words become keywords.

    A stand-in for a proper NER model; swap in a richer provider where
    available.
    """

    STOPWORDS = {"a", "an", "the", "on", "in", "at", "of", "for", "and", "to"}

    def extract(self, text: str) -> list[str]:
        keywords: list[str] = []
        run: list[str] = []
        for token in text.replace(",", " , ").split():
            bare = token.strip(".;:!?\"'()")
            if bare and bare[0].isupper() and bare.lower() not in self.STOPWORDS:
                run.append(bare)
            else:
                if run:
                    keywords.append(" ".join(run))
                run = []
        if run:
            keywords.append(" ".join(run))
        seen: set[str] = set()
        out = []
        for kw in keywords:
            if kw.casefold() not in seen:
                out.append(kw)
                seen.add(kw.casefold())
        return out
