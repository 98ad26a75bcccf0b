"""Corpus store, variants, and the archive API clients (offline fixtures)."""

import datetime as dt
from pathlib import Path

import pytest

from newsrecon.articles import (
    Article,
    CapitalizedKeywordProvider,
    CorpusStore,
    CorpusVariant,
    apply_variant,
)
from newsrecon.newsapis import (
    CredentialError,
    FetchError,
    HttpCache,
    RateLimitError,
    fetch_guardian_matches,
    fetch_nyt_month,
)

FIXTURE_HTTP = Path(__file__).parent / "fixtures" / "http"


class FakeResponse:
    def __init__(self, status_code, body=None):
        self.status_code = status_code
        self._body = body or {}

    def json(self):
        return self._body


class TestArticleRecords:
    def test_round_trip_preserves_unknown_fields(self, tmp_path):
        record = {
            "id": "nyt:1",
            "source": "nytimes",
            "headline": "h",
            "abstract": "a",
            "published_at": "2015-03-04",
            "geo_keywords": ["Vanuatu"],
            "news_captions": [],
            "image_urls": [],
            "keep": None,
            "flags": [],
            "wire_priority": 3,
            "custom": {"nested": True},
        }
        article = Article.from_record(record)
        assert article.extra == {"wire_priority": 3, "custom": {"nested": True}}
        assert article.to_record()["wire_priority"] == 3

        store = CorpusStore([article])
        path = tmp_path / "corpus.jsonl"
        store.save(path)
        loaded = CorpusStore.load(path)
        assert loaded.get("nyt:1").to_record() == article.to_record()

    def test_caption_limit_enforced(self):
        with pytest.raises(ValueError, match="captions"):
            Article(
                id="x",
                source="guardian",
                headline="h",
                news_captions=["1", "2", "3", "4", "5", "6"],
            )

    def test_duplicate_ids_rejected(self):
        store = CorpusStore()
        store.add(Article(id="a", source="nytimes", headline="h"))
        with pytest.raises(ValueError, match="duplicate"):
            store.add(Article(id="a", source="nytimes", headline="h2"))

    def test_save_is_deterministic(self, tmp_path):
        articles = [
            Article(id="b", source="nytimes", headline="second"),
            Article(id="a", source="guardian", headline="first"),
        ]
        p1, p2 = tmp_path / "one.jsonl", tmp_path / "two.jsonl"
        CorpusStore(articles).save(p1)
        CorpusStore(articles[::-1]).save(p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestVariants:
    @pytest.fixture
    def store(self):
        return CorpusStore(
            [
                Article(id="a", source="nytimes", headline="h", published_at=dt.date(2020, 5, 1)),
                Article(id="b", source="nytimes", headline="h", published_at=dt.date(2021, 12, 31)),
                Article(id="c", source="guardian", headline="h", published_at=dt.date(2022, 1, 1)),
            ]
        )

    def test_max_date_excludes_newer(self, store):
        variant = CorpusVariant(name="through-2021", max_date=dt.date(2021, 12, 31))
        selected = apply_variant(store, variant)
        assert [a.id for a in selected] == ["a", "b"]

    def test_identity_variant(self, store):
        variant = CorpusVariant(name="all", max_date=dt.date(2999, 1, 1))
        assert [a.id for a in apply_variant(store, variant)] == ["a", "b", "c"]

    def test_full_exclusion(self, store):
        variant = CorpusVariant(
            name="none",
            max_date=dt.date(2999, 1, 1),
            excluded_article_ids=frozenset({"a", "b", "c"}),
        )
        assert apply_variant(store, variant) == []

    def test_unknown_excluded_ids_ignored(self, store):
        variant = CorpusVariant(
            name="x",
            max_date=dt.date(2999, 1, 1),
            excluded_article_ids=frozenset({"nope"}),
        )
        assert len(apply_variant(store, variant)) == 3

    def test_idempotent(self, store):
        variant = CorpusVariant(name="through-2021", max_date=dt.date(2021, 12, 31))
        first = apply_variant(store, variant)
        second = apply_variant(store, variant)
        assert first == second


class TestNytClient:
    def test_replay_from_committed_fixture(self):
        cache = HttpCache(FIXTURE_HTTP, offline=True)
        articles = fetch_nyt_month(2015, 3, api_key="", cache=cache)
        assert len(articles) == 3  # malformed fourth doc skipped
        assert all(a.headline for a in articles)
        assert articles[0].id == "nyt:abc-001"
        assert articles[0].published_at == dt.date(2015, 3, 4)
        assert articles[0].geo_keywords == ["Vanuatu"]
        assert articles[0].image_urls[0].startswith("https://www.nytimes.com/")

    def test_invalid_month_precondition(self):
        with pytest.raises(ValueError, match="month"):
            fetch_nyt_month(2015, 13, api_key="k")

    def test_year_range_precondition(self):
        with pytest.raises(ValueError, match="year"):
            fetch_nyt_month(2009, 5, api_key="k")

    def test_revoked_key_credential_error(self):
        def transport(url, params=None, timeout=None):
            return FakeResponse(401)

        with pytest.raises(CredentialError):
            fetch_nyt_month(2015, 3, api_key="revoked", transport=transport)

    def test_rate_limit_retries_then_raises(self):
        calls = []

        def transport(url, params=None, timeout=None):
            calls.append(url)
            return FakeResponse(429)

        sleeps = []
        import newsrecon.newsapis as napis

        original = napis._http_get_json
        with pytest.raises(RateLimitError):
            napis._http_get_json(
                "http://x", {}, 1.0, 3, transport, sleep=sleeps.append
            )
        assert len(calls) == 4  # initial try + 3 retries
        assert sleeps == [1.0, 2.0, 4.0]
        assert napis._http_get_json is original

    def test_offline_without_fixture_is_explicit(self, tmp_path):
        cache = HttpCache(tmp_path, offline=True)
        with pytest.raises(FetchError, match="offline"):
            fetch_nyt_month(2015, 4, api_key="", cache=cache)

    def test_cached_ingestion_is_byte_identical(self, tmp_path):
        cache = HttpCache(FIXTURE_HTTP, offline=True)
        paths = []
        for run in (1, 2):
            store = CorpusStore(fetch_nyt_month(2015, 3, api_key="", cache=cache))
            path = tmp_path / f"run{run}.jsonl"
            store.save(path)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_caches_to_disk_on_fetch(self, tmp_path):
        body = {"response": {"docs": []}}

        def transport(url, params=None, timeout=None):
            return FakeResponse(200, body)

        cache = HttpCache(tmp_path)
        fetch_nyt_month(2016, 1, api_key="k", cache=cache, transport=transport)
        cached = list(Path(tmp_path).glob("*.json"))
        assert len(cached) == 1
        # Re-run must not touch the network.
        def exploding_transport(url, params=None, timeout=None):
            raise AssertionError("network touched despite cache")

        again = fetch_nyt_month(
            2016, 1, api_key="k", cache=cache, transport=exploding_transport
        )
        assert again == []


class TestGuardianClient:
    def test_keyword_and_date_query_fixture(self):
        cache = HttpCache(FIXTURE_HTTP, offline=True)
        articles = fetch_guardian_matches(
            dt.date(2020, 1, 15), ["bushfire", "Australia"], api_key="", cache=cache
        )
        assert 0 < len(articles) <= 20
        assert articles[0].source == "guardian"
        assert articles[0].geo_keywords == ["bushfire", "Australia"]

    def test_empty_query_precondition(self):
        with pytest.raises(ValueError):
            fetch_guardian_matches(None, [], api_key="k")

    def test_date_only_fixture_within_window(self):
        cache = HttpCache(FIXTURE_HTTP, offline=True)
        anchor = dt.date(2020, 1, 15)
        articles = fetch_guardian_matches(anchor, [], api_key="", cache=cache)
        assert articles
        for article in articles:
            assert abs((article.published_at - anchor).days) <= 7

    def test_truncates_to_twenty(self):
        results = [
            {
                "id": f"world/x{i}",
                "webTitle": f"t{i}",
                "webPublicationDate": "2020-01-10T00:00:00Z",
                "fields": {},
            }
            for i in range(25)
        ]

        def transport(url, params=None, timeout=None):
            return FakeResponse(200, {"response": {"results": results}})

        articles = fetch_guardian_matches(
            None, ["storm"], api_key="k", transport=transport
        )
        assert len(articles) == 20


class TestKeywordProvider:
    def test_extracts_capitalized_runs(self):
        provider = CapitalizedKeywordProvider()
        keywords = provider.extract(
            "a crowd gathered in New York City near the East River on Tuesday"
        )
        assert "New York City" in keywords
        assert "East River" in keywords

    def test_deduplicates(self):
        provider = CapitalizedKeywordProvider()
        assert provider.extract("Paris then Paris again").count("Paris") == 1
