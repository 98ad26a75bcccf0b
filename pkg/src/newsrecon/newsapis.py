"""Archive API clients with a disk cache so every fetch is replayable offline.

Each request is keyed by a hash of (method, url, non-secret params); the
response body lands in ``<cache_dir>/<hash>.json``.  Committed fixture
directories make CI fully offline: a cache hit never touches the network.
API keys are excluded from hashes and never written to disk.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import time
from pathlib import Path
from typing import Callable

import requests

from .articles import Article

log = logging.getLogger(__name__)

NYT_ARCHIVE_URL = "https://api.nytimes.com/svc/archive/v1/{year}/{month}.json"
GUARDIAN_SEARCH_URL = "https://content.guardianapis.com/search"


class CredentialError(RuntimeError):
    """The API rejected our key."""


class RateLimitError(RuntimeError):
    """Retries exhausted against HTTP 429."""


class FetchError(RuntimeError):
    """Any other unrecoverable transport problem."""


def request_hash(method: str, url: str, params: dict) -> str:
    payload = json.dumps(
        {"method": method.upper(), "url": url, "params": params},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class HttpCache:
    """One JSON body per request hash; misses go to the network unless offline."""

    def __init__(self, cache_dir, offline: bool = False):
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.offline = offline

    def path_for(self, key: str) -> Path:
        if self.cache_dir is None:
            raise ValueError("cache_dir not configured")
        return self.cache_dir / f"{key}.json"

    def get(self, key: str) -> dict | None:
        if self.cache_dir is None:
            return None
        path = self.path_for(key)
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)

    def put(self, key: str, body: dict) -> None:
        if self.cache_dir is None:
            return
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        tmp = self.path_for(key).with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(body, fh, ensure_ascii=False, sort_keys=True)
        tmp.replace(self.path_for(key))


def _http_get_json(
    url: str,
    params: dict,
    timeout: float,
    max_retries: int,
    transport: Callable | None,
    sleep: Callable[[float], None] = time.sleep,
) -> dict:
    """GET with exponential backoff on 429; auth failures raise immediately."""
    get = transport or requests.get
    delay = 1.0
    for attempt in range(max_retries + 1):
        response = get(url, params=params, timeout=timeout)
        status = response.status_code
        if status in (401, 403):
            raise CredentialError(f"API rejected credentials (HTTP {status})")
        if status == 429:
            if attempt == max_retries:
                raise RateLimitError(f"still rate-limited after {max_retries} retries")
            sleep(delay)
            delay *= 2.0
            continue
        if status != 200:
            raise FetchError(f"HTTP {status} from {url}")
        return response.json()
    raise FetchError("unreachable")


def fetch_nyt_month(
    year: int,
    month: int,
    api_key: str,
    cache: HttpCache | None = None,
    timeout: float = 30.0,
    max_retries: int = 4,
    transport: Callable | None = None,
) -> list[Article]:
    """All archive articles for one month (cached; replayable offline).

    Malformed items are skipped with a warning, never aborting the month.
    """
    if not 1 <= month <= 12:
        raise ValueError(f"month {month} out of range 1..12")
    if not 2010 <= year <= 2023:
        raise ValueError(f"year {year} outside supported range 2010..2023")
    if not api_key and not (cache and cache.offline):
        raise CredentialError("missing NYT API key")

    url = NYT_ARCHIVE_URL.format(year=year, month=month)
    key = request_hash("GET", url, {})
    body = cache.get(key) if cache else None
    if body is None:
        if cache and cache.offline:
            raise FetchError(f"offline and no fixture for {url} (hash {key[:12]})")
        body = _http_get_json(
            url, {"api-key": api_key}, timeout, max_retries, transport
        )
        if cache:
            cache.put(key, body)

    docs = body.get("response", {}).get("docs", [])
    articles = []
    for doc in docs:
        try:
            articles.append(_parse_nyt_doc(doc))
        except (KeyError, ValueError, TypeError) as exc:
            log.warning("skipping malformed NYT item: %s", exc)
    return articles


def _parse_nyt_doc(doc: dict) -> Article:
    headline = (doc.get("headline") or {}).get("main") or ""
    if not headline:
        raise ValueError(f"document {doc.get('_id')!r} has no headline")
    published = dt.datetime.fromisoformat(doc["pub_date"].replace("Z", "+00:00"))
    keywords = [
        kw.get("value", "")
        for kw in doc.get("keywords", [])
        if kw.get("name") == "glocations" and kw.get("value")
    ]
    images = []
    for media in doc.get("multimedia", []) or []:
        ref = media.get("url") or ""
        if not ref:
            continue
        if not ref.startswith("http"):
            ref = "https://www.nytimes.com/" + ref.lstrip("/")
        images.append(ref)
    raw_id = doc.get("_id") or doc["uri"]
    return Article(
        id="nyt:" + raw_id.rsplit("/", 1)[-1],
        source="nytimes",
        headline=headline,
        abstract=doc.get("abstract") or doc.get("lead_paragraph") or "",
        published_at=published.date(),
        geo_keywords=keywords,
        image_urls=images,
    )


def fetch_guardian_matches(
    date: dt.date | None,
    keywords: list[str],
    api_key: str,
    cache: HttpCache | None = None,
    window_days: int = 7,
    timeout: float = 30.0,
    max_retries: int = 4,
    transport: Callable | None = None,
) -> list[Article]:
    """Up to 20 Guardian articles matching a date window and/or keywords.

    The query keywords double as the stored geolocation keywords: Guardian
    items carry no location metadata of their own, and the keywords given
    here are location terms by construction upstream.
    """
    if date is None and not keywords:
        raise ValueError("need a date or at least one keyword")
    if not api_key and not (cache and cache.offline):
        raise CredentialError("missing Guardian API key")

    params: dict = {"page-size": 20, "show-fields": "trailText,thumbnail"}
    if keywords:
        params["q"] = " ".join(keywords)
    if date is not None:
        params["from-date"] = (date - dt.timedelta(days=window_days)).isoformat()
        params["to-date"] = (date + dt.timedelta(days=window_days)).isoformat()

    key = request_hash("GET", GUARDIAN_SEARCH_URL, params)
    body = cache.get(key) if cache else None
    if body is None:
        if cache and cache.offline:
            raise FetchError(
                f"offline and no fixture for guardian search (hash {key[:12]})"
            )
        body = _http_get_json(
            GUARDIAN_SEARCH_URL,
            {**params, "api-key": api_key},
            timeout,
            max_retries,
            transport,
        )
        if cache:
            cache.put(key, body)

    results = body.get("response", {}).get("results", [])
    articles = []
    for item in results[:20]:
        try:
            articles.append(_parse_guardian_item(item, keywords))
        except (KeyError, ValueError, TypeError) as exc:
            log.warning("skipping malformed Guardian item: %s", exc)
    return articles


def _parse_guardian_item(item: dict, query_keywords: list[str]) -> Article:
    fields = item.get("fields") or {}
    published = dt.datetime.fromisoformat(
        item["webPublicationDate"].replace("Z", "+00:00")
    )
    thumbnail = fields.get("thumbnail")
    return Article(
        id="guardian:" + item["id"],
        source="guardian",
        headline=item["webTitle"],
        abstract=fields.get("trailText", ""),
        published_at=published.date(),
        geo_keywords=list(query_keywords),
        image_urls=[thumbnail] if thumbnail else [],
    )
