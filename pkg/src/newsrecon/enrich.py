"""Corpus enrichment: visualizable-event filtering and news-caption generation.

Both steps prompt a chat model with eight few-shot demonstrations shipped as
editable text assets under ``newsrecon/prompts/``.  Failures are
conservative: an article we cannot classify or caption is dropped or left
caption-less and flagged, never silently kept.
"""

from __future__ import annotations

import ast
import json
import logging
import re
from importlib import resources

from .articles import Article, MAX_CAPTIONS
from .llm import ChatClient, LlmError

log = logging.getLogger(__name__)

FILTER_FAILED_FLAG = "filter-failed"
CAPTION_FAILED_FLAG = "caption-failed"

_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*(.+)$")


def _load_asset(name: str) -> str:
    return resources.files("newsrecon.prompts").joinpath(name).read_text("utf-8")


def render_filter_prompt(headline: str) -> str:
    template = _load_asset("filter_prompt.txt")
    examples = _load_asset("filter_examples.txt").strip()
    return template.replace("{FEW_SHOT_EXAMPLES}", examples).replace(
        "{HEADLINE}", headline
    )


def render_caption_prompt(headline: str) -> str:
    template = _load_asset("caption_prompt.txt")
    examples = _load_asset("caption_examples.txt").strip()
    return template.replace("{FEW_SHOT_EXAMPLES}", examples).replace(
        "{HEADLINE}", headline
    )


def _complete_with_retry(client: ChatClient, prompt: str) -> str | None:
    for attempt in (0, 1):
        try:
            return client.complete(prompt)
        except LlmError as exc:
            if attempt == 0:
                log.warning("completion failed, retrying once: %s", exc)
            else:
                log.warning("completion failed twice, giving up: %s", exc)
    return None


def filter_visualizable(article: Article, client: ChatClient) -> bool:
    """Keep an article iff the model files its headline under "Category 1".

    The verdict is written to ``article.keep``.  Unanswerable cases (timeouts
    after one retry, or a response naming neither category) are dropped and
    flagged: the filter removes most of the raw corpus, so exclusion is the
    conservative direction.
    """
    if not article.headline.strip():
        raise ValueError(f"article {article.id} has an empty headline")
    response = _complete_with_retry(client, render_filter_prompt(article.headline))
    if response is None:
        article.keep = False
        _flag(article, FILTER_FAILED_FLAG)
        return False
    normalized = response.strip().casefold()
    if "category 1" in normalized:
        article.keep = True
    elif "category 2" in normalized:
        article.keep = False
    else:
        article.keep = False
        _flag(article, FILTER_FAILED_FLAG)
    return bool(article.keep)


def generate_news_captions(article: Article, client: ChatClient) -> list[str]:
    """Generate up to five plausible image captions for a kept article."""
    if article.keep is not True:
        raise ValueError(f"article {article.id} was not kept by the filter")
    prompt = render_caption_prompt(article.headline)
    captions: list[str] = []
    for _ in (0, 1):
        response = _complete_with_retry(client, prompt)
        if response is not None:
            captions = parse_caption_list(response)
        if captions:
            break
    if not captions:
        _flag(article, CAPTION_FAILED_FLAG)
    article.news_captions = captions[:MAX_CAPTIONS]
    return article.news_captions


def parse_caption_list(text: str) -> list[str]:
    """Extract a list of caption strings from a model response.

    Accepts a JSON or Python list literal (possibly embedded in prose) or
    bulleted/numbered lines.  Anything else parses to an empty list.
    """
    text = text.strip()
    for candidate in _list_candidates(text):
        try:
            parsed = json.loads(candidate)
        except ValueError:
            try:
                parsed = ast.literal_eval(candidate)
            except (ValueError, SyntaxError):
                continue
        if isinstance(parsed, list):
            items = [str(x).strip() for x in parsed if str(x).strip()]
            if items:
                return items
    items = []
    for line in text.splitlines():
        match = _BULLET.match(line)
        if match:
            items.append(match.group(1).strip().strip("\"'"))
    return [x for x in items if x]


def _list_candidates(text: str):
    yield text
    start, end = text.find("["), text.rfind("]")
    if start != -1 and end > start:
        yield text[start : end + 1]


def _flag(article: Article, flag: str) -> None:
    if flag not in article.flags:
        article.flags.append(flag)
