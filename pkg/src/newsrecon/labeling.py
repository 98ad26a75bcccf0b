"""Weak-supervision relevance labels for training and validation images.

An article is location-relevant to an image when one of its geolocation
keywords contains one of the image's ground-truth location components, and
event-relevant when it is location-relevant and published within the
±n_window-day window around the image's ground-truth date.  The event set
is a subset of the location set by construction, and both are pure
functions of their inputs.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import re
from dataclasses import dataclass, field

from .articles import Article
from .metrics import PartialDate

log = logging.getLogger(__name__)

_PUNCT = re.compile(r"[^\w\s]", re.UNICODE)
_WS = re.compile(r"\s+")


def normalize_place(text: str) -> str:
    """Case-fold, strip punctuation, collapse whitespace."""
    return _WS.sub(" ", _PUNCT.sub(" ", text.casefold())).strip()


@dataclass
class ImageRecord:
    """A query image with its ground truth."""

    id: str
    gt_location: str = ""
    gt_coordinates: tuple[float, float] | None = None
    gt_date: PartialDate | None = None
    split: str = "test"

    def __post_init__(self):
        if self.split not in ("train", "dev", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.gt_coordinates is not None:
            lat, lon = self.gt_coordinates
            if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
                raise ValueError(f"coordinates {self.gt_coordinates} out of range")
        if isinstance(self.gt_date, str):
            self.gt_date = PartialDate.parse(self.gt_date)

    @property
    def gt_day(self) -> dt.date | None:
        """Ground-truth date as a calendar day, if known to day precision."""
        if self.gt_date is not None and self.gt_date.granularity == "day":
            return dt.date(self.gt_date.year, self.gt_date.month, self.gt_date.day)
        return None

    def location_tokens(self) -> list[str]:
        return [
            normalize_place(c) for c in self.gt_location.split(",") if normalize_place(c)
        ]

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "gt_location": self.gt_location,
            "gt_coordinates": list(self.gt_coordinates) if self.gt_coordinates else None,
            "gt_date": self.gt_date.isoformat() if self.gt_date else None,
            "split": self.split,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ImageRecord":
        coords = record.get("gt_coordinates")
        date = record.get("gt_date")
        return cls(
            id=record["id"],
            gt_location=record.get("gt_location", ""),
            gt_coordinates=tuple(coords) if coords else None,
            gt_date=PartialDate.parse(date) if date else None,
            split=record.get("split", "test"),
        )


@dataclass
class RelevanceLabels:
    """Per-image relevant-article sets; events are always a location subset."""

    image_id: str
    location_relevant: set[str] = field(default_factory=set)
    event_relevant: set[str] = field(default_factory=set)

    def __post_init__(self):
        if not self.event_relevant <= self.location_relevant:
            extra = sorted(self.event_relevant - self.location_relevant)[:3]
            raise ValueError(
                f"image {self.image_id}: event-relevant ids not location-relevant: {extra}"
            )


def label_location_relevant(image: ImageRecord, articles: list[Article]) -> set[str]:
    """Ids of articles whose keywords contain a ground-truth location component.

    Containment is substring containment after normalization, tested per
    comma-separated ground-truth component, so an article keyworded only
    "France" matches the ground truth "Paris, France".
    """
    if not image.gt_location.strip():
        raise ValueError(f"image {image.id} has no ground-truth location")
    tokens = image.location_tokens()
    relevant = set()
    for article in articles:
        for keyword in article.geo_keywords:
            normalized = normalize_place(keyword)
            if normalized and any(token in normalized for token in tokens):
                relevant.add(article.id)
                break
    return relevant


def label_event_relevant(
    image: ImageRecord, articles: list[Article], n_window: int
) -> set[str]:
    """Location-relevant ids published within ±n_window days (inclusive).

    Images whose ground-truth date is coarser than a day yield the empty
    set: there is no anchor day to window around.
    """
    anchor = image.gt_day
    if anchor is None:
        log.info("image %s has no day-precision date; no event labels", image.id)
        return set()
    located = label_location_relevant(image, articles)
    by_id = {a.id: a for a in articles}
    return {
        article_id
        for article_id in located
        if abs((by_id[article_id].published_at - anchor).days) <= n_window
    }


def build_labels(
    image: ImageRecord, articles: list[Article], n_window: int
) -> RelevanceLabels:
    located = label_location_relevant(image, articles)
    anchor = image.gt_day
    if anchor is None:
        events: set[str] = set()
    else:
        by_id = {a.id: a for a in articles}
        events = {
            article_id
            for article_id in located
            if abs((by_id[article_id].published_at - anchor).days) <= n_window
        }
    return RelevanceLabels(
        image_id=image.id, location_relevant=located, event_relevant=events
    )


def save_labels(labels: list[RelevanceLabels], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in sorted(labels, key=lambda l: l.image_id):
            fh.write(
                json.dumps(
                    {
                        "image_id": item.image_id,
                        "location_relevant": sorted(item.location_relevant),
                        "event_relevant": sorted(item.event_relevant),
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")


def load_labels(path) -> dict[str, RelevanceLabels]:
    labels = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            labels[record["image_id"]] = RelevanceLabels(
                image_id=record["image_id"],
                location_relevant=set(record["location_relevant"]),
                event_relevant=set(record["event_relevant"]),
            )
    return labels


def save_images(images: list[ImageRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image in sorted(images, key=lambda i: i.id):
            fh.write(json.dumps(image.to_record(), sort_keys=True))
            fh.write("\n")


def load_images(path) -> list[ImageRecord]:
    images = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                images.append(ImageRecord.from_record(json.loads(line)))
    return images
