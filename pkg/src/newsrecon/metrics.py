"""Geotemporal evaluation metrics and prediction extraction.

Rankings produced by the retrieval pipeline are turned into date and
location predictions (article metadata), then scored against ground truth
with exact match at K, example-F1 over hierarchical chains, inverse-distance
scores for years (``delta_year``) and kilometres (``co_delta``), and the
granularity-decomposed ``great_date`` / distance-based ``great_loc`` pair.

All scores live in [0, 1], are 1 on exact matches, and never look at
prediction components finer than the ground truth provides.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field

# IUGG mean Earth radius. The distance→score formulas below assume km.
EARTH_RADIUS_KM = 6371.0088

GRANULARITIES = ("century", "decade", "year", "month", "day")

# Granularity thresholds: score decays linearly, hitting 0 at T_u units off.
DEFAULT_DATE_THRESHOLDS = {"decade": 5.0, "year": 10.0, "month": 6.0, "day": 15.0}
DEFAULT_DATE_WEIGHTS = {u: 1.0 for u in GRANULARITIES}

_WS = re.compile(r"\s+")


def normalize_text(text: str) -> str:
    """Case-fold, trim, and collapse internal whitespace."""
    return _WS.sub(" ", text.strip()).casefold()


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} out of range")


@dataclass(frozen=True)
class PartialDate:
    """A date known down to year, month, or day precision."""

    year: int
    month: int | None = None
    day: int | None = None

    def __post_init__(self):
        if self.day is not None and self.month is None:
            raise ValueError("day precision requires a month")
        if self.month is not None and not 1 <= self.month <= 12:
            raise ValueError(f"month {self.month} out of range")
        if self.day is not None and not 1 <= self.day <= 31:
            raise ValueError(f"day {self.day} out of range")

    @property
    def granularity(self) -> str:
        if self.day is not None:
            return "day"
        if self.month is not None:
            return "month"
        return "year"

    @property
    def century(self) -> int:
        return self.year // 100

    @property
    def decade(self) -> int:
        return self.year // 10

    @classmethod
    def parse(cls, text: str) -> "PartialDate":
        """Parse ``YYYY``, ``YYYY-MM``, or ``YYYY-MM-DD``."""
        parts = text.strip().split("-")
        if not 1 <= len(parts) <= 3 or not all(p.isdigit() for p in parts):
            raise ValueError(f"unparseable date {text!r}")
        year = int(parts[0])
        month = int(parts[1]) if len(parts) > 1 else None
        day = int(parts[2]) if len(parts) > 2 else None
        return cls(year=year, month=month, day=day)

    def truncate(self, granularity: str) -> "PartialDate":
        if granularity == "year":
            return PartialDate(self.year)
        if granularity == "month":
            return PartialDate(self.year, self.month)
        return self

    def isoformat(self) -> str:
        if self.day is not None:
            return f"{self.year:04d}-{self.month:02d}-{self.day:02d}"
        if self.month is not None:
            return f"{self.year:04d}-{self.month:02d}"
        return f"{self.year:04d}"


@dataclass(frozen=True)
class HierLocation:
    """Location components ordered child→parent, e.g. (Paris, France, Europe)."""

    components: tuple[str, ...]

    def __post_init__(self):
        if not self.components:
            raise ValueError("HierLocation needs at least one component")
        normed = [normalize_text(c) for c in self.components]
        if len(set(normed)) != len(normed):
            raise ValueError(f"duplicate components in {self.components}")

    def chain_set(self) -> set[tuple[str, ...]]:
        """Every child→parent suffix, as normalized tuples."""
        normed = tuple(normalize_text(c) for c in self.components)
        return {normed[i:] for i in range(len(normed))}


class Gazetteer:
    """Offline place table: place, parent, continent, lat, lon."""

    def __init__(self, rows: list[dict]):
        self._rows: dict[str, dict] = {}
        for row in rows:
            key = normalize_text(row["place"])
            self._rows[key] = row

    @classmethod
    def from_csv(cls, path) -> "Gazetteer":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = []
            for raw in reader:
                rows.append(
                    {
                        "place": raw["place"],
                        "parent": (raw.get("parent") or "").strip(),
                        "continent": (raw.get("continent") or "").strip(),
                        "lat": float(raw["lat"]) if raw.get("lat") else None,
                        "lon": float(raw["lon"]) if raw.get("lon") else None,
                    }
                )
        return cls(rows)

    def lookup(self, place: str) -> dict | None:
        return self._rows.get(normalize_text(place))

    def point(self, place: str) -> GeoPoint | None:
        row = self.lookup(place)
        if row and row["lat"] is not None and row["lon"] is not None:
            return GeoPoint(row["lat"], row["lon"])
        return None

    def ancestors(self, place: str) -> list[str]:
        """Parent chain above a place (parents first, continent last)."""
        out: list[str] = []
        seen = {normalize_text(place)}
        current = self.lookup(place)
        continent = None
        while current:
            if current["continent"]:
                continent = current["continent"]
            parent = current["parent"]
            if not parent or normalize_text(parent) in seen:
                break
            out.append(parent)
            seen.add(normalize_text(parent))
            current = self.lookup(parent)
        if continent and normalize_text(continent) not in seen:
            out.append(continent)
        return out


def geocode(location: str, gazetteer: Gazetteer) -> GeoPoint | None:
    """Resolve a location string to coordinates, most specific match first.

    Tries the whole string as a gazetteer key, then each comma-separated
    component from child to parent.  Returns None on a miss; callers count
    such queries as skipped for distance metrics.
    """
    point = gazetteer.point(location)
    if point is not None:
        return point
    for component in location.split(","):
        component = component.strip()
        if not component:
            continue
        point = gazetteer.point(component)
        if point is not None:
            return point
    return None


def hier_location(location: str, gazetteer: Gazetteer | None = None) -> HierLocation:
    """Build a child→parent component chain from a free-text location.

    Comma-separated components are kept in order; the tail is extended with
    gazetteer parents/continent when the last component is mapped. Unmapped
    strings stand alone as single-element chains.
    """
    raw = [c.strip() for c in location.split(",") if c.strip()]
    if not raw:
        raise ValueError(f"empty location string {location!r}")
    components: list[str] = []
    seen: set[str] = set()
    for c in raw:
        if normalize_text(c) not in seen:
            components.append(c)
            seen.add(normalize_text(c))
    if gazetteer is not None:
        present = {normalize_text(c) for c in components}
        for ancestor in gazetteer.ancestors(components[-1]):
            if normalize_text(ancestor) not in present:
                components.append(ancestor)
                present.add(normalize_text(ancestor))
    return HierLocation(tuple(components))


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km on a sphere of radius EARTH_RADIUS_KM."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon) - math.radians(a.lon)
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def great_loc(pred: GeoPoint, gt: GeoPoint) -> float:
    """Location score: 1 at zero distance, 0 from 1000 km out."""
    return max(0.0, 1.0 - haversine_km(pred, gt) / 1000.0)


def great_date(
    pred: PartialDate,
    gt: PartialDate,
    thresholds: dict[str, float] | None = None,
    weights: dict[str, float] | None = None,
) -> float:
    """Granularity-decomposed date score.

    Century scores 1 only on equality; decade/year/month/day decay linearly
    with the absolute component difference over their threshold.  Only
    granularities present in the ground truth are evaluated (a prediction is
    never penalized for being more specific), and their weights are
    renormalized to sum to 1.  A prediction missing a granularity the ground
    truth has scores 0 there.
    """
    thresholds = {**DEFAULT_DATE_THRESHOLDS, **(thresholds or {})}
    weights = {**DEFAULT_DATE_WEIGHTS, **(weights or {})}

    evaluated = ["century", "decade", "year"]
    if gt.month is not None:
        evaluated.append("month")
    if gt.day is not None:
        evaluated.append("day")

    def component(date: PartialDate, unit: str) -> int | None:
        if unit == "century":
            return date.century
        if unit == "decade":
            return date.decade
        if unit == "year":
            return date.year
        if unit == "month":
            return date.month
        return date.day

    total_weight = sum(weights[u] for u in evaluated)
    score = 0.0
    for unit in evaluated:
        gt_u = component(gt, unit)
        pred_u = component(pred, unit)
        if pred_u is None:
            s_u = 0.0
        elif unit == "century":
            s_u = 1.0 if gt_u == pred_u else 0.0
        else:
            s_u = max(0.0, 1.0 - abs(gt_u - pred_u) / thresholds[unit])
        score += weights[unit] * s_u
    return score / total_weight


def _dice(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return 2.0 * len(a & b) / (len(a) + len(b))


def example_f1(pred: HierLocation, gt: HierLocation) -> float:
    """Dice overlap between the child→parent suffix-chain sets of two locations."""
    return _dice(pred.chain_set(), gt.chain_set())


def date_chains(date: PartialDate) -> set[tuple[int, ...]]:
    """Child→parent suffix chains of a date: day→month→year."""
    components: list[int] = []
    if date.day is not None:
        components.append(date.day)
    if date.month is not None:
        components.append(date.month)
    components.append(date.year)
    return {tuple(components[i:]) for i in range(len(components))}


def date_example_f1(pred: PartialDate, gt: PartialDate) -> float:
    """Dice overlap between date chain sets (day→month→year hierarchy)."""
    return _dice(date_chains(pred), date_chains(gt))


def delta_year(pred: PartialDate, gt: PartialDate, form: str = "inverse") -> float:
    """Year-distance score, configurable functional form.

    "inverse" is 1/(1 + |Δyears|); "linear" decays to 0 at 10 years.  Both
    are inversely proportional to the distance; comparing numbers against
    another implementation requires matching its exact functional form.
    """
    gap = abs(pred.year - gt.year)
    if form == "inverse":
        return 1.0 / (1.0 + gap)
    if form == "linear":
        return max(0.0, 1.0 - gap / 10.0)
    raise ValueError(f"unknown delta form {form!r}")


def co_delta(pred: GeoPoint, gt: GeoPoint, form: str = "inverse") -> float:
    """Distance score over the Haversine distance in units of 1000 km."""
    d = haversine_km(pred, gt) / 1000.0
    if form == "inverse":
        return 1.0 / (1.0 + d)
    if form == "linear":
        return max(0.0, 1.0 - d)
    raise ValueError(f"unknown co_delta form {form!r}")


def _location_components(text: str) -> frozenset[str]:
    return frozenset(
        normalize_text(c) for c in text.split(",") if normalize_text(c)
    )


def em_at_k(predictions: list[str], gt: str, k: int, kind: str) -> int:
    """Exact match at K over a ranked list of prediction strings.

    Dates match when the prediction, truncated to the ground truth's
    granularity, equals it.  Locations match when the prediction's component
    set covers the ground truth's; duplicate location component sets are
    deduplicated before the cutoff (EM only — other metrics see raw ranks).
    """
    if kind == "date":
        try:
            gt_date = PartialDate.parse(gt)
        except ValueError:
            return 0
        for text in predictions[:k]:
            try:
                pred = PartialDate.parse(text)
            except ValueError:
                continue
            if _date_matches(pred, gt_date):
                return 1
        return 0
    if kind == "location":
        gt_set = _location_components(gt)
        if not gt_set:
            return 0
        seen: set[frozenset[str]] = set()
        distinct: list[frozenset[str]] = []
        for text in predictions:
            components = _location_components(text)
            if components and components not in seen:
                seen.add(components)
                distinct.append(components)
        return int(any(components >= gt_set for components in distinct[:k]))
    raise ValueError(f"unknown kind {kind!r}")


def _date_matches(pred: PartialDate, gt: PartialDate) -> bool:
    needed = gt.granularity
    if needed == "day" and pred.day is None:
        return False
    if needed in ("day", "month") and pred.month is None:
        return False
    truncated = pred.truncate(needed)
    return (truncated.year, truncated.month, truncated.day) == (
        gt.year,
        gt.month,
        gt.day,
    )


def order_keywords_child_first(keywords: list[str], gazetteer: Gazetteer | None) -> list[str]:
    """Order keywords so children precede their gazetteer ancestors.

    Keywords without derivable hierarchy keep their stored relative order.
    """
    if gazetteer is None or len(keywords) < 2:
        return list(keywords)
    ancestor_sets = {
        kw: {normalize_text(a) for a in gazetteer.ancestors(kw)} for kw in keywords
    }
    remaining = list(keywords)
    ordered: list[str] = []
    while remaining:
        pick = None
        for kw in remaining:
            is_parent = any(
                normalize_text(kw) in ancestor_sets[other]
                for other in remaining
                if other != kw
            )
            if not is_parent:
                pick = kw
                break
        if pick is None:
            pick = remaining[0]
        ordered.append(pick)
        remaining.remove(pick)
    return ordered


def extract_predictions(
    loc_ranking: list[str],
    evt_ranking: list[str],
    articles: dict,
    gazetteer: Gazetteer | None = None,
) -> tuple[list[str], list[str]]:
    """Turn article rankings into prediction strings.

    The k-th location prediction is the comma-joined geolocation keywords of
    the k-th location-ranked article (children before gazetteer parents);
    the k-th date prediction is the publication date of the k-th
    event-ranked article.
    """
    locations = []
    for article_id in loc_ranking:
        article = articles[article_id]
        keywords = order_keywords_child_first(list(article.geo_keywords), gazetteer)
        locations.append(", ".join(keywords))
    dates = [articles[article_id].published_at.isoformat() for article_id in evt_ranking]
    return locations, dates


@dataclass
class MetricsReport:
    """Per-query metric records plus aggregate means and skip counters."""

    per_query: list[dict] = field(default_factory=list)
    skipped: dict[str, int] = field(default_factory=dict)

    METRIC_KEYS = (
        "date_em1",
        "date_em5",
        "date_ef1",
        "delta",
        "great_date",
        "loc_em1",
        "loc_em5",
        "loc_ef1",
        "co_delta",
        "great_loc",
        "great",
    )

    @property
    def n_queries(self) -> int:
        return len(self.per_query)

    def add_skip(self, reason: str) -> None:
        self.skipped[reason] = self.skipped.get(reason, 0) + 1

    def aggregate(self) -> dict[str, float]:
        """Mean of every metric over the queries where it was computed."""
        means = {}
        for key in self.METRIC_KEYS:
            values = [q[key] for q in self.per_query if q.get(key) is not None]
            means[key] = sum(values) / len(values) if values else None
        return means

    def to_records(self) -> list[dict]:
        records = [dict(q) for q in self.per_query]
        summary = {"query_id": "__mean__", **self.aggregate()}
        summary["skipped"] = dict(sorted(self.skipped.items()))
        summary["n_queries"] = self.n_queries
        records.append(summary)
        return records

    def table(self) -> str:
        """Human-readable aggregate table."""
        means = self.aggregate()
        lines = [f"queries: {self.n_queries}"]
        for key in self.METRIC_KEYS:
            value = means[key]
            rendered = "n/a" if value is None else f"{value:.4f}"
            lines.append(f"{key:>10}: {rendered}")
        if self.skipped:
            lines.append("skipped:")
            for reason, count in sorted(self.skipped.items()):
                lines.append(f"    {reason}: {count}")
        return "\n".join(lines)
