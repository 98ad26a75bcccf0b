"""Seeded synthetic corpus with planted location/event structure.

Builds a small world of invented cities and weekly events, articles about
them (plus metadata-poor "tabloid" distractors whose embeddings retrieve
well but whose keywords never match), query images, structured embeddings,
and a matching gazetteer.  Embeddings follow unit(location_vec + event_vec
+ noise); the image side additionally lives in a mildly rotated basis, the
analog of two encoders whose spaces are not perfectly aligned, which is
exactly what the trainable projection heads are for.

Everything is a pure function of the seed, which makes end-to-end runs
byte-reproducible.
"""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass

import numpy as np

from .articles import Article, CorpusStore
from .embedstore import EmbeddingMatrix, fake_embedding, normalize_rows
from .labeling import ImageRecord, RelevanceLabels, build_labels
from .metrics import Gazetteer, PartialDate

_CITY_STEMS = [
    "Vandorre", "Belmira", "Torquessa", "Milvane", "Raskelt",
    "Keldoria", "Dornquist", "Fenwicke", "Galbraith", "Hulmarra",
]
_CITY_SUFFIXES = ["North", "South", "East", "West", "Bay"]
_COUNTRIES = [
    "Avelonia", "Brinmark", "Cordovia", "Drelland", "Esperia",
    "Farrowland", "Grenholm", "Istvalia", "Jorvania", "Kestrelia",
]
_CONTINENTS = ["Meridia", "Borealis"]

JUNK_KEYWORD = "Tabloidia"

_EVENT_TEMPLATE = re.compile(
    r"An image between (\d{4}-\d{2}-\d{2}) and (\d{4}-\d{2}-\d{2}) in (.+)"
)
_LOC_TEMPLATE = re.compile(r"An image from (.+)")


@dataclass
class SyntheticConfig:
    seed: int = 7
    dim: int = 96
    n_locations: int = 50
    n_weeks: int = 40
    n_articles: int = 2000
    n_events: int = 400
    junk_fraction: float = 0.25
    captions_per_article: int = 2
    n_train: int = 240
    n_dev: int = 120
    n_test: int = 120
    n_window: int = 7
    first_week: dt.date = dt.date(2021, 1, 4)
    misalignment: float = 4.0
    noise_image: float = 0.9
    noise_caption: float = 0.9
    noise_junk: float = 0.35
    noise_template: float = 0.2


@dataclass
class SyntheticEvent:
    location_idx: int
    week_idx: int
    day: dt.date


class SyntheticWorld:
    """Corpus, images, labels, embeddings, and gazetteer from one seed."""

    def __init__(self, config: SyntheticConfig | None = None):
        self.config = config or SyntheticConfig()
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)

        self.cities = self._make_city_names(cfg.n_locations)
        self.countries = [
            _COUNTRIES[i % len(_COUNTRIES)] for i in range(cfg.n_locations)
        ]
        self._city_idx = {c.casefold(): i for i, c in enumerate(self.cities)}

        # Planted directions: one per location, one per event week, one for
        # the tabloid distractor population.
        self.loc_vecs = normalize_rows(rng.standard_normal((cfg.n_locations, cfg.dim)))
        self.week_vecs = normalize_rows(rng.standard_normal((cfg.n_weeks, cfg.dim)))
        self.junk_vec = normalize_rows(rng.standard_normal((1, cfg.dim)))[0]

        # Mild rotation of the image side relative to the text side.
        mix = np.eye(cfg.dim) + cfg.misalignment * rng.standard_normal(
            (cfg.dim, cfg.dim)
        ) / np.sqrt(cfg.dim)
        q, r = np.linalg.qr(mix)
        self.image_basis = q * np.sign(np.diag(r))[np.newaxis, :]

        self.events = self._sample_events(rng)
        self.store, self._article_event = self._make_articles(rng)
        self.articles = {a.id: a for a in self.store}
        self.images, self.event_of_image = self._make_images(rng)
        self.labels: dict[str, RelevanceLabels] = {
            image.id: build_labels(image, list(self.store), cfg.n_window)
            for image in self.images
        }
        self.caption_matrix = self._make_caption_matrix()
        self.image_matrix = self._make_image_matrix()
        self.gazetteer = self._make_gazetteer(rng)

    # ------------------------------------------------------------------
    # World construction
    # ------------------------------------------------------------------

    def _make_city_names(self, n: int) -> list[str]:
        names = []
        for i in range(n):
            stem = _CITY_STEMS[i % len(_CITY_STEMS)]
            suffix = _CITY_SUFFIXES[i // len(_CITY_STEMS)]
            names.append(f"{stem} {suffix}")
        folded = [x.casefold() for x in names] + [JUNK_KEYWORD.casefold()]
        for a in folded:
            for b in folded:
                if a != b and a in b:
                    raise AssertionError(f"city name {a!r} contained in {b!r}")
        return names

    def _sample_events(self, rng: np.random.Generator) -> list[SyntheticEvent]:
        cfg = self.config
        combos = [(l, w) for l in range(cfg.n_locations) for w in range(cfg.n_weeks)]
        picks = rng.choice(len(combos), size=min(cfg.n_events, len(combos)), replace=False)
        events = []
        for idx in sorted(picks):
            loc, week = combos[idx]
            day = cfg.first_week + dt.timedelta(days=7 * week + int(rng.integers(0, 4)))
            events.append(SyntheticEvent(location_idx=loc, week_idx=week, day=day))
        return events

    def _make_articles(self, rng: np.random.Generator) -> tuple[CorpusStore, dict[str, int]]:
        cfg = self.config
        n_junk = int(round(cfg.n_articles * cfg.junk_fraction))
        n_genuine = cfg.n_articles - n_junk
        store = CorpusStore()
        event_of: dict[str, int] = {}
        for i in range(cfg.n_articles):
            event_idx = (
                i % len(self.events)
                if i < n_genuine
                else int(rng.integers(len(self.events)))
            )
            event = self.events[event_idx]
            city = self.cities[event.location_idx]
            junk = i >= n_genuine
            published = event.day + dt.timedelta(days=int(rng.integers(-3, 4)))
            article_id = f"syn:{i:04d}"
            captions = [
                (
                    f"tabloid chatter {article_id} take {j}"
                    if junk
                    else f"scene from the {city} event of week "
                    f"{event.week_idx}, report {article_id} angle {j}"
                )
                for j in range(cfg.captions_per_article)
            ]
            store.add(
                Article(
                    id=article_id,
                    source="nytimes" if i % 2 == 0 else "guardian",
                    headline=(
                        f"Unverified rumors swirl, take {i}"
                        if junk
                        else f"Events unfold in {city} during week {event.week_idx}"
                    ),
                    abstract=f"synthetic article {i}",
                    published_at=published,
                    geo_keywords=[JUNK_KEYWORD] if junk else [city],
                    news_captions=captions,
                    image_urls=[],
                    keep=True,
                )
            )
            event_of[article_id] = event_idx
        return store, event_of

    def _make_images(self, rng: np.random.Generator):
        cfg = self.config
        images: list[ImageRecord] = []
        event_of: dict[str, int] = {}
        splits = (
            [("train", i) for i in range(cfg.n_train)]
            + [("dev", i) for i in range(cfg.n_dev)]
            + [("test", i) for i in range(cfg.n_test)]
        )
        for split, i in splits:
            event_idx = int(rng.integers(len(self.events)))
            event = self.events[event_idx]
            city = self.cities[event.location_idx]
            image_id = f"img:{split}:{i:03d}"
            # Ground truth at city precision, matching the keyword vocabulary
            # of the planted articles; the gazetteer supplies the hierarchy.
            images.append(
                ImageRecord(
                    id=image_id,
                    gt_location=city,
                    gt_coordinates=None,  # filled after gazetteer exists
                    gt_date=PartialDate(event.day.year, event.day.month, event.day.day),
                    split=split,
                )
            )
            event_of[image_id] = event_idx
        return images, event_of

    def _make_gazetteer(self, rng: np.random.Generator) -> Gazetteer:
        cfg = self.config
        lats = rng.uniform(-60.0, 60.0, size=cfg.n_locations)
        lons = rng.uniform(-170.0, 170.0, size=cfg.n_locations)
        rows = []
        for i, city in enumerate(self.cities):
            rows.append(
                {
                    "place": city,
                    "parent": self.countries[i],
                    "continent": _CONTINENTS[i % 2],
                    "lat": float(lats[i]),
                    "lon": float(lons[i]),
                }
            )
        for j, country in enumerate(dict.fromkeys(self.countries)):
            member = [i for i, c in enumerate(self.countries) if c == country]
            rows.append(
                {
                    "place": country,
                    "parent": "",
                    "continent": _CONTINENTS[j % 2],
                    "lat": float(np.mean(lats[member])),
                    "lon": float(np.mean(lons[member])),
                }
            )
        for continent in _CONTINENTS:
            rows.append(
                {"place": continent, "parent": "", "continent": "", "lat": None, "lon": None}
            )
        gaz = Gazetteer(rows)
        for image in self.images:
            city = image.gt_location.split(",")[0].strip()
            point = gaz.point(city)
            image.gt_coordinates = (point.lat, point.lon)
        return gaz

    def write_gazetteer(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("place,parent,continent,lat,lon\n")
            for city in sorted(self._rows_for_csv(), key=lambda r: r["place"]):
                lat = "" if city["lat"] is None else f"{city['lat']:.6f}"
                lon = "" if city["lon"] is None else f"{city['lon']:.6f}"
                fh.write(
                    f"{city['place']},{city['parent']},{city['continent']},{lat},{lon}\n"
                )

    def _rows_for_csv(self) -> list[dict]:
        return list(self.gazetteer._rows.values())

    # ------------------------------------------------------------------
    # Embeddings
    # ------------------------------------------------------------------

    def _signal(self, event: SyntheticEvent) -> np.ndarray:
        return (
            self.loc_vecs[event.location_idx].astype(np.float64)
            + self.week_vecs[event.week_idx].astype(np.float64)
        )

    def _unit(self, vec: np.ndarray) -> np.ndarray:
        return (vec / np.linalg.norm(vec)).astype(np.float32)

    def _noise(self, payload: str, scale: float) -> np.ndarray:
        return scale * fake_embedding(payload, self.config.dim, self.config.seed).astype(
            np.float64
        )

    def _text_vec(self, signal: np.ndarray, payload: str, scale: float) -> np.ndarray:
        return self._unit(signal + self._noise(payload, scale))

    def _image_vec(self, signal: np.ndarray, payload: str, scale: float) -> np.ndarray:
        rotated = self.image_basis @ signal
        return self._unit(rotated + self._noise(payload, scale))

    def _make_caption_matrix(self) -> EmbeddingMatrix:
        cfg = self.config
        ids, rows = [], []
        for article in self.store:
            event = self.events[self._article_event[article.id]]
            junk = article.geo_keywords == [JUNK_KEYWORD]
            scale = cfg.noise_junk if junk else cfg.noise_caption
            for row_id, caption in zip(article.caption_row_ids(), article.news_captions):
                ids.append(row_id)
                rows.append(self._text_vec(self._signal(event), caption, scale))
        return EmbeddingMatrix(ids=ids, data=np.stack(rows))

    def _make_image_matrix(self) -> EmbeddingMatrix:
        cfg = self.config
        ids, rows = [], []
        for article in self.store:
            event = self.events[self._article_event[article.id]]
            ids.append(article.id)
            rows.append(
                self._image_vec(self._signal(event), f"ownimage:{article.id}", cfg.noise_image)
            )
        for image in self.images:
            event = self.events[self.event_of_image[image.id]]
            ids.append(image.id)
            rows.append(
                self._image_vec(self._signal(event), f"query:{image.id}", cfg.noise_image)
            )
        return EmbeddingMatrix(ids=ids, data=np.stack(rows))

    def embed_text(self, texts: list[str]) -> np.ndarray:
        """Structured embedding of template texts (pure function of text).

        Location templates map to their city's direction; event templates to
        city + nearest-week directions; tabloid templates to the junk
        direction; anything else hashes to unstructured noise.
        """
        cfg = self.config
        out = []
        for text in texts:
            signal = None
            event_match = _EVENT_TEMPLATE.fullmatch(text.strip())
            loc_match = _LOC_TEMPLATE.fullmatch(text.strip())
            if event_match:
                start = dt.date.fromisoformat(event_match.group(1))
                end = dt.date.fromisoformat(event_match.group(2))
                mid = start + (end - start) / 2
                week = int(
                    np.clip(
                        round((mid - cfg.first_week).days / 7), 0, cfg.n_weeks - 1
                    )
                )
                signal = self._place_vec(event_match.group(3)) + self.week_vecs[
                    week
                ].astype(np.float64)
            elif loc_match:
                signal = self._place_vec(loc_match.group(1))
            if signal is None:
                out.append(fake_embedding(text, cfg.dim, cfg.seed).astype(np.float64))
            else:
                out.append(
                    self._text_vec(signal, text, cfg.noise_template).astype(np.float64)
                )
        return np.stack(out)

    def _place_vec(self, location: str) -> np.ndarray:
        for part in location.split(","):
            idx = self._city_idx.get(part.strip().casefold())
            if idx is not None:
                return self.loc_vecs[idx].astype(np.float64)
        return self.junk_vec.astype(np.float64)

    # ------------------------------------------------------------------
    # Convenience views
    # ------------------------------------------------------------------

    def image_ids(self, split: str) -> list[str]:
        return [image.id for image in self.images if image.split == split]

    def images_of(self, split: str) -> list[ImageRecord]:
        return [image for image in self.images if image.split == split]

    def is_junk(self, article_id: str) -> bool:
        return self.articles[article_id].geo_keywords == [JUNK_KEYWORD]

    def template_matrix(self) -> EmbeddingMatrix:
        """Location-template embeddings for every article in the corpus."""
        from .rerank_loc import collect_loc_templates

        entries = collect_loc_templates(self.store)
        data = self.embed_text([text for _, text in entries]).astype(np.float32)
        return EmbeddingMatrix(ids=[row_id for row_id, _ in entries], data=data)


def desk_config(seed: int = 11, **overrides) -> "Config":
    """Training configuration scaled to the synthetic testbed.

    Same pipeline structure and constants as the production defaults
    (K values, n_random, temperature, N_negative); batch sizes, learning
    rates, and epoch counts are resized for a 2k-article corpus so the full
    three-stage run finishes in seconds on a laptop CPU.
    """
    from .config import Config

    values = dict(
        bi_epochs=6,
        bi_learning_rate=1.0,
        bi_batch_size=64,
        loc_epochs=8,
        loc_learning_rate=0.5,
        loc_batch_size=64,
        evt_epochs=200,
        evt_learning_rate=20.0,
        evt_batch_size=128,
        seed=seed,
    )
    values.update(overrides)
    return Config(**values)


def make_stores(world: SyntheticWorld, articles: dict | None = None) -> "Stores":
    """Assemble pipeline stores for a synthetic world (optionally restricted)."""
    from .pipeline import Stores

    return Stores(
        articles=dict(world.articles) if articles is None else articles,
        image_store=world.image_matrix,
        caption_store=world.caption_matrix,
        template_store=world.template_matrix(),
        gazetteer=world.gazetteer,
        embed_text=world.embed_text,
    )
