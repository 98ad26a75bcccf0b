# Corpus construction and weak-supervision labeling.
#
# Ingestion normally pulls from the archive APIs (see the `ingest` CLI) and
# enriches with an LLM; here a micro corpus is built by hand to show the
# store, the filter/caption contracts, variants, and relevance labeling.

import datetime as dt
import tempfile
from pathlib import Path

from newsrecon import Article, CorpusStore, CorpusVariant, apply_variant, build_labels
from newsrecon.enrich import filter_visualizable, generate_news_captions, render_caption_prompt, render_filter_prompt
from newsrecon.labeling import ImageRecord
from newsrecon.llm import ChatClient, LlmEndpointConfig

store = CorpusStore(
    [
        Article(
            id="nyt:flood-1",
            source="nytimes",
            headline="Floodwaters submerge the old town as the river crests",
            abstract="Residents were evacuated overnight.",
            published_at=dt.date(2021, 6, 10),
            geo_keywords=["Passau (Germany)"],
        ),
        Article(
            id="nyt:markets-1",
            source="nytimes",
            headline="Why bond yields are drifting upward again",
            abstract="An analysis of the quarter.",
            published_at=dt.date(2021, 6, 11),
            geo_keywords=[],
        ),
        Article(
            id="guardian:flood-2",
            source="guardian",
            headline="Volunteers stack sandbags along the Danube",
            abstract="Help arrived from neighbouring towns.",
            published_at=dt.date(2021, 6, 12),
            geo_keywords=["Germany"],
        ),
        Article(
            id="nyt:late-1",
            source="nytimes",
            headline="Museum reopens after restoration",
            abstract="",
            published_at=dt.date(2022, 3, 1),
            geo_keywords=["Vienna (Austria)"],
        ),
    ]
)

# The visualizable-event filter and the caption generator talk to any
# chat-completion endpoint. With fixture_dir set there is no network at
# all, which is how CI runs; here we record the responses we want first.
with tempfile.TemporaryDirectory() as tmp:
    client = ChatClient(LlmEndpointConfig(model_name="demo", fixture_dir=Path(tmp)))
    flood = store.get("nyt:flood-1")
    markets = store.get("nyt:markets-1")
    client.record_fixture(render_filter_prompt(flood.headline), "Category 1")
    client.record_fixture(render_filter_prompt(markets.headline), "Category 2")
    client.record_fixture(
        render_caption_prompt(flood.headline),
        '["Rowboats on a flooded market square", "Sandbags stacked against doorways",'
        ' "A half-submerged road sign", "Volunteers wading through brown water",'
        ' "An aerial view of the flooded old town"]',
    )

    print("filter:", flood.id, filter_visualizable(flood, client))
    print("filter:", markets.id, filter_visualizable(markets, client))
    print("captions:", len(generate_news_captions(flood, client)), "generated")

# Variants give reproducible corpus selections: a cutoff date plus an
# exclusion list, applied as a pure function.
variant = CorpusVariant(name="through-2021", max_date=dt.date(2021, 12, 31))
selected = apply_variant(store, variant)
print("variant keeps:", [a.id for a in selected])

# Relevance labels are the training signal: location relevance by keyword
# containment, event relevance within +/-7 days of the image's date.
image = ImageRecord(
    id="img:demo",
    gt_location="Passau, Germany",
    gt_date="2021-06-11",
    split="train",
)
labels = build_labels(image, list(store), n_window=7)
print("location-relevant:", sorted(labels.location_relevant))
print("event-relevant:   ", sorted(labels.event_relevant))
