"""Command-line surface for the retrieval engine.

Exit codes: 0 success, 1 validation error (flags, config, preconditions),
2 runtime error.  ``--json`` switches machine-readable output on where it
applies; ``--seed`` overrides the config seed.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import os
import sys
from pathlib import Path

from . import biencoder, crossenc, enrich
from .articles import CorpusStore, CorpusVariant, apply_variant
from .cluster_event import dump_clusters
from .config import Config, load_config
from .crossenc import MAGIC_EVT_SCORER, MAGIC_LOC_SCORER
from .embedstore import load_matrix
from .labeling import build_labels, load_images, load_labels, save_labels
from .llm import ChatClient, LlmEndpointConfig
from .metrics import Gazetteer
from .newsapis import HttpCache, fetch_guardian_matches, fetch_nyt_month
from .pipeline import (
    CommandTextEmbedder,
    HashTextEmbedder,
    Stores,
    evaluate_run,
    load_results,
    render_evidence_prompt,
    run_inference,
    save_report,
    train_biencoder_stage,
    train_evt_stage,
    train_loc_stage,
)
from .rerank_loc import collect_loc_templates


class CliValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports validation failures as exit code 1."""

    def error(self, message):
        raise CliValidationError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> _Parser:
    parser = _Parser(prog="newsrecon", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file (flat key = value)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--json", action="store_true", help="machine-readable output")
        return p

    ingest = sub.add_parser("ingest", help="fetch articles from archive APIs")
    ingest_sub = ingest.add_subparsers(dest="ingest_source", required=True)
    nyt = common(ingest_sub.add_parser("nyt"))
    nyt.add_argument("--from", dest="from_month", required=True, metavar="YYYY-MM")
    nyt.add_argument("--to", dest="to_month", required=True, metavar="YYYY-MM")
    nyt.add_argument("--corpus", required=True)
    nyt.add_argument("--cache-dir", default=None)
    nyt.add_argument("--offline", action="store_true")
    guardian = common(ingest_sub.add_parser("guardian"))
    guardian.add_argument("--queries", required=True, help="jsonl of {date, keywords}")
    guardian.add_argument("--corpus", required=True)
    guardian.add_argument("--cache-dir", default=None)
    guardian.add_argument("--offline", action="store_true")

    filt = common(sub.add_parser("filter", help="visualizable-event filter"))
    filt.add_argument("--corpus", required=True)
    filt.add_argument("--llm-base-url", default="")
    filt.add_argument("--llm-model", default="")
    filt.add_argument("--fixture-dir", default=None)

    caption = common(sub.add_parser("caption", help="generate news captions"))
    caption.add_argument("--corpus", required=True)
    caption.add_argument("--llm-base-url", default="")
    caption.add_argument("--llm-model", default="")
    caption.add_argument("--fixture-dir", default=None)

    variant = common(sub.add_parser("variant", help="apply a corpus variant"))
    variant.add_argument("--corpus", required=True)
    variant.add_argument("--max-date", required=True, metavar="YYYY-MM-DD")
    variant.add_argument("--exclude", default=None, help="file of excluded ids")
    variant.add_argument("--name", default="variant")
    variant.add_argument("--out", required=True)

    label = common(sub.add_parser("label", help="build relevance labels"))
    label.add_argument("--images", required=True)
    label.add_argument("--corpus", required=True)
    label.add_argument("--out", required=True)
    label.add_argument("--n-window", type=int, default=None)

    index = common(sub.add_parser("index", help="embedding manifests and checks"))
    index.add_argument("--corpus")
    index.add_argument(
        "--what",
        choices=["captions", "abstracts", "loc-templates", "article-images"],
        help="which text field represents each article in the index",
    )
    index.add_argument("--out")
    index.add_argument("--check", help="validate an embedding file")

    for name in ("train-biencoder", "train-xenc-loc", "train-xenc-evt"):
        common(sub.add_parser(name, help=f"{name.replace('-', ' ')} stage"))

    retrieve = common(sub.add_parser("retrieve", help="run inference for one image"))
    retrieve.add_argument("--image-id", required=True)
    retrieve.add_argument("--dump-clusters", default=None, metavar="PATH")
    retrieve.add_argument("--out", default=None, help="append result record here")

    evaluate = common(sub.add_parser("evaluate", help="score a result file"))
    evaluate.add_argument("--results", required=True)
    evaluate.add_argument("--out", default=None, help="report file (jsonl)")

    render = common(sub.add_parser("render-prompt", help="evidence prompt for an image"))
    render.add_argument("--image-id", required=True)
    render.add_argument("--task", choices=["date", "location"], required=True)
    render.add_argument("--max-date", default="2021-12-31")
    render.add_argument("--top-n", type=int, default=3)

    dump = common(sub.add_parser("dump-clusters", help="clusters for one image"))
    dump.add_argument("--image-id", required=True)
    dump.add_argument("--out", default=None)

    return parser


def _require_config(args) -> Config:
    if not args.config:
        raise CliValidationError("--config is required for this command")
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
        config.validate()
    return config


def _load_stores(config: Config, with_models: bool = True) -> Stores:
    store = CorpusStore.load(config.corpus_path)
    articles = {a.id: a for a in store}
    image_store = load_matrix(config.image_embeddings_path)
    caption_store = load_matrix(config.caption_embeddings_path)
    template_store = (
        load_matrix(config.template_embeddings_path)
        if config.template_embeddings_path
        else None
    )
    gazetteer = (
        Gazetteer.from_csv(config.gazetteer_path) if config.gazetteer_path else None
    )
    if config.event_embedder == "command":
        embed_text = CommandTextEmbedder(config.event_embedder_command)
    else:
        embed_text = HashTextEmbedder(image_store.dim, config.seed)
    stores = Stores(
        articles=articles,
        image_store=image_store,
        caption_store=caption_store,
        template_store=template_store,
        gazetteer=gazetteer,
        embed_text=embed_text,
    )
    if with_models:
        heads_path = config.artifact_path("heads", "nrhd")
        if heads_path.exists():
            stores.image_head, stores.text_head = biencoder.load_heads(heads_path)
            stores.invalidate_caches()
        loc_path = config.artifact_path("loc_scorer", "nrxl")
        if loc_path.exists():
            stores.loc_scorer = crossenc.load_scorer(loc_path, MAGIC_LOC_SCORER)
        evt_path = config.artifact_path("evt_scorer", "nrxe")
        if evt_path.exists():
            stores.evt_scorer = crossenc.load_scorer(evt_path, MAGIC_EVT_SCORER)
    return stores


def _split_ids(config: Config) -> tuple[list, list[str], list[str]]:
    images = load_images(config.images_path)
    train = [i.id for i in images if i.split == "train"]
    dev = [i.id for i in images if i.split == "dev"]
    return images, train, dev


def _load_or_build_labels(config: Config, images) -> dict:
    if config.labels_path and Path(config.labels_path).exists():
        return load_labels(config.labels_path)
    store = CorpusStore.load(config.corpus_path)
    articles = list(store)
    return {
        image.id: build_labels(image, articles, config.n_window_days)
        for image in images
        if image.gt_location.strip()
    }


def _month_range(from_month: str, to_month: str):
    start = dt.datetime.strptime(from_month, "%Y-%m")
    end = dt.datetime.strptime(to_month, "%Y-%m")
    current = start
    while current <= end:
        yield current.year, current.month
        current = (
            current.replace(year=current.year + 1, month=1)
            if current.month == 12
            else current.replace(month=current.month + 1)
        )


def _cmd_ingest(args) -> int:
    cache = HttpCache(args.cache_dir, offline=args.offline) if args.cache_dir else None
    path = Path(args.corpus)
    store = CorpusStore.load(path) if path.exists() else CorpusStore()
    if args.ingest_source == "nyt":
        api_key = os.environ.get("NYT_API_KEY", "")
        for year, month in _month_range(args.from_month, args.to_month):
            for article in fetch_nyt_month(year, month, api_key, cache):
                store.add(article, replace=True)
    else:
        api_key = os.environ.get("GUARDIAN_API_KEY", "")
        with open(args.queries, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                query = json.loads(line)
                date = (
                    dt.date.fromisoformat(query["date"]) if query.get("date") else None
                )
                for article in fetch_guardian_matches(
                    date, query.get("keywords", []), api_key, cache
                ):
                    store.add(article, replace=True)
    store.save(path)
    print(f"corpus now holds {len(store)} articles")
    return 0


def _llm_client(args) -> ChatClient:
    return ChatClient(
        LlmEndpointConfig(
            base_url=args.llm_base_url,
            model_name=args.llm_model,
            fixture_dir=args.fixture_dir,
        )
    )


def _cmd_filter(args) -> int:
    store = CorpusStore.load(args.corpus)
    client = _llm_client(args)
    kept = dropped = 0
    for article in sorted(store, key=lambda a: a.id):
        if article.keep is None:
            if enrich.filter_visualizable(article, client):
                kept += 1
            else:
                dropped += 1
    store.save(args.corpus)
    print(f"kept {kept}, dropped {dropped}")
    return 0


def _cmd_caption(args) -> int:
    store = CorpusStore.load(args.corpus)
    client = _llm_client(args)
    captioned = 0
    for article in sorted(store, key=lambda a: a.id):
        if article.keep is True and not article.news_captions:
            if enrich.generate_news_captions(article, client):
                captioned += 1
    store.save(args.corpus)
    print(f"captioned {captioned} articles")
    return 0


def _cmd_variant(args) -> int:
    store = CorpusStore.load(args.corpus)
    excluded: set[str] = set()
    if args.exclude:
        with open(args.exclude, "r", encoding="utf-8") as fh:
            excluded = {line.strip() for line in fh if line.strip()}
    variant = CorpusVariant(
        name=args.name,
        max_date=dt.date.fromisoformat(args.max_date),
        excluded_article_ids=frozenset(excluded),
    )
    selected = apply_variant(store, variant)
    CorpusStore(selected).save(args.out)
    print(f"variant {variant.name!r}: {len(selected)} of {len(store)} articles")
    return 0


def _cmd_label(args) -> int:
    config = load_config(args.config) if args.config else Config()
    n_window = args.n_window if args.n_window is not None else config.n_window_days
    images = load_images(args.images)
    articles = list(CorpusStore.load(args.corpus))
    labels = [
        build_labels(image, articles, n_window)
        for image in images
        if image.gt_location.strip()
    ]
    save_labels(labels, args.out)
    print(f"labeled {len(labels)} images (n_window={n_window})")
    return 0


def _cmd_index(args) -> int:
    if args.check:
        matrix = load_matrix(args.check)
        print(f"{args.check}: {matrix.rows} rows, dim {matrix.dim}, checksum ok")
        return 0
    if not (args.corpus and args.what and args.out):
        raise CliValidationError("index needs --check or (--corpus --what --out)")
    store = CorpusStore.load(args.corpus)
    lines = []
    if args.what == "captions":
        for article in sorted(store, key=lambda a: a.id):
            for row_id, caption in zip(article.caption_row_ids(), article.news_captions):
                lines.append({"id": row_id, "kind": "text", "payload": caption})
    elif args.what == "abstracts":
        # Alternate input field: one row per article, abstract as the text.
        for article in sorted(store, key=lambda a: a.id):
            if article.abstract.strip():
                lines.append(
                    {"id": f"{article.id}#0", "kind": "text", "payload": article.abstract}
                )
    elif args.what == "loc-templates":
        for row_id, text in collect_loc_templates(store):
            lines.append({"id": row_id, "kind": "text", "payload": text})
    else:
        for article in sorted(store, key=lambda a: a.id):
            if article.image_urls:
                lines.append(
                    {"id": article.id, "kind": "image", "payload": article.image_urls[0]}
                )
    with open(args.out, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(json.dumps(line, ensure_ascii=False))
            fh.write("\n")
    print(f"wrote {len(lines)} manifest entries to {args.out}")
    return 0


def _cmd_train_biencoder(args) -> int:
    config = _require_config(args)
    stores = _load_stores(config, with_models=False)
    images, train_ids, dev_ids = _split_ids(config)
    labels = _load_or_build_labels(config, images)
    image_head, text_head, log = train_biencoder_stage(
        stores, labels, train_ids, dev_ids, config
    )
    Path(config.checkpoints_dir or ".").mkdir(parents=True, exist_ok=True)
    out = config.artifact_path("heads", "nrhd")
    biencoder.save_heads(image_head, text_head, out)
    biencoder.save_train_log(log, config.artifact_path("heads_log", "jsonl"))
    best = max((r["r_at_100"] for r in log), default=0.0)
    print(f"saved heads to {out} (best dev R@{config.bi_validation_k}: {best:.4f})")
    return 0


def _cmd_train_xenc(args, which: str) -> int:
    config = _require_config(args)
    stores = _load_stores(config)
    images, train_ids, dev_ids = _split_ids(config)
    labels = _load_or_build_labels(config, images)
    Path(config.checkpoints_dir or ".").mkdir(parents=True, exist_ok=True)
    if which == "loc":
        scorer, log = train_loc_stage(stores, labels, train_ids, dev_ids, config)
        out = config.artifact_path("loc_scorer", "nrxl")
        crossenc.save_scorer(scorer, out, MAGIC_LOC_SCORER)
        crossenc.save_scorer_log(log, config.artifact_path("loc_scorer_log", "jsonl"))
    else:
        scorer, log = train_evt_stage(stores, labels, train_ids, dev_ids, config)
        out = config.artifact_path("evt_scorer", "nrxe")
        crossenc.save_scorer(scorer, out, MAGIC_EVT_SCORER)
        crossenc.save_scorer_log(log, config.artifact_path("evt_scorer_log", "jsonl"))
    best = max((r.get("r_at_1") or 0.0 for r in log), default=0.0)
    print(f"saved scorer to {out} (best dev R@1: {best:.4f})")
    return 0


def _cmd_retrieve(args) -> int:
    config = _require_config(args)
    stores = _load_stores(config)
    result = run_inference(args.image_id, config, stores)
    if args.dump_clusters:
        dump_clusters(result.clusters, args.dump_clusters)
    if args.out:
        with open(args.out, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(result.to_record(), sort_keys=True))
            fh.write("\n")
    if args.json:
        print(json.dumps(result.to_record(), sort_keys=True))
    else:
        print(f"image {result.image_id}")
        print("location ranking:")
        for hit in result.location_ranking:
            print(f"  {hit.article_id}  s_comb={hit.s_comb:.4f}")
        print("event ranking:")
        for article_id in result.event_ranking:
            print(f"  {article_id}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _require_config(args)
    store = CorpusStore.load(config.corpus_path)
    articles = {a.id: a for a in store}
    gazetteer = (
        Gazetteer.from_csv(config.gazetteer_path) if config.gazetteer_path else None
    )
    results = load_results(args.results)
    images = load_images(config.images_path)
    present = {r["image_id"] for r in results}
    gold = [image for image in images if image.id in present]
    report = evaluate_run(results, gold, config, articles, gazetteer)
    if args.out:
        save_report(report, args.out)
    if args.json:
        print(json.dumps(report.aggregate(), sort_keys=True))
    else:
        print(report.table())
    return 0


def _cmd_render_prompt(args) -> int:
    config = _require_config(args)
    stores = _load_stores(config)
    result = run_inference(args.image_id, config, stores)
    prompt = render_evidence_prompt(
        result,
        args.task,
        stores.articles,
        dt.date.fromisoformat(args.max_date),
        args.top_n,
    )
    print(prompt)
    return 0


def _cmd_dump_clusters(args) -> int:
    config = _require_config(args)
    stores = _load_stores(config)
    result = run_inference(args.image_id, config, stores)
    if args.out:
        dump_clusters(result.clusters, args.out)
        print(f"wrote {len(result.clusters)} clusters to {args.out}")
    else:
        for cluster in result.clusters:
            print(
                json.dumps(
                    {
                        "article_ids": cluster.article_ids,
                        "start_date": cluster.start_date.isoformat(),
                        "end_date": cluster.end_date.isoformat(),
                        "shared_locations": sorted(cluster.shared_locations),
                        "s_evt": cluster.s_evt,
                    },
                    sort_keys=True,
                )
            )
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "ingest":
            return _cmd_ingest(args)
        if args.command == "filter":
            return _cmd_filter(args)
        if args.command == "caption":
            return _cmd_caption(args)
        if args.command == "variant":
            return _cmd_variant(args)
        if args.command == "label":
            return _cmd_label(args)
        if args.command == "index":
            return _cmd_index(args)
        if args.command == "train-biencoder":
            return _cmd_train_biencoder(args)
        if args.command == "train-xenc-loc":
            return _cmd_train_xenc(args, "loc")
        if args.command == "train-xenc-evt":
            return _cmd_train_xenc(args, "evt")
        if args.command == "retrieve":
            return _cmd_retrieve(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "render-prompt":
            return _cmd_render_prompt(args)
        if args.command == "dump-clusters":
            return _cmd_dump_clusters(args)
        raise CliValidationError(f"unknown command {args.command!r}")
    except CliValidationError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
