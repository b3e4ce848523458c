"""The ``wildharvest`` command line: every stage plus full runs.

Configuration precedence is flags > config file > defaults. Exit codes:
0 success, 2 validation error, 3 backend unavailable, 4 data integrity
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

from .errors import MissingInputError, ValidationError, WildharvestError
from .evaluation import (
    build_report,
    read_score_records,
    render_table,
    report_to_json,
    validation_precision,
)
from .manifest import read_manifest, read_records, write_records, format_score
from .pairing import RealPoolIndex, assign_pairs
from .pipeline import (
    STAGE_ORDER,
    RunConfig,
    _RunContext,
    _stage_assemble,
    _stage_emit,
    _stage_expand,
    _stage_score,
    _stage_segment,
    run_pipeline,
)
from .retrieval import EmbeddingCache
from .scheduler import partition_timeline, register_generators
from .store import ContentStore
from .types import parse_date


def _load_config(args, required: bool = True) -> RunConfig | None:
    path = getattr(args, "config", None)
    if path is None:
        if required:
            raise ValidationError("this command needs --config <file>")
        return None
    overrides = {}
    for key, attr in (
        ("query", "query"),
        ("thresholds.tau_anchor", "tau_anchor"),
        ("thresholds.tau_sim", "tau_sim"),
        ("thresholds.seg_threshold", "seg_threshold"),
        ("thresholds.replay_rho", "rho"),
        ("seeds.replay", "seed"),
        ("date_range.from", "date_from"),
        ("date_range.to", "date_to"),
        ("adapters.articles.endpoint", "corpus"),
        ("backends.extractor.endpoint", "backend_extractor"),
        ("backends.trainer.endpoint", "backend_trainer"),
        ("options.template_p1", "template"),
    ):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    return RunConfig.from_file(path, overrides)


def _ctx(config: RunConfig) -> _RunContext:
    out = config.manifests_dir
    out.mkdir(parents=True, exist_ok=True)
    return _RunContext(config=config, store=ContentStore(config.resolve("store")), out=out)


# -- subcommand handlers ----------------------------------------------------

def _cmd_ingest(args) -> int:
    from .ingestion import fetch_articles, fetch_real_pool

    config = _load_config(args)
    ctx = _ctx(config)
    if args.what == "articles":
        adapter = (
            config.adapter("articles")
            if args.adapter is None
            else next(
                (
                    config.build_adapter(spec)
                    for spec in [config.adapters["articles"], *config.adapters["real_pool"]]
                    if spec["adapter_name"] == args.adapter
                ),
                None,
            )
        )
        if adapter is None:
            raise ValidationError(f"no adapter named {args.adapter!r} in config")
        articles = fetch_articles(adapter, config.query, config.date_range, config.run_date)
        write_records(
            ctx.path("articles.jsonl"),
            [
                {
                    "article_id": a.article_id,
                    "source_url": a.source_url,
                    "source_name": a.source_name,
                    "published_at": a.published_at.isoformat(),
                    "body_text": a.body_text,
                    "image_urls": list(a.raw_image_urls),
                    "date_inferred": a.date_inferred,
                }
                for a in articles
            ],
        )
        print(f"ingested {len(articles)} articles -> {ctx.path('articles.jsonl')}")
    else:
        adapters = config.real_pool_adapters()
        if args.adapters:
            wanted = set(args.adapters.split(","))
            adapters = [a for a in adapters if a.adapter_name in wanted]
            if not adapters:
                raise ValidationError(f"no real-pool adapters match {sorted(wanted)}")
        pool = fetch_real_pool(adapters, config.date_range, ctx.store, config.query)
        write_records(
            ctx.path("realpool.jsonl"),
            [
                {
                    "image_id": r.image_id,
                    "source": r.source,
                    "outlet": r.outlet,
                    "published_at": r.published_at.isoformat(),
                }
                for r in pool.images
            ],
            header={"kind": "realpool-header", "per_source_counts": pool.per_source_counts},
        )
        print(
            f"real pool: {len(pool.images)} images "
            f"({pool.per_source_counts}) -> {ctx.path('realpool.jsonl')}"
        )
    return 0


def _cmd_extract(args) -> int:
    from .pipeline import _stage_extract

    config = _load_config(args)
    ctx = _ctx(config)
    ctx.need("extract", ("articles.jsonl",))
    made = _stage_extract(ctx)
    print(f"extract wrote {made}")
    return 0


def _cmd_retrieve(args) -> int:
    config = _load_config(args)
    ctx = _ctx(config)
    if args.step == "score":
        ctx.need("score", ("extraction.jsonl", "candidates.jsonl"))
        _stage_score(ctx)
        print(f"scored candidates -> {ctx.path('scored.jsonl')}")
    elif args.step == "anchors":
        ctx.need("anchors", ("scored.jsonl",))
        anchors = [
            rec for rec in read_records(ctx.path("scored.jsonl"))
            if rec["selection"] == "anchor"
        ]
        for rec in anchors:
            print(f"{rec['article_id']}  {rec['image_id'][:16]}  {rec['anchor_score']:.6f}")
        print(f"{len(anchors)} anchors at tau_anchor={config.thresholds.tau_anchor}")
    elif args.step == "expand":
        ctx.need("expand", ("scored.jsonl",))
        _stage_expand(ctx)
        print(f"final sets -> {ctx.path('final_sets.jsonl')}")
    else:
        ctx.need("segment", ("final_sets.jsonl",))
        _stage_segment(ctx)
        print(f"segments -> {ctx.path('segments.jsonl')}")
    return 0


def _cmd_pair(args) -> int:
    from .pipeline import _embedder

    config = _load_config(args)
    embedder = _embedder(config)
    cache = EmbeddingCache()
    fakes_manifest = read_manifest(args.fakes)
    fake_ids = sorted({e.image_id for e in fakes_manifest.entries if e.label == 1})
    if not fake_ids:
        raise ValidationError(f"{args.fakes} holds no fake-labeled entries")
    pool_path = Path(args.pool)
    if pool_path.name.endswith(".manifest.jsonl"):
        pool_ids = sorted(
            {e.image_id for e in read_manifest(pool_path).entries if e.label == 0}
        )
    else:
        pool_ids = sorted(
            rec["image_id"]
            for rec in read_records(pool_path)
            if rec.get("kind") != "realpool-header"
        )
    idx = RealPoolIndex([(i, cache.get_or_compute(embedder, i)) for i in pool_ids])
    pairs = assign_pairs(
        [(i, cache.get_or_compute(embedder, i)) for i in fake_ids],
        idx,
        k=args.k if args.k is not None else config.thresholds.top_k,
        reals_per_fake=args.per_fake,
        global_without_replacement=args.global_no_replacement,
    )
    rows = [
        {"fake_id": p.fake_id, "real_id": r, "similarity": format_score(s)}
        for p in pairs
        for r, s in zip(p.real_ids, p.similarities)
    ]
    out = Path(args.out) if args.out else _ctx(config).path("pairs.jsonl")
    write_records(out, rows)
    print(f"{len(rows)} pair rows -> {out}")
    return 0


def _cmd_round(args) -> int:
    config = _load_config(args)
    ctx = _ctx(config)
    if args.action == "assemble":
        ctx.need("assemble", ("articles.jsonl", "extraction.jsonl", "final_sets.jsonl",
                              "segments.jsonl", "pairs.jsonl", "realpool.jsonl"))
        made = _stage_assemble(ctx)
        wanted = f"round-{args.t:03d}.manifest.jsonl"
        if wanted not in made:
            raise MissingInputError(f"round {args.t} is outside the configured timeline")
        print(f"assembled {wanted} (plus components)")
    else:
        ctx.need("emit", ("rounds.json",))
        _stage_emit(ctx, only_t=args.t)
        print(f"jobs -> {ctx.path('jobs.jsonl')}")
    return 0


def _cmd_registry(args) -> int:
    registry = register_generators(args.file, seed=args.seed)
    print(f"{'generator'.ljust(28)} {'released'.ljust(10)} {'size':>5} {'train':>6} {'test':>5}")
    for row in registry.rows:
        print(
            f"{row.name.ljust(28)} {row.release_date.isoformat().ljust(10)} "
            f"{row.size:>5} {row.train_count:>6} {row.test_count:>5}"
        )
    total = sum(r.size for r in registry.rows)
    print(f"{len(registry.rows)} generators, {total} images, "
          f"{sum(r.test_count for r in registry.rows)} reserved for test")
    return 0


def _cmd_timeline(args) -> int:
    windows = partition_timeline(
        [],
        anchor_date=parse_date(args.anchor),
        interval_months=args.interval,
        num_windows=args.windows,
    )
    for w in windows:
        print(f"task {w.t}: {w.window_start.isoformat()} .. {w.window_end.isoformat()}")
    return 0


def _cmd_eval(args) -> int:
    if args.what == "report":
        if not args.scores:
            raise ValidationError("eval report needs --scores <file>")
        records = read_score_records(args.scores)
        groupings = tuple(args.group.split(",")) if args.group else ("dataset", "generator", "task")
        report = build_report(records, groupings=groupings)
        if args.out:
            Path(args.out).write_text(report_to_json(report) + "\n")
            print(f"report -> {args.out}")
        print(render_table(report), end="")
        return 0
    if not args.manifest:
        raise ValidationError("eval precision needs --manifest <file>")
    entries = read_manifest(args.manifest).entries
    fakes = [e for e in entries if e.label == 1]
    annotations = None
    if args.annotations and Path(args.annotations).exists():
        annotations = json.loads(Path(args.annotations).read_text())
    result = validation_precision(
        list(fakes), sample_fraction=args.fraction, seed=args.seed, annotations=annotations
    )
    if "worksheet" in result:
        out = Path(args.annotations or "precision_worksheet.json")
        out.write_text(json.dumps({r["image_id"]: "" for r in result["worksheet"]}, indent=1))
        print(f"sampled {result['sampled_n']} entries; annotation worksheet -> {out}")
    else:
        print(
            f"sampled {result['sampled_n']}, correct {result['correct']}, "
            f"precision {result['precision']:.6f}"
        )
    return 0


def _cmd_run(args) -> int:
    config = _load_config(args)
    stages = list(STAGE_ORDER) if args.stages == "all" else args.stages.split(",")
    records = run_pipeline(config, stages, force=args.force)
    for rec in records:
        marker = "cached" if rec["cache_hit"] else "ran"
        print(f"{rec['stage']}: {marker} ({len(rec['outputs'])} outputs)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wildharvest")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="fetch articles or the real pool")
    p.add_argument("what", choices=["articles", "real-pool"])
    p.add_argument("--config", required=True)
    p.add_argument("--adapter")
    p.add_argument("--adapters", help="comma-separated real-pool adapter names")
    p.add_argument("--query", dest="query")
    p.add_argument("--from", dest="date_from")
    p.add_argument("--to", dest="date_to")
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("extract", help="LLM relevance + caption extraction")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", help="override the articles adapter endpoint")
    p.add_argument("--backend", dest="backend_extractor", help="override the extractor endpoint")
    p.add_argument("--template", help="prompt template ref, e.g. p1@v1")
    p.set_defaults(fn=_cmd_extract)

    p = sub.add_parser("retrieve", help="score / anchors / expand / segment")
    p.add_argument("step", choices=["score", "anchors", "expand", "segment"])
    p.add_argument("--config", required=True)
    p.add_argument("--tau-anchor", dest="tau_anchor", type=float)
    p.add_argument("--tau-sim", dest="tau_sim", type=float)
    p.add_argument("--seg-threshold", dest="seg_threshold", type=float)
    p.set_defaults(fn=_cmd_retrieve)

    p = sub.add_parser("pair", help="match fakes with similar reals")
    p.add_argument("--config", required=True)
    p.add_argument("--fakes", required=True, help="manifest of fake-labeled entries")
    p.add_argument("--pool", required=True, help="real pool records or manifest")
    p.add_argument("--k", type=int)
    p.add_argument("--per-fake", dest="per_fake", type=int, default=1)
    p.add_argument(
        "--global-no-replacement", dest="global_no_replacement",
        action=argparse.BooleanOptionalAction, default=True,
    )
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_pair)

    p = sub.add_parser("round", help="assemble or emit an update round")
    p.add_argument("action", choices=["assemble", "emit"])
    p.add_argument("--config", required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--rho", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", dest="backend_trainer", help="override the trainer endpoint")
    p.set_defaults(fn=_cmd_round)

    p = sub.add_parser("registry", help="generator registry tools")
    p.add_argument("action", choices=["load"])
    p.add_argument("file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_registry)

    p = sub.add_parser("timeline", help="partition the round timeline")
    p.add_argument("action", choices=["partition"])
    p.add_argument("--interval", type=int, default=3)
    p.add_argument("--anchor", required=True)
    p.add_argument("--windows", type=int)
    p.set_defaults(fn=_cmd_timeline)

    p = sub.add_parser("eval", help="reports and precision audits")
    p.add_argument("what", choices=["report", "precision"])
    p.add_argument("--scores")
    p.add_argument("--group")
    p.add_argument("--out")
    p.add_argument("--manifest")
    p.add_argument("--fraction", type=float, default=0.104)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--annotations")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("run", help="run a chain of stages with memoization")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", default="all", help="'all' or comma-separated stage names")
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=_cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except WildharvestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
