"""Batch CLI for every pipeline stage.

Subcommands: ingest, fill, elicit, embed, cluster, concept, augment,
reassign, ground, verify, metrics, export-graph, validate, snapshot, serve.
Every subcommand reads a project directory plus an optional JSON config
file; mutating subcommands accept --dry-run to print the would-be event list
without touching the log.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from . import discovery, elicitation, export, grounding, ingestion, metrics, verification
from .config import Config
from .providers import EmbeddingProvider, l2_normalize
from .schema import EMOTIONS, HumanJudgment  # noqa: F401  (EMOTIONS documented in --help)
from .store import InvariantError, ProjectStore, canonical_json
from .verification import AgentBundle


def _open_project(args) -> ProjectStore:
    project = Path(args.project)
    if not project.exists() and args.command != "ingest":
        raise SystemExit(f"project directory {project} does not exist (run ingest first)")
    return ProjectStore(project)


def _working_store(store: ProjectStore, dry_run: bool) -> ProjectStore:
    return store.fork() if dry_run else store


def _finish_dry_run(store: ProjectStore, work: ProjectStore) -> None:
    fresh = work.events[store.version :]
    print(f"dry run: {len(fresh)} event(s) would be appended")
    for event in fresh:
        payload = canonical_json(event.payload)
        print(f"  {event.kind} {payload[:160]}{'...' if len(payload) > 160 else ''}")


def _parallel_map(items, fn, parallelism: int) -> list:
    """Provider fan-out with bounded parallelism; results keep input order so
    the events appended afterwards stay deterministic."""
    if parallelism <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))


def cmd_ingest(args) -> int:
    store = ProjectStore(args.project)
    work = _working_store(store, args.dry_run)
    result = ingestion.load_corpus(args.source, args.format)
    conversations = result.conversations
    if args.downsample:
        spec, _, frac = args.downsample.partition("=")
        task, _, label = spec.partition(":")
        if not (task and label and frac):
            raise SystemExit("--downsample expects task:label=fraction")
        conversations, retained = ingestion.downsample_labels(
            conversations, task, label, float(frac), seed=args.seed
        )
        print(f"downsampled {task}:{label} keeping {len(retained)} labeled turns")
    for conv in conversations:
        work.append("conversation_added", {"conversation": conv.to_dict()})
    for err in result.errors:
        print(f"record error at {err.location}: {err.message}", file=sys.stderr)
    print(f"ingested {len(conversations)} conversations from {args.source} ({args.format})")
    if args.dry_run:
        _finish_dry_run(store, work)
    return 0


def cmd_fill(args) -> int:
    store = _open_project(args)
    work = _working_store(store, args.dry_run)
    config = Config.load(args.config)
    provider = config.build_chat_provider()
    fields = [f.strip() for f in args.fields.split(",") if f.strip()]
    todo = []
    for conv in list(work.state.conversations.values())[: args.limit]:
        missing = [
            f
            for f in fields
            if (f == "relationships" and not conv.relationships)
            or (f == "settings" and conv.settings is None)
            or (f == "summary" and conv.summary is None)
        ]
        if missing:
            todo.append((conv, missing))
    results = _parallel_map(
        todo,
        lambda item: ingestion.fill_missing_fields(item[0], item[1], provider),
        config.parallelism,
    )
    filled = 0
    for (conv, _missing), result in zip(todo, results):
        if result.filled:
            work.append("fields_filled", {"conversation_id": conv.id, **result.filled})
            filled += 1
        for message in result.errors:
            work.append(
                "error_recorded",
                {"stage": "fill", "target_id": conv.id, "message": message},
            )
    print(f"filled fields on {filled} conversations")
    if args.dry_run:
        _finish_dry_run(store, work)
    return 0


def cmd_elicit(args) -> int:
    store = _open_project(args)
    work = _working_store(store, args.dry_run)
    config = Config.load(args.config)
    provider = config.build_chat_provider()
    conversations = list(work.state.conversations.values())[: args.limit]
    results = _parallel_map(
        conversations,
        lambda conv: elicitation.elicit(conv, provider),
        config.parallelism,
    )
    added = failures = 0
    for result in results:
        added += elicitation.persist_elicitation(work, result)
        failures += len(result.failures)
    print(f"elicited {added} new descriptions ({failures} failures noted)")
    if args.dry_run:
        _finish_dry_run(store, work)
    return 0


def cmd_embed(args) -> int:
    store = _open_project(args)
    work = _working_store(store, args.dry_run)
    config = Config.load(args.config)
    embedder: EmbeddingProvider = config.build_embedder()
    pending = [
        d
        for d in work.state.descriptions.values()
        if d.kind == "norm" and d.id not in work.state.embeddings
    ]
    if pending:
        vectors = embedder.embed([f"{d.title}: {d.body}" for d in pending])
        for desc, vec in zip(pending, vectors):
            work.append(
                "embedding_added",
                {
                    "embedding": {
                        "target_id": desc.id,
                        "vector": l2_normalize(vec),
                        "model_tag": embedder.model_tag,
                        "normalized": True,
                    }
                },
            )
    print(f"embedded {len(pending)} descriptions with {embedder.model_tag}")
    if args.dry_run:
        _finish_dry_run(store, work)
    return 0


def cmd_cluster(args) -> int:
    store = _open_project(args)
    work = _working_store(store, args.dry_run)
    config = Config.load(args.config)
    k = args.k if args.k is not None else config.k
    seed = args.seed if args.seed is not None else config.seed
    views, warnings = discovery.next_round(work, k=k, seed=seed, max_iters=config.max_iters)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if not views:
        print("nothing unmapped; no new round")
        return 0
    out_dir = Path(args.project) / "clusters"
    if not args.dry_run:
        out_dir.mkdir(exist_ok=True)
        out = out_dir / f"round-{work.state.round}-k{len(views)}-seed{seed}.json"
        out.write_text(
            canonical_json([v.to_dict() for v in views]) + "\n", encoding="utf-8"
        )
        print(f"round {work.state.round}: {len(views)} clusters -> {out}")
    else:
        _finish_dry_run(store, work)
    return 0


def cmd_concept(args) -> int:
    store = _open_project(args)
    if args.action == "export":
        payload = [c.to_dict() for c in store.state.concept_order()]
        Path(args.file).write_text(canonical_json(payload) + "\n", encoding="utf-8")
        print(f"exported {len(payload)} concepts to {args.file}")
        return 0
    work = _working_store(store, args.dry_run)
    raw = json.loads(Path(args.file).read_text(encoding="utf-8"))
    entries = raw if isinstance(raw, list) else [raw]
    for entry in entries:
        concept = discovery.create_concept(
            work,
            name=entry["name"],
            description=entry.get("description", ""),
            settings=entry.get("settings", []),
            violation_sketch=entry.get("violation_sketch", ""),
            actor_roles=entry.get("actor_roles", ""),
            recipient_roles=entry.get("recipient_roles", ""),
            seed_ids=entry["seed_ids"],
            annotator=entry.get("created_by", args.annotator),
            concept_id=entry.get("id"),
        )
        print(f"created concept {concept.name!r} ({concept.id})")
    if args.dry_run:
        _finish_dry_run(store, work)
    return 0


def cmd_marks(args) -> int:
    store = _open_project(args)
    work = _working_store(store, args.dry_run)
    good = [s for s in (args.good or "").split(",") if s]
    bad = [s for s in (args.bad or "").split(",") if s]
    warnings = discovery.record_marks(work, args.concept, good, bad, annotator=args.annotator)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"recorded {len(good)} good and {len(bad)} bad marks")
    if args.dry_run:
        _finish_dry_run(store, work)
    return 0


def cmd_augment(args) -> int:
    store = _open_project(args)
    work = _working_store(store, args.dry_run)
    config = Config.load(args.config)
    tau = args.tau if args.tau is not None else config.tau
    assigned = discovery.knn_augment(work, tau=tau)
    print(f"augmented {len(assigned)} descriptions at tau={tau}")
    if args.dry_run:
        _finish_dry_run(store, work)
    return 0


def cmd_reassign(args) -> int:
    store = _open_project(args)
    work = _working_store(store, args.dry_run)
    config = Config.load(args.config)
    tau = args.tau if args.tau is not None else config.tau
    lam = getattr(args, "lambda") if getattr(args, "lambda") is not None else config.lam
    applied = discovery.reassign_with_good_bad(work, tau=tau, lam=lam)
    print(
        f"reassigned {len(applied['assigned'])} and unassigned "
        f"{len(applied['unassigned'])} descriptions at tau={tau}, lambda={lam}"
    )
    if args.dry_run:
        _finish_dry_run(store, work)
    return 0


def cmd_ground(args) -> int:
    store = _open_project(args)
    work = _working_store(store, args.dry_run)
    config = Config.load(args.config)
    provider = config.build_chat_provider()
    targets = []
    for did, assignment in work.state.active_assignments().items():
        if work.state.grounding_for(did, assignment.concept_id) is None:
            targets.append((did, assignment.concept_id))
    targets = targets[: args.limit]

    def ground_one(target):
        did, cid = target
        desc = work.state.descriptions[did]
        conv = work.state.conversations[desc.conversation_id]
        concept = work.state.concepts[cid]
        return grounding.ground(conv, desc, concept, provider)

    # provider calls fan out; persistence stays serial and ordered
    outcomes = _parallel_map(targets, ground_one, config.parallelism)
    done = failed = 0
    for (did, _cid), outcome in zip(targets, outcomes):
        grounding.persist_grounding(work, did, outcome)
        if outcome.ok:
            done += 1
        else:
            failed += 1
    print(f"grounded {done} pairs ({failed} failures recorded)")
    if args.dry_run:
        _finish_dry_run(store, work)
    return 0


def cmd_judgments(args) -> int:
    store = _open_project(args)
    work = _working_store(store, args.dry_run)
    count = 0
    with open(args.file, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            judgment = HumanJudgment.from_dict(json.loads(line))
            work.append("judgment_recorded", {"judgment": judgment.to_dict()})
            count += 1
    print(f"recorded {count} judgments")
    if args.dry_run:
        _finish_dry_run(store, work)
    return 0


def cmd_verify(args) -> int:
    store = _open_project(args)
    work = _working_store(store, args.dry_run)
    config = Config.load(args.config)
    threshold = args.threshold if args.threshold is not None else config.threshold
    provider = config.build_chat_provider()
    if args.mode == "self":
        verdicts = verification.run_self_verification(
            work, args.aspect, provider, limit=args.limit
        )
    else:
        bundle = AgentBundle.single(provider)
        verdicts = verification.run_multiagent_verification(
            work, args.aspect, bundle, threshold=threshold, limit=args.limit
        )
    retained = sum(1 for v in verdicts if v.decision == "retain")
    print(
        f"{args.mode} verification on {args.aspect}: {len(verdicts)} verdicts, "
        f"{retained} retained, {len(verdicts) - retained} discarded"
    )
    if args.dry_run:
        _finish_dry_run(store, work)
    return 0


def cmd_metrics(args) -> int:
    store = _open_project(args)
    state = store.state
    report: dict
    if args.report == "quality":
        original, retained = [], []
        for verdict in state.verdicts.values():
            if verdict["aspect"] != args.aspect or verdict["workflow"] != args.workflow:
                continue
            original.append(verdict["target_id"])
            if verdict["decision"] == "retain":
                retained.append(verdict["target_id"])
        judgments = [j for j in state.judgments if j.aspect == args.aspect]
        qr = metrics.quality_retention(original, retained, judgments)
        report = {"aspect": args.aspect, "workflow": args.workflow, **qr.to_dict()}
        quality = "undefined" if qr.quality is None else f"{100 * qr.quality:.1f}%"
        retention = "undefined" if qr.retention is None else f"{100 * qr.retention:.1f}%"
        print(f"quality {quality}  retention {retention}  (n={len(original)})")
    elif args.report == "agreement":
        result = metrics.krippendorff_alpha(state.judgments, args.aspect)
        report = {"aspect": args.aspect, **result.to_dict()}
        print(
            f"alpha {result.alpha:.4f} over {result.items_used} items "
            f"({result.items_dropped} single-rating items dropped)"
        )
    elif args.report == "likert":
        result = metrics.likert_mean(state.judgments)
        report = result.to_dict()
        print(f"likert mean {result.mean:.2f} over {result.count} ratings")
    elif args.report == "distribution":
        table = metrics.concept_field_distribution(state)
        rows = metrics.distribution_rows(table)
        report = {"table": table, "rows": rows}
        for row in rows:
            print(f"{row['concept']:<40} {row['field']:<20} {row['count']}")
        if args.plot:
            _plot_distribution(table, args.plot)
            print(f"plot written to {args.plot}")
    else:  # stages
        report = export.stage_accounting(state)
        print(canonical_json(report))
    if args.out:
        Path(args.out).write_text(canonical_json(report) + "\n", encoding="utf-8")
        print(f"report written to {args.out}")
    return 0


def _plot_distribution(table: dict, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fields = sorted({f for row in table.values() for f in row})
    concepts = sorted(table)
    fig, ax = plt.subplots(figsize=(max(6, 1.2 * len(concepts)), 4))
    width = 0.8 / max(1, len(fields))
    for i, fld in enumerate(fields):
        xs = [j + i * width for j in range(len(concepts))]
        ys = [table[c].get(fld, 0) for c in concepts]
        ax.bar(xs, ys, width=width, label=fld)
    ax.set_xticks([j + 0.4 for j in range(len(concepts))])
    ax.set_xticklabels(concepts, rotation=30, ha="right")
    ax.set_ylabel("active assignments")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_export_graph(args) -> int:
    store = _open_project(args)
    out = Path(args.out or (Path(args.project) / "exports" / f"graph-v{store.version}.jsonl"))
    out.parent.mkdir(parents=True, exist_ok=True)
    count = export.write_graph(store.state, out, version=store.version)
    print(f"wrote {count} graph records to {out}")
    return 0


def cmd_validate(args) -> int:
    store = _open_project(args)
    violations = store.validate()
    for v in violations:
        print(f"{v.target_id}: {v.rule}: {v.message}")
    print(f"{len(violations)} invariant violation(s)")
    return 1 if violations else 0


def cmd_snapshot(args) -> int:
    store = _open_project(args)
    path = store.save_snapshot()
    print(f"snapshot v{store.version} written to {path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    store = _open_project(args)
    config = Config.load(args.config)
    app = create_app(store, config=config, auth_token=args.token)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convnorms")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mutating: bool = True):
        p.add_argument("--project", required=True, help="project directory")
        p.add_argument("--config", default=None, help="JSON config file")
        if mutating:
            p.add_argument("--dry-run", action="store_true", help="print would-be events")

    p = sub.add_parser("ingest", help="load a corpus into the project")
    common(p)
    p.add_argument("--source", required=True)
    p.add_argument("--format", required=True, choices=ingestion.FORMATS)
    p.add_argument("--downsample", default=None, metavar="task:label=fraction")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fill", help="fill missing factual fields via the provider")
    common(p)
    p.add_argument("--fields", required=True, help="comma list of relationships,settings,summary")
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_fill)

    p = sub.add_parser("elicit", help="elicit norm descriptions via the provider")
    common(p)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_elicit)

    p = sub.add_parser("embed", help="embed norm descriptions")
    common(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("cluster", help="cluster unmapped descriptions (new round)")
    common(p)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("concept", help="import or export norm concepts")
    common(p)
    p.add_argument("action", choices=("import", "export"))
    p.add_argument("--file", required=True)
    p.add_argument("--annotator", default="cli")
    p.set_defaults(func=cmd_concept)

    p = sub.add_parser("marks", help="record good/bad example marks")
    common(p)
    p.add_argument("--concept", required=True)
    p.add_argument("--good", default="")
    p.add_argument("--bad", default="")
    p.add_argument("--annotator", default="cli")
    p.set_defaults(func=cmd_marks)

    p = sub.add_parser("augment", help="nearest-centroid augmentation of unmapped descriptions")
    common(p)
    p.add_argument("--tau", type=float, default=None)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("reassign", help="re-assign using good & bad centers")
    common(p)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--lambda", type=float, default=None, dest="lambda")
    p.set_defaults(func=cmd_reassign)

    p = sub.add_parser("ground", help="symbolically ground assigned descriptions")
    common(p)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_ground)

    p = sub.add_parser("judgments", help="ingest human judgments from JSONL")
    common(p)
    p.add_argument("--file", required=True)
    p.set_defaults(func=cmd_judgments)

    p = sub.add_parser("verify", help="run self or multi-agent verification")
    common(p)
    p.add_argument("--aspect", required=True, choices=("relevance", "mapping", "violation"))
    p.add_argument("--mode", default="agents", choices=("self", "agents"))
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("metrics", help="quality/agreement/likert/distribution reports")
    common(p, mutating=False)
    p.add_argument(
        "--report",
        required=True,
        choices=("quality", "agreement", "likert", "distribution", "stages"),
    )
    p.add_argument("--aspect", default="relevance")
    p.add_argument("--workflow", default="multiagent", choices=("self", "multiagent"))
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None, help="write a PNG for the distribution report")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("export-graph", help="export the schema graph as JSONL")
    common(p, mutating=False)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("validate", help="report invariant violations")
    common(p, mutating=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("snapshot", help="write a versioned snapshot file")
    common(p, mutating=False)
    p.set_defaults(func=cmd_snapshot)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    common(p, mutating=False)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8700)
    p.add_argument("--token", default=None, help="bearer token (annotator:secret)")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvariantError, discovery.DiscoveryError, ingestion.CorpusLoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except metrics.MetricError as exc:
        print(f"metric error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
