"""``ckn`` command line: ingest, query, sim, distill, gen, dump.

Exit status is 0 on success, 1 for user/input errors (including usage
errors) and 2 for internal errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import threading
from pathlib import Path

from ckn import distill, grayscott, ingest, query, signature
from ckn.errors import CKNError, IoError
from ckn.graph import GraphStore, NodeKind
from ckn.provenance import DetailLevel, LineageGraph

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
STORE_ENV = "CKN_STORE"


class UsageError(CKNError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit with status 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _pairs(items: list[str] | None) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"expected key=value, got {item!r}")
        out[key] = value
    return out


def _open_store(args, create: bool = False) -> GraphStore:
    if not args.store:
        raise UsageError(f"no store given (use --store or set {STORE_ENV})")
    if not Path(args.store).exists():
        if create:
            return GraphStore()
        raise IoError(f"store {args.store} does not exist")
    return GraphStore.load(args.store)


def _emit(args, payload, rows: list[str]) -> None:
    if getattr(args, "format", "tsv") == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for row in rows:
            print(row)


def _lineage_rows(graph: LineageGraph) -> list[str]:
    rows = [f"node\t{n.id}\t{n.kind.value}" for n in graph.nodes]
    rows += [f"edge\t{e.src}\t{e.dst}\t{e.relation}" for e in graph.edges]
    return rows


# -- commands --------------------------------------------------------------

def cmd_ingest(args) -> int:
    store = _open_store(args, create=True)
    state = ingest.IngestState.for_store(args.store)

    def save(report: ingest.IngestReport) -> None:
        if report.new_files or report.errors:
            store.save(args.store)

    stop = threading.Event()
    try:
        report = ingest.ingest_directory(
            store, args.dir, args.mode,
            interval_ms=args.interval_ms, state=state, stop_event=stop,
            max_passes=args.max_passes, on_pass=save,
        )
    except KeyboardInterrupt:
        stop.set()
        store.save(args.store)
        return EXIT_OK
    if not Path(args.store).exists():
        store.save(args.store)
    d = report.to_dict()
    rows = [f"specs\t{d['specs']}", f"runs\t{d['runs']}", f"skipped\t{d['skipped']}", f"errors\t{d['errors']}"]
    rows += [f"error\t{f}\t{e}" for f, e in report.errors]
    _emit(args, d, rows)
    return EXIT_OK


def _run_query(args, store: GraphStore):
    if args.file:
        try:
            text = Path(args.file).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(str(exc)) from exc
        return query.run_request(store, query.parse_request(text))
    op = args.op
    if op is None:
        raise UsageError("query needs an operation or --file")
    if op == "find":
        kinds = [NodeKind(k) for k in args.kind] if args.kind else None
        attrs = list(_pairs(args.attr).items())
        return query.find(store, query.AttributeQuery(args.name, attrs), kinds)
    if op == "exact":
        return query.find_exact_run(store, _pairs(args.param), args.campaign)
    detail = DetailLevel(args.detail.upper())
    handler = {
        "lineage": query.lineage,
        "ancestors": query.sources,
        "sources": query.sources,
        "descendants": query.products,
        "products": query.products,
    }[op]
    return handler(store, args.entity, detail)


def cmd_query(args) -> int:
    store = _open_store(args)
    result = _run_query(args, store)
    if isinstance(result, LineageGraph):
        _emit(args, result.to_dict(), _lineage_rows(result))
    elif isinstance(result, query.QueryResult):
        _emit(args, result.to_dict(), result.matches)
    else:
        _emit(args, {"matches": result, "total": len(result)}, list(result))
    return EXIT_OK


def _campaign_norm(store, campaign, schema, extra):
    sigs = [s for _, s in signature.campaign_signatures(store, campaign, schema)]
    return signature.build_norm_context([*sigs, *extra])


def cmd_sim(args) -> int:
    store = _open_store(args)
    metric = signature.SimilarityMetric.parse(getattr(args, "metric", "euclidean"))
    if args.op == "signature":
        sig = signature.extract_signature(store, args.instance, args.schema, persist=False)
        payload = {"instance": args.instance, "schema": sig.schema, "features": dict(sig.features)}
        _emit(args, payload, [f"{n}\t{v!r}" for n, v in sig.features])
    elif args.op == "pair":
        a = signature.extract_signature(store, args.a, args.schema, persist=False)
        b = signature.extract_signature(store, args.b, args.schema, persist=False)
        norm = None
        if metric.is_distance and args.campaign:
            norm = _campaign_norm(store, args.campaign, args.schema, [a, b])
        value = signature.similarity(a, b, metric, norm)
        _emit(args, {"a": args.a, "b": args.b, "metric": metric.value, "similarity": value},
              [f"{args.a}\t{args.b}\t{value!r}"])
    elif args.op == "matrix":
        ids = args.instances or (query.campaign_instances(store, args.campaign) if args.campaign else [])
        if not ids:
            raise UsageError("sim matrix needs --campaign or --instances")
        matrix = signature.similarity_matrix(store, ids, metric, args.schema)
        tsv = matrix.to_tsv()
        try:
            if args.out:
                Path(args.out).write_text(tsv, encoding="utf-8")
            if args.heatmap:
                Path(args.heatmap).write_bytes(matrix.heatmap_pgm(args.cell))
        except OSError as exc:
            raise IoError(str(exc)) from exc
        if args.format == "json":
            print(json.dumps(matrix.to_dict(), indent=2))
        elif not args.out:
            sys.stdout.write(tsv)
    elif args.op == "nearest":
        if args.instance:
            target = signature.extract_signature(store, args.instance, args.schema, persist=False)
        else:
            values = {k: signature.parse_feature(k, v) for k, v in _pairs(args.param).items()}
            target = signature.Signature.from_mapping(args.schema, values)
        hits = signature.find_similar(store, target, args.campaign, metric, args.top_k)
        _emit(args, [{"instance": i, "similarity": s} for i, s in hits], [f"{i}\t{s!r}" for i, s in hits])
    return EXIT_OK


def cmd_distill(args) -> int:
    store = _open_store(args)
    distill.distill_campaign(store, args.campaign)
    store.save(args.store)
    if args.format == "json":
        status = store.get_node(args.campaign + distill.STATUS_SUFFIX)
        print(json.dumps(status.properties, indent=2, sort_keys=True))
    else:
        sys.stdout.write(distill.status_report(store, args.campaign))
    return EXIT_OK


def cmd_gen(args) -> int:
    spec = ingest.CampaignSpec.load(args.spec)
    paths = grayscott.generate_campaign(spec, args.out, jobs=args.jobs)
    for p in paths:
        print(p)
    if args.store:
        store = _open_store(args, create=True)
        report = ingest.ingest_directory(store, args.out, "post", state=ingest.IngestState.for_store(args.store))
        store.save(args.store)
        print(f"ingested\t{report.runs}\terrors\t{report.error_count}")
    return EXIT_OK


def cmd_dump(args) -> int:
    sys.stdout.write(_open_store(args).canonical())
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    default_store = os.environ.get(STORE_ENV)
    parser = _Parser(prog="ckn", description="Campaign knowledge network")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, fmt=True, suppress=False):
        default = argparse.SUPPRESS if suppress else None
        p.add_argument("--store", default=argparse.SUPPRESS if suppress else default_store,
                       help=f"snapshot path (default ${STORE_ENV})")
        if fmt:
            p.add_argument("--format", choices=["tsv", "json"], default=default or "tsv")

    p = sub.add_parser("ingest", help="ingest specs and run logs from a directory")
    common(p)
    p.add_argument("--dir", required=True)
    p.add_argument("--mode", choices=["post", "poll"], default="post")
    p.add_argument("--interval-ms", type=int, default=1000)
    p.add_argument("--max-passes", type=int, default=None, help="stop polling after N passes")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", help="Hoarde queries")
    common(p)
    p.add_argument("--file", help="Komadu-style XML request document")
    p.set_defaults(func=cmd_query, op=None)
    qsub = p.add_subparsers(dest="op", parser_class=_Parser)
    q = qsub.add_parser("find")
    common(q, suppress=True)
    q.add_argument("--name")
    q.add_argument("--attr", action="append", metavar="KEY=VALUE")
    q.add_argument("--kind", action="append", choices=[k.value for k in NodeKind])
    for op in ("lineage", "ancestors", "descendants", "sources", "products"):
        q = qsub.add_parser(op)
        common(q, suppress=True)
        q.add_argument("--entity", required=True)
        q.add_argument("--detail", default="FINE", choices=["FINE", "COARSE", "fine", "coarse"])
    q = qsub.add_parser("exact")
    common(q, suppress=True)
    q.add_argument("--campaign", required=True)
    q.add_argument("--param", action="append", metavar="KEY=VALUE")

    p = sub.add_parser("sim", help="signatures and similarity")
    ssub = p.add_subparsers(dest="op", required=True, parser_class=_Parser)
    metrics = ["cosine", "euclidean", "manhattan"]
    s = ssub.add_parser("signature")
    common(s)
    s.add_argument("--instance", required=True)
    s = ssub.add_parser("pair")
    common(s)
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--metric", choices=metrics, default="euclidean")
    s.add_argument("--campaign", help="normalize over this campaign instead of the pair")
    s = ssub.add_parser("matrix")
    common(s)
    s.add_argument("--campaign")
    s.add_argument("--instances", nargs="+")
    s.add_argument("--metric", choices=metrics, default="euclidean")
    s.add_argument("--out")
    s.add_argument("--heatmap", help="write a PGM heatmap (darker = less similar)")
    s.add_argument("--cell", type=int, default=16, help="heatmap pixels per matrix cell")
    s = ssub.add_parser("nearest")
    common(s)
    s.add_argument("--campaign", required=True)
    s.add_argument("--instance")
    s.add_argument("--param", action="append", metavar="KEY=VALUE")
    s.add_argument("--metric", choices=metrics, default="euclidean")
    s.add_argument("--top-k", type=int, default=5)
    for s in ssub.choices.values():
        s.add_argument("--schema", default=signature.GRAY_SCOTT)
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("distill", help="distill campaign status")
    common(p)
    p.add_argument("campaign")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("gen", help="generate a Gray-Scott campaign")
    common(p, fmt=False)
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("dump", help="print the canonical snapshot")
    common(p, fmt=False)
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CKNError as exc:
        print(f"ckn: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USER
    except Exception as exc:  # noqa: BLE001
        print(f"ckn: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
