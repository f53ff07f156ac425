"""Operator entry point: index building, single-candidate identification,
dataset sampling/auditing, and serving the HTTP API.

Exit codes: 0 success, 1 fatal input error, 2 provider unavailable,
3 internal error. The audit report path writes the delimited table plus a
JSON twin and a rendered figure alongside it.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import audit as audit_mod
from . import protocol
from .config import Config, load_config
from .decompose import CandidateMeme
from .errors import InputError, MemetectError, ProviderUnavailableError
from .imaging import RasterImage
from .index import LocalIndex, build_index, load_index, read_manifest, save_index
from .search import ExternalSearchClient, LocalSearchProvider

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_PROVIDER = 2
EXIT_INTERNAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memetect", description=__doc__)
    parser.add_argument("--config", help="config file (JSON or YAML); env MEMETECT_CONFIG")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="build the local search index from a manifest")
    p_index.add_argument("manifest")
    p_index.add_argument("--out", required=True, help="index file to write")
    p_index.add_argument("--ocr-backend", dest="ocr_backend")

    p_id = sub.add_parser("identify", help="run the identification protocol on one image")
    p_id.add_argument("image")
    p_id.add_argument("--index", help="local index file")
    p_id.add_argument("--provider", choices=["local", "external"], default="local")
    p_id.add_argument("--endpoint", help="external search endpoint (with --provider external)")
    p_id.add_argument("--n", type=int, help="results reviewed per query")
    p_id.add_argument("--json", action="store_true", help="emit verdict+trace as JSON")
    p_id.add_argument("--trace-out", help="write the trace JSON to this path")

    p_sample = sub.add_parser("sample", help="draw a reproducible sample from a manifest")
    p_sample.add_argument("manifest")
    p_sample.add_argument("--k", type=int, default=200)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--dataset", help="dataset name (default: manifest filename)")
    p_sample.add_argument("--out", help="write the sample set JSON here (default stdout)")

    p_audit = sub.add_parser("audit", help="sample, identify and aggregate one dataset")
    p_audit.add_argument("manifest", nargs="?")
    p_audit.add_argument("--k", type=int, default=200)
    p_audit.add_argument("--seed", type=int, default=0)
    p_audit.add_argument("--index", help="local index file")
    p_audit.add_argument("--dataset", help="dataset name (default: manifest filename)")
    p_audit.add_argument("--jobs", type=int, default=4)
    p_audit.add_argument("--n", type=int, help="results reviewed per query")
    p_audit.add_argument("--out", required=True, help="CSV path; JSON and figure land beside it")
    p_audit.add_argument(
        "--from-verdicts",
        help="skip the protocol: aggregate a verdict/counts fixture file instead",
    )

    p_serve = sub.add_parser("serve", help="serve the HTTP API")
    p_serve.add_argument("--addr", default="127.0.0.1:8742")
    p_serve.add_argument("--store", required=True, help="storage directory")
    p_serve.add_argument("--index", help="local index file")

    return parser


def _config_from(args: argparse.Namespace) -> Config:
    overrides = {}
    if getattr(args, "n", None) is not None:
        overrides["search.n"] = args.n
    if getattr(args, "seed", None) is not None:
        overrides["audit.seed"] = args.seed
    if getattr(args, "k", None) is not None:
        overrides["audit.k"] = args.k
    if getattr(args, "ocr_backend", None):
        overrides["ocr.backend"] = args.ocr_backend
    if getattr(args, "endpoint", None):
        overrides["search.endpoint"] = args.endpoint
    cfg = load_config(args.config, overrides=overrides)
    return cfg


def _provider_for(args: argparse.Namespace, cfg: Config):
    if getattr(args, "provider", "local") == "external":
        return ExternalSearchClient(
            cfg.search_endpoint,
            api_key=cfg.search_api_key,
            cache_dir=cfg.search_cache_dir or None,
            rate_limit=cfg.search_rate_limit,
        )
    if getattr(args, "index", None):
        return LocalSearchProvider(load_index(args.index), cfg)
    return LocalSearchProvider(LocalIndex([]), cfg)


def cmd_index(args: argparse.Namespace, cfg: Config) -> int:
    items = read_manifest(args.manifest)
    index, report = build_index(items, ocr_backend=cfg.ocr_backend, n_features=cfg.search_orb_features)
    try:
        save_index(index, args.out)
    except OSError as exc:
        print(f"error: cannot write index: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"indexed {report.built} items -> {args.out} ({len(report.warnings)} warnings)")
    for warning in report.warnings:
        print(f"  warning: {warning}", file=sys.stderr)
    return EXIT_OK


def cmd_identify(args: argparse.Namespace, cfg: Config) -> int:
    if not os.path.exists(args.image):
        print(f"error: no such file: {args.image}", file=sys.stderr)
        return EXIT_INPUT
    image = RasterImage.from_file(args.image)
    candidate = CandidateMeme.prepare(image, cfg.ocr_backend)
    provider = _provider_for(args, cfg)
    verdict, trace = protocol.run(candidate, provider, config=cfg)
    trace_path = args.trace_out or (os.path.splitext(args.image)[0] + ".trace.json")
    with open(trace_path, "w", encoding="utf-8") as fh:
        fh.write(protocol.trace_to_json_str(trace))
    if args.json:
        print(
            json.dumps(
                {"schema_version": 1, "verdict": verdict.to_json(), "trace_path": trace_path},
                indent=2,
            )
        )
    else:
        flag = " (viral)" if verdict.viral_flag else ""
        print(f"{verdict.outcome}{flag}")
        print(f"trace: {trace_path}")
    return EXIT_OK


def cmd_sample(args: argparse.Namespace, cfg: Config) -> int:
    manifest = audit_mod.DatasetManifest.load(args.manifest, args.dataset)
    result = audit_mod.sample(manifest, cfg.audit_k, cfg.audit_seed)
    doc = json.dumps(result.to_json(), indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(doc + "\n")
        print(f"wrote {len(result.selections)} selections -> {args.out}")
    else:
        print(doc)
    if result.truncated:
        print("warning: k exceeded the corpus; whole corpus returned", file=sys.stderr)
    return EXIT_OK


def _identify_one(path: str, cfg: Config, provider) -> protocol.Verdict:
    image = RasterImage.from_file(path)
    candidate = CandidateMeme.prepare(image, cfg.ocr_backend)
    verdict, _ = protocol.run(candidate, provider, config=cfg)
    return verdict


def _rows_from_fixture(path: str) -> list[audit_mod.ReportRow]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    rows = []
    for entry in doc.get("rows", []):
        if "counts" in entry:
            rows.append(
                audit_mod.row_from_counts(
                    entry["dataset"],
                    entry["counts"],
                    printed_meme_total=entry.get("printed_meme_total"),
                    printed_nonmeme_total=entry.get("printed_nonmeme_total"),
                    sample_size=entry.get("sample_size"),
                )
            )
        elif "outcomes" in entry:
            verdicts = [protocol.Verdict("fixture", o) for o in entry["outcomes"]]
            rows.append(audit_mod.aggregate(verdicts, len(verdicts), entry["dataset"]))
        else:
            raise InputError(f"fixture row for {entry.get('dataset')} has no counts/outcomes")
    if not rows:
        raise InputError("verdict fixture contains no rows")
    return rows


def cmd_audit(args: argparse.Namespace, cfg: Config) -> int:
    if args.from_verdicts:
        rows = _rows_from_fixture(args.from_verdicts)
        report = audit_mod.AuditReport(rows)
    else:
        if not args.manifest:
            print("error: audit needs a manifest or --from-verdicts", file=sys.stderr)
            return EXIT_INPUT
        manifest = audit_mod.DatasetManifest.load(args.manifest, args.dataset)
        result = audit_mod.sample(manifest, cfg.audit_k, cfg.audit_seed)
        if result.truncated:
            print("warning: k exceeded the corpus; auditing every file", file=sys.stderr)
        provider = _provider_for(args, cfg)
        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            verdicts = list(
                pool.map(lambda item: _identify_one(item.path, cfg, provider), result.selections)
            )
        row = audit_mod.aggregate(verdicts, len(result.selections), manifest.name)
        report = audit_mod.AuditReport([row])
    base, _ = os.path.splitext(args.out)
    report.write_csv(args.out)
    report.write_json(base + ".json")
    report.render_figure(base + ".png")
    print(f"report: {args.out} (+ {base}.json, {base}.png)")
    for row in report.rows:
        print(
            f"  {row.dataset}: meme {row.meme_total}/{row.sample_size} "
            f"({row.meme_percentage}%), nonmeme {row.nonmeme_total} ({row.nonmeme_percentage}%)"
        )
        for flag in row.flags:
            print(f"    flag: {flag}")
    print(f"  average nonmeme percentage: {report.average_nonmeme_percentage}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace, cfg: Config) -> int:
    import uvicorn

    from .service import create_app

    try:
        host, port_text = args.addr.rsplit(":", 1)
        port = int(port_text)
        if not host or not 0 < port < 65536:
            raise ValueError(args.addr)
    except ValueError:
        print(f"error: bad --addr {args.addr!r} (want host:port)", file=sys.stderr)
        return EXIT_INPUT
    app = create_app(args.store, args.index, cfg)
    print(f"config: {json.dumps(cfg.snapshot(), sort_keys=True)}", file=sys.stderr)
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from(args)
        print(f"config: {json.dumps(cfg.snapshot(), sort_keys=True)}", file=sys.stderr)
        handler = {
            "index": cmd_index,
            "identify": cmd_identify,
            "sample": cmd_sample,
            "audit": cmd_audit,
            "serve": cmd_serve,
        }[args.command]
        return handler(args, cfg)
    except ProviderUnavailableError as exc:
        print(f"error: provider unavailable: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except protocol.ProtocolAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MemetectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    raise SystemExit(main())
