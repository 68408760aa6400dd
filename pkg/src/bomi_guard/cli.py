"""Command-line frontend.

stdout carries data (digests, summary lines); stderr carries diagnostics,
denial echoes, and progress.  Exit statuses: 0 clean, 3 violation found,
2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .bomi import Bomi, VerdictKind, load_bomi, merge, paper_format_lines, write_bomi
from .canonical import CanonicalPolicy, OrderMode, canonicalize, digest_classfile
from .classfile import parse_class, serialize_class
from .indexer import (
    RegistryConfig,
    index_dynamic,
    index_environment,
    index_sbom,
)
from .synthkit import ClassSpec, FieldSpec, MethodSpec, emit
from .watchdog import LoadEvent, WatchdogServer, run_trace
from .wire import read_trace

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VIOLATION = 3

CONFIG_ENV_VAR = "BOMI_GUARD_CONFIG"

_DENIAL_TAG = {
    VerdictKind.NOT_ALLOWLISTED: "[NOT ALLOWLISTED]",
    VerdictKind.TAMPERED: "[TAMPERED]",
}


def _load_config(args) -> dict:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return {}
    with open(path, "rb") as fp:
        return tomllib.load(fp)


def _policy_from(args, config: dict) -> CanonicalPolicy:
    section = config.get("canonical", {})
    kwargs = {}
    fixed = getattr(args, "fixed_name", None) or section.get("fixed_name")
    if fixed:
        kwargs["fixed_name"] = fixed
    patterns = getattr(args, "name_pattern", None) or section.get("generated_name_patterns")
    if patterns:
        kwargs["generated_name_patterns"] = tuple(patterns)
    if getattr(args, "uuid_segments", False) or section.get("normalize_uuid_segments"):
        kwargs["normalize_uuid_segments"] = True
    mode = getattr(args, "order_mode", None) or section.get("order_mode")
    if mode:
        kwargs["order_mode"] = OrderMode(mode)
    return CanonicalPolicy(**kwargs)


def _registry_from(args, config: dict) -> RegistryConfig:
    section = config.get("registry", {})
    prefixes = args.registry_prefix or section.get("trusted_url_prefixes") or ()
    mirror = args.mirror or section.get("local_mirror_dir")
    offline = args.offline or bool(section.get("offline", False))
    return RegistryConfig(tuple(prefixes), mirror, offline)


def _add_policy_flags(sp: argparse.ArgumentParser) -> None:
    g = sp.add_argument_group("canonicalization")
    g.add_argument("--config", metavar="TOML",
                   help=f"config file (also via ${CONFIG_ENV_VAR})")
    g.add_argument("--fixed-name", metavar="NAME",
                   help="replacement for generated class names (default: foo)")
    g.add_argument("--name-pattern", action="append", metavar="REGEX",
                   help="generated-name pattern; repeatable, replaces the defaults")
    g.add_argument("--uuid-segments", action="store_true",
                   help="also normalize 8-4-4-4-12 hex segments in names")
    g.add_argument("--order-mode", choices=[m.value for m in OrderMode],
                   help="chunk ordering before hashing (default: chunk_sort)")


def _write_part(bomi: Bomi, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        write_bomi(bomi, fp)


def _load_part(path: str) -> Bomi:
    with open(path, "r", encoding="utf-8") as fp:
        return load_bomi(fp)


def _echo_skipped(skipped: list[str]) -> None:
    for item in skipped:
        print(f"skipped: {item}", file=sys.stderr)


def _cmd_index_env(args) -> int:
    policy = _policy_from(args, _load_config(args))
    bomi, skipped = index_environment(args.runtime_root, policy)
    _echo_skipped(skipped)
    _write_part(bomi, args.output)
    print(f"indexed {len(bomi)} classes ({bomi.record_count()} records) "
          f"from {args.runtime_root}", file=sys.stderr)
    return EXIT_OK


def _cmd_index_sbom(args) -> int:
    config = _load_config(args)
    policy = _policy_from(args, config)
    registry = _registry_from(args, config)
    bomi, skipped = index_sbom(Path(args.sbom).read_text("utf-8"), registry, policy)
    _echo_skipped(skipped)
    _write_part(bomi, args.output)
    print(f"indexed {len(bomi)} classes ({bomi.record_count()} records) "
          f"from {args.sbom}", file=sys.stderr)
    return EXIT_OK


def _cmd_index_dynamic(args) -> int:
    policy = _policy_from(args, _load_config(args))
    against = tuple(_load_part(p) for p in args.dedup_against or ())
    bomi, skipped = index_dynamic(args.trace, policy, against)
    _echo_skipped(skipped)
    _write_part(bomi, args.output)
    print(f"indexed {len(bomi)} classes ({bomi.record_count()} records) "
          f"from {args.trace}", file=sys.stderr)
    return EXIT_OK


def _cmd_merge(args) -> int:
    merged = merge([_load_part(p) for p in args.parts])
    if args.paper_format:
        with open(args.output, "w", encoding="utf-8") as fp:
            for line in paper_format_lines(merged):
                fp.write(line + "\n")
    else:
        _write_part(merged, args.output)
    print(f"merged {len(args.parts)} parts: {len(merged)} classes "
          f"({merged.record_count()} records)", file=sys.stderr)
    return EXIT_OK


def _cmd_verify_trace(args) -> int:
    policy = _policy_from(args, _load_config(args))
    bomi = _load_part(args.bomi)
    mode = "audit" if args.audit else "enforce"

    def on_verdict(event: LoadEvent, verdict) -> None:
        tag = _DENIAL_TAG.get(verdict.kind)
        if tag:
            print(f"{tag}: {event.class_name}", file=sys.stderr)

    with open(args.trace, "rb") as fp:
        events = (LoadEvent(seq, name, data) for seq, name, data in read_trace(fp))
        report = run_trace(bomi, events, mode, policy, on_verdict)
    summary = (f"allowed={report.allowed} not_allowlisted={report.not_allowlisted} "
               f"tampered={report.tampered}")
    if report.stopped_at is not None:
        summary += f" stopped_at={report.stopped_at}"
    print(summary)
    return EXIT_VIOLATION if report.violation else EXIT_OK


def _cmd_watch(args) -> int:
    policy = _policy_from(args, _load_config(args))
    bomi = _load_part(args.bomi)
    host, _, port_text = args.listen.rpartition(":")
    try:
        port = int(port_text)
    except ValueError:
        raise ValueError(f"bad --listen endpoint {args.listen!r}") from None
    log_fp = open(args.incident_log, "a", encoding="utf-8") if args.incident_log else None
    server = WatchdogServer(
        bomi, host or "127.0.0.1", port,
        mode="audit" if args.audit else "enforce",
        policy=policy, incident_log=log_fp, webhook=args.webhook,
    )
    addr = server.address
    print(f"listening on {addr[0]}:{addr[1]}", file=sys.stderr, flush=True)

    def _sigterm(signum, frame):
        raise SystemExit(EXIT_VIOLATION if server.violations else EXIT_OK)

    signal.signal(signal.SIGTERM, _sigterm)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        if log_fp is not None:
            log_fp.close()
    return EXIT_VIOLATION if server.violations else EXIT_OK


def _cmd_canonicalize(args) -> int:
    policy = _policy_from(args, _load_config(args))
    cf = parse_class(Path(args.classfile).read_bytes())
    digest = digest_classfile(cf, policy)
    canon = canonicalize(cf, policy)
    name = cf.class_name().decode("utf-8", "replace")
    canon_name = canon.class_name().decode("utf-8", "replace")
    renamed = "" if canon_name == name else f" -> {canon_name}"
    print(f"{name}{renamed} (version {cf.version_string}, "
          f"{sum(1 for _ in cf.pool_entries())} pool entries, "
          f"{len(cf.methods)} methods)", file=sys.stderr)
    print(digest.value)
    if args.dump:
        Path(args.dump).write_bytes(serialize_class(canon))
        print(f"canonical form written to {args.dump}", file=sys.stderr)
    return EXIT_OK


def _cmd_synth(args) -> int:
    doc = json.loads(Path(args.spec).read_text("utf-8"))
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, raw in enumerate(doc["specs"]):
        spec = ClassSpec(
            name=raw["name"],
            super_name=raw.get("super_name", "java/lang/Object"),
            utf8_constants=tuple(raw.get("utf8_constants", ())),
            methods=tuple(
                MethodSpec(n, d, tuple(t))
                for n, d, t in raw.get("methods", [["<init>", "()V", ["return"]]])
            ),
            fields=tuple(FieldSpec(n, d) for n, d in raw.get("fields", [])),
            seed=int(raw.get("seed", 0)),
        )
        blob = emit(spec)
        file_name = f"{i:04d}.class"
        (out_dir / file_name).write_bytes(blob)
        entries.append({"file": file_name, "name": spec.name.replace("{n}", str(spec.seed % 100))})
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"entries": entries}, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(entries)} classfiles and {manifest}", file=sys.stderr)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bomi-guard",
        description="Allowlist index of loadable JVM classes, enforced at "
                    "load time by canonical checksums.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    sp = sub.add_parser("index-env", help="index a runtime image (jmods or exploded modules)")
    sp.add_argument("runtime_root", help="runtime image root containing jmods/ or modules/")
    sp.add_argument("-o", "--output", required=True, metavar="PART",
                    help="part file to write (.bomi.ndjson)")
    _add_policy_flags(sp)
    sp.set_defaults(func=_cmd_index_env)

    sp = sub.add_parser("index-sbom", help="fetch and index the components an SBOM declares")
    sp.add_argument("sbom", help="CycloneDX JSON document")
    sp.add_argument("-o", "--output", required=True, metavar="PART",
                    help="part file to write (.bomi.ndjson)")
    sp.add_argument("--registry-config", dest="config", metavar="TOML",
                    help="config file with a [registry] section (alias of --config)")
    sp.add_argument("--registry-prefix", action="append", metavar="URL",
                    help="trusted registry URL prefix; repeatable, overrides config")
    sp.add_argument("--mirror", metavar="DIR", help="local artifact mirror directory")
    sp.add_argument("--offline", action="store_true",
                    help="resolve artifacts from the local mirror only")
    _add_policy_flags(sp)
    sp.set_defaults(func=_cmd_index_sbom)

    sp = sub.add_parser("index-dynamic", help="index recorded class-load events")
    sp.add_argument("trace", help=".bomitrc trace file or dump directory with manifest.json")
    sp.add_argument("-o", "--output", required=True, metavar="PART",
                    help="part file to write (.bomi.ndjson)")
    sp.add_argument("--dedup-against", action="append", metavar="PART",
                    help="drop (name, checksum) pairs already present in this part; repeatable")
    _add_policy_flags(sp)
    sp.set_defaults(func=_cmd_index_dynamic)

    sp = sub.add_parser("merge", help="merge part files into one index")
    sp.add_argument("parts", nargs="+", metavar="PART")
    sp.add_argument("-o", "--output", required=True, metavar="OUT")
    sp.add_argument("--paper-format", action="store_true",
                    help="emit the name-keyed listing shape instead of NDJSON parts")
    sp.set_defaults(func=_cmd_merge)

    sp = sub.add_parser("verify-trace", help="replay a trace against an index")
    sp.add_argument("trace", help=".bomitrc trace file")
    sp.add_argument("--bomi", required=True, metavar="INDEX", help="index file to verify against")
    sp.add_argument("--audit", action="store_true",
                    help="scan the whole trace instead of stopping at the first violation")
    _add_policy_flags(sp)
    sp.set_defaults(func=_cmd_verify_trace)

    sp = sub.add_parser("watch", help="serve load-event verdicts over TCP")
    sp.add_argument("--bomi", required=True, metavar="INDEX", help="index file to verify against")
    sp.add_argument("--listen", default="127.0.0.1:0", metavar="HOST:PORT",
                    help="endpoint to bind (default 127.0.0.1:0, port printed on stderr)")
    sp.add_argument("--audit", action="store_true",
                    help="log violations but reply ALLOW (report-only mode)")
    sp.add_argument("--incident-log", metavar="PATH", help="append-only NDJSON verdict log")
    sp.add_argument("--webhook", metavar="URL", help="POST violations to this URL, best effort")
    _add_policy_flags(sp)
    sp.set_defaults(func=_cmd_watch)

    sp = sub.add_parser("canonicalize", help="print a classfile's canonical checksum")
    sp.add_argument("classfile", help="path to a .class file")
    sp.add_argument("--dump", metavar="PATH", help="also write the canonicalized classfile")
    _add_policy_flags(sp)
    sp.set_defaults(func=_cmd_canonicalize)

    sp = sub.add_parser("synth", help="emit deterministic synthetic classfiles")
    sp.add_argument("spec", help="JSON spec: {\"specs\": [{\"name\": ..., \"seed\": ...}, ...]}")
    sp.add_argument("-o", "--output", required=True, metavar="DIR",
                    help="output directory (classfiles plus manifest.json)")
    sp.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
