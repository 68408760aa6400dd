"""Index builders: runtime image, declared supply chain, dynamic traces.

Every indexer hashes classes through the same canonical pipeline (for
ordinary compiled classes canonicalization is a no-op, so this costs
nothing and keeps one digest definition everywhere) and emits a ``Bomi``
part that serializes byte-identically across reruns on the same inputs.

Registry access is fail-closed: artifact URLs are constructed, never taken
from the SBOM, must fall under a trusted prefix, redirects are refused, and
declared-hash mismatches abort the run.
"""

from __future__ import annotations

import io
import json
import logging
import re
import urllib.error
import urllib.request
import zipfile
from dataclasses import dataclass
from hashlib import new as new_hash
from pathlib import Path
from urllib.parse import urlsplit

from .bomi import Bomi, BomiRecord, Source
from .canonical import CanonicalPolicy, DEFAULT_POLICY, digest_classfile
from .classfile import ClassParseError, parse_class
from .wire import TRACE_MAGIC, TraceCorrupt, read_trace

__all__ = (
    "SbomComponent",
    "RegistryConfig",
    "NoRuntimeImage",
    "ArchiveCorrupt",
    "NotJson",
    "NoComponents",
    "UntrustedRegistry",
    "HashMismatch",
    "FetchError",
    "ZipCorrupt",
    "TraceCorrupt",
    "index_environment",
    "parse_sbom",
    "resolve_artifact_url",
    "fetch_artifact",
    "index_jar",
    "index_sbom",
    "index_dynamic",
)

logger = logging.getLogger(__name__)

_JMOD_MAGIC = b"JM"
_MANIFEST_NAME = "manifest.json"

_FETCH_CHUNK = 64 * 1024
_FETCH_TIMEOUT = 30.0

# hash algorithm spellings seen in SBOMs, mapped to hashlib names
_HASH_ALGS = {
    "md5": "md5",
    "sha1": "sha1",
    "sha256": "sha256",
    "sha384": "sha384",
    "sha512": "sha512",
}

_PURL_MAVEN_RE = re.compile(r"pkg:maven/([^/@?#]+)/([^/@?#]+)@([^?#]+)")
_GROUP_RE = re.compile(r"[A-Za-z0-9_-]+(?:\.[A-Za-z0-9_-]+)*")
_SEGMENT_RE = re.compile(r"[A-Za-z0-9._-]+")


def _safe_segment(text: str) -> bool:
    # becomes one URL path segment; the charset plus the dot-segment check
    # make traversal out of the registry prefix impossible
    return bool(_SEGMENT_RE.fullmatch(text)) and text not in (".", "..")

_LOOPBACK_HOSTS = frozenset(("localhost", "127.0.0.1", "::1"))


class NoRuntimeImage(ValueError):
    def __init__(self, root):
        super().__init__(f"no jmods/ or modules/ under {root}")


class ArchiveCorrupt(ValueError):
    def __init__(self, path, detail: str):
        self.path = path
        super().__init__(f"{path}: {detail}")


class NotJson(ValueError):
    pass


class NoComponents(ValueError):
    pass


class UntrustedRegistry(ValueError):
    def __init__(self, url: str, detail: str = "outside trusted prefixes"):
        self.url = url
        super().__init__(f"refusing untrusted registry URL {url!r}: {detail}")


class HashMismatch(ValueError):
    def __init__(self, url: str, alg: str, expected: str, actual: str):
        self.url = url
        self.alg = alg
        super().__init__(
            f"declared {alg} hash mismatch for {url}: expected {expected}, got {actual}"
        )


class FetchError(OSError):
    def __init__(self, url: str, cause):
        self.url = url
        super().__init__(f"fetch failed for {url}: {cause}")


class ZipCorrupt(ValueError):
    pass


@dataclass(frozen=True)
class SbomComponent:
    group: str
    artifact: str
    version: str
    declared_hashes: tuple[tuple[str, str], ...] = ()

    @property
    def coordinates(self) -> str:
        return f"{self.group}:{self.artifact}:{self.version}"


def _prefix_ok(prefix: str) -> bool:
    parts = urlsplit(prefix)
    if parts.scheme in ("https", "file"):
        return True
    # plain http is tolerated only toward loopback, for interposed test
    # registries; anything else stays https-or-file
    return parts.scheme == "http" and parts.hostname in _LOOPBACK_HOSTS


@dataclass(frozen=True)
class RegistryConfig:
    trusted_url_prefixes: tuple[str, ...] = ()
    local_mirror_dir: str | None = None
    offline: bool = False

    def __post_init__(self):
        for prefix in self.trusted_url_prefixes:
            if not _prefix_ok(prefix):
                raise UntrustedRegistry(prefix, "prefix must be https, file, or loopback http")


# --- runtime image ----------------------------------------------------------

def _add_class(bomi: Bomi, name: str, data: bytes, source: Source, origin: str | None,
               policy: CanonicalPolicy, skipped: list[str], member: str) -> None:
    try:
        cf = parse_class(data)
    except ClassParseError as exc:
        skipped.append(f"{member}: {exc}")
        return
    record = BomiRecord(
        checksum=digest_classfile(cf, policy),
        source=source,
        classfile_version=cf.version_string,
        origin=origin,
    )
    bomi.add(name, record)


def _index_zip(zf: zipfile.ZipFile, bomi: Bomi, source: Source, origin: str | None,
               policy: CanonicalPolicy, skipped: list[str], class_prefix: str = "",
               multi_release: bool = False) -> None:
    for member in sorted(info.filename for info in zf.infolist()):
        if not member.endswith(".class"):
            continue
        name = member[: -len(".class")]
        if class_prefix:
            if not name.startswith(class_prefix):
                continue
            name = name[len(class_prefix):]
        elif name.startswith("META-INF/"):
            # versioned members are indexed under the unversioned name, so a
            # multi-release JAR naturally yields several records per class
            parts = name.split("/")
            if multi_release and len(parts) >= 4 and parts[1] == "versions" and parts[2].isdigit():
                name = "/".join(parts[3:])
            else:
                continue
        if not name:
            continue
        try:
            data = zf.read(member)
        except Exception as exc:  # zip-level rot on one member
            skipped.append(f"{member}: {exc}")
            continue
        _add_class(bomi, name, data, source, origin, policy, skipped, member)


def index_environment(runtime_root: str | Path,
                      policy: CanonicalPolicy = DEFAULT_POLICY) -> tuple[Bomi, list[str]]:
    """Index every class of a runtime image: either ``jmods/*.jmod``
    archives or an exploded ``modules/<module>/**.class`` tree.  module-info
    entries are included; name collisions across modules simply become
    additional records."""
    root = Path(runtime_root)
    bomi = Bomi()
    skipped: list[str] = []
    jmods = sorted((root / "jmods").glob("*.jmod"))
    if jmods:
        for jmod in jmods:
            with open(jmod, "rb") as fp:
                if fp.read(2) != _JMOD_MAGIC:
                    raise ArchiveCorrupt(jmod, "missing jmod magic")
            try:
                with zipfile.ZipFile(jmod) as zf:
                    _index_zip(zf, bomi, Source.ENVIRONMENT, jmod.stem, policy,
                               skipped, class_prefix="classes/")
            except zipfile.BadZipFile as exc:
                raise ArchiveCorrupt(jmod, str(exc)) from None
        return bomi, skipped
    modules = root / "modules"
    if modules.is_dir():
        for module_dir in sorted(p for p in modules.iterdir() if p.is_dir()):
            for class_path in sorted(module_dir.rglob("*.class")):
                name = class_path.relative_to(module_dir).as_posix()[: -len(".class")]
                _add_class(bomi, name, class_path.read_bytes(), Source.ENVIRONMENT,
                           module_dir.name, policy, skipped, str(class_path))
        return bomi, skipped
    raise NoRuntimeImage(root)


# --- supply chain -----------------------------------------------------------

def _parse_purl(purl: str) -> SbomComponent | None:
    m = _PURL_MAVEN_RE.fullmatch(purl)
    if not m:
        return None
    group, artifact, version = m.groups()
    if not _GROUP_RE.fullmatch(group):
        return None
    if not (_safe_segment(artifact) and _safe_segment(version)):
        return None
    return SbomComponent(group, artifact, version)


def _component_hashes(entry: dict) -> tuple[tuple[str, str], ...]:
    out = []
    for h in entry.get("hashes", ()):
        if not isinstance(h, dict):
            continue
        alg = str(h.get("alg", "")).replace("-", "").lower()
        content = str(h.get("content", "")).lower()
        if alg in _HASH_ALGS and re.fullmatch(r"[0-9a-f]+", content):
            out.append((_HASH_ALGS[alg], content))
    return tuple(out)


def parse_sbom(text: str) -> tuple[list[SbomComponent], list[str]]:
    """Extract maven components from a CycloneDX JSON document.  Non-maven
    and malformed purls are skipped with a warning, never fetched."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NotJson(f"SBOM is not JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise NotJson("SBOM top level is not an object")
    entries = doc.get("components")
    if not isinstance(entries, list) or not entries:
        raise NoComponents("SBOM declares no components")
    components: list[SbomComponent] = []
    skipped: list[str] = []
    for entry in entries:
        purl = entry.get("purl") if isinstance(entry, dict) else None
        if not isinstance(purl, str):
            skipped.append(f"component without purl: {entry!r:.80}")
            logger.warning("skipping component without purl")
            continue
        component = _parse_purl(purl)
        if component is None:
            skipped.append(f"unsupported or malformed purl: {purl}")
            logger.warning("skipping unsupported purl %s", purl)
            continue
        components.append(
            SbomComponent(component.group, component.artifact, component.version,
                          _component_hashes(entry))
        )
    return components, skipped


def _is_trusted(url: str, config: RegistryConfig) -> bool:
    for prefix in config.trusted_url_prefixes:
        if url.startswith(prefix.rstrip("/") + "/"):
            return True
    if config.offline and config.local_mirror_dir:
        mirror = Path(config.local_mirror_dir).resolve().as_uri()
        if url.startswith(mirror + "/"):
            return True
    return False


def resolve_artifact_url(component: SbomComponent, config: RegistryConfig) -> str:
    path = "{g}/{a}/{v}/{a}-{v}.jar".format(
        g=component.group.replace(".", "/"), a=component.artifact, v=component.version
    )
    if config.offline:
        if not config.local_mirror_dir:
            raise UntrustedRegistry(path, "offline mode without a local mirror")
        base = Path(config.local_mirror_dir).resolve().as_uri()
    else:
        if not config.trusted_url_prefixes:
            raise UntrustedRegistry(path, "no trusted registry prefixes configured")
        base = config.trusted_url_prefixes[0].rstrip("/")
    url = f"{base}/{path}"
    if not _is_trusted(url, config):
        raise UntrustedRegistry(url)
    return url


class _RefuseRedirect(urllib.request.HTTPRedirectHandler):
    # a trusted registry answering with a redirect could point anywhere;
    # fail closed instead of following
    def redirect_request(self, req, fp, code, msg, headers, newurl):
        return None


_OPENER = urllib.request.build_opener(_RefuseRedirect)


def _transient(exc: Exception) -> bool:
    if isinstance(exc, urllib.error.HTTPError):
        return exc.code >= 500
    if isinstance(exc, urllib.error.URLError):
        return isinstance(exc.reason, (ConnectionError, TimeoutError))
    return isinstance(exc, (ConnectionError, TimeoutError))


def fetch_artifact(url: str, config: RegistryConfig,
                   declared_hashes: tuple[tuple[str, str], ...] = ()) -> bytes:
    """Stream one artifact from a trusted URL; one retry on a transient
    failure, declared hashes verified before the bytes are used."""
    if not _is_trusted(url, config):
        raise UntrustedRegistry(url)
    last: Exception | None = None
    for attempt in (1, 2):
        try:
            with _OPENER.open(url, timeout=_FETCH_TIMEOUT) as resp:
                buf = bytearray()
                while True:
                    chunk = resp.read(_FETCH_CHUNK)
                    if not chunk:
                        break
                    buf += chunk
            data = bytes(buf)
            break
        except Exception as exc:
            last = exc
            if attempt == 1 and _transient(exc):
                logger.warning("transient fetch failure for %s, retrying once: %s", url, exc)
                continue
            raise FetchError(url, exc) from exc
    else:  # pragma: no cover - loop always breaks or raises
        raise FetchError(url, last)
    for alg, expected in declared_hashes:
        actual = new_hash(alg, data).hexdigest()
        if actual != expected:
            raise HashMismatch(url, alg, expected, actual)
    return data


def index_jar(data: bytes, origin: str | None = None,
              policy: CanonicalPolicy = DEFAULT_POLICY) -> tuple[Bomi, list[str]]:
    """Index every ``*.class`` member of a JAR, multi-release members under
    their unversioned names.  Per-class parse failures skip that class and
    land in the report."""
    bomi = Bomi()
    skipped: list[str] = []
    try:
        with zipfile.ZipFile(io.BytesIO(data)) as zf:
            _index_zip(zf, bomi, Source.SUPPLY_CHAIN, origin, policy, skipped,
                       multi_release=True)
    except zipfile.BadZipFile as exc:
        raise ZipCorrupt(str(exc)) from None
    return bomi, skipped


def index_sbom(sbom_text: str, config: RegistryConfig,
               policy: CanonicalPolicy = DEFAULT_POLICY) -> tuple[Bomi, list[str]]:
    """Fetch and index every maven component an SBOM declares.  A declared
    hash that fails verification is treated as supply-chain compromise and
    aborts the whole run."""
    components, skipped = parse_sbom(sbom_text)
    bomi = Bomi()
    for component in components:
        url = resolve_artifact_url(component, config)
        data = fetch_artifact(url, config, component.declared_hashes)
        part, jar_skipped = index_jar(data, component.coordinates, policy)
        skipped.extend(f"{component.coordinates}/{s}" for s in jar_skipped)
        for name, records in part:
            for record in records:
                bomi.add(name, record)
    return bomi, skipped


# --- dynamic ---------------------------------------------------------------

def _dynamic_events(source: Path):
    if source.is_dir():
        manifest_path = source / _MANIFEST_NAME
        if not manifest_path.is_file():
            raise TraceCorrupt(0, f"dump directory without {_MANIFEST_NAME}")
        try:
            manifest = json.loads(manifest_path.read_text("utf-8"))
            entries = manifest["entries"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise TraceCorrupt(0, f"bad {_MANIFEST_NAME}: {exc}") from None
        if not isinstance(entries, list) or not all(
            isinstance(e, dict)
            and isinstance(e.get("name"), str)
            and isinstance(e.get("file"), str)
            for e in entries
        ):
            raise TraceCorrupt(0, f"bad {_MANIFEST_NAME}: malformed entries")
        for seq, entry in enumerate(entries, start=1):
            yield seq, entry["name"], (source / entry["file"]).read_bytes()
        return
    with open(source, "rb") as fp:
        head = fp.read(len(TRACE_MAGIC))
        if head != TRACE_MAGIC:
            raise TraceCorrupt(0, "not a trace file (missing magic)")
        fp.seek(0)
        yield from read_trace(fp)


def index_dynamic(trace_source: str | Path,
                  policy: CanonicalPolicy = DEFAULT_POLICY,
                  dedup_against: tuple[Bomi, ...] = ()) -> tuple[Bomi, list[str]]:
    """Index recorded class-load events: a ``.bomitrc`` trace file or a dump
    directory with a manifest.  (name, checksum) pairs already present in
    ``dedup_against`` parts are dropped."""
    source = Path(trace_source)
    bomi = Bomi()
    skipped: list[str] = []
    known = set()
    for part in dedup_against:
        for name, records in part:
            for record in records:
                known.add((name, record.checksum.value))
    for seq, name, data in _dynamic_events(source):
        try:
            cf = parse_class(data)
        except ClassParseError as exc:
            skipped.append(f"event {seq} ({name}): {exc}")
            continue
        checksum = digest_classfile(cf, policy)
        if (name, checksum.value) in known:
            continue
        bomi.add(name, BomiRecord(
            checksum=checksum,
            source=Source.RUNTIME,
            classfile_version=cf.version_string,
            origin=f"{source.name}#{seq}",
        ))
    return bomi, skipped
