"""Bill-of-materials index of loadable classes.

A ``Bomi`` maps each binary class name to the set of checksums the class is
allowed to load with, each tagged by where it was indexed from.  Iteration
order is fixed (names ascending, records by checksum ascending) so that a
written index is byte-deterministic.

Persistence is NDJSON, one class per line::

    {"name":"java/lang/String","records":[{"alg":"SHA-256","checksum":"<64 hex>","source":"environment"}]}

An optional trailing ``{"_meta": ...}`` line is tolerated and ignored on
load.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Iterator

__all__ = (
    "ALGORITHM",
    "Source",
    "Checksum",
    "BomiRecord",
    "VerdictKind",
    "Verdict",
    "Bomi",
    "BomiLoadError",
    "MalformedLine",
    "DuplicateName",
    "load_bomi",
    "write_bomi",
    "merge",
    "paper_format_lines",
)

ALGORITHM = "SHA-256"

_HEX64_RE = re.compile(r"[0-9a-f]{64}")


class Source(str, Enum):
    ENVIRONMENT = "environment"
    SUPPLY_CHAIN = "supply_chain"
    RUNTIME = "runtime"


@dataclass(frozen=True, order=True)
class Checksum:
    value: str
    algorithm: str = ALGORITHM

    def __post_init__(self):
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unsupported algorithm {self.algorithm!r}")
        if not _HEX64_RE.fullmatch(self.value):
            raise ValueError("checksum must be 64 lowercase hex chars")


@dataclass(frozen=True)
class BomiRecord:
    checksum: Checksum
    source: Source
    classfile_version: str | None = None
    origin: str | None = None


class VerdictKind(Enum):
    ALLOWED = "ALLOWED"
    NOT_ALLOWLISTED = "NOT_ALLOWLISTED"
    TAMPERED = "TAMPERED"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    class_name: str
    actual_checksum: Checksum | None
    expected_checksums: tuple[Checksum, ...]
    detail: str | None = None

    def __post_init__(self):
        if self.kind is VerdictKind.ALLOWED:
            if self.actual_checksum not in self.expected_checksums:
                raise ValueError("ALLOWED verdict with checksum outside expected set")
        elif self.kind is VerdictKind.NOT_ALLOWLISTED:
            if self.expected_checksums:
                raise ValueError("NOT_ALLOWLISTED verdict carries expected checksums")
        else:
            if not self.expected_checksums:
                raise ValueError("TAMPERED verdict without expected checksums")
            if self.actual_checksum in self.expected_checksums:
                raise ValueError("TAMPERED verdict with checksum inside expected set")


class BomiLoadError(ValueError):
    pass


class MalformedLine(BomiLoadError):
    def __init__(self, line_no: int, detail: str = "malformed line"):
        self.line_no = line_no
        super().__init__(f"{detail} on line {line_no}")


class DuplicateName(BomiLoadError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"duplicate class name {name!r}")


class Bomi:
    """Mutable index; records per name are deduplicated by checksum value,
    the earliest-added record winning."""

    def __init__(self):
        self._by_name: dict[str, dict[str, BomiRecord]] = {}

    def __len__(self) -> int:
        return len(self._by_name)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __iter__(self) -> Iterator[tuple[str, tuple[BomiRecord, ...]]]:
        for name in sorted(self._by_name):
            yield name, self.records(name)

    def record_count(self) -> int:
        return sum(len(recs) for recs in self._by_name.values())

    def add(self, name: str, record: BomiRecord) -> bool:
        """Add a record; returns False when the (name, checksum) pair was
        already present (the existing record is kept)."""
        if not name:
            raise ValueError("empty class name")
        recs = self._by_name.setdefault(name, {})
        if record.checksum.value in recs:
            return False
        recs[record.checksum.value] = record
        return True

    def records(self, name: str) -> tuple[BomiRecord, ...]:
        recs = self._by_name.get(name, {})
        return tuple(recs[v] for v in sorted(recs))

    def lookup(self, name: str, checksum: Checksum) -> Verdict:
        recs = self._by_name.get(name)
        if recs is None:
            return Verdict(VerdictKind.NOT_ALLOWLISTED, name, checksum, ())
        expected = tuple(Checksum(v) for v in sorted(recs))
        if checksum.value in recs:
            return Verdict(VerdictKind.ALLOWED, name, checksum, expected)
        return Verdict(VerdictKind.TAMPERED, name, checksum, expected)


def merge(parts: Iterable[Bomi]) -> Bomi:
    """Set-union of the parts; for duplicate (name, checksum) pairs the
    record from the earliest part wins, so the operation is associative,
    idempotent, and commutative up to source tags."""
    merged = Bomi()
    for part in parts:
        for name, records in part:
            for record in records:
                merged.add(name, record)
    return merged


def _record_to_dict(record: BomiRecord) -> dict:
    out = {
        "alg": record.checksum.algorithm,
        "checksum": record.checksum.value,
        "source": record.source.value,
    }
    if record.classfile_version is not None:
        out["version"] = record.classfile_version
    if record.origin is not None:
        out["origin"] = record.origin
    return out


def write_bomi(bomi: Bomi, fp: IO[str]) -> None:
    for name, records in bomi:
        line = {"name": name, "records": [_record_to_dict(r) for r in records]}
        fp.write(json.dumps(line, separators=(",", ":"), ensure_ascii=False))
        fp.write("\n")


def _record_from_dict(obj: dict, line_no: int) -> BomiRecord:
    if not isinstance(obj, dict):
        raise MalformedLine(line_no, "record is not an object")
    try:
        checksum = Checksum(obj["checksum"], obj.get("alg", ALGORITHM))
        source = Source(obj["source"])
    except (KeyError, ValueError, TypeError) as exc:
        raise MalformedLine(line_no, f"bad record ({exc})") from None
    version = obj.get("version")
    origin = obj.get("origin")
    if version is not None and not isinstance(version, str):
        raise MalformedLine(line_no, "version is not a string")
    if origin is not None and not isinstance(origin, str):
        raise MalformedLine(line_no, "origin is not a string")
    return BomiRecord(checksum, source, version, origin)


def load_bomi(fp: IO[str]) -> Bomi:
    bomi = Bomi()
    for line_no, line in enumerate(fp, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise MalformedLine(line_no, "not JSON") from None
        if not isinstance(obj, dict):
            raise MalformedLine(line_no, "line is not an object")
        if "_meta" in obj:
            continue
        name = obj.get("name")
        records = obj.get("records")
        if not isinstance(name, str) or not name:
            raise MalformedLine(line_no, "missing or empty name")
        if not isinstance(records, list) or not records:
            raise MalformedLine(line_no, "missing records")
        if name in bomi:
            raise DuplicateName(name)
        for rec in records:
            bomi.add(name, _record_from_dict(rec, line_no))
    return bomi


def paper_format_lines(bomi: Bomi) -> Iterator[str]:
    """Listing-style export: one name-keyed object per line, checksum-only
    records (plus classfile version when known), for eyeball comparison."""
    for name, records in bomi:
        recs = []
        for r in records:
            entry: dict = {}
            if r.classfile_version is not None:
                entry["version"] = r.classfile_version
            entry["checksum"] = r.checksum.value
            recs.append(entry)
        yield json.dumps({name: recs}, separators=(",", ":"), ensure_ascii=False)
