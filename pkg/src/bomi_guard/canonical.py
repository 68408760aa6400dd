"""Canonical checksums for classfiles that tolerate benign nondeterminism.

Runtime-generated classes (dynamic proxies, reflection accessors, CGLIB-style
subclasses, script engines) differ between otherwise identical runs in three
harmless ways: the counter in the generated class name, the order of
constant-pool entries and members, and which pool slot a given constant
happens to get.  ``canonical_checksum`` erases exactly those three sources:

1. if the class's own name matches a generated-name pattern, every Utf8
   entry equal to the name becomes ``fixed_name`` and every descriptor
   occurrence ``L<name>;`` becomes ``L<fixed_name>;``;
2. each constant-pool entry is serialized to a chunk (tag byte plus payload)
   with constant-pool index operands zeroed — index assignment is
   run-dependent even when the referenced constants are identical, and the
   referenced constants are covered by their own chunks;
3. each method's code array becomes a chunk with every constant-pool index
   operand zeroed (the single-byte ldc index is widened to two bytes first);
4. chunks are ordered per ``order_mode`` and hashed with SHA-256.

Deliberately outside the digest: access flags, exception tables, and all
attributes other than Code, plus the pool/code index wiring erased by the
zeroing above.  A flag-only edit therefore does not change the digest; that
blind spot is the documented price of order invariance.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache

from .bomi import Checksum
from .classfile import (
    CONSTANT_DOUBLE,
    CONSTANT_FLOAT,
    CONSTANT_INTEGER,
    CONSTANT_LONG,
    CONSTANT_METHODHANDLE,
    CONSTANT_UTF8,
    ClassFile,
    CpEntry,
    parse_class,
    walk_opcodes,
)
from .opcodes import CP_INDEX_AT_0, LDC

__all__ = (
    "DEFAULT_GENERATED_NAME_PATTERNS",
    "OrderMode",
    "CanonicalPolicy",
    "DEFAULT_POLICY",
    "is_generated_name",
    "canonicalize",
    "digest_chunks",
    "digest_classfile",
    "canonical_checksum",
)

# Known generated-name shapes: JDK dynamic proxies (with or without a proxy
# package prefix), core-reflection accessors, CGLIB-style enhancer and
# fast-class subclasses, and Nashorn script classes.
DEFAULT_GENERATED_NAME_PATTERNS = (
    r"(?:com/sun/proxy/|jdk/proxy\d+/)?\$Proxy\d+",
    r"jdk/internal/reflect/Generated(?:Constructor|Method|SerializationConstructor)Accessor\d+",
    r".*\$\$(?:EnhancerBy|FastClassBy)\w+\$\$[0-9a-f]+",
    r"jdk/nashorn/internal/scripts/Script\$.*",
)

_UUID_SEGMENT_RE = re.compile(rb"[0-9a-fA-F]{8}-(?:[0-9a-fA-F]{4}-){3}[0-9a-fA-F]{12}")


class OrderMode(Enum):
    CHUNK_SORT = "chunk_sort"
    BYTE_SORT = "byte_sort"


@dataclass(frozen=True)
class CanonicalPolicy:
    fixed_name: str = "foo"
    generated_name_patterns: tuple[str, ...] = DEFAULT_GENERATED_NAME_PATTERNS
    normalize_uuid_segments: bool = False
    order_mode: OrderMode = OrderMode.CHUNK_SORT


DEFAULT_POLICY = CanonicalPolicy()


@lru_cache(maxsize=32)
def _compiled(patterns: tuple[str, ...]):
    return tuple(re.compile(p) for p in patterns)


def is_generated_name(name: str, policy: CanonicalPolicy = DEFAULT_POLICY) -> bool:
    """Whether a '/'-separated binary name matches any generated-name
    pattern (patterns are anchored: full-name matches only)."""
    return any(p.fullmatch(name) for p in _compiled(policy.generated_name_patterns))


def _rewrite_self_name(cf: ClassFile, old: bytes, new: bytes) -> ClassFile:
    old_ref = b"L" + old + b";"
    new_ref = b"L" + new + b";"
    pool: list[CpEntry | None] = []
    for entry in cf.pool:
        if entry is not None and entry.tag == CONSTANT_UTF8:
            raw = entry.utf8
            if raw == old:
                entry = CpEntry.make_utf8(new)
            elif old_ref in raw:
                entry = CpEntry.make_utf8(raw.replace(old_ref, new_ref))
        pool.append(entry)
    return replace(cf, pool=pool)


def canonicalize(cf: ClassFile, policy: CanonicalPolicy = DEFAULT_POLICY) -> ClassFile:
    """Rewrite the class's own name to ``policy.fixed_name`` when it matches
    a generated-name pattern; other classes come back untouched.  Idempotent:
    the fixed name never matches the patterns."""
    name = cf.class_name()
    if is_generated_name(name.decode("utf-8", "replace"), policy):
        return _rewrite_self_name(cf, name, policy.fixed_name.encode("utf-8"))
    if policy.normalize_uuid_segments:
        subbed = _UUID_SEGMENT_RE.sub(b"UUID", name)
        if subbed != name:
            return _rewrite_self_name(cf, name, subbed)
    return cf


_VALUE_TAGS = (CONSTANT_UTF8, CONSTANT_INTEGER, CONSTANT_FLOAT, CONSTANT_LONG, CONSTANT_DOUBLE)


def _pool_chunk(entry: CpEntry) -> bytes:
    if entry.tag in _VALUE_TAGS:
        return bytes([entry.tag]) + entry.data
    if entry.tag == CONSTANT_METHODHANDLE:
        # reference_kind is content, the index it qualifies is not
        return bytes([entry.tag, entry.data[0], 0, 0])
    return bytes([entry.tag]) + b"\x00" * len(entry.data)


def _code_chunk(code: bytes) -> bytes:
    out = bytearray()
    for insn in walk_opcodes(code):
        out.append(insn.opcode)
        if insn.opcode == LDC:
            out += b"\x00\x00"
        elif insn.opcode in CP_INDEX_AT_0:
            out += b"\x00\x00"
            out += insn.operands[2:]
        else:
            out += insn.operands
    return bytes(out)


def digest_chunks(cf: ClassFile) -> list[bytes]:
    chunks = [_pool_chunk(entry) for _, entry in cf.pool_entries()]
    for method in cf.methods:
        if method.code is not None:
            chunks.append(_code_chunk(method.code.code))
    return chunks


def digest_classfile(cf: ClassFile, policy: CanonicalPolicy = DEFAULT_POLICY) -> Checksum:
    """Canonicalize, chunk, order, hash an already-parsed classfile."""
    chunks = digest_chunks(canonicalize(cf, policy))
    if policy.order_mode is OrderMode.CHUNK_SORT:
        blob = b"".join(sorted(chunks))
    else:
        blob = bytes(sorted(b"".join(chunks)))
    return Checksum(hashlib.sha256(blob).hexdigest())


def canonical_checksum(data: bytes, policy: CanonicalPolicy = DEFAULT_POLICY) -> Checksum:
    """Parse, canonicalize, chunk, order, hash.  Raises ClassParseError for
    bytes that do not decode as a classfile."""
    return digest_classfile(parse_class(data), policy)
