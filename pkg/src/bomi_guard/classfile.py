"""Lossless JVM classfile parsing, serialization, and bytecode walking.

The decoder keeps every payload it does not need to understand as raw bytes
(attribute bodies, exception tables), so ``serialize_class(parse_class(b))``
reproduces ``b`` exactly.  Constant-pool entries store their on-disk payload
verbatim next to the tag; accessors decode index operands on demand.

The parser is total: any byte string either yields a validated ``ClassFile``
or raises a ``ClassParseError`` subclass identifying the first offending
offset or site.  No other exception type escapes ``parse_class``.

Modified UTF-8 is validated, never transcoded; class-name comparisons happen
on the raw Utf8 bytes.
"""

from __future__ import annotations

import re
import struct
import warnings
from dataclasses import dataclass, field

from .opcodes import (
    CP_INDEX_AT_0,
    IINC,
    LDC,
    LOOKUPSWITCH,
    MNEMONICS,
    OPERAND_LEN,
    TABLESWITCH,
    WIDE,
    WIDE_TARGETS,
)

__all__ = (
    "MAGIC",
    "MIN_MAJOR",
    "MAX_MAJOR",
    "CONSTANT_UTF8",
    "CONSTANT_INTEGER",
    "CONSTANT_FLOAT",
    "CONSTANT_LONG",
    "CONSTANT_DOUBLE",
    "CONSTANT_CLASS",
    "CONSTANT_STRING",
    "CONSTANT_FIELDREF",
    "CONSTANT_METHODREF",
    "CONSTANT_INTERFACEMETHODREF",
    "CONSTANT_NAMEANDTYPE",
    "CONSTANT_METHODHANDLE",
    "CONSTANT_METHODTYPE",
    "CONSTANT_DYNAMIC",
    "CONSTANT_INVOKEDYNAMIC",
    "CONSTANT_MODULE",
    "CONSTANT_PACKAGE",
    "ClassParseError",
    "BadMagic",
    "TruncatedInput",
    "BadCpTag",
    "BadIndex",
    "UnknownOpcode",
    "TruncatedOperands",
    "IndexOverflow",
    "CpEntry",
    "AttributeInfo",
    "CodeAttr",
    "MemberInfo",
    "ClassFile",
    "Insn",
    "parse_class",
    "serialize_class",
    "walk_opcodes",
    "is_valid_mutf8",
)

MAGIC = 0xCAFEBABE
MIN_MAJOR = 45
MAX_MAJOR = 65

CONSTANT_UTF8 = 1
CONSTANT_INTEGER = 3
CONSTANT_FLOAT = 4
CONSTANT_LONG = 5
CONSTANT_DOUBLE = 6
CONSTANT_CLASS = 7
CONSTANT_STRING = 8
CONSTANT_FIELDREF = 9
CONSTANT_METHODREF = 10
CONSTANT_INTERFACEMETHODREF = 11
CONSTANT_NAMEANDTYPE = 12
CONSTANT_METHODHANDLE = 15
CONSTANT_METHODTYPE = 16
CONSTANT_DYNAMIC = 17
CONSTANT_INVOKEDYNAMIC = 18
CONSTANT_MODULE = 19
CONSTANT_PACKAGE = 20

# payload byte count for every fixed-size tag; Utf8 is length-prefixed
_FIXED_PAYLOAD = {
    CONSTANT_INTEGER: 4,
    CONSTANT_FLOAT: 4,
    CONSTANT_LONG: 8,
    CONSTANT_DOUBLE: 8,
    CONSTANT_CLASS: 2,
    CONSTANT_STRING: 2,
    CONSTANT_FIELDREF: 4,
    CONSTANT_METHODREF: 4,
    CONSTANT_INTERFACEMETHODREF: 4,
    CONSTANT_NAMEANDTYPE: 4,
    CONSTANT_METHODHANDLE: 3,
    CONSTANT_METHODTYPE: 2,
    CONSTANT_DYNAMIC: 4,
    CONSTANT_INVOKEDYNAMIC: 4,
    CONSTANT_MODULE: 2,
    CONSTANT_PACKAGE: 2,
}

_TWO_SLOT_TAGS = (CONSTANT_LONG, CONSTANT_DOUBLE)


class ClassParseError(ValueError):
    """Input bytes do not decode as a classfile."""


class BadMagic(ClassParseError):
    def __init__(self, found: int):
        self.found = found
        super().__init__(f"bad magic 0x{found:08X}, expected 0x{MAGIC:08X}")


class TruncatedInput(ClassParseError):
    def __init__(self, offset: int, detail: str = "input ends early"):
        self.offset = offset
        super().__init__(f"{detail} at offset {offset}")


class BadCpTag(ClassParseError):
    def __init__(self, index: int, tag: int):
        self.index = index
        self.tag = tag
        super().__init__(f"unknown constant tag {tag} at pool index {index}")


class BadIndex(ClassParseError):
    def __init__(self, site: str):
        self.site = site
        super().__init__(f"bad constant-pool reference at {site}")


class UnknownOpcode(ClassParseError):
    def __init__(self, offset: int, opcode: int):
        self.offset = offset
        self.opcode = opcode
        super().__init__(f"unknown opcode 0x{opcode:02X} at code offset {offset}")


class TruncatedOperands(ClassParseError):
    def __init__(self, offset: int):
        self.offset = offset
        super().__init__(f"operands run past code end for opcode at offset {offset}")


class IndexOverflow(ValueError):
    """A value no longer fits its fixed-width field during serialization."""


@dataclass(frozen=True)
class CpEntry:
    """One constant-pool entry: tag plus on-disk payload (tag byte excluded).

    For Utf8 the payload includes the u2 length prefix, so serialization is
    a plain concatenation for every tag.
    """

    tag: int
    data: bytes

    def u16(self, off: int = 0) -> int:
        return struct.unpack_from(">H", self.data, off)[0]

    @property
    def utf8(self) -> bytes:
        """Utf8 payload without the length prefix."""
        return self.data[2:]

    @classmethod
    def make_utf8(cls, raw: bytes) -> "CpEntry":
        if len(raw) > 0xFFFF:
            raise IndexOverflow(f"Utf8 payload of {len(raw)} bytes exceeds u16 length")
        return cls(CONSTANT_UTF8, struct.pack(">H", len(raw)) + raw)


@dataclass
class AttributeInfo:
    name_index: int
    info: bytes


@dataclass
class CodeAttr:
    """Decoded view of a Code attribute.

    ``tail`` keeps the exception table and nested attributes verbatim; only
    the bytecode array itself is interpreted downstream.
    """

    max_stack: int
    max_locals: int
    code: bytes
    tail: bytes


@dataclass
class MemberInfo:
    access_flags: int
    name_index: int
    descriptor_index: int
    attributes: list[AttributeInfo]
    code: CodeAttr | None = None


@dataclass
class ClassFile:
    minor_version: int
    major_version: int
    # slot 0 is a pad; Long/Double occupy their index plus a None follower
    pool: list[CpEntry | None]
    access_flags: int
    this_class: int
    super_class: int
    interfaces: list[int]
    fields: list[MemberInfo]
    methods: list[MemberInfo]
    attributes: list[AttributeInfo]

    @property
    def version_string(self) -> str:
        return f"{self.major_version}.{self.minor_version}"

    def pool_entries(self):
        """Yield (index, entry) pairs, skipping pad and follower slots."""
        for i, entry in enumerate(self.pool):
            if i and entry is not None:
                yield i, entry

    def utf8_at(self, index: int, site: str) -> bytes:
        if not (0 < index < len(self.pool)):
            raise BadIndex(site)
        entry = self.pool[index]
        if entry is None or entry.tag != CONSTANT_UTF8:
            raise BadIndex(site)
        return entry.utf8

    def class_name(self) -> bytes:
        """Raw Utf8 bytes of this class's binary name."""
        entry = self.pool[self.this_class]
        assert entry is not None and entry.tag == CONSTANT_CLASS
        return self.utf8_at(entry.u16(0), "this_class.name_index")


class _Reader:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str = "input ends early") -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise TruncatedInput(self.pos, what)
        chunk = self.data[self.pos : end]
        self.pos = end
        return chunk

    def u1(self) -> int:
        return self.take(1)[0]

    def u2(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u4(self) -> int:
        return struct.unpack(">I", self.take(4))[0]


# --- modified UTF-8 and descriptor grammar -------------------------------

def is_valid_mutf8(raw: bytes) -> bool:
    """Check the modified UTF-8 rules: no NUL byte, no 0xF0..0xFF, and
    well-formed 2/3-byte groups.  (NUL is legally encoded as C0 80.)"""
    i, n = 0, len(raw)
    while i < n:
        b = raw[i]
        if b == 0x00 or b >= 0xF0:
            return False
        if b < 0x80:
            i += 1
        elif b & 0xE0 == 0xC0:
            if i + 1 >= n or raw[i + 1] & 0xC0 != 0x80:
                return False
            i += 2
        elif b & 0xF0 == 0xE0:
            if i + 2 >= n or raw[i + 1] & 0xC0 != 0x80 or raw[i + 2] & 0xC0 != 0x80:
                return False
            i += 3
        else:
            return False
    return True


_FIELD_DESC = rb"\[*(?:[BCDFIJSZ]|L[^.;\[]+;)"
_FIELD_DESC_RE = re.compile(_FIELD_DESC)
_METHOD_DESC_RE = re.compile(rb"\((?:" + _FIELD_DESC + rb")*\)(?:V|" + _FIELD_DESC + rb")")


def _is_field_descriptor(raw: bytes) -> bool:
    return _FIELD_DESC_RE.fullmatch(raw) is not None


def _is_method_descriptor(raw: bytes) -> bool:
    return _METHOD_DESC_RE.fullmatch(raw) is not None


def _is_descriptor(raw: bytes) -> bool:
    return _is_field_descriptor(raw) or _is_method_descriptor(raw)


# --- parsing --------------------------------------------------------------

def _parse_pool(r: _Reader) -> list[CpEntry | None]:
    count = r.u2()
    pool: list[CpEntry | None] = [None] * count
    index = 1
    while index < count:
        tag = r.u1()
        if tag == CONSTANT_UTF8:
            start = r.pos
            length = r.u2()
            payload = r.take(length, "Utf8 payload ends early")
            pool[index] = CpEntry(tag, r.data[start : start + 2] + payload)
        elif tag in _FIXED_PAYLOAD:
            pool[index] = CpEntry(tag, r.take(_FIXED_PAYLOAD[tag]))
        else:
            raise BadCpTag(index, tag)
        index += 2 if tag in _TWO_SLOT_TAGS else 1
    if index != count:
        # a Long/Double in the final slot claimed a follower past the pool
        raise BadIndex(f"constant_pool[{count - 1}] follower slot")
    return pool


def _pool_at(pool: list[CpEntry | None], index: int, site: str) -> CpEntry:
    if not (0 < index < len(pool)):
        raise BadIndex(site)
    entry = pool[index]
    if entry is None:
        raise BadIndex(site)
    return entry


def _expect_tag(pool, index, tags, site) -> CpEntry:
    entry = _pool_at(pool, index, site)
    if entry.tag not in tags:
        raise BadIndex(site)
    return entry


def _validate_pool(pool: list[CpEntry | None]) -> None:
    """Cross-check referenced indices for type correctness and Utf8 payloads
    for modified UTF-8 validity."""
    for i, entry in enumerate(pool):
        if i == 0 or entry is None:
            continue
        site = f"constant_pool[{i}]"
        tag = entry.tag
        if tag == CONSTANT_UTF8:
            if not is_valid_mutf8(entry.utf8):
                raise BadIndex(f"{site} modified-UTF-8 payload")
        elif tag in (CONSTANT_CLASS, CONSTANT_MODULE, CONSTANT_PACKAGE, CONSTANT_STRING):
            _expect_tag(pool, entry.u16(0), (CONSTANT_UTF8,), f"{site}.name_index")
        elif tag in (CONSTANT_FIELDREF, CONSTANT_METHODREF, CONSTANT_INTERFACEMETHODREF):
            _expect_tag(pool, entry.u16(0), (CONSTANT_CLASS,), f"{site}.class_index")
            _expect_tag(
                pool, entry.u16(2), (CONSTANT_NAMEANDTYPE,), f"{site}.name_and_type_index"
            )
        elif tag == CONSTANT_NAMEANDTYPE:
            _expect_tag(pool, entry.u16(0), (CONSTANT_UTF8,), f"{site}.name_index")
            desc = _expect_tag(
                pool, entry.u16(2), (CONSTANT_UTF8,), f"{site}.descriptor_index"
            )
            if not _is_descriptor(desc.utf8):
                raise BadIndex(f"{site}.descriptor_index grammar")
        elif tag == CONSTANT_METHODHANDLE:
            kind = entry.data[0]
            if not 1 <= kind <= 9:
                raise BadIndex(f"{site}.reference_kind")
            _expect_tag(
                pool,
                entry.u16(1),
                (CONSTANT_FIELDREF, CONSTANT_METHODREF, CONSTANT_INTERFACEMETHODREF),
                f"{site}.reference_index",
            )
        elif tag == CONSTANT_METHODTYPE:
            desc = _expect_tag(
                pool, entry.u16(0), (CONSTANT_UTF8,), f"{site}.descriptor_index"
            )
            if not _is_method_descriptor(desc.utf8):
                raise BadIndex(f"{site}.descriptor_index grammar")
        elif tag in (CONSTANT_DYNAMIC, CONSTANT_INVOKEDYNAMIC):
            # bootstrap_method_attr_index points outside the pool; skip it
            _expect_tag(
                pool, entry.u16(2), (CONSTANT_NAMEANDTYPE,), f"{site}.name_and_type_index"
            )


def _parse_attributes(r: _Reader, pool, site: str) -> list[AttributeInfo]:
    count = r.u2()
    attrs = []
    for k in range(count):
        name_index = r.u2()
        _expect_tag(pool, name_index, (CONSTANT_UTF8,), f"{site}.attributes[{k}].name_index")
        length = r.u4()
        attrs.append(AttributeInfo(name_index, r.take(length, "attribute body ends early")))
    return attrs


def _decode_code_attr(info: bytes, site: str) -> CodeAttr:
    if len(info) < 8:
        raise TruncatedInput(0, f"{site} Code attribute shorter than its header")
    max_stack, max_locals, code_length = struct.unpack_from(">HHI", info, 0)
    if 8 + code_length > len(info):
        raise TruncatedInput(8, f"{site} code array runs past attribute end")
    code = info[8 : 8 + code_length]
    return CodeAttr(max_stack, max_locals, code, info[8 + code_length :])


def _parse_members(r: _Reader, pool, kind: str, methods: bool) -> list[MemberInfo]:
    count = r.u2()
    members = []
    for k in range(count):
        site = f"{kind}[{k}]"
        access_flags = r.u2()
        name_index = r.u2()
        _expect_tag(pool, name_index, (CONSTANT_UTF8,), f"{site}.name_index")
        descriptor_index = r.u2()
        desc = _expect_tag(pool, descriptor_index, (CONSTANT_UTF8,), f"{site}.descriptor_index")
        valid = _is_method_descriptor(desc.utf8) if methods else _is_field_descriptor(desc.utf8)
        if not valid:
            raise BadIndex(f"{site}.descriptor_index grammar")
        attrs = _parse_attributes(r, pool, site)
        code = None
        if methods:
            for attr in attrs:
                if pool[attr.name_index].utf8 == b"Code":
                    code = _decode_code_attr(attr.info, site)
                    # the walk both validates the array and proves it
                    # terminates exactly at the code end
                    for _ in walk_opcodes(code.code):
                        pass
                    break
        members.append(MemberInfo(access_flags, name_index, descriptor_index, attrs, code))
    return members


def parse_class(data: bytes) -> ClassFile:
    r = _Reader(data)
    magic = r.u4()
    if magic != MAGIC:
        raise BadMagic(magic)
    minor = r.u2()
    major = r.u2()
    if not MIN_MAJOR <= major <= MAX_MAJOR:
        warnings.warn(
            f"classfile major version {major} outside supported {MIN_MAJOR}..{MAX_MAJOR}",
            RuntimeWarning,
            stacklevel=2,
        )
    pool = _parse_pool(r)
    _validate_pool(pool)
    access_flags = r.u2()
    this_class = r.u2()
    _expect_tag(pool, this_class, (CONSTANT_CLASS,), "this_class")
    super_class = r.u2()
    if super_class != 0:
        _expect_tag(pool, super_class, (CONSTANT_CLASS,), "super_class")
    interfaces = []
    for k in range(r.u2()):
        idx = r.u2()
        _expect_tag(pool, idx, (CONSTANT_CLASS,), f"interfaces[{k}]")
        interfaces.append(idx)
    fields = _parse_members(r, pool, "fields", methods=False)
    methods = _parse_members(r, pool, "methods", methods=True)
    attributes = _parse_attributes(r, pool, "class")
    if r.pos != len(data):
        raise TruncatedInput(r.pos, f"{len(data) - r.pos} trailing bytes")
    return ClassFile(
        minor_version=minor,
        major_version=major,
        pool=pool,
        access_flags=access_flags,
        this_class=this_class,
        super_class=super_class,
        interfaces=interfaces,
        fields=fields,
        methods=methods,
        attributes=attributes,
    )


# --- serialization --------------------------------------------------------

def _u2(value: int, what: str) -> bytes:
    if not 0 <= value <= 0xFFFF:
        raise IndexOverflow(f"{what} {value} does not fit u16")
    return struct.pack(">H", value)


def _serialize_attributes(out: bytearray, attrs: list[AttributeInfo]) -> None:
    out += _u2(len(attrs), "attribute count")
    for attr in attrs:
        out += _u2(attr.name_index, "attribute name index")
        out += struct.pack(">I", len(attr.info))
        out += attr.info


def serialize_class(cf: ClassFile) -> bytes:
    out = bytearray()
    out += struct.pack(">IHH", MAGIC, cf.minor_version, cf.major_version)
    out += _u2(len(cf.pool), "constant pool count")
    for i, entry in enumerate(cf.pool):
        if i == 0 or entry is None:
            continue
        out.append(entry.tag)
        out += entry.data
    out += _u2(cf.access_flags, "access_flags")
    out += _u2(cf.this_class, "this_class")
    out += _u2(cf.super_class, "super_class")
    out += _u2(len(cf.interfaces), "interface count")
    for idx in cf.interfaces:
        out += _u2(idx, "interface index")
    for members in (cf.fields, cf.methods):
        out += _u2(len(members), "member count")
        for m in members:
            out += _u2(m.access_flags, "member access_flags")
            out += _u2(m.name_index, "member name index")
            out += _u2(m.descriptor_index, "member descriptor index")
            _serialize_attributes(out, m.attributes)
    _serialize_attributes(out, cf.attributes)
    return bytes(out)


# --- bytecode walking ------------------------------------------------------

@dataclass(frozen=True)
class Insn:
    offset: int
    opcode: int
    operands: bytes

    @property
    def mnemonic(self) -> str:
        return MNEMONICS[self.opcode]


def _switch_operand_len(code: bytes, offset: int, opcode: int) -> int:
    # both switches pad to a 4-byte boundary relative to the code start
    pad = (4 - (offset + 1) % 4) % 4
    base = offset + 1 + pad
    if opcode == TABLESWITCH:
        if base + 12 > len(code):
            raise TruncatedOperands(offset)
        low, high = struct.unpack_from(">ii", code, base + 4)
        if high < low:
            raise TruncatedOperands(offset)
        return pad + 12 + (high - low + 1) * 4
    if base + 8 > len(code):
        raise TruncatedOperands(offset)
    (npairs,) = struct.unpack_from(">i", code, base + 4)
    if npairs < 0:
        raise TruncatedOperands(offset)
    return pad + 8 + npairs * 8


def walk_opcodes(code: bytes):
    """Yield one ``Insn`` per instruction, in offset order.

    Concatenating ``bytes([insn.opcode]) + insn.operands`` over the yield
    sequence reproduces the code array; switch alignment padding rides along
    in the operands of the switch itself.
    """
    offset = 0
    n = len(code)
    while offset < n:
        opcode = code[offset]
        if opcode in (TABLESWITCH, LOOKUPSWITCH):
            length = _switch_operand_len(code, offset, opcode)
        elif opcode == WIDE:
            if offset + 1 >= n:
                raise TruncatedOperands(offset)
            target = code[offset + 1]
            if target not in WIDE_TARGETS:
                raise UnknownOpcode(offset, opcode)
            length = 5 if target == IINC else 3
        else:
            try:
                length = OPERAND_LEN[opcode]
            except KeyError:
                raise UnknownOpcode(offset, opcode) from None
        end = offset + 1 + length
        if end > n:
            raise TruncatedOperands(offset)
        yield Insn(offset, opcode, code[offset + 1 : end])
        offset = end
