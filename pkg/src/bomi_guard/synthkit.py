"""Deterministic synthetic classfiles: fixtures, permutation pairs, tampers.

``emit`` packs bytes directly with ``struct`` rather than going through the
classfile serializer, so round-trip tests cross-check two independent
encoders.  The ``seed`` drives every run-dependent choice a real classfile
generator makes: the ordinal in the generated name, constant-pool slot
assignment, and member order.  Emitting one spec under many seeds therefore
reproduces exactly the nondeterminism the canonical checksum is meant to
erase.

Opcode templates are restricted to a verified-safe token set; anything else
is rejected rather than emitted.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass

from .classfile import parse_class, serialize_class, walk_opcodes, CONSTANT_UTF8
from .classfile import _is_descriptor  # noqa: F401  (shared grammar check)
from .opcodes import LOOKUPSWITCH, OPERAND_LEN, TABLESWITCH, WIDE

__all__ = (
    "MethodSpec",
    "FieldSpec",
    "ClassSpec",
    "NoSuchSite",
    "emit",
    "make_proxy_pair",
    "tamper",
    "TAMPER_SITES",
)

_MAJOR = 61
_MINOR = 0

_CLASS_FLAGS = 0x0021  # PUBLIC | SUPER
_METHOD_FLAGS = 0x0001  # PUBLIC
_FIELD_FLAGS = 0x000A  # PRIVATE | STATIC

# zero-operand opcodes allowed verbatim in templates
_SAFE0 = {
    "nop": 0x00,
    "aconst_null": 0x01,
    "iconst_0": 0x03,
    "iconst_1": 0x04,
    "iconst_2": 0x05,
    "iconst_3": 0x06,
    "iconst_4": 0x07,
    "iconst_5": 0x08,
    "pop": 0x57,
    "dup": 0x59,
    "swap": 0x5F,
    "areturn": 0xB0,
    "return": 0xB1,
    "athrow": 0xBF,
}

_INVOKES = {
    "invokevirtual": 0xB6,
    "invokespecial": 0xB7,
    "invokestatic": 0xB8,
}

TAMPER_SITES = ("opcode", "utf8", "flag")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    descriptor: str = "()V"
    # tokens: any _SAFE0 key, "ldc:<const idx>", "getstatic:<field idx>",
    # or "<invoke kind>:<method idx>"; "{self}" in descriptors becomes the
    # resolved class name
    template: tuple[str, ...] = ("return",)


@dataclass(frozen=True)
class FieldSpec:
    name: str
    descriptor: str = "Ljava/lang/reflect/Method;"


@dataclass(frozen=True)
class ClassSpec:
    # "{n}" in the name becomes seed % 100, the generated-name ordinal
    name: str
    super_name: str = "java/lang/Object"
    utf8_constants: tuple[str, ...] = ()
    methods: tuple[MethodSpec, ...] = (MethodSpec("<init>"),)
    fields: tuple[FieldSpec, ...] = ()
    seed: int = 0


class NoSuchSite(ValueError):
    def __init__(self, site: str):
        self.site = site
        super().__init__(f"no tamperable position of kind {site!r}")


class _PoolBuilder:
    """Interning pool of synthetic entries; ids are insertion-ordered and
    mapped to slots only after the seed-driven shuffle."""

    def __init__(self):
        self.entries: list[tuple] = []
        self._index: dict[tuple, int] = {}

    def _intern(self, key: tuple) -> int:
        eid = self._index.get(key)
        if eid is None:
            eid = len(self.entries)
            self.entries.append(key)
            self._index[key] = eid
        return eid

    def utf8(self, text: str) -> int:
        return self._intern(("utf8", text.encode("utf-8")))

    def klass(self, name: str) -> int:
        return self._intern(("class", self.utf8(name)))

    def string(self, text: str) -> int:
        return self._intern(("string", self.utf8(text)))

    def nat(self, name: str, descriptor: str) -> int:
        return self._intern(("nat", self.utf8(name), self.utf8(descriptor)))

    def fieldref(self, class_id: int, nat_id: int) -> int:
        return self._intern(("fieldref", class_id, nat_id))

    def methodref(self, class_id: int, nat_id: int) -> int:
        return self._intern(("methodref", class_id, nat_id))


_ENTRY_TAGS = {"utf8": 1, "class": 7, "string": 8, "fieldref": 9, "methodref": 10, "nat": 12}


def _entry_bytes(entry: tuple, slot_of: dict[int, int]) -> bytes:
    kind = entry[0]
    tag = _ENTRY_TAGS[kind]
    if kind == "utf8":
        return struct.pack(">BH", tag, len(entry[1])) + entry[1]
    if kind in ("class", "string"):
        return struct.pack(">BH", tag, slot_of[entry[1]])
    return struct.pack(">BHH", tag, slot_of[entry[1]], slot_of[entry[2]])


def _compile_template(pb: _PoolBuilder, spec: ClassSpec, name: str, this_id: int,
                      method: MethodSpec) -> list[tuple[int, int | None]]:
    """Return (opcode, pool id or None) pairs; ids are resolved to slots
    after the pool shuffle."""
    parts: list[tuple[int, int | None]] = []
    for token in method.template:
        if token in _SAFE0:
            parts.append((_SAFE0[token], None))
            continue
        op, _, arg = token.partition(":")
        if op == "ldc":
            sid = pb.string(spec.utf8_constants[int(arg)])
            parts.append((0x12, sid))
        elif op == "getstatic":
            f = spec.fields[int(arg)]
            nid = pb.nat(f.name, f.descriptor.replace("{self}", name))
            parts.append((0xB2, pb.fieldref(this_id, nid)))
        elif op in _INVOKES:
            m = spec.methods[int(arg)]
            nid = pb.nat(m.name, m.descriptor.replace("{self}", name))
            parts.append((_INVOKES[op], pb.methodref(this_id, nid)))
        else:
            raise ValueError(f"unknown or unsafe template token {token!r}")
    return parts


def emit(spec: ClassSpec) -> bytes:
    rng = random.Random(spec.seed)
    name = spec.name.replace("{n}", str(spec.seed % 100))

    pb = _PoolBuilder()
    this_id = pb.klass(name)
    super_id = pb.klass(spec.super_name)
    code_name_id = pb.utf8("Code")
    for text in spec.utf8_constants:
        pb.utf8(text)
    field_name_ids = []
    for f in spec.fields:
        field_name_ids.append((pb.utf8(f.name), pb.utf8(f.descriptor.replace("{self}", name))))
    method_name_ids = []
    compiled = []
    for m in spec.methods:
        method_name_ids.append((pb.utf8(m.name), pb.utf8(m.descriptor.replace("{self}", name))))
        compiled.append(_compile_template(pb, spec, name, this_id, m))

    # rng draw order is part of the format: pool, then fields, then methods
    order = list(range(len(pb.entries)))
    rng.shuffle(order)
    slot_of = {eid: pos + 1 for pos, eid in enumerate(order)}
    n_slots = len(pb.entries)

    field_rows = list(zip(spec.fields, field_name_ids))
    rng.shuffle(field_rows)
    method_rows = list(zip(spec.methods, method_name_ids, compiled))
    rng.shuffle(method_rows)

    # a pool small enough lets ldc address any slot; otherwise widen every
    # ldc to ldc_w so the choice cannot depend on the shuffle
    ldc_wide = n_slots > 255

    out = bytearray()
    out += struct.pack(">IHHH", 0xCAFEBABE, _MINOR, _MAJOR, n_slots + 1)
    for eid in order:
        out += _entry_bytes(pb.entries[eid], slot_of)
    out += struct.pack(">HHHH", _CLASS_FLAGS, slot_of[this_id], slot_of[super_id], 0)

    out += struct.pack(">H", len(field_rows))
    for _, (name_id, desc_id) in field_rows:
        out += struct.pack(">HHHH", _FIELD_FLAGS, slot_of[name_id], slot_of[desc_id], 0)

    out += struct.pack(">H", len(method_rows))
    for _, (name_id, desc_id), parts in method_rows:
        code = bytearray()
        for opcode, ref in parts:
            if ref is None:
                code.append(opcode)
            elif opcode == 0x12:
                if ldc_wide:
                    code += struct.pack(">BH", 0x13, slot_of[ref])
                else:
                    code += struct.pack(">BB", 0x12, slot_of[ref])
            else:
                code += struct.pack(">BH", opcode, slot_of[ref])
        out += struct.pack(">HHHH", _METHOD_FLAGS, slot_of[name_id], slot_of[desc_id], 1)
        out += struct.pack(">HI", slot_of[code_name_id], 12 + len(code))
        out += struct.pack(">HHI", 8, 8, len(code))
        out += code
        out += struct.pack(">HH", 0, 0)  # exception table, nested attributes

    out += struct.pack(">H", 0)  # class attributes
    return bytes(out)


_PROXY_FIELDS = tuple(FieldSpec(f"m{i}") for i in range(4))


def _proxy_spec(seed: int) -> ClassSpec:
    pick = random.Random(seed).sample(range(4), 2)
    methods = (
        MethodSpec("<init>", "()V", ("aconst_null", "pop", "return")),
        MethodSpec("visualUpdate", "()V", (f"getstatic:{pick[0]}", "pop", "return")),
        MethodSpec("expert", "()V", (f"getstatic:{pick[1]}", "pop", "return")),
        MethodSpec("self", "()L{self};", ("aconst_null", "areturn")),
    )
    return ClassSpec(
        name="$Proxy{n}",
        super_name="java/lang/reflect/Proxy",
        utf8_constants=("proxy",),
        methods=methods,
        fields=_PROXY_FIELDS,
        seed=seed,
    )


def make_proxy_pair(seed_a: int, seed_b: int) -> tuple[bytes, bytes]:
    """Two proxy classfiles that differ only in generated-name ordinal,
    member name-to-slot mapping, member order, and pool order."""
    return emit(_proxy_spec(seed_a)), emit(_proxy_spec(seed_b))


def _tamper_opcode(cf, rng) -> None:
    candidates = []
    for method in cf.methods:
        if method.code is None:
            continue
        for insn in walk_opcodes(method.code.code):
            if insn.opcode in (TABLESWITCH, LOOKUPSWITCH, WIDE):
                continue
            repls = [op for op, n in OPERAND_LEN.items()
                     if n == len(insn.operands) and op != insn.opcode]
            if repls:
                candidates.append((method, insn.offset, repls))
    if not candidates:
        raise NoSuchSite("opcode")
    method, offset, repls = rng.choice(candidates)
    new_op = rng.choice(repls)
    for attr in method.attributes:
        info = attr.info
        if len(info) >= 8 and method.code is not None and info[8 : 8 + len(method.code.code)] == method.code.code:
            pos = 8 + offset
            attr.info = info[:pos] + bytes([new_op]) + info[pos + 1 :]
            return
    raise NoSuchSite("opcode")


def _tamper_utf8(cf, rng) -> None:
    own = cf.class_name()
    own_ref = b"L" + own + b";"
    alphabet = b"abcdefghijklmnopqrstuvwxyz0123456789"
    candidates = []
    for i, entry in cf.pool_entries():
        if entry.tag != CONSTANT_UTF8:
            continue
        raw = entry.utf8
        # skip anything the canonical rewrite might erase and anything the
        # parser holds to the descriptor grammar
        if not raw or raw == own or own_ref in raw or _is_descriptor(raw):
            continue
        positions = [k for k, b in enumerate(raw) if 0x21 <= b <= 0x7E]
        if positions:
            candidates.append((i, positions))
    if not candidates:
        raise NoSuchSite("utf8")
    i, positions = rng.choice(candidates)
    pos = rng.choice(positions)
    raw = cf.pool[i].utf8
    new_byte = rng.choice([b for b in alphabet if b != raw[pos]])
    from .classfile import CpEntry

    cf.pool[i] = CpEntry.make_utf8(raw[:pos] + bytes([new_byte]) + raw[pos + 1 :])


def _tamper_flag(cf, rng) -> None:
    holders = [cf] + list(cf.fields) + list(cf.methods)
    holder = rng.choice(holders)
    holder.access_flags ^= 1 << rng.randrange(16)


def tamper(data: bytes, site: str, seed: int = 0) -> bytes:
    """Apply one deterministic single-byte alteration of the given kind.

    opcode and utf8 tampers move the canonical digest; a flag tamper leaves
    it unchanged, which is the documented blind spot of a digest that skips
    access flags.  The output always parses.
    """
    cf = parse_class(data)
    rng = random.Random(seed)
    if site == "opcode":
        _tamper_opcode(cf, rng)
    elif site == "utf8":
        _tamper_utf8(cf, rng)
    elif site == "flag":
        _tamper_flag(cf, rng)
    else:
        raise ValueError(f"unknown tamper site {site!r}")
    out = serialize_class(cf)
    parse_class(out)
    return out
