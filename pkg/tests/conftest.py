"""Shared fixture builders: randomized class specs and archive fixtures."""

from __future__ import annotations

import io
import random
import zipfile

import pytest

from bomi_guard.synthkit import ClassSpec, FieldSpec, MethodSpec

# every shape resolves "{n}" to the seed-driven ordinal and matches a
# default generated-name pattern
GENERATED_NAME_SHAPES = (
    "$Proxy{n}",
    "com/sun/proxy/$Proxy{n}",
    "jdk/proxy2/$Proxy{n}",
    "jdk/internal/reflect/GeneratedConstructorAccessor{n}",
    "jdk/internal/reflect/GeneratedMethodAccessor{n}",
    "app/Service$$EnhancerByCGLIB$$a1{n}",
    "jdk/nashorn/internal/scripts/Script$eval_{n}",
)

_PLAIN_OPS = ("nop", "iconst_0", "iconst_1", "pop", "aconst_null", "dup")


def make_random_spec(rng: random.Random, name: str | None = None) -> ClassSpec:
    """One randomized ClassSpec whose content is independent of the emit
    seed, so re-emitting under different seeds varies only ordinal, member
    order, and pool order."""
    if name is None:
        name = rng.choice(GENERATED_NAME_SHAPES)
    constants = tuple(f"c{rng.randrange(10_000)}" for _ in range(rng.randint(0, 5)))
    fields = tuple(FieldSpec(f"m{i}") for i in range(rng.randint(0, 4)))
    methods = [MethodSpec("<init>", "()V", ("aconst_null", "pop", "return"))]
    for i in range(rng.randint(1, 4)):
        template: list[str] = []
        for _ in range(rng.randint(1, 5)):
            roll = rng.random()
            if roll < 0.30 and constants:
                template.append(f"ldc:{rng.randrange(len(constants))}")
            elif roll < 0.55 and fields:
                template.append(f"getstatic:{rng.randrange(len(fields))}")
            elif roll < 0.65:
                template.append("invokespecial:0")
            else:
                template.append(rng.choice(_PLAIN_OPS))
        template.append("return")
        methods.append(MethodSpec(f"f{i}", "()V", tuple(template)))
    if rng.random() < 0.3:
        methods.append(MethodSpec("self", "()L{self};", ("aconst_null", "areturn")))
    return ClassSpec(
        name=name,
        utf8_constants=constants,
        methods=tuple(methods),
        fields=fields,
        seed=0,
    )


def build_jar(members: dict[str, bytes]) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, data in sorted(members.items()):
            zf.writestr(name, data)
    return buf.getvalue()


def build_jmod(classes: dict[str, bytes]) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name, data in sorted(classes.items()):
            zf.writestr(f"classes/{name}.class", data)
    return b"JM\x01\x00" + buf.getvalue()


@pytest.fixture
def rng() -> random.Random:
    return random.Random(0xB0111)
