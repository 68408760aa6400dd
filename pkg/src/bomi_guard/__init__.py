"""Allowlist index of loadable JVM classes, enforced by canonical checksums.

Build an index of every class an application may load (from the runtime
image, the declared supply chain, and dynamic traces), then verify each
class-load event against it: ALLOWED, NOT_ALLOWLISTED, or TAMPERED.
"""

from .bomi import Bomi, BomiRecord, Checksum, Source, Verdict, VerdictKind
from .canonical import CanonicalPolicy, OrderMode, canonical_checksum, canonicalize
from .classfile import ClassFile, ClassParseError, parse_class, serialize_class

__version__ = "0.1.0"

__all__ = (
    "Bomi",
    "BomiRecord",
    "Checksum",
    "Source",
    "Verdict",
    "VerdictKind",
    "CanonicalPolicy",
    "OrderMode",
    "canonical_checksum",
    "canonicalize",
    "ClassFile",
    "ClassParseError",
    "parse_class",
    "serialize_class",
    "__version__",
)
