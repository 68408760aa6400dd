#!/usr/bin/env python3
"""Index scale and verification latency measurements.

Times three things: loading a large NDJSON index, name+checksum lookups
against it, and end-to-end verify_event (parse, canonicalize, hash, look up)
over synthetic classes of a few sizes.
"""

from __future__ import annotations

import argparse
import io
import json
import statistics
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from bomi_guard.bomi import Bomi, BomiRecord, Checksum, Source, load_bomi
from bomi_guard.canonical import canonical_checksum
from bomi_guard.synthkit import ClassSpec, MethodSpec, emit
from bomi_guard.watchdog import verify_event


def build_index_text(count: int) -> tuple[list[str], str]:
    names = [f"synth/pkg{i // 100}/C{i:05d}" for i in range(count)]
    lines = [
        json.dumps(
            {"name": name,
             "records": [{"alg": "SHA-256", "checksum": f"{i:064x}",
                          "source": "runtime"}]},
            separators=(",", ":"),
        )
        for i, name in enumerate(names)
    ]
    return names, "\n".join(lines) + "\n"


def class_of_size(target: int) -> bytes:
    # pad the constant pool until the emitted blob crosses the target
    for pads in range(1, 4000, 8):
        constants = tuple(f"pad{i:04d}_" + "x" * 120 for i in range(pads))
        methods = (MethodSpec("<init>", "()V", ("return",)),
                   MethodSpec("work", "()V", ("ldc:0", "pop", "return")))
        data = emit(ClassSpec(name="app/Big", utf8_constants=constants, methods=methods))
        if len(data) >= target:
            return data
    raise AssertionError(f"could not reach {target} bytes")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--entries", type=int, default=25_381)
    parser.add_argument("--lookups", type=int, default=100_000)
    parser.add_argument("--rounds", type=int, default=200,
                        help="verify_event samples per class size")
    args = parser.parse_args()

    names, text = build_index_text(args.entries)
    started = time.perf_counter()
    bomi = load_bomi(io.StringIO(text))
    load_s = time.perf_counter() - started
    print(f"load      {args.entries} entries: {load_s * 1000:8.1f} ms")

    probes = [(names[(i * 257) % args.entries],
               Checksum("%064x" % ((i * 257) % args.entries)))
              for i in range(1000)]
    started = time.perf_counter()
    done = 0
    while done < args.lookups:
        for name, checksum in probes:
            bomi.lookup(name, checksum)
        done += len(probes)
    lookup_s = time.perf_counter() - started
    print(f"lookup    {done} probes:  {lookup_s * 1000:8.1f} ms "
          f"({lookup_s / done * 1e6:.2f} us each)")

    for target in (1_024, 10_240, 51_200):
        data = class_of_size(target)
        small = Bomi()
        small.add("app/Big", BomiRecord(canonical_checksum(data), Source.RUNTIME))
        samples = []
        for _ in range(args.rounds):
            started = time.perf_counter()
            verify_event(small, "app/Big", data)
            samples.append(time.perf_counter() - started)
        samples.sort()
        median = statistics.median(samples) * 1000
        p99 = samples[int(len(samples) * 0.99) - 1] * 1000
        print(f"verify    {len(data):6d}-byte class: median {median:6.2f} ms, "
              f"p99 {p99:6.2f} ms")
    return 0


if __name__ == "__main__":
    sys.exit(main())
