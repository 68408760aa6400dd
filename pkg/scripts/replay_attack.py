#!/usr/bin/env python3
"""Desk-scale attack replay.

Synthesizes a fleet of application classes, allowlists them, then replays
three traces against the index: a clean run, a run with one injected class,
and a run where a known class arrives with one flipped opcode byte.  Prints
the per-run report the same way verify-trace does.
"""

from __future__ import annotations

import argparse
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from bomi_guard.bomi import Bomi, BomiRecord, Source
from bomi_guard.canonical import canonical_checksum
from bomi_guard.synthkit import ClassSpec, MethodSpec, emit, tamper
from bomi_guard.watchdog import LoadEvent, run_trace


def build_fleet(count: int, seed: int) -> list[tuple[str, bytes]]:
    rng = random.Random(seed)
    fleet = []
    for i in range(count):
        constants = tuple(f"s{rng.randrange(1000)}" for _ in range(rng.randint(1, 4)))
        spec = ClassSpec(
            name=f"app/pkg{i % 7}/C{i}",
            utf8_constants=constants,
            methods=(
                MethodSpec("<init>", "()V", ("return",)),
                MethodSpec("work", "()V", ("ldc:0", "pop", "return")),
            ),
            seed=rng.randrange(100),
        )
        fleet.append((spec.name, emit(spec)))
    return fleet


def replay(title: str, bomi: Bomi, events: list[tuple[str, bytes]], mode: str) -> None:
    print(f"--- {title} ({mode}) ---")

    def echo(event: LoadEvent, verdict) -> None:
        if verdict.kind.value != "ALLOWED":
            print(f"  [{verdict.kind.value.replace('_', ' ')}]: {event.class_name}")

    load_events = (LoadEvent(i, name, data) for i, (name, data) in enumerate(events, 1))
    report = run_trace(bomi, load_events, mode, on_verdict=echo)
    line = (f"  allowed={report.allowed} not_allowlisted={report.not_allowlisted} "
            f"tampered={report.tampered}")
    if report.stopped_at is not None:
        line += f" stopped_at={report.stopped_at}"
    print(line)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=30, help="fleet size (default 30)")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    fleet = build_fleet(args.count, args.seed)
    bomi = Bomi()
    for name, data in fleet:
        bomi.add(name, BomiRecord(canonical_checksum(data), Source.RUNTIME))
    print(f"allowlisted {len(bomi)} classes ({bomi.record_count()} records)")

    replay("clean run", bomi, fleet, "enforce")

    evil = emit(ClassSpec(name="com/evil/xExportObject", utf8_constants=("payload",)))
    replay("injected class", bomi, fleet + [("com/evil/xExportObject", evil)], "enforce")

    mid = len(fleet) // 2
    name, data = fleet[mid]
    twisted = list(fleet)
    twisted[mid] = (name, tamper(data, "opcode"))
    replay("tampered class", bomi, twisted, "enforce")
    replay("tampered class, report only", bomi, twisted, "audit")
    return 0


if __name__ == "__main__":
    sys.exit(main())
