#!/usr/bin/env python3
"""Regenerate the pinned --help outputs under tests/golden/.

Run after any CLI surface change, then review the diff like any other code
change.  Width is pinned so the files do not depend on the invoking
terminal.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

os.environ["COLUMNS"] = "80"

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from bomi_guard.cli import _build_parser  # noqa: E402

COMMANDS = (
    None,
    "index-env",
    "index-sbom",
    "index-dynamic",
    "merge",
    "verify-trace",
    "watch",
    "canonicalize",
    "synth",
)


def main() -> None:
    golden_dir = Path(__file__).resolve().parents[1] / "tests" / "golden"
    golden_dir.mkdir(parents=True, exist_ok=True)
    parser = _build_parser()
    subparsers = next(
        a for a in parser._actions if isinstance(a, __import__("argparse")._SubParsersAction)
    )
    for command in COMMANDS:
        if command is None:
            text = parser.format_help()
            name = "help_main.txt"
        else:
            text = subparsers.choices[command].format_help()
            name = f"help_{command.replace('-', '_')}.txt"
        (golden_dir / name).write_text(text, encoding="utf-8")
        print(f"wrote {golden_dir / name}")


if __name__ == "__main__":
    main()
