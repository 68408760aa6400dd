"""Command-line behavior: lifecycle, exit codes, stream discipline, config.

Most tests drive ``main()`` in-process for speed; the watch service and the
module entry point run as real subprocesses.
"""

from __future__ import annotations

import json
import signal
import socket
import subprocess
import sys
from pathlib import Path

import pytest

from bomi_guard import __version__
from bomi_guard.bomi import Bomi, BomiRecord, Source, load_bomi, write_bomi
from bomi_guard.canonical import CanonicalPolicy, OrderMode, canonical_checksum
from bomi_guard.cli import main
from bomi_guard.synthkit import ClassSpec, emit, tamper
from bomi_guard.wire import encode_frame, write_trace

from conftest import build_jar, build_jmod

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch):
    monkeypatch.delenv("BOMI_GUARD_CONFIG", raising=False)
    monkeypatch.setenv("COLUMNS", "80")


def run_cli(argv, capsys) -> tuple[int, str, str]:
    try:
        code = main(argv)
    except SystemExit as exc:  # argparse help/usage paths
        code = exc.code if isinstance(exc.code, int) else 2
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# --- shared fixtures ------------------------------------------------------------

APP_CLASSES = {
    "app/Main": emit(ClassSpec(name="app/Main", utf8_constants=("main",))),
    "app/Helper": emit(ClassSpec(name="app/Helper", utf8_constants=("helper",))),
}

EVIL = emit(ClassSpec(name="com/evil/xExportObject", utf8_constants=("pwn",)))


def write_allowlist(path: Path, classes=None) -> Path:
    bomi = Bomi()
    for name, data in (classes or APP_CLASSES).items():
        bomi.add(name, BomiRecord(canonical_checksum(data), Source.RUNTIME))
    with open(path, "w", encoding="utf-8") as fp:
        write_bomi(bomi, fp)
    return path


def write_attack_trace(path: Path) -> Path:
    events = [(name, data) for name, data in APP_CLASSES.items()]
    events.append(("com/evil/xExportObject", EVIL))
    events.append(("app/Main", APP_CLASSES["app/Main"]))  # never reached in enforce
    with open(path, "wb") as fp:
        write_trace(fp, events)
    return path


# --- version and usage -----------------------------------------------------------

def test_version_flag(capsys):
    code, out, _ = run_cli(["--version"], capsys)
    assert code == 0
    assert out.strip() == f"bomi-guard {__version__}"


def test_missing_command_is_usage_error(capsys):
    code, _, err = run_cli([], capsys)
    assert code == 2
    assert "usage:" in err


def test_unknown_command_is_usage_error(capsys):
    code, _, err = run_cli(["frobnicate"], capsys)
    assert code == 2


@pytest.mark.parametrize(
    "argv,golden",
    [
        (["--help"], "help_main.txt"),
        (["index-env", "--help"], "help_index_env.txt"),
        (["index-sbom", "--help"], "help_index_sbom.txt"),
        (["index-dynamic", "--help"], "help_index_dynamic.txt"),
        (["merge", "--help"], "help_merge.txt"),
        (["verify-trace", "--help"], "help_verify_trace.txt"),
        (["watch", "--help"], "help_watch.txt"),
        (["canonicalize", "--help"], "help_canonicalize.txt"),
        (["synth", "--help"], "help_synth.txt"),
    ],
)
def test_help_matches_golden(argv, golden, capsys):
    code, out, _ = run_cli(argv, capsys)
    assert code == 0
    assert out == (GOLDEN_DIR / golden).read_text(encoding="utf-8")


# --- indexing commands --------------------------------------------------------------

def test_index_env_writes_reproducible_part(tmp_path, capsys):
    jmods = tmp_path / "rt" / "jmods"
    jmods.mkdir(parents=True)
    (jmods / "java.base.jmod").write_bytes(
        build_jmod({"java/lang/Object": APP_CLASSES["app/Main"]})
    )
    out1, out2 = tmp_path / "one.ndjson", tmp_path / "two.ndjson"
    code, _, err = run_cli(["index-env", str(tmp_path / "rt"), "-o", str(out1)], capsys)
    assert code == 0
    assert "indexed 1 classes (1 records)" in err
    code, _, _ = run_cli(["index-env", str(tmp_path / "rt"), "-o", str(out2)], capsys)
    assert code == 0
    assert out1.read_bytes() == out2.read_bytes()
    with open(out1, encoding="utf-8") as fp:
        bomi = load_bomi(fp)
    assert "java/lang/Object" in bomi


def test_index_env_without_image_is_an_error(tmp_path, capsys):
    code, _, err = run_cli(["index-env", str(tmp_path), "-o", str(tmp_path / "x")], capsys)
    assert code == 2
    assert err.startswith("error: no jmods/ or modules/")


def test_index_dynamic_with_dedup(tmp_path, capsys):
    trace = tmp_path / "run.bomitrc"
    with open(trace, "wb") as fp:
        write_trace(fp, list(APP_CLASSES.items()))
    base_part = write_allowlist(tmp_path / "base.ndjson", {"app/Main": APP_CLASSES["app/Main"]})
    out = tmp_path / "dyn.ndjson"
    code, _, err = run_cli(
        ["index-dynamic", str(trace), "-o", str(out), "--dedup-against", str(base_part)],
        capsys,
    )
    assert code == 0
    assert "indexed 1 classes" in err
    with open(out, encoding="utf-8") as fp:
        bomi = load_bomi(fp)
    assert "app/Helper" in bomi and "app/Main" not in bomi


def test_index_sbom_offline_mirror(tmp_path, capsys):
    jar = tmp_path / "mirror" / "com" / "one" / "lib1" / "1.0" / "lib1-1.0.jar"
    jar.parent.mkdir(parents=True)
    jar.write_bytes(build_jar({"one/A.class": APP_CLASSES["app/Main"]}))
    sbom = tmp_path / "bom.json"
    sbom.write_text(json.dumps({"components": [{"purl": "pkg:maven/com.one/lib1@1.0"}]}))
    out = tmp_path / "sc.ndjson"
    code, _, err = run_cli(
        ["index-sbom", str(sbom), "-o", str(out),
         "--offline", "--mirror", str(tmp_path / "mirror")],
        capsys,
    )
    assert code == 0
    with open(out, encoding="utf-8") as fp:
        assert "one/A" in load_bomi(fp)


def test_index_sbom_without_registry_is_refused(tmp_path, capsys):
    sbom = tmp_path / "bom.json"
    sbom.write_text(json.dumps({"components": [{"purl": "pkg:maven/g/a@1"}]}))
    code, _, err = run_cli(["index-sbom", str(sbom), "-o", str(tmp_path / "x")], capsys)
    assert code == 2
    assert "error: refusing untrusted registry URL" in err


def test_merge_and_paper_format(tmp_path, capsys):
    part_a = write_allowlist(tmp_path / "a.ndjson", {"app/Main": APP_CLASSES["app/Main"]})
    part_b = write_allowlist(tmp_path / "b.ndjson", {"app/Helper": APP_CLASSES["app/Helper"]})
    merged = tmp_path / "merged.ndjson"
    code, _, err = run_cli(["merge", str(part_a), str(part_b), "-o", str(merged)], capsys)
    assert code == 0
    assert "merged 2 parts: 2 classes (2 records)" in err
    with open(merged, encoding="utf-8") as fp:
        bomi = load_bomi(fp)
    assert len(bomi) == 2

    listing = tmp_path / "listing.ndjson"
    code, _, _ = run_cli(
        ["merge", str(merged), "-o", str(listing), "--paper-format"], capsys
    )
    assert code == 0
    lines = [json.loads(l) for l in listing.read_text().splitlines()]
    assert [list(obj)[0] for obj in lines] == ["app/Helper", "app/Main"]
    assert all("checksum" in obj[next(iter(obj))][0] for obj in lines)


def test_merge_missing_part_is_an_error(tmp_path, capsys):
    code, _, err = run_cli(["merge", str(tmp_path / "nope"), "-o", str(tmp_path / "x")], capsys)
    assert code == 2
    assert err.startswith("error: ")


def test_malformed_index_is_an_error(tmp_path, capsys):
    bad = tmp_path / "bad.ndjson"
    bad.write_text("this is not ndjson\n")
    trace = write_attack_trace(tmp_path / "t.bomitrc")
    code, _, err = run_cli(["verify-trace", str(trace), "--bomi", str(bad)], capsys)
    assert code == 2
    assert "error: not JSON on line 1" in err


# --- verify-trace ---------------------------------------------------------------------

def test_verify_trace_enforce_stops_and_echoes(tmp_path, capsys):
    bomi = write_allowlist(tmp_path / "app.ndjson")
    trace = write_attack_trace(tmp_path / "t.bomitrc")
    code, out, err = run_cli(["verify-trace", str(trace), "--bomi", str(bomi)], capsys)
    assert code == 3
    assert out.strip() == "allowed=2 not_allowlisted=1 tampered=0 stopped_at=3"
    assert "[NOT ALLOWLISTED]: com/evil/xExportObject" in err


def test_verify_trace_audit_scans_all(tmp_path, capsys):
    bomi = write_allowlist(tmp_path / "app.ndjson")
    trace = write_attack_trace(tmp_path / "t.bomitrc")
    code, out, err = run_cli(
        ["verify-trace", str(trace), "--bomi", str(bomi), "--audit"], capsys
    )
    assert code == 3
    assert out.strip() == "allowed=3 not_allowlisted=1 tampered=0"


def test_verify_trace_tampered_echo(tmp_path, capsys):
    bomi = write_allowlist(tmp_path / "app.ndjson")
    trace = tmp_path / "t.bomitrc"
    with open(trace, "wb") as fp:
        write_trace(fp, [("app/Main", tamper(APP_CLASSES["app/Main"], "opcode"))])
    code, out, err = run_cli(["verify-trace", str(trace), "--bomi", str(bomi)], capsys)
    assert code == 3
    assert "[TAMPERED]: app/Main" in err
    assert out.strip() == "allowed=0 not_allowlisted=0 tampered=1 stopped_at=1"


def test_verify_trace_clean_run_exits_zero(tmp_path, capsys):
    bomi = write_allowlist(tmp_path / "app.ndjson")
    trace = tmp_path / "t.bomitrc"
    with open(trace, "wb") as fp:
        write_trace(fp, list(APP_CLASSES.items()))
    code, out, err = run_cli(["verify-trace", str(trace), "--bomi", str(bomi)], capsys)
    assert code == 0
    assert out.strip() == "allowed=2 not_allowlisted=0 tampered=0"
    assert "[NOT ALLOWLISTED]" not in err


# --- canonicalize and synth ---------------------------------------------------------

def test_canonicalize_prints_bare_digest(tmp_path, capsys):
    path = tmp_path / "Proxy.class"
    path.write_bytes(emit(ClassSpec(name="$Proxy{n}", seed=14)))
    code, out, err = run_cli(["canonicalize", str(path)], capsys)
    assert code == 0
    digest = out.strip()
    assert digest == canonical_checksum(path.read_bytes()).value
    assert "$Proxy14 -> foo" in err


def test_canonicalize_dump_and_fixed_name(tmp_path, capsys):
    from bomi_guard.classfile import parse_class

    path = tmp_path / "Proxy.class"
    path.write_bytes(emit(ClassSpec(name="$Proxy{n}", seed=14)))
    dumped = tmp_path / "canonical.class"
    code, out, err = run_cli(
        ["canonicalize", str(path), "--dump", str(dumped), "--fixed-name", "bar"],
        capsys,
    )
    assert code == 0
    assert parse_class(dumped.read_bytes()).class_name() == b"bar"
    assert out.strip() == canonical_checksum(
        path.read_bytes(), CanonicalPolicy(fixed_name="bar")
    ).value


def test_canonicalize_rejects_non_classfile(tmp_path, capsys):
    path = tmp_path / "junk.class"
    path.write_bytes(b"junk")
    code, _, err = run_cli(["canonicalize", str(path)], capsys)
    assert code == 2
    assert err.startswith("error: ")


def test_synth_output_feeds_index_dynamic(tmp_path, capsys):
    spec = {
        "specs": [
            {"name": "app/Main", "utf8_constants": ["main"],
             "methods": [["<init>", "()V", ["return"]],
                         ["run", "()V", ["ldc:0", "pop", "return"]]]},
            {"name": "$Proxy{n}", "seed": 14},
        ]
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out_dir = tmp_path / "dump"
    code, _, err = run_cli(["synth", str(spec_path), "-o", str(out_dir)], capsys)
    assert code == 0
    assert (out_dir / "0000.class").is_file()
    assert (out_dir / "0001.class").is_file()
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["entries"][1]["name"] == "$Proxy14"

    part = tmp_path / "part.ndjson"
    code, _, _ = run_cli(["index-dynamic", str(out_dir), "-o", str(part)], capsys)
    assert code == 0
    with open(part, encoding="utf-8") as fp:
        bomi = load_bomi(fp)
    assert [name for name, _ in bomi] == ["$Proxy14", "app/Main"]


def test_synth_is_deterministic(tmp_path, capsys):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps({"specs": [{"name": "A", "seed": 3}]}))
    code, _, _ = run_cli(["synth", str(spec_path), "-o", str(tmp_path / "d1")], capsys)
    assert code == 0
    code, _, _ = run_cli(["synth", str(spec_path), "-o", str(tmp_path / "d2")], capsys)
    assert code == 0
    assert (tmp_path / "d1" / "0000.class").read_bytes() == (
        tmp_path / "d2" / "0000.class"
    ).read_bytes()


# --- config file and precedence --------------------------------------------------------

def test_config_file_sets_canonical_policy(tmp_path, capsys):
    config = tmp_path / "guard.toml"
    config.write_text('[canonical]\nfixed_name = "qux"\n')
    path = tmp_path / "p.class"
    path.write_bytes(emit(ClassSpec(name="$Proxy{n}", seed=2)))
    code, out, err = run_cli(
        ["canonicalize", str(path), "--config", str(config)], capsys
    )
    assert code == 0
    assert "-> qux" in err


def test_config_via_environment_variable(tmp_path, capsys, monkeypatch):
    config = tmp_path / "guard.toml"
    config.write_text('[canonical]\nfixed_name = "envy"\n')
    monkeypatch.setenv("BOMI_GUARD_CONFIG", str(config))
    path = tmp_path / "p.class"
    path.write_bytes(emit(ClassSpec(name="$Proxy{n}", seed=2)))
    code, _, err = run_cli(["canonicalize", str(path)], capsys)
    assert code == 0
    assert "-> envy" in err


def test_flags_override_config(tmp_path, capsys):
    config = tmp_path / "guard.toml"
    config.write_text('[canonical]\nfixed_name = "fromconfig"\norder_mode = "byte_sort"\n')
    path = tmp_path / "p.class"
    path.write_bytes(emit(ClassSpec(name="$Proxy{n}", seed=2)))
    code, out, err = run_cli(
        ["canonicalize", str(path), "--config", str(config), "--fixed-name", "fromflag"],
        capsys,
    )
    assert code == 0
    assert "-> fromflag" in err
    # order_mode still comes from the config
    expected = canonical_checksum(
        path.read_bytes(),
        CanonicalPolicy(fixed_name="fromflag", order_mode=OrderMode.BYTE_SORT),
    )
    assert out.strip() == expected.value


def test_registry_config_section(tmp_path, capsys):
    mirror = tmp_path / "mirror"
    jar = mirror / "g" / "a" / "1" / "a-1.jar"
    jar.parent.mkdir(parents=True)
    jar.write_bytes(build_jar({"x/A.class": APP_CLASSES["app/Main"]}))
    config = tmp_path / "guard.toml"
    config.write_text(
        f'[registry]\noffline = true\nlocal_mirror_dir = "{mirror}"\n'
    )
    sbom = tmp_path / "bom.json"
    sbom.write_text(json.dumps({"components": [{"purl": "pkg:maven/g/a@1"}]}))
    out = tmp_path / "part.ndjson"
    code, _, err = run_cli(
        ["index-sbom", str(sbom), "-o", str(out), "--registry-config", str(config)],
        capsys,
    )
    assert code == 0
    with open(out, encoding="utf-8") as fp:
        assert "x/A" in load_bomi(fp)


def test_name_patterns_flag_replaces_defaults(tmp_path, capsys):
    path = tmp_path / "g.class"
    path.write_bytes(emit(ClassSpec(name="gen/Thing7", seed=1)))
    code, _, err = run_cli(
        ["canonicalize", str(path), "--name-pattern", r"gen/Thing\d+"], capsys
    )
    assert code == 0
    assert "gen/Thing7 -> foo" in err
    # and the defaults no longer apply under the replacement set
    proxy = tmp_path / "p.class"
    proxy.write_bytes(emit(ClassSpec(name="$Proxy{n}", seed=3)))
    code, _, err = run_cli(
        ["canonicalize", str(proxy), "--name-pattern", r"gen/Thing\d+"], capsys
    )
    assert code == 0
    assert "->" not in err


# --- watch subprocess -------------------------------------------------------------------

def start_watch(tmp_path: Path, *extra: str) -> tuple[subprocess.Popen, tuple[str, int]]:
    bomi = write_allowlist(tmp_path / "app.ndjson")
    proc = subprocess.Popen(
        [sys.executable, "-m", "bomi_guard", "watch", "--bomi", str(bomi), *extra],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, bufsize=1,
    )
    line = proc.stderr.readline().strip()
    assert line.startswith("listening on "), line
    host, _, port = line.removeprefix("listening on ").rpartition(":")
    return proc, (host, int(port))


def ask(address, name: str, data: bytes) -> bytes:
    with socket.create_connection(address, timeout=10) as sock:
        sock.sendall(encode_frame(name, data))
        reply = b""
        while len(reply) < 2:
            chunk = sock.recv(2 - len(reply))
            if not chunk:
                break
            reply += chunk
        return reply


def test_watch_subprocess_clean_exit(tmp_path):
    log = tmp_path / "incidents.ndjson"
    proc, address = start_watch(tmp_path, "--incident-log", str(log))
    try:
        assert ask(address, "app/Main", APP_CLASSES["app/Main"]) == b"\x00\x00"
    finally:
        proc.send_signal(signal.SIGTERM)
        code = proc.wait(timeout=15)
    assert code == 0
    lines = [json.loads(l) for l in log.read_text().splitlines()]
    assert len(lines) == 1 and lines[0]["action"] == "allow_sent"


def test_watch_subprocess_violation_exit(tmp_path):
    log = tmp_path / "incidents.ndjson"
    proc, address = start_watch(tmp_path, "--incident-log", str(log))
    try:
        assert ask(address, "com/evil/xExportObject", EVIL) == b"\x01\x01"
        # enforce mode: everything after the terminal verdict is denied
        assert ask(address, "app/Main", APP_CLASSES["app/Main"]) == b"\x01\x00"
    finally:
        proc.send_signal(signal.SIGTERM)
        code = proc.wait(timeout=15)
    assert code == 3
    lines = [json.loads(l) for l in log.read_text().splitlines()]
    assert [l["action"] for l in lines] == ["deny_sent", "deny_sent"]


def test_watch_audit_subprocess(tmp_path):
    log = tmp_path / "incidents.ndjson"
    proc, address = start_watch(tmp_path, "--audit", "--incident-log", str(log))
    try:
        assert ask(address, "com/evil/xExportObject", EVIL) == b"\x00\x00"
    finally:
        proc.send_signal(signal.SIGTERM)
        code = proc.wait(timeout=15)
    assert code == 3  # violations were observed even though replies allowed
    lines = [json.loads(l) for l in log.read_text().splitlines()]
    assert lines[0]["action"] == "report_only"


def test_watch_bad_listen_endpoint(tmp_path, capsys):
    bomi = write_allowlist(tmp_path / "app.ndjson")
    code, _, err = run_cli(
        ["watch", "--bomi", str(bomi), "--listen", "nonsense"], capsys
    )
    assert code == 2
    assert "error: bad --listen endpoint" in err


def test_module_entry_point_runs():
    out = subprocess.run(
        [sys.executable, "-m", "bomi_guard", "--version"],
        capture_output=True, text=True, timeout=60,
    )
    assert out.returncode == 0
    assert out.stdout.strip() == f"bomi-guard {__version__}"
