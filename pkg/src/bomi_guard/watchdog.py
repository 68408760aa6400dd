"""Load-event verification: offline trace replay and the live watch service.

Replay walks a recorded trace against an index; in enforce mode it stops at
the first non-ALLOWED event (the position a running application would have
been halted at), in audit mode it scans everything and reports.

The TCP service answers one verdict per request frame, in order, per
connection.  It is fail-closed twice over: an ALLOW is only ever sent for a
(name, digest) pair present in the index, and in enforce mode every event
after a terminal verdict is denied, because the application being guarded is
already condemned.  Each verdict is appended to the incident log *before*
the reply is sent, so no class can be admitted without a durable record.
"""

from __future__ import annotations

import json
import logging
import socketserver
import threading
import time
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, IO, Iterable

from .bomi import Bomi, Checksum, Verdict, VerdictKind
from .canonical import CanonicalPolicy, DEFAULT_POLICY, canonical_checksum
from .classfile import ClassParseError
from .wire import (
    REASON_NONE,
    REASON_NOT_ALLOWLISTED,
    REASON_TAMPERED,
    STATUS_ALLOW,
    STATUS_DENY,
    FrameError,
    encode_response,
    read_frame,
)

__all__ = (
    "LoadEvent",
    "Incident",
    "Report",
    "verify_event",
    "run_trace",
    "WatchdogServer",
    "serve",
)

logger = logging.getLogger(__name__)

_REASON_OF = {
    VerdictKind.ALLOWED: REASON_NONE,
    VerdictKind.NOT_ALLOWLISTED: REASON_NOT_ALLOWLISTED,
    VerdictKind.TAMPERED: REASON_TAMPERED,
}

ACTION_ALLOW_SENT = "allow_sent"
ACTION_DENY_SENT = "deny_sent"
ACTION_PROCESS_EXIT = "process_exit"
ACTION_REPORT_ONLY = "report_only"


@dataclass(frozen=True)
class LoadEvent:
    seq: int
    class_name: str
    data: bytes


@dataclass(frozen=True)
class Incident:
    seq: int
    ts: float
    verdict: Verdict
    action: str


@dataclass
class Report:
    allowed: int = 0
    not_allowlisted: int = 0
    tampered: int = 0
    incidents: list[Incident] = field(default_factory=list)
    stopped_at: int | None = None

    @property
    def violation(self) -> bool:
        return bool(self.incidents)

    @property
    def counts(self) -> dict[str, int]:
        return {
            "allowed": self.allowed,
            "not_allowlisted": self.not_allowlisted,
            "tampered": self.tampered,
        }


def verify_event(bomi: Bomi, name: str, data: bytes,
                 policy: CanonicalPolicy = DEFAULT_POLICY) -> Verdict:
    """Canonical checksum plus index lookup.  Bytes that do not parse as a
    classfile cannot have been indexed, so they come back NOT_ALLOWLISTED
    with the parse diagnostic attached."""
    try:
        checksum = canonical_checksum(data, policy)
    except ClassParseError as exc:
        return Verdict(VerdictKind.NOT_ALLOWLISTED, name, None, (),
                       detail=f"unparseable class: {exc}")
    return bomi.lookup(name, checksum)


def run_trace(bomi: Bomi, events: Iterable[LoadEvent], mode: str = "enforce",
              policy: CanonicalPolicy = DEFAULT_POLICY,
              on_verdict: Callable[[LoadEvent, Verdict], None] | None = None) -> Report:
    if mode not in ("enforce", "audit"):
        raise ValueError(f"unknown mode {mode!r}")
    report = Report()
    for event in events:
        verdict = verify_event(bomi, event.class_name, event.data, policy)
        if on_verdict is not None:
            on_verdict(event, verdict)
        if verdict.kind is VerdictKind.ALLOWED:
            report.allowed += 1
            continue
        if verdict.kind is VerdictKind.NOT_ALLOWLISTED:
            report.not_allowlisted += 1
        else:
            report.tampered += 1
        if mode == "enforce":
            report.incidents.append(
                Incident(event.seq, time.time(), verdict, ACTION_PROCESS_EXIT)
            )
            report.stopped_at = event.seq
            break
        report.incidents.append(
            Incident(event.seq, time.time(), verdict, ACTION_REPORT_ONLY)
        )
    return report


def _incident_line(seq: int, ts: float, verdict: Verdict, action: str) -> str:
    return json.dumps(
        {
            "ts": round(ts, 6),
            "seq": seq,
            "class": verdict.class_name,
            "verdict": verdict.kind.value,
            "actual": verdict.actual_checksum.value if verdict.actual_checksum else None,
            "expected": [c.value for c in verdict.expected_checksums],
            "action": action,
        },
        separators=(",", ":"),
    )


def _post_webhook(url: str, line: str) -> None:
    def _send():
        try:
            req = urllib.request.Request(
                url, data=line.encode("utf-8"),
                headers={"Content-Type": "application/json"}, method="POST",
            )
            urllib.request.urlopen(req, timeout=5).close()
        except Exception as exc:  # best effort, never blocks a verdict
            logger.warning("webhook post failed: %s", exc)

    threading.Thread(target=_send, daemon=True).start()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server: WatchdogServer = self.server.owner  # type: ignore[attr-defined]
        while True:
            try:
                frame = read_frame(self.rfile)
            except FrameError as exc:
                logger.info("dropping connection on bad frame: %s", exc)
                return
            if frame is None:
                return
            name, data = frame
            reply = server.process(name, data)
            try:
                self.wfile.write(reply)
                self.wfile.flush()
            except OSError:
                return


class _TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class WatchdogServer:
    """TCP watch service.  ``process`` is the whole policy: verdict, then
    durable log append, then the two-byte reply."""

    def __init__(self, bomi: Bomi, host: str = "127.0.0.1", port: int = 0,
                 mode: str = "enforce", policy: CanonicalPolicy = DEFAULT_POLICY,
                 incident_log: IO[str] | None = None, webhook: str | None = None):
        if mode not in ("enforce", "audit"):
            raise ValueError(f"unknown mode {mode!r}")
        self.bomi = bomi
        self.mode = mode
        self.policy = policy
        self.webhook = webhook
        self._log = incident_log
        self._lock = threading.Lock()
        self._seq = 0
        self._terminated = False
        self.violations = 0
        self._tcp = _TcpServer((host, port), _Handler)
        self._tcp.owner = self
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._tcp.server_address[:2]

    def process(self, name: str, data: bytes) -> bytes:
        verdict = verify_event(self.bomi, name, data, self.policy)
        allowed = verdict.kind is VerdictKind.ALLOWED
        with self._lock:
            self._seq += 1
            seq = self._seq
            if self.mode == "enforce":
                if not allowed:
                    self._terminated = True
                deny = self._terminated
            else:
                deny = False
            if allowed and not deny:
                action = ACTION_ALLOW_SENT
                reply = encode_response(STATUS_ALLOW, REASON_NONE)
            elif self.mode == "audit":
                action = ACTION_REPORT_ONLY
                reply = encode_response(STATUS_ALLOW, REASON_NONE)
            else:
                action = ACTION_DENY_SENT
                reply = encode_response(STATUS_DENY, _REASON_OF[verdict.kind])
            if not allowed:
                self.violations += 1
            line = _incident_line(seq, time.time(), verdict, action)
            if self._log is not None:
                self._log.write(line + "\n")
                self._log.flush()
        if not allowed and self.webhook:
            _post_webhook(self.webhook, line)
        return reply

    def start(self) -> None:
        self._thread = threading.Thread(target=self._tcp.serve_forever, daemon=True)
        self._thread.start()

    def serve_forever(self) -> None:
        self._tcp.serve_forever()

    def shutdown(self) -> None:
        self._tcp.shutdown()
        self._tcp.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve(bomi: Bomi, host: str, port: int, **kwargs) -> WatchdogServer:
    """Construct and start a watch service; returns the running server."""
    server = WatchdogServer(bomi, host, port, **kwargs)
    server.start()
    return server
