"""Message header extraction and dialect/header consistency rules."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable

from .dialect import Exact, MatchResult, SourceKind

MAILER_FIELDS = ("user-agent", "x-mailer")

# RFC 5322 field name: printable US-ASCII except colon
_FIELD = re.compile(r"([\x21-\x39\x3b-\x7e]+)[ \t]*:(.*)", re.DOTALL)


@dataclass(frozen=True)
class ImfHeader:
    fields: tuple[tuple[str, str], ...] = ()
    malformed: int = 0

    def get_all(self, name: str) -> list[str]:
        name = name.lower()
        return [v for n, v in self.fields if n.lower() == name]

    def get(self, name: str) -> str | None:
        values = self.get_all(name)
        return values[0] if values else None

    @property
    def mailer(self) -> str | None:
        for name in MAILER_FIELDS:
            value = self.get(name)
            if value is not None:
                return value
        return None

    @property
    def received_count(self) -> int:
        return len(self.get_all("received"))


def _lines(data: bytes) -> list[str]:
    out = []
    for raw in data.split(b"\n"):
        if raw.endswith(b"\r"):
            raw = raw[:-1]
        if raw.startswith(b"."):
            raw = raw[1:]
        out.append(raw.decode("utf-8", errors="replace"))
    if out and out[-1] == "" and data.endswith(b"\n"):
        out.pop()
    return out


def parse_imf(message: bytes) -> ImfHeader:
    """Parse the header block of a DATA body.

    Dot-stuffing is undone first. Header lines run up to the first empty
    line; folded continuation lines are unfolded; lines that are neither a
    field nor a continuation are counted in ``malformed`` and skipped.
    """
    fields: list[list[str]] = []
    malformed = 0
    for line in _lines(message):
        if line == "":
            break
        if line[0] in " \t":
            if fields:
                fields[-1][1] += line
            else:
                malformed += 1
            continue
        m = _FIELD.fullmatch(line)
        if m is None:
            malformed += 1
            continue
        fields.append([m.group(1), m.group(2)])
    return ImfHeader(tuple((n, v.strip()) for n, v in fields), malformed)


class AlertKind(str, enum.Enum):
    MAILER_MISMATCH = "MailerMismatch"
    TRACE_SPOOF_SERVER = "TraceSpoofServer"
    TRACE_SPOOF_CLIENT = "TraceSpoofClient"


@dataclass(frozen=True)
class Alert:
    kind: AlertKind
    detail: str = ""


def _mailer_matches(mailer: str, patterns: Iterable[str]) -> bool:
    lowered = mailer.lower()
    return any(p.lower() in lowered for p in patterns)


def check_consistency(result: MatchResult, header: ImfHeader) -> list[Alert]:
    """Compare what the dialect says about the sender with what the header claims.

    For an exact MUA match the mailer field must be present and name that
    client, and no ``Received`` trace may exist. An exact MTA match must
    carry a trace. Any other match (bots, libraries, unmatched dialects)
    alerts only when a mailer is claimed that the dialect cannot back.
    """
    mailer = header.mailer
    alerts = []
    if isinstance(result, Exact) and result.entry.source_kind is SourceKind.MUA:
        entry = result.entry
        if mailer is None:
            alerts.append(Alert(AlertKind.MAILER_MISMATCH, f"no mailer field, dialect is {entry.source_name}"))
        elif not _mailer_matches(mailer, entry.mailer_patterns):
            alerts.append(Alert(AlertKind.MAILER_MISMATCH, f"mailer {mailer!r}, dialect is {entry.source_name}"))
        if header.received_count > 0:
            alerts.append(
                Alert(
                    AlertKind.TRACE_SPOOF_SERVER,
                    f"{header.received_count} Received field(s) on direct {entry.source_name} delivery",
                )
            )
    elif isinstance(result, Exact) and result.entry.source_kind is SourceKind.MTA:
        if header.received_count == 0:
            alerts.append(
                Alert(AlertKind.TRACE_SPOOF_CLIENT, f"no Received trace from MTA {result.entry.source_name}")
            )
    elif mailer is not None:
        patterns = result.entry.mailer_patterns if isinstance(result, Exact) else ()
        if not _mailer_matches(mailer, patterns):
            alerts.append(Alert(AlertKind.MAILER_MISMATCH, f"mailer {mailer!r} not backed by dialect"))
    return alerts


def check_messages(result: MatchResult, bodies: Iterable[bytes]) -> list[Alert]:
    """Run the rules over every message of a session; one alert per kind."""
    seen: dict[AlertKind, Alert] = {}
    for body in bodies:
        for alert in check_consistency(result, parse_imf(body)):
            seen.setdefault(alert.kind, alert)
    return [seen[k] for k in AlertKind if k in seen]
