"""Generate concrete conversations back from knowledge-base dialects.

``generate`` inverts tokenization: every Param token gets a seeded random
concrete value, every terminator is written byte-exactly, and message states
expand into a small header block. Tokenizing the result under the entry's
mode yields the entry's states again, whatever the seed.
"""

from __future__ import annotations

import json
import random
import string
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from . import seed
from .classifier import MatchedSource, Verdict, VerdictCategory, is_spam
from .dialect import Category, KbEntry, SourceKind
from .imf import Alert, AlertKind
from .tokenizer import (
    CRLF,
    LF,
    MESSAGE,
    NO_TERMINATOR,
    DialectState,
    Kind,
    Mode,
    Origin,
    REPEAT,
    Token,
    classify_word,
    parse_state,
    transaction_spans,
)
from .transcript import Conversation, Direction, Segment, dump_text

_TERMINATOR_BYTES = {CRLF.text: b"\r\n", LF.text: b"\n", NO_TERMINATOR.text: b""}
_TLDS = ("com", "net", "org", "pl", "de", "info", "test")
_REPLY_TEXT = ("Ok", "OK", "Accepted", "go ahead", "Sender ok", "Requested action completed")


class GenSpecError(ValueError):
    pass


@dataclass(frozen=True)
class ImfOverrides:
    mailer: str | None = None
    received_count: int = 0


@dataclass(frozen=True)
class GenSpec:
    entry: KbEntry
    transaction_count: int = 1
    imf_overrides: ImfOverrides | None = None

    def __post_init__(self):
        if self.transaction_count < 1:
            raise GenSpecError("transaction_count must be >= 1")


class _Values:
    """Seeded factory for concrete parameter values."""

    def __init__(self, rng: random.Random):
        self.rng = rng

    def label(self, lo=3, hi=9) -> str:
        n = self.rng.randint(lo, hi)
        return self.rng.choice(string.ascii_lowercase) + "".join(
            self.rng.choice(string.ascii_lowercase + string.digits) for _ in range(n - 1)
        )

    def domain(self) -> str:
        return f"{self.label()}.{self.rng.choice(_TLDS)}"

    def email(self) -> str:
        local = self.label(2, 8)
        if self.rng.random() < 0.3:
            local += self.rng.choice("._+-") + self.label(1, 4)
        return f"{local}@{self.domain()}"

    def ipv4(self) -> str:
        return ".".join(str(self.rng.randint(0, 255)) for _ in range(4))

    def text(self) -> str:
        while True:
            word = self.label(3, 10)
            if self.rng.random() < 0.3:
                word = word.capitalize()
            if classify_word(word).text == "text":
                return word

    def space(self) -> str:
        return self.rng.choice((" ", " ", " ", "  ", "\t"))

    def param(self, name: str) -> str:
        if name == "email":
            return self.email()
        if name == "IPv4":
            return self.ipv4()
        if name == "domain":
            return self.domain()
        return self.text()


def _render_tokens(tokens: Sequence[Token], values: _Values) -> bytes:
    out = []
    for tok in tokens:
        if tok.kind is Kind.SPACE:
            out.append(values.space())
        elif tok.kind is Kind.PARAM:
            out.append(values.param(tok.text))
        elif tok.kind in (Kind.WORD, Kind.PUNCT):
            out.append(tok.text)
        elif tok.kind is Kind.TERMINATOR:
            continue
        else:
            raise GenSpecError(f"token {tok.text!r} cannot appear inside a line")
    data = "".join(out).encode("latin-1")
    last = tokens[-1] if tokens else None
    if last is not None and last.kind is Kind.TERMINATOR:
        data += _TERMINATOR_BYTES[last.text]
    return data


def _render_server(state: DialectState, values: _Values, term: bytes = b"\r\n") -> bytes:
    tokens = state.tokens
    if not tokens or tokens[0].kind is not Kind.WORD or not tokens[0].text.isdigit():
        raise GenSpecError(f"cannot render server state {state.canonical!r}")
    code = tokens[0].text
    if state.is_extension:
        return (code + "-").encode("latin-1") + _render_tokens(tokens[2:], values) + term
    parts = [code] + [t.text for t in tokens[1:]] + [values.rng.choice(_REPLY_TEXT)]
    return " ".join(parts).encode("latin-1") + term


def _render_body(values: _Values, terminator: bytes, overrides: ImfOverrides) -> bytes:
    rng = values.rng
    host = values.domain()
    lines = []
    for _ in range(overrides.received_count):
        lines.append(
            f"Received: from {values.domain()} ([{values.ipv4()}])"
            f" by {host} with ESMTP id {values.label(8, 12).upper()}"
        )
    lines.append(f"Date: Tue, {rng.randint(1, 28)} Feb 2017 {rng.randint(0, 23):02d}:{rng.randint(0, 59):02d}:00 +0000")
    lines.append(f"From: <{values.email()}>")
    lines.append(f"To: <{values.email()}>")
    if overrides.mailer is not None:
        lines.append(f"X-Mailer: {overrides.mailer}")
    lines.append("")
    lines.append(" ".join(values.text() for _ in range(rng.randint(1, 6))))
    body = b"".join(line.encode("utf-8") + terminator for line in lines)
    return body + b"." + terminator


def _default_overrides(entry: KbEntry) -> ImfOverrides:
    mailer = entry.mailer_patterns[0] if entry.mailer_patterns else None
    received = 1 if entry.source_kind is SourceKind.MTA else 0
    return ImfOverrides(mailer, received)


def _client_word(state: DialectState) -> str | None:
    if state.origin is not Origin.CLIENT:
        return None
    word = state.first_word()
    return word.upper() if word else None


def _expand(entry: KbEntry, transaction_count: int) -> list[DialectState]:
    states = list(entry.dialect.states)
    has_repeat = any(s.is_repeat for s in states)
    if has_repeat and transaction_count < 2:
        raise GenSpecError(f"{entry.source_name}: dialect contains *repeat*, needs transaction_count >= 2")

    if entry.mode is Mode.M0 and len(states) >= 2:
        data, reply = states[-2], states[-1]
        if _client_word(data) == "DATA" and reply.origin is Origin.SERVER and reply.tokens[0].text == "354":
            # M0 stops at DATA; finish the session so it is a real transfer
            term = data.tokens[-1] if data.tokens[-1] is not NO_TERMINATOR else CRLF
            states += [
                MESSAGE,
                parse_state("250 2.0.0"),
                DialectState((Token(Kind.WORD, "QUIT"), term), Origin.CLIENT),
                parse_state("221 2.0.0"),
            ]

    if has_repeat:
        r = next(i for i, s in enumerate(states) if s.is_repeat)
        spans = transaction_spans(states[:r])
        if not spans:
            raise GenSpecError(f"{entry.source_name}: *repeat* without a preceding transaction")
        start, end = spans[0]
        gap = states[end:r]
        txn = states[start:end]
        return states[:end] + (gap + txn) * (transaction_count - 1) + states[r + 1 :]

    if transaction_count > 1:
        spans = transaction_spans(states)
        if spans:
            start, end = spans[0]
            term = states[start].tokens[-1] if states[start].tokens[-1] is not NO_TERMINATOR else CRLF
            gap = [
                DialectState((Token(Kind.WORD, "RSET"), term), Origin.CLIENT),
                parse_state("250 2.0.0"),
            ]
            txn = states[start:end]
            return states[:end] + (gap + txn) * (transaction_count - 1) + states[end:]
    return states


def generate(spec: GenSpec, seed: int, stream_id: str | None = None) -> Conversation:
    """Build a conversation that tokenizes back to ``spec.entry``'s states."""
    entry = spec.entry
    if not entry.dialect.states:
        raise GenSpecError("entry has no states")
    rng = random.Random(f"{entry.hash}:{spec.transaction_count}:{seed}")
    values = _Values(rng)
    overrides = spec.imf_overrides or _default_overrides(entry)

    # an LF-only client talks to a server answering in kind, so no CRLF leaks in
    client_terms = {s.tokens[-1].text for s in entry.dialect.states
                    if s.origin is Origin.CLIENT and s.tokens and s.tokens[-1].kind is Kind.TERMINATOR}
    server_term = b"\n" if client_terms == {LF.text} else b"\r\n"

    lines: list[tuple[Direction, bytes]] = []
    last_client_term = b"\r\n"
    for state in _expand(entry, spec.transaction_count):
        if state is REPEAT or state.is_repeat:
            raise GenSpecError("unexpanded *repeat*")
        if state.is_message:
            lines.append((Direction.CLIENT, _render_body(values, last_client_term or b"\r\n", overrides)))
        elif state.origin is Origin.SERVER:
            lines.append((Direction.SERVER, _render_server(state, values, server_term)))
        else:
            data = _render_tokens(state.tokens, values)
            last_client_term = _TERMINATOR_BYTES[state.tokens[-1].text]
            lines.append((Direction.CLIENT, data))

    segments = _segment(lines, rng)
    sid = stream_id or f"gen-{entry.mode.value.lower()}-{entry.hash[:12]}-{spec.transaction_count}-{seed}"
    return Conversation(sid, tuple(segments))


def _segment(lines: list[tuple[Direction, bytes]], rng: random.Random) -> list[Segment]:
    """Group lines into direction runs, then cut some runs at random offsets."""
    runs: list[tuple[Direction, bytearray]] = []
    for direction, data in lines:
        if not data:
            continue
        if runs and runs[-1][0] is direction:
            runs[-1][1].extend(data)
        else:
            runs.append((direction, bytearray(data)))
    segments = []
    for direction, data in runs:
        cuts = []
        if len(data) > 1 and rng.random() < 0.25:
            cuts = sorted(rng.sample(range(1, len(data)), k=min(2, len(data) - 1)))
        prev = 0
        for cut in cuts + [len(data)]:
            segments.append(Segment(direction, bytes(data[prev:cut])))
            prev = cut
    return segments


def ip_pool(count: int, seed: int = 0) -> list[str]:
    """``count`` distinct addresses from 10.0.0.0/8, seeded."""
    if not 0 <= count <= 1 << 24:
        raise GenSpecError("ip pool size out of range")
    rng = random.Random(f"ips:{seed}")
    return [f"10.{n >> 16}.{(n >> 8) & 255}.{n & 255}" for n in rng.sample(range(1 << 24), count)]


def synthetic_corpus(entry: KbEntry, count: int, ip_count: int, seed: int = 0,
                     prefix: str | None = None) -> list[Conversation]:
    """``count`` conversations in ``entry``'s dialect from exactly ``ip_count`` sources.

    Addresses are dealt round-robin, so every address in the pool is used
    when ``count >= ip_count``.
    """
    if count < 0 or ip_count < 1 or ip_count > max(count, 1):
        raise GenSpecError("need 1 <= ip_count <= count")
    tc = 2 if any(s.is_repeat for s in entry.dialect.states) else 1
    spec = GenSpec(entry, transaction_count=tc)
    ips = ip_pool(ip_count, seed)
    prefix = prefix or f"syn-{entry.mode.value.lower()}-{entry.hash[:8]}"
    return [
        replace(generate(spec, seed * 1_000_003 + i, f"{prefix}-{i:06d}"), src_ip=ips[i % ip_count])
        for i in range(count)
    ]


# -- anomaly fixture corpus --------------------------------------------------

FIXTURE_VERSION = "v1"


@dataclass(frozen=True)
class FixtureCase:
    name: str
    conversation: Conversation
    expected: Verdict


def _expect(stream_id, category, source=None, alerts=(), src_ip=None) -> Verdict:
    matched = None
    if source is not None:
        p = seed.profile(source)
        matched = MatchedSource(p.name, p.kind, p.category)
    alert_objs = tuple(Alert(k) for k in alerts)
    return Verdict(
        stream_id=stream_id,
        mode=Mode.M1,
        category=category,
        matched_source=matched,
        alerts=alert_objs,
        treated_as_spam=is_spam(category, alert_objs, True),
        src_ip=src_ip,
    )


EFAX_BOT = seed.Profile(
    "eFax campaign bot",
    Category.MALICIOUS,
    SourceKind.BOT,
    "HELO {domain}",
    mail="MAIL FROM: <{email}>",
    rcpt="RCPT TO: <{email}>",
    quit=None,
    mailer="iPhone Mail (14D27)",
)


def _scanner(stream_id: str, src_ip: str) -> Conversation:
    srv = seed.SERVERS["postfix"]
    server_hello = "".join(line + "\r\n" for line in (srv.greeting,))
    ehlo = "".join(line + "\r\n" for line in srv.ehlo)
    segments = (
        Segment(Direction.SERVER, server_hello.encode()),
        Segment(Direction.CLIENT, b"EHLO scanner01\r\n"),
        Segment(Direction.SERVER, ehlo.encode()),
        Segment(Direction.CLIENT, b"STARTTLS\r\n"),
        Segment(Direction.SERVER, (srv.starttls + "\r\n").encode()),
    )
    return Conversation(stream_id, segments, src_ip=src_ip)


def fixture_corpus() -> list[FixtureCase]:
    """Hand-picked anomaly cases with their expected M1 verdicts (imf_ext on)
    against the bundled seed knowledge base."""
    thunderbird = seed.profile("Mozilla Thunderbird")
    apple = seed.profile("Apple Mail")
    A = AlertKind
    V = VerdictCategory
    cases = [
        ("a-efax-bot", seed.render(EFAX_BOT, "postfix", 1, src_ip="198.51.100.7"),
         V.MALICIOUS, None, [A.MAILER_MISMATCH]),
        ("a-apple-genuine", seed.render(apple, "postfix", 1, src_ip="192.0.2.10"),
         V.KNOWN, "Apple Mail", []),
        ("b-lf-terminators", seed.render(replace(thunderbird, terminator=b"\n"), "postfix", 1,
                                         src_ip="198.51.100.23"),
         V.MALICIOUS, None, [A.MAILER_MISMATCH]),
        ("c-quit-space", seed.render(replace(thunderbird, quit="QUIT "), "postfix", 1,
                                     src_ip="198.51.100.41"),
         V.MALICIOUS, None, [A.MAILER_MISMATCH]),
        ("c-quit-twin", seed.render(thunderbird, "postfix", 2, src_ip="192.0.2.11"),
         V.KNOWN, "Mozilla Thunderbird", []),
        ("d-starttls-probe", _scanner("", "203.0.113.5"), V.SCAN, None, []),
        ("e-thunderbird", seed.render(thunderbird, "exchange", 3, src_ip="192.0.2.12"),
         V.KNOWN, "Mozilla Thunderbird", []),
        ("f-mailer-spoof", seed.render(thunderbird, "postfix", 4, src_ip="198.51.100.60",
                                       mailer="Microsoft Outlook 14.0"),
         V.KNOWN, "Mozilla Thunderbird", [A.MAILER_MISMATCH]),
        ("g-client-claims-relay", seed.render(thunderbird, "postfix", 5, src_ip="198.51.100.61", received=2),
         V.KNOWN, "Mozilla Thunderbird", [A.TRACE_SPOOF_SERVER]),
        ("h-mta-without-trace", seed.render(seed.profile("Postfix"), "postfix", 6, src_ip="198.51.100.62",
                                            received=0),
         V.KNOWN, "Postfix", [A.TRACE_SPOOF_CLIENT]),
        ("i-client-sends-greeting", _with_greeting(seed.render(seed.profile("Evolution"), "postfix", 7,
                                                               src_ip="198.51.100.63")),
         V.MALICIOUS, None, [A.MAILER_MISMATCH]),
        ("j-bulk-rset", seed.render(replace(seed.profile("Upatre"), transactions=12), "postfix", 8,
                                    src_ip="198.51.100.64"),
         V.MALICIOUS, "Upatre", []),
        ("k-kelihos", seed.render(seed.profile("Kelihos"), "postfix", 9, src_ip="198.51.100.65"),
         V.MALICIOUS, "Kelihos", []),
    ]
    out = []
    for name, conv, category, source, alerts in cases:
        sid = f"fx-{name}"
        conv = replace(conv, stream_id=sid)
        out.append(FixtureCase(name, conv, _expect(sid, category, source, alerts, conv.src_ip)))
    return out


def _with_greeting(conv: Conversation) -> Conversation:
    """Insert a client-sent server greeting right after the real one."""
    first, *rest = conv.segments
    bogus = Segment(Direction.CLIENT, b"220 relay.example.com ESMTP Welcome\r\n")
    return replace(conv, segments=(first, bogus, *rest))


def write_fixture_corpus(directory) -> list[Path]:
    """Write ``transcripts/<name>.smtp`` per fixture plus ``expected.jsonl``.

    Transcripts get their own directory so it can be passed straight to
    ``dialektor analyze``.
    """
    directory = Path(directory)
    (directory / "transcripts").mkdir(parents=True, exist_ok=True)
    written = []
    expected = []
    for case in fixture_corpus():
        path = directory / "transcripts" / f"{case.name}.smtp"
        path.write_text(dump_text([case.conversation]), encoding="utf-8")
        written.append(path)
        expected.append(json.dumps(case.expected.to_record(), sort_keys=True))
    exp = directory / "expected.jsonl"
    exp.write_text("\n".join(expected) + "\n", encoding="utf-8")
    written.append(exp)
    return written
