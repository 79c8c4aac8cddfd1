"""Reference client profiles and the bundled seed knowledge base.

Each profile describes how one client family talks SMTP: greeting verb and
argument form, command casing and spacing, optional STARTTLS/AUTH steps,
terminators, whether it says QUIT. Rendering a profile against a reference
server yields a transcript; deriving dialect entries from those transcripts
under every mode produces the seed knowledge base.

The dialect shapes are synthetic stand-ins for the named client inventory,
not captures of the real programs.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from importlib import resources
from typing import Iterable

from .dialect import (
    Category,
    Dialect,
    KBConflict,
    KbEntry,
    KnowledgeBase,
    SourceKind,
    dumps_kb,
    loads_kb,
)
from .tokenizer import Mode, tokenize_conversation
from .transcript import Conversation, Direction, Segment

log = logging.getLogger(__name__)

SEED_KB_RESOURCE = "seed_kb.jsonl"
DEFAULT = object()


@dataclass(frozen=True)
class Server:
    name: str
    greeting: str
    ehlo: tuple[str, ...]
    helo: str
    mail: str = "250 2.1.0 Ok"
    rcpt: str = "250 2.1.5 Ok"
    data: str = "354 End data with <CR><LF>.<CR><LF>"
    end: str = "250 2.0.0 Ok: queued as {queue}"
    rset: str = "250 2.0.0 Ok"
    quit: str = "221 2.0.0 Bye"
    starttls: str = "220 2.0.0 Ready to start TLS"


SERVERS = {
    "postfix": Server(
        "postfix",
        greeting="220 mx.reference.test ESMTP Postfix",
        ehlo=(
            "250-mx.reference.test",
            "250-PIPELINING",
            "250-SIZE 10240000",
            "250-STARTTLS",
            "250-AUTH PLAIN LOGIN",
            "250-8BITMIME",
            "250 SMTPUTF8",
        ),
        helo="250 mx.reference.test",
    ),
    # same replies, shorter extension list: only M2 can tell the captures apart
    "postfix-lite": Server(
        "postfix-lite",
        greeting="220 mx2.reference.test ESMTP Postfix",
        ehlo=("250-mx2.reference.test", "250-PIPELINING", "250-SIZE 10240000", "250 8BITMIME"),
        helo="250 mx2.reference.test",
    ),
    "exchange": Server(
        "exchange",
        greeting="220 mail.contoso.test Microsoft ESMTP MAIL Service ready",
        ehlo=(
            "250-mail.contoso.test Hello [{ip}]",
            "250-SIZE 37748736",
            "250-PIPELINING",
            "250-DSN",
            "250-ENHANCEDSTATUSCODES",
            "250-STARTTLS",
            "250-AUTH NTLM LOGIN",
            "250-8BITMIME",
            "250 CHUNKING",
        ),
        helo="250 mail.contoso.test Hello [{ip}]",
        mail="250 2.1.0 Sender OK",
        rcpt="250 2.1.5 Recipient OK",
        data="354 Start mail input; end with <CRLF>.<CRLF>",
        end="250 2.6.0 <{queue}@mail.contoso.test> Queued mail for delivery",
        quit="221 2.0.0 Service closing transmission channel",
    ),
}


@dataclass(frozen=True)
class Profile:
    name: str
    category: Category
    kind: SourceKind
    greeting: str
    mail: str = "MAIL FROM:<{email}>"
    rcpt: str = "RCPT TO:<{email}>"
    data: str = "DATA"
    quit: str | None = "QUIT"
    starttls: str | None = None
    auth: tuple[str, ...] = ()
    rcpt_count: int = 1
    transactions: int = 1
    between: str = "RSET"
    terminator: bytes = b"\r\n"
    mailer: str | None = None
    mailer_header: str = "X-Mailer"
    mailer_patterns: tuple[str, ...] = ()
    servers: tuple[str, ...] = ("postfix",)


B = Category.BENIGN
S = Category.SUSPICIOUS
M = Category.MALICIOUS
AUTH_LOGIN = ("AUTH LOGIN", "dXNlcm5hbWU=", "cGFzc3dvcmQ=")
AUTH_PLAIN = ("AUTH PLAIN AHVzZXIAcGFzc3dvcmQ=",)

PROFILES: tuple[Profile, ...] = (
    # benign MUAs
    Profile("Mozilla Thunderbird", B, SourceKind.MUA, "EHLO [{ip}]", mail="MAIL FROM:<{email}> SIZE={n}",
            mailer="Mozilla/5.0 (Windows NT 6.1; WOW64; rv:45.0) Gecko/20100101 Thunderbird/45.7.0",
            mailer_header="User-Agent", mailer_patterns=("Thunderbird",),
            servers=("postfix", "postfix-lite", "exchange")),
    Profile("Microsoft Outlook", B, SourceKind.MUA, "EHLO {host}", auth=AUTH_LOGIN,
            mailer="Microsoft Outlook 16.0", mailer_patterns=("Microsoft Outlook", "Outlook"),
            servers=("postfix", "exchange")),
    Profile("Claws Mail", B, SourceKind.MUA, "EHLO {domain}", mail="MAIL FROM:<{email}> SIZE={n}",
            mailer="Claws Mail 3.14.1 (GTK+ 2.24.31; x86_64-pc-linux-gnu)", mailer_patterns=("Claws Mail",),
            servers=("postfix", "postfix-lite")),
    Profile("Evolution", B, SourceKind.MUA, "EHLO [{ip}]", mailer="Evolution 3.22.6-1",
            mailer_patterns=("Evolution",), servers=("postfix", "postfix-lite")),
    Profile("Windows Live Mail", B, SourceKind.MUA, "EHLO {host}", auth=AUTH_LOGIN, rcpt_count=2,
            mailer="Microsoft Windows Live Mail 16.4.3528.331", mailer_patterns=("Windows Live Mail",)),
    Profile("Opera Mail", B, SourceKind.MUA, "EHLO [{ip}]", mail="MAIL FROM:<{email}> BODY=8BITMIME",
            mailer="Opera Mail/1.0 (Win32)", mailer_header="User-Agent", mailer_patterns=("Opera Mail",)),
    Profile("The Bat!", B, SourceKind.MUA, "EHLO {domain}", starttls="STARTTLS",
            mailer="The Bat! (v8.1.0) Professional", mailer_patterns=("The Bat!",),
            servers=("postfix", "exchange")),
    Profile("Pegasus Mail", B, SourceKind.MUA, "EHLO {domain}", auth=AUTH_PLAIN,
            mailer="Pegasus Mail for Windows (4.73)", mailer_patterns=("Pegasus Mail",)),
    Profile("Apple Mail", B, SourceKind.MUA, "EHLO [{ip}]", mail="MAIL FROM:<{email}> BODY=8BITMIME SIZE={n}",
            mailer="Apple Mail (2.3259)", mailer_patterns=("Apple Mail",),
            servers=("postfix", "postfix-lite", "exchange")),
    Profile("iPhone/iPad Mail", B, SourceKind.MUA, "EHLO [{ip}]", auth=AUTH_PLAIN,
            mail="MAIL FROM:<{email}> BODY=8BITMIME SIZE={n}",
            mailer="iPhone Mail (14D27)", mailer_patterns=("iPhone Mail", "iPad Mail", "iPod Mail"),
            servers=("postfix", "exchange")),
    Profile("PHPMailer", B, SourceKind.MUA, "EHLO {domain}", auth=AUTH_LOGIN, starttls="STARTTLS",
            mailer="PHPMailer 5.2.22 (https://github.com/PHPMailer/PHPMailer)", mailer_patterns=("PHPMailer",),
            servers=("postfix", "postfix-lite")),
    Profile("Google Android Mail Client", B, SourceKind.MUA, "EHLO [{ip}]", starttls="STARTTLS",
            auth=AUTH_PLAIN, mailer="Android Mail 7.1", mailer_patterns=("Android",),
            servers=("postfix", "exchange")),
    # benign MTAs
    Profile("Postfix", B, SourceKind.MTA, "EHLO {domain}", starttls="STARTTLS",
            mail="MAIL FROM:<{email}> SIZE={n}", servers=("postfix", "postfix-lite", "exchange")),
    Profile("Windows Exchange Server", B, SourceKind.MTA, "EHLO {domain}", starttls="STARTTLS",
            mail="MAIL FROM:<{email}> SIZE={n} BODY=8BITMIME", servers=("postfix", "exchange")),
    Profile("Gmail", B, SourceKind.MTA, "EHLO {domain}", starttls="STARTTLS",
            mail="MAIL FROM:<{email}> SIZE={n}", rcpt_count=2, servers=("postfix", "postfix-lite")),
    Profile("Zimbra", B, SourceKind.MTA, "EHLO {domain}", mail="MAIL FROM:<{email}> BODY=8BITMIME",
            servers=("postfix", "exchange")),
    # suspicious libraries
    Profile("Python smtplib", S, SourceKind.LIBRARY, "ehlo {host}", mail="mail FROM:<{email}>",
            rcpt="rcpt TO:<{email}>", data="data", quit="quit", servers=("postfix", "postfix-lite")),
    Profile("C/C++ libcurl", S, SourceKind.LIBRARY, "EHLO {host}", mail="MAIL FROM:<{email}> SIZE={n}"),
    Profile("C/C++ poco", S, SourceKind.LIBRARY, "HELO {host}"),
    Profile("JavaMail", S, SourceKind.LIBRARY, "EHLO {host}", rcpt_count=2, servers=("postfix", "exchange")),
    Profile("C# net.mail", S, SourceKind.LIBRARY, "EHLO {domain}", auth=AUTH_LOGIN, rcpt="RCPT TO:<{email}>",
            quit=None),
    Profile("Perl NET::SMTP", S, SourceKind.LIBRARY, "EHLO {host}"),
    Profile("AutoIt InetSmtMail", S, SourceKind.LIBRARY, "HELO {host}", mail="MAIL FROM: {email}",
            rcpt="RCPT TO: {email}"),
    Profile("Powershell Send-MailMessage", S, SourceKind.LIBRARY, "EHLO {host}", starttls="STARTTLS",
            quit=None),
    Profile("VBA SMTP library", S, SourceKind.LIBRARY, "HELO {host}", mail="MAIL FROM:<{email}>",
            rcpt="RCPT TO:<{email}>", auth=AUTH_LOGIN),
    # bots
    Profile("Geodo/Feodo", M, SourceKind.BOT, "EHLO {ip}", quit="QUIT"),
    Profile("Htbot", M, SourceKind.BOT, "HELO {host}", mail="MAIL From:<{email}>", rcpt="RCPT To:<{email}>"),
    Profile("Kelihos", M, SourceKind.BOT, "HELO {domain}", mail="MAIL FROM:<{email}>",
            rcpt="RCPT TO:<{email}>", quit=None),
    Profile("Sality", M, SourceKind.BOT, "HELO {host}", mail="MAIL FROM:{email}", rcpt="RCPT TO:{email}"),
    Profile("Upatre", M, SourceKind.BOT, "EHLO {host}", mail="MAIL FROM: <{email}>", transactions=3),
    Profile("Vawtrak", M, SourceKind.BOT, "EHLO {domain}", mail="mail from:<{email}>",
            rcpt="rcpt to:<{email}>", data="data", quit="quit"),
    Profile("Zbot", M, SourceKind.BOT, "EHLO [{ip}]", mail="MAIL FROM:<{email}>",
            rcpt="RCPT TO:<{email}>", data="DATA", quit="QUIT", rcpt_count=3),
)


def profile(name: str) -> Profile:
    for p in PROFILES:
        if p.name == name:
            return p
    raise KeyError(name)


class _Filler:
    def __init__(self, rng: random.Random):
        self.rng = rng

    def word(self) -> str:
        return self.rng.choice(("alpha", "kowalski", "nowak", "office", "desk", "ws", "pc")) + str(
            self.rng.randint(1, 99)
        )

    def fill(self, template: str) -> str:
        rng = self.rng
        return template.format(
            ip=".".join(str(rng.randint(1, 254)) for _ in range(4)),
            host=self.word(),
            domain=f"{self.word()}.example.{rng.choice(('com', 'net', 'pl'))}",
            email=f"{self.word()}@{self.word()}.example.com",
            n=rng.randint(1000, 99999),
            queue="".join(rng.choice("0123456789ABCDEF") for _ in range(10)),
        )


def render(p: Profile, server: str | Server = "postfix", seed: int = 0, *,
           stream_id: str | None = None, src_ip: str | None = None,
           mailer=DEFAULT, received: int | None = None) -> Conversation:
    """Render one session of profile ``p`` talking to a reference server."""
    srv = SERVERS[server] if isinstance(server, str) else server
    rng = random.Random(f"{p.name}:{srv.name}:{seed}")
    fill = _Filler(rng).fill
    term = p.terminator
    lines: list[tuple[Direction, bytes]] = []

    def client(text: str):
        lines.append((Direction.CLIENT, fill(text).encode("latin-1") + term))

    def reply(*texts: str):
        for t in texts:
            lines.append((Direction.SERVER, fill(t).encode("latin-1") + b"\r\n"))

    def greet():
        client(p.greeting)
        if p.greeting.split()[0].upper() == "EHLO":
            reply(*srv.ehlo)
        else:
            reply(srv.helo)

    reply(srv.greeting)
    greet()
    if p.starttls:
        client(p.starttls)
        reply(srv.starttls)
        greet()
    if p.auth:
        if len(p.auth) == 1:
            client(p.auth[0])
        else:
            client(p.auth[0])
            reply("334 VXNlcm5hbWU6")
            client(p.auth[1])
            reply("334 UGFzc3dvcmQ6")
            client(p.auth[2])
        reply("235 2.7.0 Authentication successful")

    if mailer is DEFAULT:
        mailer = p.mailer
    if received is None:
        received = 1 if p.kind is SourceKind.MTA else 0

    for t in range(p.transactions):
        if t:
            client(p.between)
            reply(srv.rset)
        client(p.mail)
        reply(srv.mail)
        for _ in range(p.rcpt_count):
            client(p.rcpt)
            reply(srv.rcpt)
        client(p.data)
        reply(srv.data)
        lines.append((Direction.CLIENT, _body(fill, term, p, mailer, received)))
        reply(srv.end)
    if p.quit is not None:
        client(p.quit)
        reply(srv.quit)

    segments = []
    for direction, data in lines:
        if segments and segments[-1].direction is direction:
            segments[-1] = Segment(direction, segments[-1].data + data)
        else:
            segments.append(Segment(direction, data))
    sid = stream_id or f"ref-{_slug(p.name)}-{srv.name}-{seed}"
    return Conversation(sid, tuple(segments), src_ip=src_ip)


def _body(fill, term: bytes, p: Profile, mailer: str | None, received: int) -> bytes:
    headers = []
    for _ in range(received):
        headers += ["Received: from {domain} ([{ip}])", "\tby mx.example.net with ESMTPS id {queue}"]
    headers += ["From: <{email}>", "To: <{email}>", "Subject: quarterly report {n}",
                "Date: Tue, 07 Feb 2017 10:12:44 +0100"]
    lines = [fill(h) for h in headers]
    if mailer is not None:
        lines.append(f"{p.mailer_header}: {mailer}")
    lines += ["", "Please find the document attached.", "..dot-stuffed line", "."]
    return b"".join(line.encode("utf-8") + term for line in lines)


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "-" for ch in name.lower()).strip("-")


def reference_transcripts() -> list[tuple[Profile, Conversation]]:
    return [(p, render(p, server)) for p in PROFILES for server in p.servers]


def derive_entries(conv: Conversation, modes: Iterable[Mode | str], *, category: Category,
                   source_name: str, source_kind: SourceKind,
                   mailer_patterns: Iterable[str] = ()) -> list[KbEntry]:
    entries = []
    for mode in modes:
        mode = Mode.parse(mode)
        tok = tokenize_conversation(conv, mode)
        entries.append(
            KbEntry(
                Dialect(mode, tok.states),
                category,
                source_name,
                source_kind,
                tuple(mailer_patterns),
            )
        )
    return entries


def build_seed_kb(include_suspicious: bool = True) -> KnowledgeBase:
    """Derive every reference transcript under M0, M1 and M2.

    A dialect already present is kept under its first source; repeats from
    the same source (another server giving identical states) are expected.
    """
    kb = KnowledgeBase(include_suspicious=include_suspicious)
    for p, conv in reference_transcripts():
        entries = derive_entries(conv, Mode, category=p.category, source_name=p.name,
                                 source_kind=p.kind, mailer_patterns=p.mailer_patterns)
        for entry in entries:
            try:
                kb.add(entry)
            except KBConflict as exc:
                if exc.existing.source_name != p.name:
                    log.debug("seed: %s shares %s dialect with %s", p.name, entry.mode.value,
                              exc.existing.source_name)
    return kb


def seed_kb_text() -> str:
    return dumps_kb(build_seed_kb())


def load_seed_kb(include_suspicious: bool = True) -> KnowledgeBase:
    text = resources.files("dialektor.data").joinpath(SEED_KB_RESOURCE).read_text(encoding="utf-8")
    return loads_kb(text, include_suspicious, source=f"dialektor.data/{SEED_KB_RESOURCE}")
