"""Turn protocol lines into canonical dialect states.

A client line such as ``Mail FROM:<send@mail.pl>\\r\\n`` becomes the state
``Mail space FROM : < email > <CR> <LF>``. Keyword casing, whitespace runs,
punctuation and the exact line terminator all survive; concrete parameter
values (addresses, hosts, free text) are abstracted away.

Server replies keep only their code and enhanced status (``250 2.1.0``).
In mode M2 the continuation lines of a multi-line reply (the EHLO
extension list) also become states.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .transcript import Conversation, Direction, split_lines


class Mode(str, enum.Enum):
    M0 = "M0"
    M1 = "M1"
    M2 = "M2"

    @classmethod
    def parse(cls, value: "str | Mode") -> "Mode":
        if isinstance(value, Mode):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown mode {value!r} (expected m0, m1 or m2)") from None


class Kind(enum.Enum):
    WORD = "word"
    SPACE = "space"
    PUNCT = "punct"
    PARAM = "param"
    TERMINATOR = "terminator"
    MESSAGE = "message"
    REPEAT = "repeat"


class Origin(enum.Enum):
    CLIENT = "client"
    SERVER = "server"
    BODY = "body"


@dataclass(frozen=True)
class Token:
    kind: Kind
    text: str


@dataclass(frozen=True)
class DialectState:
    tokens: tuple[Token, ...]
    origin: Origin

    @property
    def canonical(self) -> str:
        return " ".join(t.text for t in self.tokens)

    def first_word(self) -> str | None:
        """Text of the first Word token, skipping leading whitespace."""
        for tok in self.tokens:
            if tok.kind is Kind.SPACE:
                continue
            return tok.text if tok.kind is Kind.WORD else None
        return None

    @property
    def is_message(self) -> bool:
        return self.origin is Origin.BODY

    @property
    def is_repeat(self) -> bool:
        return len(self.tokens) == 1 and self.tokens[0].kind is Kind.REPEAT

    @property
    def is_extension(self) -> bool:
        # continuation line of a multi-line reply; only emitted in M2
        return (
            self.origin is Origin.SERVER
            and len(self.tokens) >= 2
            and self.tokens[1] == HYPHEN
            and self.tokens[-1].kind is not Kind.TERMINATOR
        )

    def __str__(self) -> str:
        return self.canonical


SPACE = Token(Kind.SPACE, "space")
HYPHEN = Token(Kind.PUNCT, "-")
CRLF = Token(Kind.TERMINATOR, "<CR> <LF>")
LF = Token(Kind.TERMINATOR, "<LF>")
NO_TERMINATOR = Token(Kind.TERMINATOR, "<none>")
MESSAGE = DialectState((Token(Kind.MESSAGE, "message"),), Origin.BODY)
REPEAT = DialectState((Token(Kind.REPEAT, "*repeat*"),), Origin.CLIENT)

PARAM_NAMES = ("email", "IPv4", "domain", "text")
PUNCTUATION = frozenset(":<>[](),;=")
KEYWORDS = frozenset(
    """HELO EHLO MAIL FROM RCPT TO DATA QUIT RSET NOOP VRFY EXPN HELP AUTH
    STARTTLS SIZE PIPELINING 8BITMIME""".split()
)
STATE_SEPARATOR = " | "

_PIECES = re.compile(r"[ \t]+|[:<>\[\](),;=]|[^ \t:<>\[\](),;=]+")
_REPLY_CODE = re.compile(r"[0-9]{3}")
_DOMAIN = r"[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)+"
_DOMAIN_RE = re.compile(_DOMAIN)
_EMAIL_RE = re.compile(r"[A-Za-z0-9._%+-]+@(" + _DOMAIN + ")")
_IPV4_RE = re.compile(r"([0-9]{1,3})\.([0-9]{1,3})\.([0-9]{1,3})\.([0-9]{1,3})")
_NUMERIC_RE = re.compile(r"[0-9.]+")
_REPLY_LINE = re.compile(r"([0-9]{3})(-| |$)(.*)", re.DOTALL)
_ENHANCED_STATUS = re.compile(r"[0-9]\.[0-9]{1,3}\.[0-9]{1,3}")


def _is_domain(word: str) -> bool:
    return _DOMAIN_RE.fullmatch(word) is not None and not _NUMERIC_RE.fullmatch(word)


def classify_word(word: str) -> Token:
    """Classify one maximal non-delimiter run; the first matching rule wins."""
    m = _EMAIL_RE.fullmatch(word)
    if m and not _NUMERIC_RE.fullmatch(m.group(1)):
        return Token(Kind.PARAM, "email")
    m = _IPV4_RE.fullmatch(word)
    if m and all(int(octet) <= 255 for octet in m.groups()):
        return Token(Kind.PARAM, "IPv4")
    if _is_domain(word):
        return Token(Kind.PARAM, "domain")
    if word.upper() in KEYWORDS or _REPLY_CODE.fullmatch(word):
        return Token(Kind.WORD, word)
    return Token(Kind.PARAM, "text")


def _split_terminator(line: bytes) -> tuple[bytes, Token]:
    if line.endswith(b"\r\n"):
        return line[:-2], CRLF
    if line.endswith(b"\n"):
        return line[:-1], LF
    return line, NO_TERMINATOR


def _tokens(text: str) -> list[Token]:
    out = []
    for piece in _PIECES.findall(text):
        if piece[0] in " \t":
            out.append(SPACE)
        elif len(piece) == 1 and piece in PUNCTUATION:
            out.append(Token(Kind.PUNCT, piece))
        else:
            out.append(classify_word(piece))
    return out


def tokenize_client_line(line: bytes, origin: Origin = Origin.CLIENT) -> DialectState:
    body, term = _split_terminator(line)
    # latin-1 maps every byte to one code point, so no input can fail
    tokens = _tokens(body.decode("latin-1"))
    tokens.append(term)
    return DialectState(tuple(tokens), origin)


def reply_code(line: bytes) -> str | None:
    body, _ = _split_terminator(line)
    m = _REPLY_LINE.match(body.decode("latin-1"))
    return m.group(1) if m else None


def tokenize_server_reply(lines: Sequence[bytes], mode: Mode | str = Mode.M1) -> list[DialectState]:
    """Tokenize one server reply.

    The reply collapses to a single ``<code>[ <enhanced status>]`` state.
    Under M2 every continuation line (``250-SIZE 1024``) also yields a
    ``<code> - ...`` state ahead of that summary. Lines without a leading
    reply code are tokenized like client lines and tagged as server-origin.
    """
    mode = Mode.parse(mode)
    states: list[DialectState] = []
    pending: list[re.Match] = []

    def flush():
        if not pending:
            return
        last = pending[-1]
        tokens = [Token(Kind.WORD, last.group(1))]
        rest = last.group(3).split(None, 1)
        if rest and _ENHANCED_STATUS.fullmatch(rest[0]):
            tokens.append(Token(Kind.WORD, rest[0]))
        states.append(DialectState(tuple(tokens), Origin.SERVER))
        pending.clear()

    for line in lines:
        body, _ = _split_terminator(line)
        m = _REPLY_LINE.match(body.decode("latin-1"))
        if m is None:
            flush()
            states.append(tokenize_client_line(line, Origin.SERVER))
            continue
        pending.append(m)
        if m.group(2) == "-":
            if mode is Mode.M2:
                tokens = [Token(Kind.WORD, m.group(1)), HYPHEN, *_tokens(m.group(3))]
                states.append(DialectState(tuple(tokens), Origin.SERVER))
        else:
            flush()
    flush()
    return states


def split_replies(lines: Sequence[bytes]) -> list[list[bytes]]:
    """Group a run of server lines into replies (a reply ends at a non-``-`` line)."""
    replies: list[list[bytes]] = []
    current: list[bytes] = []
    for line in lines:
        body, _ = _split_terminator(line)
        m = _REPLY_LINE.match(body.decode("latin-1"))
        if m is None:
            if current:
                replies.append(current)
                current = []
            replies.append([line])
        elif m.group(2) == "-":
            current.append(line)
        else:
            current.append(line)
            replies.append(current)
            current = []
    if current:
        replies.append(current)
    return replies


@dataclass(frozen=True)
class Tokenized:
    """Result of walking one conversation under one mode.

    ``scan`` is set when the session never transferred a message.
    ``bodies`` holds the raw DATA bytes of every message (dot line excluded),
    independent of mode truncation.
    """

    mode: Mode
    states: tuple[DialectState, ...]
    scan: bool
    bodies: tuple[bytes, ...]

    @property
    def canonical(self) -> str:
        return canonical_string(self.states)


def tokenize_conversation(conv: Conversation, mode: Mode | str) -> Tokenized:
    mode = Mode.parse(mode)
    states: list[DialectState] = []
    bodies: list[bytes] = []
    server_run: list[bytes] = []
    body = bytearray()
    in_body = False
    after_data = False
    m0_cut: int | None = None
    awaiting_cut = False

    def flush_server():
        nonlocal in_body, after_data, m0_cut, awaiting_cut
        if not server_run:
            return
        for reply in split_replies(server_run):
            states.extend(tokenize_server_reply(reply, mode))
            if awaiting_cut:
                m0_cut = len(states)
                awaiting_cut = False
            if after_data and reply_code(reply[-1]) == "354":
                in_body = True
            after_data = False
        server_run.clear()

    for line in split_lines(conv):
        if line.direction is Direction.SERVER:
            server_run.append(line.data)
            continue
        flush_server()
        if in_body:
            if line.body == b".":
                states.append(MESSAGE)
                bodies.append(bytes(body))
                body.clear()
                in_body = False
            else:
                body.extend(line.data)
            continue
        state = tokenize_client_line(line.data)
        states.append(state)
        awaiting_cut = False
        word = state.first_word()
        after_data = word is not None and word.upper() == "DATA"
        if after_data and m0_cut is None:
            m0_cut = len(states)
            awaiting_cut = True
    flush_server()
    if in_body:
        # stream ended inside DATA: the message bytes were still sent
        states.append(MESSAGE)
        bodies.append(bytes(body))

    scan = not bodies
    if mode is Mode.M0:
        result = states if m0_cut is None else states[:m0_cut]
    else:
        result = collapse_repeats(states)
    return Tokenized(mode, tuple(result), scan, tuple(bodies))


def _key(states: Iterable[DialectState]) -> tuple:
    # extension lists are server-side and never decide transaction identity
    return tuple(s.tokens for s in states if not s.is_extension)


def transaction_spans(states: Sequence[DialectState]) -> list[tuple[int, int]]:
    """``[start, end)`` of each completed mail transaction.

    A transaction runs from the first ``MAIL`` command after the previous
    transaction through its message and the server reply that follows.
    """
    spans = []
    prev_end = 0
    for i, state in enumerate(states):
        if not state.is_message or i < prev_end:
            continue
        start = prev_end
        for j in range(prev_end, i):
            word = states[j].first_word()
            if states[j].origin is Origin.CLIENT and word is not None and word.upper() == "MAIL":
                start = j
                break
        end = i + 1
        while end < len(states) and states[end].origin is Origin.SERVER:
            end += 1
            if not states[end - 1].is_extension:
                break
        spans.append((start, end))
        prev_end = end
    return spans


def collapse_repeats(states: Sequence[DialectState]) -> list[DialectState]:
    """Fold transactions identical to the first one into a single ``*repeat*``."""
    spans = transaction_spans(states)
    if len(spans) < 2:
        return list(states)
    first_start, first_end = spans[0]
    first_key = _key(states[first_start:first_end])
    out = list(states[:first_end])
    repeat_gap = None
    for (_, prev_end), (start, end) in zip(spans, spans[1:]):
        gap = states[prev_end:start]
        txn = states[start:end]
        if _key(txn) != first_key:
            out.extend(gap)
            out.extend(txn)
        elif repeat_gap is None:
            out.extend(gap)
            out.append(REPEAT)
            repeat_gap = _key(gap)
        elif _key(gap) != repeat_gap:
            out.extend(gap)
    out.extend(states[spans[-1][1]:])
    return out


def canonical_string(states: Iterable[DialectState]) -> str:
    return STATE_SEPARATOR.join(s.canonical for s in states)


def parse_state(text: str) -> DialectState:
    """Inverse of :attr:`DialectState.canonical`.

    The origin is inferred: terminator-ended states are client commands,
    bare ``message`` is a body, everything else is a server reply.
    """
    atoms = text.split(" ")
    if not text or any(a == "" for a in atoms):
        raise ValueError(f"malformed state {text!r}")
    if atoms == ["message"]:
        return MESSAGE
    if atoms == ["*repeat*"]:
        return REPEAT
    tokens: list[Token] = []
    i = 0
    while i < len(atoms):
        atom = atoms[i]
        if tokens and tokens[-1].kind is Kind.TERMINATOR:
            raise ValueError(f"token after terminator in {text!r}")
        if atom == "<CR>":
            if i + 1 >= len(atoms) or atoms[i + 1] != "<LF>":
                raise ValueError(f"<CR> without <LF> in {text!r}")
            tokens.append(CRLF)
            i += 2
            continue
        if atom == "<LF>":
            tokens.append(LF)
        elif atom == "<none>":
            tokens.append(NO_TERMINATOR)
        elif atom == "space":
            tokens.append(SPACE)
        elif atom in PARAM_NAMES:
            tokens.append(Token(Kind.PARAM, atom))
        elif len(atom) == 1 and (atom in PUNCTUATION or atom == "-"):
            tokens.append(Token(Kind.PUNCT, atom))
        elif atom in ("message", "*repeat*"):
            raise ValueError(f"{atom!r} must stand alone in {text!r}")
        else:
            tokens.append(Token(Kind.WORD, atom))
        i += 1
    origin = Origin.CLIENT if tokens[-1].kind is Kind.TERMINATOR else Origin.SERVER
    return DialectState(tuple(tokens), origin)


def parse_states(text: str) -> list[DialectState]:
    return [parse_state(part) for part in text.split(STATE_SEPARATOR)]
