"""Dialect identity, the knowledge base, and matching against it."""

from __future__ import annotations

import enum
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .tokenizer import DialectState, Mode, canonical_string, parse_state


class Category(str, enum.Enum):
    BENIGN = "benign"
    SUSPICIOUS = "suspicious"
    MALICIOUS = "malicious"


class SourceKind(str, enum.Enum):
    MUA = "MUA"
    MTA = "MTA"
    BOT = "Bot"
    LIBRARY = "Library"


class KBError(Exception):
    pass


class KBCorruption(KBError):
    pass


class KBConflict(KBError):
    def __init__(self, existing: "KbEntry"):
        self.existing = existing
        super().__init__(
            f"dialect {existing.hash[:12]} ({existing.mode.value}) already known as "
            f"{existing.source_name!r}"
        )


def hash_dialect(mode: Mode | str, states: Sequence[DialectState]) -> str:
    """SHA-256 over ``mode || LF || canonical states``, lowercase hex."""
    if not states:
        raise ValueError("cannot fingerprint an empty state list")
    mode = Mode.parse(mode)
    payload = mode.value + "\n" + canonical_string(states)
    return hashlib.sha256(payload.encode("latin-1")).hexdigest()


@dataclass(frozen=True)
class Dialect:
    mode: Mode
    states: tuple[DialectState, ...]

    @cached_property
    def hash(self) -> str:
        return hash_dialect(self.mode, self.states)

    @property
    def canonical_states(self) -> list[str]:
        return [s.canonical for s in self.states]

    @classmethod
    def from_strings(cls, mode: Mode | str, states: Iterable[str]) -> "Dialect":
        return cls(Mode.parse(mode), tuple(parse_state(s) for s in states))


@dataclass(frozen=True)
class KbEntry:
    dialect: Dialect
    category: Category
    source_name: str
    source_kind: SourceKind
    mailer_patterns: tuple[str, ...] = ()

    def __post_init__(self):
        if self.category is Category.MALICIOUS and not (
            self.source_kind is SourceKind.BOT or self.source_name.startswith("unknown-")
        ):
            raise ValueError(
                f"malicious entry {self.source_name!r} must be a Bot or be named 'unknown-*'"
            )

    @property
    def mode(self) -> Mode:
        return self.dialect.mode

    @property
    def hash(self) -> str:
        return self.dialect.hash

    @property
    def key(self) -> tuple[Mode, str]:
        return (self.mode, self.hash)

    def to_record(self) -> dict:
        return {
            "hash": self.hash,
            "mode": self.mode.value,
            "category": self.category.value,
            "source_name": self.source_name,
            "source_kind": self.source_kind.value,
            "mailer_patterns": list(self.mailer_patterns),
            "states": self.dialect.canonical_states,
        }

    @classmethod
    def from_record(cls, record: dict) -> "KbEntry":
        """Build an entry and verify its stored hash against the states."""
        try:
            dialect = Dialect.from_strings(record["mode"], record["states"])
            entry = cls(
                dialect=dialect,
                category=Category(record["category"]),
                source_name=str(record["source_name"]),
                source_kind=SourceKind(record["source_kind"]),
                mailer_patterns=tuple(record.get("mailer_patterns") or ()),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise KBCorruption(f"invalid KB record: {exc}") from None
        if record.get("hash") != entry.hash:
            raise KBCorruption(
                f"hash mismatch for {entry.source_name!r} ({entry.mode.value}): "
                f"stored {record.get('hash')!r}, computed {entry.hash}"
            )
        return entry


class KnowledgeBase:
    """Categorized dialects, keyed by ``(mode, hash)``.

    The per-mode state universe is the set of canonical state strings used by
    legitimate entries (benign, plus suspicious unless disabled); it backs the
    known-states-but-unknown-sequence verdict.
    """

    def __init__(self, entries: Iterable[KbEntry] = (), include_suspicious: bool = True):
        self.include_suspicious = include_suspicious
        self._entries: dict[tuple[Mode, str], KbEntry] = {}
        self._universe: dict[Mode, set[str]] = {m: set() for m in Mode}
        for entry in entries:
            self.add(entry, allow_unknown_promotion=True)

    def _legitimate(self, entry: KbEntry) -> bool:
        if entry.category is Category.BENIGN:
            return True
        return entry.category is Category.SUSPICIOUS and self.include_suspicious

    def add(self, entry: KbEntry, allow_unknown_promotion: bool = False) -> None:
        existing = self._entries.get(entry.key)
        if existing is not None:
            raise KBConflict(existing)
        if entry.source_name.startswith("unknown-") and not allow_unknown_promotion:
            raise KBError(f"promotion of {entry.source_name!r} requires allow_unknown_promotion")
        self._entries[entry.key] = entry
        if self._legitimate(entry):
            self._universe[entry.mode].update(entry.dialect.canonical_states)

    def lookup(self, mode: Mode | str, digest: str) -> KbEntry | None:
        return self._entries.get((Mode.parse(mode), digest))

    def universe(self, mode: Mode | str) -> frozenset[str]:
        return frozenset(self._universe[Mode.parse(mode)])

    def in_universe(self, mode: Mode, state: str) -> bool:
        return state in self._universe[mode]

    def entries(self, mode: Mode | str | None = None) -> list[KbEntry]:
        items = sorted(self._entries.values(), key=lambda e: (e.hash, e.mode.value))
        if mode is None:
            return items
        mode = Mode.parse(mode)
        return [e for e in items if e.mode is mode]

    def find(self, source_name: str, mode: Mode | str | None = None) -> list[KbEntry]:
        return [e for e in self.entries(mode) if e.source_name == source_name]

    def recompute_universe(self) -> dict[Mode, frozenset[str]]:
        universe: dict[Mode, set[str]] = {m: set() for m in Mode}
        for entry in self._entries.values():
            if self._legitimate(entry):
                universe[entry.mode].update(entry.dialect.canonical_states)
        return {m: frozenset(s) for m, s in universe.items()}

    def copy(self) -> "KnowledgeBase":
        return KnowledgeBase(self._entries.values(), self.include_suspicious)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[KbEntry]:
        return iter(self.entries())

    def __contains__(self, entry: KbEntry) -> bool:
        return self._entries.get(entry.key) == entry

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return self._entries == other._entries


def kb_add(kb: KnowledgeBase, entry: KbEntry, allow_unknown_promotion: bool = False) -> KnowledgeBase:
    kb.add(entry, allow_unknown_promotion=allow_unknown_promotion)
    return kb


def dumps_kb(kb: KnowledgeBase) -> str:
    return "".join(
        json.dumps(e.to_record(), sort_keys=True, separators=(",", ":")) + "\n" for e in kb.entries()
    )


def loads_kb(text: str, include_suspicious: bool = True, source: str = "<kb>") -> KnowledgeBase:
    kb = KnowledgeBase(include_suspicious=include_suspicious)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
            entry = KbEntry.from_record(record)
        except json.JSONDecodeError as exc:
            raise KBCorruption(f"{source}:{lineno}: malformed JSON ({exc.msg})") from None
        except KBCorruption as exc:
            raise KBCorruption(f"{source}:{lineno}: {exc}") from None
        kb.add(entry, allow_unknown_promotion=True)
    return kb


def kb_load(path: str | Path, include_suspicious: bool = True) -> KnowledgeBase:
    path = Path(path)
    return loads_kb(path.read_text(encoding="utf-8"), include_suspicious, source=str(path))


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def kb_save(kb: KnowledgeBase, path: str | Path) -> None:
    atomic_write(path, dumps_kb(kb))


# -- matching ----------------------------------------------------------------


@dataclass(frozen=True)
class Exact:
    entry: KbEntry


@dataclass(frozen=True)
class UnknownSequence:
    pass


@dataclass(frozen=True)
class NovelStates:
    states: tuple[str, ...]


MatchResult = Exact | UnknownSequence | NovelStates


def match(kb: KnowledgeBase, mode: Mode | str, states: Sequence[DialectState]) -> MatchResult:
    mode = Mode.parse(mode)
    if states:
        entry = kb.lookup(mode, hash_dialect(mode, states))
        if entry is not None:
            return Exact(entry)
    novel: list[str] = []
    for state in states:
        # the repeat marker is structural, not a command anyone sends
        if state.is_repeat:
            continue
        text = state.canonical
        if not kb.in_universe(mode, text) and text not in novel:
            novel.append(text)
    if novel:
        return NovelStates(tuple(novel))
    return UnknownSequence()


# -- statistics --------------------------------------------------------------


@dataclass
class KbStats:
    counts: dict[Mode, dict[Category, int]]
    names: dict[tuple[Category, SourceKind], int] = field(default_factory=dict)

    def total(self, mode: Mode | str) -> int:
        return sum(self.counts[Mode.parse(mode)].values())

    def to_dict(self) -> dict:
        return {
            "modes": {
                m.value: {**{c.value: n for c, n in cats.items()}, "total": sum(cats.values())}
                for m, cats in self.counts.items()
            },
            "sources": {f"{c.value}/{k.value}": n for (c, k), n in sorted(self.names.items())},
        }


def kb_stats(kb: KnowledgeBase) -> KbStats:
    counts = {m: {c: 0 for c in Category} for m in Mode}
    sources: dict[tuple[Category, SourceKind], set[str]] = {}
    for entry in kb.entries():
        counts[entry.mode][entry.category] += 1
        sources.setdefault((entry.category, entry.source_kind), set()).add(entry.source_name)
    return KbStats(counts, {k: len(v) for k, v in sources.items()})


def format_stats(stats: KbStats) -> str:
    """Render per-mode dialect counts as a fixed-width table."""
    modes = list(Mode)
    rows = [("Operation mode", [m.value for m in modes])]
    for cat in Category:
        rows.append((f"Known {cat.value}", [str(stats.counts[m][cat]) for m in modes]))
    rows.append(("Total", [str(stats.total(m)) for m in modes]))
    width = max(len(label) for label, _ in rows)
    lines = [f"{label:<{width}}" + "".join(f"{v:>8}" for v in values) for label, values in rows]
    return "\n".join(lines) + "\n"
