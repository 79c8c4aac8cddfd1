"""Per-conversation verdicts, corpus metrics and botnet fingerprint rollups."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .dialect import (
    Category,
    Exact,
    KnowledgeBase,
    MatchResult,
    NovelStates,
    SourceKind,
    UnknownSequence,
    hash_dialect,
    match,
)
from .imf import Alert, AlertKind, check_messages
from .tokenizer import Mode, tokenize_conversation
from .transcript import Conversation


class VerdictCategory(str, enum.Enum):
    UNKNOWN = "Unknown"
    MALICIOUS = "Malicious"
    KNOWN = "Known"
    SCAN = "Scan"


REPORT_ROWS = (VerdictCategory.UNKNOWN, VerdictCategory.MALICIOUS, VerdictCategory.KNOWN)


@dataclass(frozen=True)
class MatchedSource:
    name: str
    kind: SourceKind
    category: Category


@dataclass(frozen=True)
class Verdict:
    stream_id: str
    mode: Mode
    category: VerdictCategory
    matched_source: MatchedSource | None = None
    alerts: tuple[Alert, ...] = ()
    treated_as_spam: bool = False
    src_ip: str | None = None
    hash: str | None = None
    states: tuple[str, ...] = ()
    novel_states: tuple[str, ...] = ()

    def to_record(self) -> dict:
        src = self.matched_source
        return {
            "stream_id": self.stream_id,
            "mode": self.mode.value,
            "category": self.category.value,
            "matched_source": None
            if src is None
            else {"name": src.name, "kind": src.kind.value, "category": src.category.value},
            "alerts": [{"kind": a.kind.value, "detail": a.detail} for a in self.alerts],
            "treated_as_spam": self.treated_as_spam,
            "src_ip": self.src_ip,
            "hash": self.hash,
            "states": list(self.states),
            "novel_states": list(self.novel_states),
        }

    @classmethod
    def from_record(cls, record: dict) -> "Verdict":
        src = record.get("matched_source")
        return cls(
            stream_id=record["stream_id"],
            mode=Mode.parse(record["mode"]),
            category=VerdictCategory(record["category"]),
            matched_source=None
            if src is None
            else MatchedSource(src["name"], SourceKind(src["kind"]), Category(src["category"])),
            alerts=tuple(Alert(AlertKind(a["kind"]), a.get("detail", "")) for a in record.get("alerts", ())),
            treated_as_spam=bool(record.get("treated_as_spam", False)),
            src_ip=record.get("src_ip"),
            hash=record.get("hash"),
            states=tuple(record.get("states", ())),
            novel_states=tuple(record.get("novel_states", ())),
        )


def is_spam(category: VerdictCategory, alerts: Sequence[Alert], imf_ext: bool) -> bool:
    if category in (VerdictCategory.UNKNOWN, VerdictCategory.MALICIOUS):
        return True
    return category is VerdictCategory.KNOWN and imf_ext and bool(alerts)


def classify(
    result: MatchResult,
    scan: bool,
    alerts: Sequence[Alert],
    imf_ext: bool,
    *,
    stream_id: str = "",
    mode: Mode | str = Mode.M1,
    src_ip: str | None = None,
    hash: str | None = None,
    states: Sequence[str] = (),
) -> Verdict:
    matched = None
    if isinstance(result, Exact):
        e = result.entry
        matched = MatchedSource(e.source_name, e.source_kind, e.category)
    novel: tuple[str, ...] = ()
    if scan:
        category = VerdictCategory.SCAN
        alerts = ()
    elif isinstance(result, NovelStates):
        category = VerdictCategory.MALICIOUS
        novel = result.states
    elif isinstance(result, UnknownSequence):
        category = VerdictCategory.UNKNOWN
    elif result.entry.category is Category.MALICIOUS:
        category = VerdictCategory.MALICIOUS
    else:
        category = VerdictCategory.KNOWN
    return Verdict(
        stream_id=stream_id,
        mode=Mode.parse(mode),
        category=category,
        matched_source=matched,
        alerts=tuple(alerts),
        treated_as_spam=is_spam(category, alerts, imf_ext),
        src_ip=src_ip,
        hash=hash,
        states=tuple(states),
        novel_states=novel,
    )


def analyze_conversation(conv: Conversation, kb: KnowledgeBase, mode: Mode | str, imf_ext: bool) -> Verdict:
    """Tokenize, match, check headers and classify one conversation."""
    mode = Mode.parse(mode)
    tok = tokenize_conversation(conv, mode)
    result = match(kb, mode, tok.states)
    alerts = [] if tok.scan else check_messages(result, tok.bodies)
    return classify(
        result,
        tok.scan,
        alerts,
        imf_ext,
        stream_id=conv.stream_id,
        mode=mode,
        src_ip=conv.src_ip,
        hash=hash_dialect(mode, tok.states) if tok.states else None,
        states=[s.canonical for s in tok.states],
    )


# -- corpus metrics ----------------------------------------------------------


def pct(part: int, whole: int) -> float:
    """``part/whole`` as a percentage rounded half-up to 0.1."""
    if whole == 0:
        return 0.0
    tenths = (2 * part * 1000 + whole) // (2 * whole)
    return tenths / 10


@dataclass(frozen=True)
class CategoryRow:
    samples: int
    ratio_of_total: float
    imf_inconsistency: int
    ratio_of_alerts: float


@dataclass(frozen=True)
class BotFingerprint:
    name: str
    messages: int
    distinct_ips: int


@dataclass
class CorpusReport:
    mode: Mode | None
    total: int
    scan_count: int
    rows: dict[VerdictCategory, CategoryRow]
    tp_pct: float | None
    fn_pct: float | None
    tp_pct_with_imf: float | None
    fn_pct_with_imf: float | None
    fingerprints: list[BotFingerprint] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value if self.mode else None,
            "total": self.total,
            "scan_count": self.scan_count,
            "categories": {
                cat.value.upper(): {
                    "samples": row.samples,
                    "ratio_of_total": row.ratio_of_total,
                    "imf_inconsistency": row.imf_inconsistency,
                    "ratio_of_alerts": row.ratio_of_alerts,
                }
                for cat, row in self.rows.items()
            },
            "classification": {
                "tp_pct": self.tp_pct,
                "fn_pct": self.fn_pct,
                "tp_pct_with_imf": self.tp_pct_with_imf,
                "fn_pct_with_imf": self.fn_pct_with_imf,
            },
            "fingerprints": [
                {"name": f.name, "messages": f.messages, "distinct_ips": f.distinct_ips}
                for f in self.fingerprints
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_table(self) -> str:
        mode = self.mode.value if self.mode else "-"
        heads = [f"{c.value.upper()} {mode}" for c in REPORT_ROWS]

        def line(label, values):
            return f"{label:<22}" + "".join(f"{v:>18}" for v in values)

        def fmt(x):
            return "-" if x is None else f"{x:.1f}"

        out = [
            f"RESULTS ({self.total} conversations, {self.scan_count} scans excluded)",
            line("Type", heads),
            line("Number of samples", [self.rows[c].samples for c in REPORT_ROWS]),
            line("Ratio of total (%)", [fmt(self.rows[c].ratio_of_total) for c in REPORT_ROWS]),
            line("IMF inconsistency", [self.rows[c].imf_inconsistency for c in REPORT_ROWS]),
            line("Ratio of alerts (%)", [fmt(self.rows[c].ratio_of_alerts) for c in REPORT_ROWS]),
            "CLASSIFICATION",
            line("Mode", [mode, f"{mode} with IMF ext."]),
            line("TP (%)", [fmt(self.tp_pct), fmt(self.tp_pct_with_imf)]),
            line("FN (%)", [fmt(self.fn_pct), fmt(self.fn_pct_with_imf)]),
        ]
        if self.fingerprints:
            out.append("BOTNET FINGERPRINTS")
            out.append(line("Bot", ["messages", "IP addr."]))
            out.extend(line(f.name, [f.messages, f.distinct_ips]) for f in self.fingerprints)
        return "\n".join(out) + "\n"


def aggregate(verdicts: Iterable[Verdict], ground_truth_all_spam: bool = True) -> CorpusReport:
    verdicts = list(verdicts)
    modes = {v.mode for v in verdicts}
    if len(modes) > 1:
        raise ValueError(f"verdicts mix modes: {sorted(m.value for m in modes)}")
    mode = modes.pop() if modes else None

    scored = [v for v in verdicts if v.category is not VerdictCategory.SCAN]
    total = len(scored)
    rows = {}
    for cat in REPORT_ROWS:
        members = [v for v in scored if v.category is cat]
        alerted = sum(1 for v in members if v.alerts)
        rows[cat] = CategoryRow(len(members), pct(len(members), total), alerted, pct(alerted, len(members)))

    tp = fn = tp_imf = fn_imf = None
    if ground_truth_all_spam:
        spam = sum(1 for v in scored if is_spam(v.category, v.alerts, False))
        spam_imf = sum(1 for v in scored if is_spam(v.category, v.alerts, True))
        tp, fn = pct(spam, total), pct(total - spam, total)
        tp_imf, fn_imf = pct(spam_imf, total), pct(total - spam_imf, total)
    return CorpusReport(
        mode=mode,
        total=total,
        scan_count=len(verdicts) - total,
        rows=rows,
        tp_pct=tp,
        fn_pct=fn,
        tp_pct_with_imf=tp_imf,
        fn_pct_with_imf=fn_imf,
        fingerprints=fingerprint(scored),
    )


def fingerprint(verdicts: Iterable[Verdict]) -> list[BotFingerprint]:
    """Roll malicious bot matches up by bot name, most messages first."""
    messages: dict[str, int] = {}
    ips: dict[str, set[str]] = {}
    for v in verdicts:
        src = v.matched_source
        if v.category is not VerdictCategory.MALICIOUS or src is None or src.kind is not SourceKind.BOT:
            continue
        messages[src.name] = messages.get(src.name, 0) + 1
        bucket = ips.setdefault(src.name, set())
        if v.src_ip:
            bucket.add(v.src_ip)
    rollup = [BotFingerprint(name, n, len(ips[name])) for name, n in messages.items()]
    rollup.sort(key=lambda f: (-f.messages, f.name))
    return rollup
