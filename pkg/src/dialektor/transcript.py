"""Conversation capture formats and the in-memory conversation model.

Two interchange formats are supported:

* JSONL, one conversation per line, segment bytes carried as base64 so that
  line terminators survive any text tooling.
* ``.smtp`` text, a human-editable form where terminator bytes are written
  as escape sequences (``\\r``, ``\\n``, ``\\\\``, ``\\xHH``).

Neither loader normalizes line terminators. A bare LF stays a bare LF.
"""

from __future__ import annotations

import base64
import binascii
import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple


class TranscriptError(ValueError):
    """Raised for malformed capture input."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if self.path is not None:
            where = self.path
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class Direction(enum.Enum):
    CLIENT = "C"
    SERVER = "S"


@dataclass(frozen=True)
class Segment:
    direction: Direction
    data: bytes

    def __post_init__(self):
        if not self.data:
            raise TranscriptError("segment bytes must be non-empty")


@dataclass(frozen=True)
class Conversation:
    stream_id: str
    segments: tuple[Segment, ...]
    src_ip: str | None = None
    timestamp: int | None = None

    def client_bytes(self) -> bytes:
        return b"".join(s.data for s in self.segments if s.direction is Direction.CLIENT)

    def server_bytes(self) -> bytes:
        return b"".join(s.data for s in self.segments if s.direction is Direction.SERVER)


class Line(NamedTuple):
    """One protocol line. ``data`` keeps its terminator bytes."""

    direction: Direction
    data: bytes

    @property
    def terminator(self) -> bytes:
        if self.data.endswith(b"\r\n"):
            return b"\r\n"
        if self.data.endswith(b"\n"):
            return b"\n"
        return b""

    @property
    def body(self) -> bytes:
        return self.data[: len(self.data) - len(self.terminator)]


def split_lines(conv: Conversation) -> list[Line]:
    """Re-frame segments into protocol lines.

    Consecutive same-direction segments are merged first, so TCP
    segmentation never changes the result. Lines break after each LF; a
    trailing unterminated run is emitted as-is (its ``terminator`` is empty).
    """
    lines: list[Line] = []
    for direction, chunk in _merged_runs(conv.segments):
        start = 0
        while True:
            nl = chunk.find(b"\n", start)
            if nl < 0:
                break
            lines.append(Line(direction, chunk[start : nl + 1]))
            start = nl + 1
        if start < len(chunk):
            lines.append(Line(direction, chunk[start:]))
    return lines


def _merged_runs(segments: Iterable[Segment]) -> list[tuple[Direction, bytes]]:
    runs: list[tuple[Direction, bytearray]] = []
    for seg in segments:
        if runs and runs[-1][0] is seg.direction:
            runs[-1][1].extend(seg.data)
        else:
            runs.append((seg.direction, bytearray(seg.data)))
    return [(d, bytes(b)) for d, b in runs]


# -- JSONL -----------------------------------------------------------------


def conversation_from_record(record: dict, *, path=None, line: int | None = None) -> Conversation:
    if not isinstance(record, dict):
        raise TranscriptError("record must be a JSON object", path, line)
    stream_id = record.get("stream_id")
    if not isinstance(stream_id, str) or not stream_id:
        raise TranscriptError("missing or invalid 'stream_id'", path, line)
    src_ip = record.get("src_ip")
    if src_ip is not None and not isinstance(src_ip, str):
        raise TranscriptError("'src_ip' must be a string", path, line)
    ts = record.get("ts")
    if ts is not None and (not isinstance(ts, int) or isinstance(ts, bool)):
        raise TranscriptError("'ts' must be an integer", path, line)
    raw_segments = record.get("segments")
    if not isinstance(raw_segments, list):
        raise TranscriptError("'segments' must be a list", path, line)
    segments = []
    for i, seg in enumerate(raw_segments):
        if not isinstance(seg, dict):
            raise TranscriptError(f"segment {i} must be an object", path, line)
        try:
            direction = Direction(seg.get("dir"))
        except ValueError:
            raise TranscriptError(f"segment {i}: 'dir' must be 'C' or 'S'", path, line) from None
        b64 = seg.get("b64")
        if not isinstance(b64, str):
            raise TranscriptError(f"segment {i}: 'b64' must be a string", path, line)
        try:
            data = base64.b64decode(b64, validate=True)
        except (binascii.Error, ValueError):
            raise TranscriptError(f"segment {i}: invalid base64", path, line) from None
        if not data:
            raise TranscriptError(f"segment {i}: empty segment", path, line)
        segments.append(Segment(direction, data))
    return Conversation(stream_id, tuple(segments), src_ip=src_ip, timestamp=ts)


def conversation_to_record(conv: Conversation) -> dict:
    record: dict = {"stream_id": conv.stream_id}
    if conv.src_ip is not None:
        record["src_ip"] = conv.src_ip
    if conv.timestamp is not None:
        record["ts"] = conv.timestamp
    record["segments"] = [
        {"dir": s.direction.value, "b64": base64.b64encode(s.data).decode("ascii")}
        for s in conv.segments
    ]
    return record


def parse_jsonl(text: str, *, path=None) -> list[Conversation]:
    convs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TranscriptError(f"malformed JSON ({exc.msg})", path, lineno) from None
        convs.append(conversation_from_record(record, path=path, line=lineno))
    check_unique(convs, path=path)
    return convs


def load_jsonl(path: str | Path) -> list[Conversation]:
    path = Path(path)
    return parse_jsonl(path.read_text(encoding="utf-8"), path=path)


def dump_jsonl(convs: Iterable[Conversation]) -> str:
    return "".join(
        json.dumps(conversation_to_record(c), separators=(",", ":")) + "\n" for c in convs
    )


def save_jsonl(convs: Iterable[Conversation], path: str | Path) -> None:
    Path(path).write_text(dump_jsonl(convs), encoding="utf-8")


def check_unique(convs: Iterable[Conversation], *, path=None) -> None:
    seen: set[str] = set()
    for conv in convs:
        if conv.stream_id in seen:
            raise TranscriptError(f"duplicate stream_id {conv.stream_id!r}", path)
        seen.add(conv.stream_id)


# -- .smtp text --------------------------------------------------------------

_SIMPLE_ESCAPES = {"r": 0x0D, "n": 0x0A, "\\": 0x5C}
_HEX = set("0123456789abcdefABCDEF")


def unescape(text: str, *, path=None, line: int | None = None) -> bytes:
    out = bytearray()
    i = 0
    while i < len(text):
        ch = text[i]
        if ch != "\\":
            out.extend(ch.encode("utf-8"))
            i += 1
            continue
        code = text[i + 1 : i + 2]
        if code in _SIMPLE_ESCAPES:
            out.append(_SIMPLE_ESCAPES[code])
            i += 2
        elif code == "x" and len(text) >= i + 4 and set(text[i + 2 : i + 4]) <= _HEX:
            out.append(int(text[i + 2 : i + 4], 16))
            i += 4
        else:
            raise TranscriptError(f"bad escape {text[i : i + 2]!r}", path, line)
    return bytes(out)


def escape(data: bytes) -> str:
    out = []
    for b in data:
        if b == 0x5C:
            out.append("\\\\")
        elif b == 0x0D:
            out.append("\\r")
        elif b == 0x0A:
            out.append("\\n")
        elif 0x20 <= b < 0x7F:
            out.append(chr(b))
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def parse_text(text: str, *, path=None) -> list[Conversation]:
    blocks: list[tuple[int, dict, list[Segment]]] = []
    meta: dict = {}
    segments: list[Segment] = []
    block_start = 1

    def close():
        if meta or segments:
            blocks.append((block_start, dict(meta), list(segments)))

    for lineno, raw in enumerate(text.split("\n"), start=1):
        if raw.endswith("\r"):
            raw = raw[:-1]
        if raw == "---":
            close()
            meta.clear()
            segments.clear()
            block_start = lineno + 1
            continue
        if not raw.strip():
            continue
        if raw.startswith("@meta "):
            parts = raw[len("@meta "):].strip().split(None, 1)
            if len(parts) != 2:
                raise TranscriptError("@meta needs a key and a value", path, lineno)
            key, value = parts
            if key not in ("stream_id", "src_ip", "ts"):
                raise TranscriptError(f"unknown @meta key {key!r}", path, lineno)
            if key == "ts":
                try:
                    value = int(value)
                except ValueError:
                    raise TranscriptError("@meta ts must be an integer", path, lineno) from None
            meta[key] = value
            continue
        if raw.startswith("C: ") or raw.startswith("S: "):
            data = unescape(raw[3:], path=path, line=lineno)
            if not data:
                raise TranscriptError("empty segment", path, lineno)
            segments.append(Segment(Direction(raw[0]), data))
            continue
        raise TranscriptError(f"unknown line prefix in {raw[:16]!r}", path, lineno)
    close()

    stem = Path(path).stem if path is not None else "conv"
    convs = []
    for index, (_, m, segs) in enumerate(blocks):
        convs.append(
            Conversation(
                stream_id=m.get("stream_id", f"{stem}-{index}"),
                segments=tuple(segs),
                src_ip=m.get("src_ip"),
                timestamp=m.get("ts"),
            )
        )
    check_unique(convs, path=path)
    return convs


def load_text(path: str | Path) -> list[Conversation]:
    path = Path(path)
    return parse_text(path.read_text(encoding="utf-8"), path=path)


def dump_text(convs: Iterable[Conversation]) -> str:
    blocks = []
    for conv in convs:
        lines = [f"@meta stream_id {conv.stream_id}"]
        if conv.src_ip is not None:
            lines.append(f"@meta src_ip {conv.src_ip}")
        if conv.timestamp is not None:
            lines.append(f"@meta ts {conv.timestamp}")
        for seg in conv.segments:
            lines.append(f"{seg.direction.value}: {escape(seg.data)}")
        blocks.append("\n".join(lines) + "\n")
    return "---\n".join(blocks)


def save_text(convs: Iterable[Conversation], path: str | Path) -> None:
    Path(path).write_text(dump_text(convs), encoding="utf-8")


def load_path(path: str | Path) -> list[Conversation]:
    """Load one capture file, picking the format from its suffix."""
    path = Path(path)
    if path.suffix == ".smtp":
        return load_text(path)
    return load_jsonl(path)


def discover(paths: Iterable[str | Path]) -> list[Path]:
    """Expand directories into their ``.jsonl``/``.smtp`` files (sorted)."""
    found: list[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            found.extend(
                sorted(q for q in p.rglob("*") if q.is_file() and q.suffix in (".jsonl", ".smtp"))
            )
        else:
            found.append(p)
    return found
