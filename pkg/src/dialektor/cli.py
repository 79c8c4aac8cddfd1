"""Command line entry point.

Exit status: 0 success, 1 knowledge-base error, 2 input or usage error,
3 knowledge-base conflict.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import __version__, seed, synth
from .classifier import Verdict, aggregate, analyze_conversation, fingerprint
from .dialect import (
    Category,
    Dialect,
    KBConflict,
    KBError,
    KbEntry,
    KnowledgeBase,
    SourceKind,
    atomic_write,
    dumps_kb,
    format_stats,
    kb_load,
    kb_stats,
)
from .tokenizer import Mode
from .transcript import Conversation, TranscriptError, discover, dump_jsonl, load_path

log = logging.getLogger("dialektor")

EXIT_OK = 0
EXIT_KB = 1
EXIT_INPUT = 2
EXIT_CONFLICT = 3

KB_ENV = "DIALEKTOR_KB"


class CliError(Exception):
    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _mode(text: str) -> Mode:
    try:
        return Mode.parse(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid mode {text!r} (choose m0, m1, m2)") from None


def _modes(text: str) -> list[Mode]:
    return [_mode(part) for part in text.split(",") if part.strip()]


# -- knowledge base resolution ------------------------------------------------


def kb_path(args) -> Path | None:
    if args.kb:
        return Path(args.kb)
    env = os.environ.get(KB_ENV)
    return Path(env) if env else None


def open_kb(args) -> KnowledgeBase:
    """The KB named by ``--kb``, else ``$DIALEKTOR_KB``, else the bundled seed."""
    path = kb_path(args)
    try:
        if path is None:
            return seed.load_seed_kb(args.universe_suspicious)
        return kb_load(path, args.universe_suspicious)
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read knowledge base {path}: {exc}", EXIT_KB) from None
    except KBError as exc:
        raise CliError(f"knowledge base {path or 'seed'}: {exc}", EXIT_KB) from None


def open_kb_for_update(args) -> tuple[KnowledgeBase, Path]:
    path = kb_path(args)
    if path is None:
        raise CliError(f"a writable knowledge base is required (--kb or ${KB_ENV})", EXIT_INPUT)
    if not path.exists():
        return KnowledgeBase(), path
    return open_kb(args), path


# -- inputs ---------------------------------------------------------------------


def load_inputs(paths: Sequence[str], parser: argparse.ArgumentParser) -> list[Conversation]:
    """Load every capture file, reporting all bad files before failing."""
    files = discover(paths)
    if not files:
        parser.error("no input files found")
    convs: list[Conversation] = []
    seen: dict[str, Path] = {}
    errors = []
    for path in files:
        try:
            loaded = load_path(path)
        except FileNotFoundError:
            errors.append(f"{path}: no such file")
            continue
        except (TranscriptError, OSError, UnicodeDecodeError) as exc:
            errors.append(str(exc) if isinstance(exc, TranscriptError) else f"{path}: {exc}")
            continue
        for conv in loaded:
            if conv.stream_id in seen:
                errors.append(f"{path}: duplicate stream_id {conv.stream_id!r} (first in {seen[conv.stream_id]})")
            else:
                seen[conv.stream_id] = path
                convs.append(conv)
    if errors:
        raise CliError("\n".join(errors), EXIT_INPUT)
    return convs


_worker_kb: KnowledgeBase | None = None


def _init_worker(kb: KnowledgeBase) -> None:
    global _worker_kb
    _worker_kb = kb


def _analyze_one(job: tuple[Conversation, Mode, bool]) -> Verdict:
    conv, mode, imf_ext = job
    return analyze_conversation(conv, _worker_kb, mode, imf_ext)


def analyze_all(convs: list[Conversation], kb: KnowledgeBase, mode: Mode, imf_ext: bool,
                jobs: int = 1) -> list[Verdict]:
    """Verdicts in input order, optionally computed in worker processes."""
    if jobs <= 1 or len(convs) < 2:
        return [analyze_conversation(c, kb, mode, imf_ext) for c in convs]
    with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(kb,)) as pool:
        chunk = max(1, len(convs) // (jobs * 8))
        return list(pool.map(_analyze_one, [(c, mode, imf_ext) for c in convs], chunksize=chunk))


def dumps_verdicts(verdicts: Sequence[Verdict]) -> str:
    return "".join(json.dumps(v.to_record(), sort_keys=True, separators=(",", ":")) + "\n" for v in verdicts)


def load_verdicts(path: str | Path) -> list[Verdict]:
    out = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_INPUT) from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            out.append(Verdict.from_record(json.loads(raw)))
        except (ValueError, KeyError, TypeError) as exc:
            raise CliError(f"{path}:{lineno}: bad verdict record ({exc})", EXIT_INPUT) from None
    return out


def emit(text: str, out: str | None) -> None:
    if out:
        atomic_write(out, text)
    else:
        sys.stdout.write(text)


# -- commands -------------------------------------------------------------------


def cmd_analyze(args, parser) -> int:
    kb = open_kb(args)
    convs = load_inputs(args.inputs, parser)
    verdicts = analyze_all(convs, kb, args.mode, args.imf_ext, args.jobs)
    report = aggregate(verdicts)
    if args.verdicts:
        atomic_write(args.verdicts, dumps_verdicts(verdicts))
    emit(report.to_json() if args.format == "json" else report.to_table(), args.out)
    if args.figures:
        from .plotting import plot_fingerprints, plot_report

        fig_dir = Path(args.figures)
        plot_report(report, fig_dir / "report.png")
        plot_fingerprints(report.fingerprints, fig_dir / "fingerprints.png")
    log.info("analyzed %d conversations (%d scans)", len(verdicts), report.scan_count)
    return EXIT_OK


def format_rollup(rollup, fmt: str) -> str:
    if fmt == "json":
        rows = [{"name": f.name, "messages": f.messages, "distinct_ips": f.distinct_ips} for f in rollup]
        return json.dumps(rows, indent=2) + "\n"
    lines = ["bot\tmessages\tip_addrs"]
    lines += [f"{f.name}\t{f.messages}\t{f.distinct_ips}" for f in rollup]
    return "\n".join(lines) + "\n"


def cmd_fingerprint(args, parser) -> int:
    if bool(args.from_verdicts) == bool(args.inputs):
        parser.error("give either --from-verdicts or raw inputs")
    if args.from_verdicts:
        verdicts = load_verdicts(args.from_verdicts)
        modes = {v.mode for v in verdicts}
        if len(modes) > 1:
            raise CliError(f"{args.from_verdicts}: verdicts mix modes {sorted(m.value for m in modes)}",
                           EXIT_INPUT)
    else:
        kb = open_kb(args)
        convs = load_inputs(args.inputs, parser)
        verdicts = analyze_all(convs, kb, args.mode, args.imf_ext, args.jobs)
    rollup = fingerprint(verdicts)
    emit(format_rollup(rollup, args.format), args.out)
    if args.figures:
        from .plotting import plot_fingerprints

        plot_fingerprints(rollup, Path(args.figures) / "fingerprints.png")
    return EXIT_OK


def cmd_kb_list(args, parser) -> int:
    kb = open_kb(args)
    stats = kb_stats(kb)
    if args.format == "json":
        emit(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n", args.out)
        return EXIT_OK
    text = format_stats(stats)
    if args.entries:
        rows = [
            f"{e.mode.value}\t{e.hash[:16]}\t{e.category.value}\t{e.source_kind.value}\t{e.source_name}"
            for e in sorted(kb.entries(), key=lambda e: (e.mode.value, e.source_name, e.hash))
        ]
        text += "\nmode\thash\tcategory\tkind\tsource\n" + "\n".join(rows) + "\n"
    emit(text, args.out)
    return EXIT_OK


def _insert_all(kb: KnowledgeBase, entries: Sequence[KbEntry], promote: bool) -> None:
    """Add every entry or none; conflicts name the stored source."""
    staged = kb.copy()
    for entry in entries:
        try:
            staged.add(entry, allow_unknown_promotion=promote)
        except KBConflict as exc:
            raise CliError(
                f"{entry.mode.value} dialect {entry.hash[:16]} already in knowledge base as "
                f"{exc.existing.source_name!r}",
                EXIT_CONFLICT,
            ) from None
        except KBError as exc:
            raise CliError(str(exc), EXIT_INPUT) from None
    for entry in entries:
        kb.add(entry, allow_unknown_promotion=promote)


def _metadata_entry(args, mode: Mode, states) -> KbEntry:
    try:
        return KbEntry(Dialect(mode, tuple(states)), args.category, args.name, args.kind,
                       tuple(args.mailer_pattern))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None


def _require_metadata(args, parser) -> None:
    missing = [flag for flag, value in (("--category", args.category), ("--name", args.name),
                                        ("--kind", args.kind)) if value is None]
    if missing:
        parser.error(f"missing {', '.join(missing)}")


def cmd_kb_add(args, parser) -> int:
    kb, path = open_kb_for_update(args)
    if bool(args.entries) == bool(args.from_verdicts):
        parser.error("give either --entries or --from-verdicts")
    if args.entries:
        try:
            new = [e for e in kb_load(args.entries, args.universe_suspicious)]
        except (OSError, UnicodeDecodeError) as exc:
            raise CliError(f"{args.entries}: {exc}", EXIT_INPUT) from None
        except KBError as exc:
            raise CliError(f"{args.entries}: {exc}", EXIT_INPUT) from None
        promote = args.allow_unknown_promotion
    else:
        if not args.stream_id:
            parser.error("--from-verdicts needs --stream-id")
        _require_metadata(args, parser)
        verdicts = [v for v in load_verdicts(args.from_verdicts) if v.stream_id == args.stream_id]
        if not verdicts:
            raise CliError(f"{args.from_verdicts}: no verdict for stream {args.stream_id!r}", EXIT_INPUT)
        v = verdicts[0]
        if not v.states:
            raise CliError(f"stream {args.stream_id!r} has no dialect states", EXIT_INPUT)
        new = [_metadata_entry(args, v.mode, Dialect.from_strings(v.mode, v.states).states)]
        # adding an observed dialect is the promotion path
        promote = True
    _insert_all(kb, new, promote)
    atomic_write(path, dumps_kb(kb))
    for e in new:
        print(f"added {e.mode.value} {e.hash[:16]} {e.category.value} {e.source_name}")
    return EXIT_OK


def cmd_kb_derive(args, parser) -> int:
    _require_metadata(args, parser)
    kb, path = open_kb_for_update(args)
    convs = load_inputs([args.transcript], parser)
    if args.stream_id:
        convs = [c for c in convs if c.stream_id == args.stream_id]
        if not convs:
            raise CliError(f"{args.transcript}: no conversation {args.stream_id!r}", EXIT_INPUT)
    if len(convs) != 1:
        raise CliError(f"{args.transcript}: holds {len(convs)} conversations, pick one with --stream-id",
                       EXIT_INPUT)
    try:
        new = seed.derive_entries(convs[0], args.modes, category=args.category, source_name=args.name,
                                  source_kind=args.kind, mailer_patterns=args.mailer_pattern)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    _insert_all(kb, new, args.allow_unknown_promotion)
    atomic_write(path, dumps_kb(kb))
    for e in new:
        print(f"added {e.mode.value} {e.hash[:16]} {e.category.value} {e.source_name}")
    return EXIT_OK


def cmd_generate(args, parser) -> int:
    kb = open_kb(args)
    entries = kb.find(args.source, args.mode)
    if not entries:
        raise CliError(f"no {args.mode.value} dialect for source {args.source!r}", EXIT_INPUT)
    try:
        convs = synth.synthetic_corpus(entries[0], args.count, args.ips or args.count, args.seed)
    except synth.GenSpecError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None
    emit(dump_jsonl(convs), args.out)
    return EXIT_OK


def cmd_fixtures(args, parser) -> int:
    out = Path(args.outdir)
    written = synth.write_fixture_corpus(out / "fixtures" / synth.FIXTURE_VERSION)
    atomic_write(out / "seed_kb.jsonl", seed.seed_kb_text())
    ref = out / "reference"
    for p, conv in seed.reference_transcripts():
        atomic_write(ref / f"{conv.stream_id}.jsonl", dump_jsonl([conv]))
    print(f"wrote {len(written)} fixture files, seed KB and reference transcripts under {out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    kb_opts = argparse.ArgumentParser(add_help=False)
    kb_opts.add_argument("--kb", help=f"knowledge base JSONL (default ${KB_ENV}, else the bundled seed)")
    kb_opts.add_argument("--universe-suspicious", type=_bool, default=True, metavar="true|false",
                         help="count suspicious dialects' states as known (default true)")

    run_opts = argparse.ArgumentParser(add_help=False)
    run_opts.add_argument("--mode", type=_mode, default=Mode.M1, help="m0, m1 or m2 (default m1)")
    run_opts.add_argument("--imf-ext", action="store_true", help="treat header inconsistencies as spam")
    run_opts.add_argument("--jobs", type=int, default=1, help="worker processes")

    out_opts = argparse.ArgumentParser(add_help=False)
    out_opts.add_argument("--out", help="write output here instead of stdout")
    out_opts.add_argument("--format", choices=("json", "table"), default="table")

    meta_opts = argparse.ArgumentParser(add_help=False)
    meta_opts.add_argument("--category", type=Category, choices=list(Category), metavar="benign|suspicious|malicious")
    meta_opts.add_argument("--name", help="source name, e.g. 'Mozilla Thunderbird'")
    meta_opts.add_argument("--kind", type=SourceKind, choices=list(SourceKind), metavar="MUA|MTA|Bot|Library")
    meta_opts.add_argument("--mailer-pattern", action="append", default=[],
                           help="substring the mailer header must contain (repeatable)")
    meta_opts.add_argument("--allow-unknown-promotion", action="store_true",
                           help="allow source names starting with 'unknown-'")

    parser = argparse.ArgumentParser(prog="dialektor", description="SMTP dialect fingerprinting toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[kb_opts, run_opts, out_opts],
                       help="classify captured conversations and report")
    p.add_argument("inputs", nargs="+", help=".jsonl/.smtp files or directories")
    p.add_argument("--verdicts", help="write per-conversation verdict JSONL here")
    p.add_argument("--figures", metavar="DIR", help="also render report figures into DIR")
    p.set_defaults(func=cmd_analyze, parser=p)

    p = sub.add_parser("fingerprint", parents=[kb_opts, run_opts, out_opts], help="roll up bot matches")
    p.add_argument("inputs", nargs="*", help="raw captures to analyze first")
    p.add_argument("--from-verdicts", metavar="FILE", help="verdict JSONL from a previous analyze")
    p.add_argument("--figures", metavar="DIR", help="also render the rollup figure into DIR")
    p.set_defaults(func=cmd_fingerprint, parser=p)

    kb = sub.add_parser("kb", help="knowledge base management")
    kb_sub = kb.add_subparsers(dest="kb_command", required=True)
    p = kb_sub.add_parser("list", parents=[kb_opts, out_opts], help="per-mode dialect counts")
    p.add_argument("--entries", action="store_true", help="also list every entry")
    p.set_defaults(func=cmd_kb_list, parser=p)
    p = kb_sub.add_parser("add", parents=[kb_opts, meta_opts], help="insert entries")
    p.add_argument("--entries", metavar="FILE", help="KB-format JSONL entries to insert")
    p.add_argument("--from-verdicts", metavar="FILE", help="verdict JSONL holding the observed dialect")
    p.add_argument("--stream-id", help="which verdict to promote")
    p.set_defaults(func=cmd_kb_add, parser=p)
    p = kb_sub.add_parser("derive", parents=[kb_opts, meta_opts], help="onboard a reference client")
    p.add_argument("transcript", help="capture of the reference client's session")
    p.add_argument("--modes", type=_modes, default=list(Mode), help="comma list (default m0,m1,m2)")
    p.add_argument("--stream-id", help="conversation to use when the file holds several")
    p.set_defaults(func=cmd_kb_derive, parser=p)

    p = sub.add_parser("generate", parents=[kb_opts], help="synthesize conversations from a KB dialect")
    p.add_argument("--source", required=True, help="KB source name")
    p.add_argument("--mode", type=_mode, default=Mode.M1)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--ips", type=int, help="distinct source addresses (default one per conversation)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSONL output (default stdout)")
    p.set_defaults(func=cmd_generate, parser=p)

    p = sub.add_parser("fixtures", help="write seed KB, anomaly fixtures and reference transcripts")
    p.add_argument("outdir")
    p.set_defaults(func=cmd_fixtures, parser=p)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args, args.parser)
    except CliError as exc:
        for line in str(exc).splitlines():
            print(f"dialektor: error: {line}", file=sys.stderr)
        return exc.status


if __name__ == "__main__":
    sys.exit(main())
