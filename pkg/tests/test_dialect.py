import hashlib
import json

import pytest

from conftest import CONVERSION, CONVERSION_STATES
from dialektor import seed
from dialektor.dialect import (
    Category,
    Dialect,
    Exact,
    KBConflict,
    KBCorruption,
    KBError,
    KbEntry,
    KnowledgeBase,
    NovelStates,
    SourceKind,
    UnknownSequence,
    dumps_kb,
    format_stats,
    hash_dialect,
    kb_add,
    kb_load,
    kb_save,
    kb_stats,
    loads_kb,
    match,
)
from dialektor.tokenizer import Mode, parse_states, tokenize_conversation

B, S, M = Category.BENIGN, Category.SUSPICIOUS, Category.MALICIOUS


def entry(states, mode=Mode.M1, category=B, name="reference-client", kind=SourceKind.MUA, patterns=()):
    return KbEntry(Dialect.from_strings(mode, states), category, name, kind, tuple(patterns))


def states_of(strings):
    return parse_states(" | ".join(strings))


def test_hash_is_sha256_of_mode_and_states():
    digest = hash_dialect(Mode.M1, states_of(CONVERSION_STATES))
    expected = hashlib.sha256(("M1\n" + " | ".join(CONVERSION_STATES)).encode()).hexdigest()
    assert digest == expected
    assert len(digest) == 64 and digest == digest.lower()


def test_hash_properties():
    s = states_of(CONVERSION_STATES)
    assert hash_dialect(Mode.M1, s) == hash_dialect("m1", list(s))
    assert hash_dialect(Mode.M1, s) != hash_dialect(Mode.M2, s)
    upper = [t.replace("quit", "QUIT") for t in CONVERSION_STATES]
    assert hash_dialect(Mode.M1, s) != hash_dialect(Mode.M1, states_of(upper))
    with pytest.raises(ValueError):
        hash_dialect(Mode.M1, [])


def test_malicious_requires_bot_or_unknown_prefix():
    entry(["QUIT <CR> <LF>"], category=M, name="Kelihos", kind=SourceKind.BOT)
    entry(["QUIT <CR> <LF>"], category=M, name="unknown-campaign-1", kind=SourceKind.MUA)
    with pytest.raises(ValueError):
        entry(["QUIT <CR> <LF>"], category=M, name="Thunderbird", kind=SourceKind.MUA)


def test_exact_match_and_universe():
    kb = KnowledgeBase()
    e = entry(CONVERSION_STATES)
    kb_add(kb, e)
    s = tokenize_conversation(CONVERSION, Mode.M1).states
    assert match(kb, Mode.M1, s) == Exact(e)
    assert isinstance(match(kb, Mode.M2, s), NovelStates)
    assert kb.universe(Mode.M1) == frozenset(CONVERSION_STATES)


def test_reordered_legit_states_are_unknown_sequence():
    kb = KnowledgeBase([entry(CONVERSION_STATES)])
    reordered = CONVERSION_STATES[:3] + [CONVERSION_STATES[5], CONVERSION_STATES[4], CONVERSION_STATES[3]] + CONVERSION_STATES[6:]
    assert match(kb, Mode.M1, states_of(reordered)) == UnknownSequence()


def test_client_sent_greeting_is_novel():
    kb = KnowledgeBase([entry(CONVERSION_STATES)])
    greeting = "220 space domain space text space text <CR> <LF>"
    result = match(kb, Mode.M1, states_of(CONVERSION_STATES[:2] + [greeting] + CONVERSION_STATES[2:]))
    assert result == NovelStates((greeting,))
    assert not any(kb.in_universe(Mode.M1, s) for s in result.states)


def test_repeat_marker_is_not_novel():
    kb = KnowledgeBase([entry(CONVERSION_STATES)])
    result = match(kb, Mode.M1, states_of(CONVERSION_STATES[:-2] + ["*repeat*"] + CONVERSION_STATES[-2:]))
    assert result == UnknownSequence()


def test_malicious_entry_leaves_universe_alone():
    kb = KnowledgeBase([entry(CONVERSION_STATES)])
    before = kb.universe(Mode.M1)
    kb.add(entry(["HELO space domain <LF>", "QUIT <LF>"], category=M, name="Kelihos", kind=SourceKind.BOT))
    assert kb.universe(Mode.M1) == before


def test_suspicious_universe_flag():
    lib = entry(["EHLO space text <CR> <LF>"], category=S, name="PHPMailer", kind=SourceKind.LIBRARY)
    assert "EHLO space text <CR> <LF>" in KnowledgeBase([lib]).universe(Mode.M1)
    assert KnowledgeBase([lib], include_suspicious=False).universe(Mode.M1) == frozenset()


def test_duplicate_rejected_with_existing_identity():
    kb = KnowledgeBase([entry(CONVERSION_STATES)])
    with pytest.raises(KBConflict) as exc:
        kb.add(entry(CONVERSION_STATES, name="someone else"))
    assert exc.value.existing.source_name == "reference-client"


def test_unknown_promotion_needs_flag():
    kb = KnowledgeBase()
    e = entry(["HELO space text <LF>"], category=M, name="unknown-campaign-1", kind=SourceKind.BOT)
    with pytest.raises(KBError):
        kb.add(e)
    kb.add(e, allow_unknown_promotion=True)
    assert match(kb, Mode.M1, e.dialect.states) == Exact(e)


def test_adding_benign_keeps_exact_matches():
    kb = KnowledgeBase([entry(CONVERSION_STATES)])
    s = states_of(CONVERSION_STATES)
    kb.add(entry(CONVERSION_STATES[:-2] + ["QUIT <CR> <LF>", "221"], name="other"))
    assert isinstance(match(kb, Mode.M1, s), Exact)


def test_save_load_round_trip(tmp_path, seed_kb):
    path = tmp_path / "kb.jsonl"
    kb_save(seed_kb, path)
    loaded = kb_load(path)
    assert loaded == seed_kb
    assert loaded.recompute_universe() == {m: seed_kb.universe(m) for m in Mode}
    assert path.read_text() == dumps_kb(loaded)
    hashes = [json.loads(line)["hash"] for line in path.read_text().splitlines()]
    assert hashes == sorted(hashes)


def test_record_format():
    rec = entry(CONVERSION_STATES, patterns=["Thunderbird"]).to_record()
    assert set(rec) == {"hash", "mode", "category", "source_name", "source_kind", "mailer_patterns", "states"}
    assert (rec["mode"], rec["category"], rec["source_kind"]) == ("M1", "benign", "MUA")
    assert rec["states"] == CONVERSION_STATES


def test_tampered_hash_is_corruption():
    rec = entry(CONVERSION_STATES).to_record()
    rec["hash"] = "0" * 64
    with pytest.raises(KBCorruption, match="reference-client"):
        loads_kb(json.dumps(rec))


def test_duplicate_on_load():
    line = json.dumps(entry(CONVERSION_STATES).to_record())
    with pytest.raises(KBConflict):
        loads_kb(line + "\n" + line)


def test_malformed_kb_line():
    with pytest.raises(KBCorruption, match=":1:"):
        loads_kb("{oops")


def test_stats_shapes():
    empty = kb_stats(KnowledgeBase())
    assert all(empty.total(m) == 0 for m in Mode)
    kb = KnowledgeBase([
        entry(["A <CR> <LF>"]),
        entry(["B <CR> <LF>"], category=S, kind=SourceKind.LIBRARY, name="lib"),
        entry(["C <CR> <LF>"], category=M, kind=SourceKind.BOT, name="bot"),
    ])
    stats = kb_stats(kb)
    assert stats.counts[Mode.M1] == {B: 1, S: 1, M: 1}
    assert stats.total(Mode.M1) == 3
    text = format_stats(stats)
    assert text.splitlines()[0].split() == ["Operation", "mode", "M0", "M1", "M2"]
    assert text.splitlines()[-1].split() == ["Total", "0", "3", "0"]


def test_seed_kb_taxonomy(seed_kb):
    names = kb_stats(seed_kb).names
    assert names[(B, SourceKind.MUA)] == 12
    assert names[(B, SourceKind.MTA)] == 4
    assert names[(S, SourceKind.LIBRARY)] == 9
    assert names[(M, SourceKind.BOT)] == 7
    bots = {e.source_name for e in seed_kb if e.category is M}
    assert bots == {"Geodo/Feodo", "Htbot", "Kelihos", "Sality", "Upatre", "Vawtrak", "Zbot"}


def test_bundled_seed_matches_regeneration(seed_kb):
    assert dumps_kb(seed_kb) == seed.seed_kb_text()


def test_seed_counts_grow_with_mode(seed_kb):
    stats = kb_stats(seed_kb)
    totals = [stats.total(m) for m in Mode]
    assert totals == sorted(totals) and totals[0] < totals[2]
