import json
from importlib import resources

import pytest

from conftest import CONVERSION_STATES
from dialektor import seed, synth
from dialektor.classifier import Verdict, analyze_conversation
from dialektor.dialect import Category, Dialect, KbEntry, SourceKind, hash_dialect
from dialektor.imf import parse_imf
from dialektor.tokenizer import Mode, tokenize_conversation
from dialektor.transcript import Direction, dump_text, load_text, parse_text, split_lines

CONVERSION_ENTRY = KbEntry(Dialect.from_strings(Mode.M1, CONVERSION_STATES), Category.BENIGN, "reference-client",
                       SourceKind.MUA, ("Thunderbird",))


def tokens(conv, mode):
    return [s.canonical for s in tokenize_conversation(conv, mode).states]


def test_conversion_example_round_trip():
    c = synth.generate(synth.GenSpec(CONVERSION_ENTRY), 7)
    assert tokens(c, Mode.M1) == CONVERSION_STATES


def test_seed_changes_values_not_dialect():
    a = synth.generate(synth.GenSpec(CONVERSION_ENTRY), 1)
    b = synth.generate(synth.GenSpec(CONVERSION_ENTRY), 2)
    assert a.segments != b.segments
    assert tokens(a, Mode.M1) == tokens(b, Mode.M1)
    assert synth.generate(synth.GenSpec(CONVERSION_ENTRY), 1) == a


def test_lf_only_entry_never_emits_crlf():
    states = [s.replace("<CR> <LF>", "<LF>") for s in CONVERSION_STATES]
    e = KbEntry(Dialect.from_strings(Mode.M1, states), Category.MALICIOUS, "Kelihos", SourceKind.BOT)
    c = synth.generate(synth.GenSpec(e), 3)
    lines = split_lines(c)
    assert all(l.data.endswith(b"\n") and not l.data.endswith(b"\r\n") for l in lines)
    assert tokens(c, Mode.M1) == states


def test_three_transactions_one_repeat(seed_kb):
    (upatre,) = seed_kb.find("Upatre", Mode.M1)
    assert sum(s.is_repeat for s in upatre.dialect.states) == 1
    for tc in (2, 3, 7):
        c = synth.generate(synth.GenSpec(upatre, transaction_count=tc), 0)
        out = tokens(c, Mode.M1)
        assert out.count("*repeat*") == 1
        assert out == upatre.dialect.canonical_states
        assert len(tokenize_conversation(c, Mode.M1).bodies) == tc


def test_transactions_without_repeat_entry_gain_one():
    c = synth.generate(synth.GenSpec(CONVERSION_ENTRY, transaction_count=3), 0)
    assert tokens(c, Mode.M1).count("*repeat*") == 1


def test_repeat_entry_needs_several_transactions(seed_kb):
    (upatre,) = seed_kb.find("Upatre", Mode.M1)
    with pytest.raises(synth.GenSpecError):
        synth.generate(synth.GenSpec(upatre), 0)
    with pytest.raises(synth.GenSpecError):
        synth.GenSpec(upatre, transaction_count=0)


def test_m0_entry_generates_a_complete_transfer(seed_kb):
    e = seed_kb.find("Mozilla Thunderbird", Mode.M0)[0]
    c = synth.generate(synth.GenSpec(e), 5)
    tok = tokenize_conversation(c, Mode.M0)
    assert [s.canonical for s in tok.states] == e.dialect.canonical_states
    assert not tokenize_conversation(c, Mode.M1).scan


def test_imf_overrides():
    spec = synth.GenSpec(CONVERSION_ENTRY, imf_overrides=synth.ImfOverrides("Outlook 2010", 2))
    body = tokenize_conversation(synth.generate(spec, 0), Mode.M1).bodies[0]
    h = parse_imf(body)
    assert (h.mailer, h.received_count) == ("Outlook 2010", 2)
    assert {n.lower() for n, _ in h.fields} <= {"received", "date", "from", "to", "x-mailer"}


def test_default_body_is_consistent(seed_kb):
    for name in ("Mozilla Thunderbird", "Postfix"):
        e = seed_kb.find(name, Mode.M1)[0]
        v = analyze_conversation(synth.generate(synth.GenSpec(e), 0), seed_kb, Mode.M1, True)
        assert v.alerts == ()


def test_synthetic_corpus_ip_accounting(seed_kb):
    (vawtrak,) = seed_kb.find("Vawtrak", Mode.M1)
    convs = synth.synthetic_corpus(vawtrak, 9, 4, seed=1)
    assert len({c.src_ip for c in convs}) == 4
    assert len({c.stream_id for c in convs}) == 9
    assert {hash_dialect(Mode.M1, tokenize_conversation(c, Mode.M1).states) for c in convs} == {vawtrak.hash}
    with pytest.raises(synth.GenSpecError):
        synth.synthetic_corpus(vawtrak, 2, 3)
    assert len(set(synth.ip_pool(500))) == 500


@pytest.fixture(scope="module")
def fixtures():
    return {case.name: case for case in synth.fixture_corpus()}


def test_fixture_expectations(fixtures, seed_kb):
    for case in fixtures.values():
        v = analyze_conversation(case.conversation, seed_kb, Mode.M1, True)
        assert v.category is case.expected.category, case.name
        assert v.matched_source == case.expected.matched_source, case.name
        assert [a.kind for a in v.alerts] == [a.kind for a in case.expected.alerts], case.name
        assert v.treated_as_spam == case.expected.treated_as_spam, case.name


def test_fixture_a_pair(fixtures):
    efax = tokens(fixtures["a-efax-bot"].conversation, Mode.M1)
    apple = tokens(fixtures["a-apple-genuine"].conversation, Mode.M1)
    assert hash_dialect(Mode.M1, tokenize_conversation(fixtures["a-efax-bot"].conversation, Mode.M1).states) != \
        hash_dialect(Mode.M1, tokenize_conversation(fixtures["a-apple-genuine"].conversation, Mode.M1).states)
    assert efax[1].startswith("HELO space domain") and apple[1].startswith("EHLO space [ IPv4 ]")
    assert any(": space <" in s for s in efax) and not any(": space <" in s for s in apple)
    assert not any(s.upper().startswith("QUIT") for s in efax)
    assert any(s.upper().startswith("QUIT") for s in apple)


def test_fixture_c_ends_with_quit_space(fixtures):
    states = tokens(fixtures["c-quit-space"].conversation, Mode.M1)
    assert "QUIT space <CR> <LF>" in states[-2:]
    twin = tokens(fixtures["c-quit-twin"].conversation, Mode.M1)
    assert "QUIT <CR> <LF>" in twin[-2:]


def test_fixture_d_is_scan(fixtures):
    assert tokenize_conversation(fixtures["d-starttls-probe"].conversation, Mode.M1).scan


def test_shipped_fixtures_match_regeneration(tmp_path):
    synth.write_fixture_corpus(tmp_path)
    shipped = resources.files("dialektor").joinpath("fixtures", synth.FIXTURE_VERSION)
    for path in sorted(tmp_path.rglob("*.*")):
        rel = path.relative_to(tmp_path).as_posix()
        assert shipped.joinpath(*rel.split("/")).read_text(encoding="utf-8") == path.read_text(encoding="utf-8"), rel


def test_fixture_files_load(tmp_path, fixtures):
    synth.write_fixture_corpus(tmp_path)
    for name, case in fixtures.items():
        assert load_text(tmp_path / "transcripts" / f"{name}.smtp") == [case.conversation]
    expected = [Verdict.from_record(json.loads(l)) for l in (tmp_path / "expected.jsonl").read_text().splitlines()]
    assert [v.stream_id for v in expected] == [f"fx-{n}" for n in fixtures]


def test_reference_transcripts_cover_every_profile():
    refs = seed.reference_transcripts()
    assert {p.name for p, _ in refs} == {p.name for p in seed.PROFILES}
    assert len({c.stream_id for _, c in refs}) == len(refs)
    for _, c in refs:
        assert c.segments[0].direction is Direction.SERVER
        assert parse_text(dump_text([c])) == [c]
