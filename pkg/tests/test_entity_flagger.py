import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copyfunnel.entity_flagger import (
    EntityClass,
    GazetteerEntry,
    compile_gazetteer,
    dump_gazetteer,
    flag_verdict,
    load_gazetteer,
    scan_text,
)
from copyfunnel.errors import DuplicateEntry, EmptyGazetteer, InputError
from copyfunnel.text import normalize_text
from copyfunnel.verdicts import Outcome


def brute_force(entries, tokens):
    """Substring search on the space-joined text, keeping only whole-token hits."""
    text = " ".join(tokens)
    # char offset -> token index, for token starts and token ends
    starts, ends, pos = {}, {}, 0
    for i, tok in enumerate(tokens):
        starts[pos] = i
        pos += len(tok)
        ends[pos] = i + 1
        pos += 1
    found = set()
    for entry in entries:
        at = text.find(entry.surface)
        while at != -1:
            stop = at + len(entry.surface)
            if at in starts and stop in ends:
                found.add((starts[at], ends[stop], entry.surface, entry.entity_class))
            at = text.find(entry.surface, at + 1)
    return found


def as_set(flags):
    return {(f.start_token, f.end_token, f.entry.surface, f.entry.entity_class) for f in flags}


def test_single_entry():
    m = compile_gazetteer([GazetteerEntry("The Daily Bugle", EntityClass.PUBLICATION)])
    flags = scan_text(m, normalize_text("Read the Daily Bugle today."))
    assert [(f.start_token, f.end_token) for f in flags] == [(1, 4)]


def test_shared_prefix_whole_token_boundaries():
    m = compile_gazetteer(
        [GazetteerEntry("john smith", EntityClass.AUTHOR), GazetteerEntry("john smithson", EntityClass.AUTHOR)]
    )
    tokens = normalize_text("john smithson wrote to john smith")
    flags = scan_text(m, tokens)
    assert [(f.start_token, f.end_token, f.entry.surface) for f in flags] == [
        (0, 2, "john smithson"),
        (4, 6, "john smith"),
    ]
    assert as_set(flags) == brute_force(m.entries, tokens)


def test_empty_gazetteer():
    with pytest.raises(EmptyGazetteer):
        compile_gazetteer([])


def test_duplicate_after_normalization():
    with pytest.raises(DuplicateEntry):
        compile_gazetteer([GazetteerEntry("Jane Doe", "AUTHOR"), GazetteerEntry("jane  doe.", "AUTHOR")])
    # same surface, different class is fine
    compile_gazetteer([GazetteerEntry("penguin", "PUBLISHER"), GazetteerEntry("penguin", "WORK_TITLE")])


def test_blank_surface_rejected():
    with pytest.raises(InputError):
        GazetteerEntry(" ... ", "AUTHOR")


def test_two_entities_flagged():
    m = compile_gazetteer([GazetteerEntry("jane doe", "AUTHOR"), GazetteerEntry("the daily bugle", "PUBLICATION")])
    assert len(scan_text(m, normalize_text("report by jane doe for the daily bugle"))) == 2


def test_mention_without_content_is_flag_only():
    m = compile_gazetteer([GazetteerEntry("the new york times", "PUBLICATION")])
    flags = scan_text(m, normalize_text("An essay about how The New York Times covers elections."))
    assert len(flags) == 1
    assert flag_verdict(flags, 1).verdict is Outcome.QUARANTINE


def test_empty_tokens():
    m = compile_gazetteer([GazetteerEntry("x", "AUTHOR")])
    assert scan_text(m, []) == []


def test_overlapping_entries_all_reported():
    m = compile_gazetteer(
        [GazetteerEntry("new york", "PUBLICATION"), GazetteerEntry("york times", "PUBLICATION"), GazetteerEntry("times", "PUBLISHER")]
    )
    flags = scan_text(m, ["the", "new", "york", "times"])
    assert [(f.start_token, f.end_token) for f in flags] == [(1, 3), (2, 4), (3, 4)]


def test_flag_verdict_examples():
    m = compile_gazetteer([GazetteerEntry("a", "AUTHOR")])
    assert flag_verdict([], 2).verdict is Outcome.ADMIT
    assert flag_verdict(scan_text(m, ["a"] * 5), 2).verdict is Outcome.QUARANTINE
    with pytest.raises(ValueError):
        flag_verdict([], 0)


def test_gazetteer_file_round_trip(tmp_path):
    entries = [GazetteerEntry("Jane Doe", "AUTHOR", "w1"), GazetteerEntry("Bugle", "PUBLICATION")]
    path = tmp_path / "g.jsonl"
    path.write_text(dump_gazetteer(entries))
    assert load_gazetteer(path) == entries


def test_gazetteer_file_errors_name_line(tmp_path):
    path = tmp_path / "g.jsonl"
    path.write_text('{"surface": "a", "class": "AUTHOR"}\n{"surface": "b", "class": "NOPE"}\n')
    with pytest.raises(InputError, match=":2:"):
        load_gazetteer(path)


def random_case(rng: random.Random, max_entries=100, max_tokens=1000):
    vocab = [f"w{i}" for i in range(rng.randint(3, 30))]
    surfaces = {" ".join(rng.choices(vocab, k=rng.randint(1, 4))) for _ in range(rng.randint(1, max_entries))}
    entries = [GazetteerEntry(s, rng.choice(list(EntityClass))) for s in sorted(surfaces)]
    tokens = rng.choices(vocab, k=rng.randint(0, max_tokens))
    return entries, tokens


def test_matcher_equals_brute_force_seeded():
    rng = random.Random(99)
    for _ in range(60):
        entries, tokens = random_case(rng, max_tokens=300)
        assert as_set(scan_text(compile_gazetteer(entries), tokens)) == brute_force(entries, tokens)


@settings(max_examples=60)
@given(
    st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=4), min_size=1, max_size=10, unique_by=tuple),
    st.lists(st.sampled_from("abcde"), max_size=40),
    st.integers(1, 5),
)
def test_matcher_property(surfaces, tokens, threshold):
    entries = [GazetteerEntry(" ".join(s), "AUTHOR") for s in surfaces]
    flags = scan_text(compile_gazetteer(entries), tokens)
    assert as_set(flags) == brute_force(entries, tokens)
    assert all(" ".join(tokens[f.start_token : f.end_token]) == f.entry.surface for f in flags)
    assert flag_verdict(flags, threshold).verdict is not Outcome.REJECT
