import hashlib
import json
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copyfunnel.errors import ChainInvalid, SerializationNoncanonical
from copyfunnel.policy_gate import AccessDecision, Reason, Verdict
from copyfunnel.provenance import (
    ZERO_DIGEST,
    Ledger,
    ProvenanceRecord,
    RecordKind,
    append_record,
    canonical_bytes,
    card_rows,
    emit_card,
    render_card,
    serialize_record,
    verify_chain,
)
from copyfunnel.verdicts import Outcome, Stage, StageVerdict

ADMIT_GATE = StageVerdict(Stage.GATE, Outcome.ADMIT, "OPEN")
HOSTS = ["news.example", "blog.example", "archive.example", "café.example"]


def make_record(i, outcome=Outcome.ADMIT, host="news.example", kind=RecordKind.INGEST):
    if kind is RecordKind.RESCAN:
        stages = (StageVerdict(Stage.XREF, Outcome.QUARANTINE, "EXACT_DIGEST", "w1:1.000"),)
    elif outcome is Outcome.REJECT:
        stages = (StageVerdict(Stage.GATE, Outcome.REJECT, "TDM_RESERVED", "http header"),)
    elif outcome is Outcome.QUARANTINE:
        stages = (ADMIT_GATE, StageVerdict(Stage.FINGERPRINT, Outcome.QUARANTINE, "INSUFFICIENT_TEXT"))
    else:
        stages = (
            ADMIT_GATE,
            StageVerdict(Stage.FINGERPRINT, Outcome.ADMIT, "COMPUTED"),
            StageVerdict(Stage.ENTITY, Outcome.ADMIT, "BELOW_THRESHOLD", "1 flag"),
            StageVerdict(Stage.CLASSIFIER, Outcome.ADMIT, "BELOW_THRESHOLD", "score=-3.25"),
            StageVerdict(Stage.XREF, Outcome.ADMIT, "NO_HITS"),
        )
    return ProvenanceRecord(
        doc_id=f"doc-{i:05d}",
        source_url=f"https://{host}/item/{i}",
        fetched_at="2026-03-01T12:00:00Z",
        stage_verdicts=stages,
        final_verdict=Outcome.QUARANTINE if kind is RecordKind.RESCAN else outcome,
        access_decision=AccessDecision(Verdict.ALLOW, Reason.OPEN).as_dict(),
        fingerprints={"exact_digest": hashlib.sha256(str(i).encode()).hexdigest(), "simhash": f"{i * 7919:016x}"},
        snapshot_version=1,
        record_kind=kind,
    )


def random_ledger(n, seed=0):
    rng = random.Random(seed)
    ledger = Ledger()
    for i in range(n):
        outcome = rng.choice(list(Outcome))
        kind = RecordKind.RESCAN if rng.random() < 0.05 else RecordKind.INGEST
        ledger.append(make_record(i, outcome, rng.choice(HOSTS), kind))
    return ledger


@pytest.fixture(scope="module")
def big_ledger():
    return random_ledger(1000, seed=1).to_bytes()


# --- append ---------------------------------------------------------------------


def test_first_record_links_to_zero():
    link = append_record(Ledger(), make_record(0))
    assert link.seq == 0 and link.prev_digest == ZERO_DIGEST == "0" * 64
    payload = serialize_record(make_record(0))
    assert link.record_digest == hashlib.sha256(payload).hexdigest()
    expected = hashlib.sha256(bytes(32) + bytes.fromhex(link.record_digest) + (0).to_bytes(8, "big")).hexdigest()
    assert link.link_digest == expected


def test_same_record_same_head_same_link():
    a, b = Ledger(), Ledger()
    for ledger in (a, b):
        ledger.append(make_record(0))
    assert a.append(make_record(1)) == b.append(make_record(1))
    assert a.to_bytes() == b.to_bytes()


def test_seq_consecutive_and_chained():
    ledger = random_ledger(20)
    links = ledger.links
    assert [l.seq for l in links] == list(range(20))
    assert all(links[i].prev_digest == links[i - 1].link_digest for i in range(1, 20))
    assert ledger.head == links[-1].link_digest


def test_non_canonical_record_rejected():
    bad = ProvenanceRecord("d", "https://a.example/", "2026-01-01T00:00:00Z", (ADMIT_GATE,), Outcome.ADMIT, fingerprints={"x": float("nan")})
    with pytest.raises(SerializationNoncanonical):
        Ledger().append(bad)


def test_record_invariants():
    with pytest.raises(ValueError, match="order"):
        ProvenanceRecord("d", "u", "t", (StageVerdict(Stage.ENTITY, Outcome.ADMIT, "X"), ADMIT_GATE), Outcome.ADMIT)
    with pytest.raises(ValueError, match="inconsistent"):
        ProvenanceRecord("d", "u", "t", (StageVerdict(Stage.GATE, Outcome.REJECT, "UNPAID"),), Outcome.ADMIT)
    # entity quarantine alone does not change the final verdict
    ProvenanceRecord("d", "u", "t", (ADMIT_GATE, StageVerdict(Stage.ENTITY, Outcome.QUARANTINE, "ENTITY_FLAGS")), Outcome.ADMIT)


@settings(max_examples=100)
@given(
    st.text(min_size=1, max_size=20),
    st.text(max_size=40),
    st.dictionaries(st.text(max_size=8), st.text(max_size=20), max_size=4),
    st.sampled_from(list(Outcome)),
)
def test_serialization_fixed_point(doc_id, evidence, fingerprints, outcome):
    stages = (StageVerdict(Stage.GATE, outcome, "TDM_RESERVED" if outcome is Outcome.REJECT else "OPEN", evidence),)
    rec = ProvenanceRecord(doc_id, "https://x.example/", "2026-01-01T00:00:00Z", stages, outcome, fingerprints=fingerprints)
    once = serialize_record(rec)
    assert canonical_bytes(ProvenanceRecord.from_dict(json.loads(once)).to_dict()) == once
    assert ProvenanceRecord.from_dict(json.loads(once)) == rec


def test_canonical_form():
    assert canonical_bytes({"b": 1, "a": ["é", None]}) == '{"a":["é",null],"b":1}'.encode()


# --- verify -----------------------------------------------------------------------


def test_empty_ledger_ok():
    assert verify_chain(b"").ok
    assert verify_chain(Ledger()).ok


def test_intact_thousand_records(big_ledger):
    result = verify_chain(big_ledger)
    assert result.ok and result.first_broken is None and result.entries == 1000


def test_truncation_of_last_entry_undetectable(big_ledger):
    lines = big_ledger.split(b"\n")
    truncated = b"\n".join(lines[:-3]) + b"\n"
    assert verify_chain(truncated).ok
    assert verify_chain(truncated).entries == 999


def line_of_offset(data, offset):
    return data.count(b"\n", 0, offset)


def test_random_single_bit_mutations(big_ledger):
    rng = random.Random(2026)
    for _ in range(150):
        offset = rng.randrange(len(big_ledger))
        mutated = bytearray(big_ledger)
        mutated[offset] ^= 1 << rng.randrange(8)
        result = verify_chain(bytes(mutated))
        assert not result.ok
        assert result.first_broken == line_of_offset(big_ledger, offset) // 2


@pytest.mark.parametrize("where", ["record", "link"])
def test_byte_flip_reports_that_seq(where):
    data = random_ledger(30, seed=3).to_bytes()
    lines = data.split(b"\n")
    seq = 17
    idx = 2 * seq + (where == "link")
    start = sum(len(l) + 1 for l in lines[:idx])
    for k in range(0, len(lines[idx]), 7):
        mutated = bytearray(data)
        mutated[start + k] ^= 0xFF
        assert verify_chain(bytes(mutated)).first_broken == seq


def test_reordered_entries_detected():
    lines = random_ledger(10).to_bytes().split(b"\n")
    lines[8:10], lines[10:12] = lines[10:12], lines[8:10]
    assert verify_chain(b"\n".join(lines)).first_broken == 4


def test_resorted_but_valid_json_detected():
    data = random_ledger(5).to_bytes()
    lines = data.split(b"\n")
    lines[4] = json.dumps(json.loads(lines[4]), indent=None).encode()
    assert verify_chain(b"\n".join(lines)).first_broken == 2


def test_missing_final_newline():
    data = random_ledger(3).to_bytes()
    assert verify_chain(data[:-1]).first_broken == 2


# --- file ledger ---------------------------------------------------------------------


def test_file_backed_appends_and_reopen(tmp_path):
    path = tmp_path / "ledger.jsonl"
    ledger = Ledger(path)
    for i in range(5):
        ledger.append(make_record(i))
    assert path.read_bytes() == ledger.to_bytes()
    again = Ledger(path)
    assert again.head == ledger.head and len(again) == 5
    again.append(make_record(5))
    assert verify_chain(path).ok and verify_chain(path).entries == 6


def test_reopen_tampered_file_refused(tmp_path):
    path = tmp_path / "ledger.jsonl"
    path.write_bytes(random_ledger(4).to_bytes().replace(b"doc-00002", b"doc-00009"))
    with pytest.raises(ChainInvalid):
        Ledger(path)


# --- cards -------------------------------------------------------------------------


def fold(data):
    """Count straight from the raw JSON lines."""
    counts, reasons, hosts = Counter(), Counter(), Counter()
    for line in data.split(b"\n")[0::2]:
        if not line:
            continue
        rec = json.loads(line)["record"]
        if rec["record_kind"] != "INGEST":
            continue
        counts[rec["final_verdict"]] += 1
        hosts[rec["source_url"].split("/")[2]] += 1
        if rec["final_verdict"] == "REJECT":
            reasons[next(v["reason"] for v in rec["stage_verdicts"] if v["verdict"] == "REJECT")] += 1
    return counts, reasons, hosts


def test_empty_card_is_zero():
    card = emit_card(Ledger(), "empty")
    assert (card.total_ingested, card.admitted, card.rejected, card.quarantined) == (0, 0, 0, 0)
    assert card.rejection_reasons == {} and card.source_domains == {}
    assert card.chain_head_digest == ZERO_DIGEST


def test_three_admits_two_rejects():
    ledger = Ledger()
    for i, outcome in enumerate([Outcome.ADMIT, Outcome.REJECT, Outcome.ADMIT, Outcome.REJECT, Outcome.ADMIT]):
        ledger.append(make_record(i, outcome))
    card = emit_card(ledger, "mini")
    assert (card.admitted, card.rejected) == (3, 2)
    assert card.rejection_reasons == {"TDM_RESERVED": 2}
    assert card.chain_head_digest == ledger.head


def test_card_matches_independent_fold(big_ledger):
    card = emit_card(big_ledger, "big")
    counts, reasons, hosts = fold(big_ledger)
    assert (card.admitted, card.rejected, card.quarantined) == (counts["ADMIT"], counts["REJECT"], counts["QUARANTINE"])
    assert card.total_ingested == card.admitted + card.rejected + card.quarantined
    assert card.rejection_reasons == dict(reasons)
    assert card.source_domains == dict(hosts)
    assert sum(card.source_domains.values()) == card.total_ingested
    assert sum(card.rejection_reasons.values()) == card.rejected
    assert sum(card.quarantine_reasons.values()) == card.quarantined
    assert card.rescan_records == card.ledger_entries - card.total_ingested


def test_card_deterministic_and_bound_to_head(big_ledger):
    a, b = emit_card(big_ledger, "big"), emit_card(big_ledger, "big")
    assert a.to_json() == b.to_json()
    assert render_card(a) == render_card(b)
    shorter = b"".join(l + b"\n" for l in big_ledger.split(b"\n")[:-3])
    assert emit_card(shorter, "big").to_dict()["card_digest"] != a.to_dict()["card_digest"]


def test_card_refuses_broken_chain(big_ledger):
    with pytest.raises(ChainInvalid):
        emit_card(big_ledger.replace(b"doc-00010", b"doc-00011", 1), "x")


def test_card_text_and_rows():
    ledger = random_ledger(40, seed=8)
    card = emit_card(ledger, "demo")
    text = render_card(card)
    assert "Provenance card: demo" in text and card.chain_head_digest in text
    rows = card_rows(card)
    assert ("counts", "total_ingested", card.total_ingested) in rows
    assert sum(n for sec, _, n in rows if sec == "source_domain") == card.total_ingested
