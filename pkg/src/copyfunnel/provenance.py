"""Hash-chained provenance ledger and dataset provenance cards.

Ledger file layout: two JSONL lines per entry, ``{"record": ...}`` then
``{"link": ...}``, each the canonical serialization (sorted keys, no
insignificant whitespace, UTF-8).  Entry ``seq`` occupies lines ``2*seq``
and ``2*seq + 1``.

    link_digest = SHA-256(prev_digest || record_digest || seq as 8-byte big-endian)

The chain cannot prove its own completeness: dropping trailing entries is
only detectable against a head digest published elsewhere.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence
from urllib.parse import urlsplit

from .errors import ChainInvalid, InputError, SerializationNoncanonical
from .verdicts import STAGE_ORDER, Outcome, Stage, StageVerdict, combine

ZERO_DIGEST = "0" * 64


class RecordKind(str, Enum):
    INGEST = "INGEST"
    RESCAN = "RESCAN"


def canonical_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8")


def link_digest(prev_digest: str, record_digest: str, seq: int) -> str:
    return hashlib.sha256(bytes.fromhex(prev_digest) + bytes.fromhex(record_digest) + seq.to_bytes(8, "big")).hexdigest()


@dataclass(frozen=True)
class ProvenanceRecord:
    doc_id: str
    source_url: str
    fetched_at: str
    stage_verdicts: tuple[StageVerdict, ...]
    final_verdict: Outcome
    access_decision: dict | None = None
    fingerprints: dict[str, str] = field(default_factory=dict)
    snapshot_version: int | None = None
    record_kind: RecordKind = RecordKind.INGEST

    def __post_init__(self):
        object.__setattr__(self, "stage_verdicts", tuple(self.stage_verdicts))
        object.__setattr__(self, "final_verdict", Outcome(self.final_verdict))
        object.__setattr__(self, "record_kind", RecordKind(self.record_kind))
        order = [STAGE_ORDER.index(v.stage) for v in self.stage_verdicts]
        if order != sorted(set(order)):
            raise ValueError(f"stage verdicts out of order for {self.doc_id!r}")
        if self.stage_verdicts and combine(list(self.stage_verdicts)) is not self.final_verdict:
            raise ValueError(f"final verdict of {self.doc_id!r} inconsistent with its stage verdicts")

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "source_url": self.source_url,
            "fetched_at": self.fetched_at,
            "access_decision": self.access_decision,
            "stage_verdicts": [v.as_dict() for v in self.stage_verdicts],
            "fingerprints": dict(self.fingerprints),
            "snapshot_version": self.snapshot_version,
            "final_verdict": self.final_verdict.value,
            "record_kind": self.record_kind.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ProvenanceRecord:
        return cls(
            doc_id=d["doc_id"],
            source_url=d["source_url"],
            fetched_at=d["fetched_at"],
            stage_verdicts=tuple(StageVerdict.from_dict(v) for v in d["stage_verdicts"]),
            final_verdict=d["final_verdict"],
            access_decision=d.get("access_decision"),
            fingerprints=d.get("fingerprints") or {},
            snapshot_version=d.get("snapshot_version"),
            record_kind=d.get("record_kind", "INGEST"),
        )

    def rejecting_stage(self) -> StageVerdict | None:
        return next((v for v in self.stage_verdicts if v.verdict is Outcome.REJECT), None)


@dataclass(frozen=True)
class AuditLink:
    seq: int
    record_digest: str
    prev_digest: str
    link_digest: str

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "record_digest": self.record_digest,
            "prev_digest": self.prev_digest,
            "link_digest": self.link_digest,
        }


def serialize_record(record: ProvenanceRecord) -> bytes:
    try:
        data = canonical_bytes(record.to_dict())
    except (TypeError, ValueError) as exc:
        raise SerializationNoncanonical(f"record {record.doc_id!r}: {exc}") from exc
    again = canonical_bytes(ProvenanceRecord.from_dict(json.loads(data)).to_dict())
    if again != data:
        raise SerializationNoncanonical(f"record {record.doc_id!r} does not round-trip")
    return data


class Ledger:
    """Append-only chain of provenance records.

    With ``path`` set, every append is a single ``write`` of the record and
    link lines to a file opened for appending; otherwise entries stay in
    memory until :meth:`save`.
    """

    def __init__(self, path: str | Path | None = None):
        self._lines: list[bytes] = []
        self._links: list[AuditLink] = []
        self.path = Path(path) if path is not None else None
        if self.path is not None and self.path.exists():
            data = self.path.read_bytes()
            result = verify_bytes(data)
            if not result.ok:
                raise ChainInvalid(f"{self.path}: chain broken at seq {result.first_broken}")
            self._load_lines(data)

    def _load_lines(self, data: bytes) -> None:
        lines = data.split(b"\n")[:-1]
        for i in range(0, len(lines), 2):
            self._lines.extend(lines[i : i + 2])
            self._links.append(AuditLink(**json.loads(lines[i + 1])["link"]))

    @classmethod
    def from_bytes(cls, data: bytes) -> Ledger:
        result = verify_bytes(data)
        if not result.ok:
            raise ChainInvalid(f"chain broken at seq {result.first_broken}")
        ledger = cls()
        ledger._load_lines(data)
        return ledger

    def __len__(self) -> int:
        return len(self._links)

    @property
    def head(self) -> str:
        return self._links[-1].link_digest if self._links else ZERO_DIGEST

    @property
    def links(self) -> tuple[AuditLink, ...]:
        return tuple(self._links)

    def append(self, record: ProvenanceRecord) -> AuditLink:
        payload = serialize_record(record)
        record_digest = hashlib.sha256(payload).hexdigest()
        seq = len(self._links)
        prev = self.head
        link = AuditLink(seq, record_digest, prev, link_digest(prev, record_digest, seq))
        record_line = b'{"record":' + payload + b"}"
        link_line = canonical_bytes({"link": link.to_dict()})
        if self.path is not None:
            fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                os.write(fd, record_line + b"\n" + link_line + b"\n")
                os.fsync(fd)
            finally:
                os.close(fd)
        self._lines.extend([record_line, link_line])
        self._links.append(link)
        return link

    def to_bytes(self) -> bytes:
        return b"".join(line + b"\n" for line in self._lines)

    def records(self) -> Iterator[ProvenanceRecord]:
        for line in self._lines[::2]:
            yield ProvenanceRecord.from_dict(json.loads(line)["record"])

    def save(self, path: str | Path) -> None:
        atomic_write(path, self.to_bytes())


def append_record(ledger: Ledger, record: ProvenanceRecord) -> AuditLink:
    return ledger.append(record)


def atomic_write(path: str | Path, data: bytes | str) -> None:
    """Write to a temp file in the target directory, then rename over the target."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --- verification ------------------------------------------------------------


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    first_broken: int | None = None
    entries: int = 0

    def __bool__(self) -> bool:
        return self.ok


def _parse_canonical(line: bytes, key: str) -> dict | None:
    try:
        obj = json.loads(line)
    except (ValueError, UnicodeDecodeError):
        return None
    if not isinstance(obj, dict) or list(obj) != [key] or not isinstance(obj[key], dict):
        return None
    try:
        if canonical_bytes(obj) != line:
            return None
    except (TypeError, ValueError):
        return None
    return obj[key]


def verify_bytes(data: bytes) -> VerifyResult:
    """Recompute every digest; report the lowest inconsistent seq."""
    if not data:
        return VerifyResult(True)
    lines = data.split(b"\n")
    # a well-formed file ends with a newline, leaving one empty trailing chunk
    terminated = lines[-1] == b""
    if terminated:
        lines.pop()
    n_entries = (len(lines) + 1) // 2
    prev = ZERO_DIGEST
    for seq in range(n_entries):
        rec_line = lines[2 * seq]
        link_line = lines[2 * seq + 1] if 2 * seq + 1 < len(lines) else None
        record = _parse_canonical(rec_line, "record")
        link = _parse_canonical(link_line, "link") if link_line is not None else None
        if record is None or link is None:
            return VerifyResult(False, seq, n_entries)
        if not terminated and seq == n_entries - 1:
            return VerifyResult(False, seq, n_entries)
        record_digest = hashlib.sha256(canonical_bytes(record)).hexdigest()
        try:
            expected = link_digest(prev, record_digest, seq)
        except ValueError:
            return VerifyResult(False, seq, n_entries)
        if link != {"seq": seq, "record_digest": record_digest, "prev_digest": prev, "link_digest": expected}:
            return VerifyResult(False, seq, n_entries)
        prev = expected
    return VerifyResult(True, None, n_entries)


def verify_chain(ledger: Ledger | bytes | str | Path) -> VerifyResult:
    if isinstance(ledger, Ledger):
        return verify_bytes(ledger.to_bytes())
    if isinstance(ledger, bytes):
        return verify_bytes(ledger)
    return verify_bytes(Path(ledger).read_bytes())


def head_of(data: bytes) -> str:
    """Chain head of an already verified ledger."""
    lines = data.split(b"\n")
    links = [ln for ln in lines[1::2] if ln]
    return json.loads(links[-1])["link"]["link_digest"] if links else ZERO_DIGEST


# --- cards -------------------------------------------------------------------


@dataclass(frozen=True)
class ProvenanceCard:
    dataset_id: str
    total_ingested: int
    admitted: int
    rejected: int
    quarantined: int
    rejection_reasons: dict[str, int]
    quarantine_reasons: dict[str, int]
    source_domains: dict[str, int]
    snapshot_version: int | None
    chain_head_digest: str
    ledger_entries: int
    rescan_records: int

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["card_digest"] = hashlib.sha256(canonical_bytes(d)).hexdigest()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _host(url: str) -> str:
    try:
        return (urlsplit(url).hostname or "").lower() or "(none)"
    except ValueError:
        return "(invalid)"


def card_from_records(records: Iterable[ProvenanceRecord], dataset_id: str, head: str, entries: int) -> ProvenanceCard:
    finals: Counter = Counter()
    reject_reasons: Counter = Counter()
    quarantine_reasons: Counter = Counter()
    domains: Counter = Counter()
    versions = set()
    rescans = 0
    for rec in records:
        if rec.record_kind is RecordKind.RESCAN:
            rescans += 1
            continue
        finals[rec.final_verdict] += 1
        domains[_host(rec.source_url)] += 1
        if rec.snapshot_version is not None:
            versions.add(rec.snapshot_version)
        if rec.final_verdict is Outcome.REJECT:
            reject_reasons[rec.rejecting_stage().reason] += 1
        elif rec.final_verdict is Outcome.QUARANTINE:
            first = next(v for v in rec.stage_verdicts if v.verdict is Outcome.QUARANTINE and v.stage is not Stage.ENTITY)
            quarantine_reasons[first.reason] += 1
    return ProvenanceCard(
        dataset_id=dataset_id,
        total_ingested=sum(finals.values()),
        admitted=finals[Outcome.ADMIT],
        rejected=finals[Outcome.REJECT],
        quarantined=finals[Outcome.QUARANTINE],
        rejection_reasons=dict(sorted(reject_reasons.items())),
        quarantine_reasons=dict(sorted(quarantine_reasons.items())),
        source_domains=dict(sorted(domains.items())),
        snapshot_version=max(versions) if versions else None,
        chain_head_digest=head,
        ledger_entries=entries,
        rescan_records=rescans,
    )


def emit_card(ledger: Ledger | bytes | str | Path, dataset_id: str) -> ProvenanceCard:
    if isinstance(ledger, Ledger):
        data = ledger.to_bytes()
    elif isinstance(ledger, bytes):
        data = ledger
    else:
        data = Path(ledger).read_bytes()
    result = verify_bytes(data)
    if not result.ok:
        raise ChainInvalid(f"chain broken at seq {result.first_broken}")
    try:
        parsed = Ledger.from_bytes(data)
        records = list(parsed.records())
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"ledger record does not match the record schema: {exc}") from exc
    return card_from_records(records, dataset_id, parsed.head, len(parsed))


def render_card(card: ProvenanceCard) -> str:
    """Plain-text rendering for humans."""
    width = 44
    lines = [
        f"Provenance card: {card.dataset_id}",
        "=" * width,
        f"{'documents ingested':<28}{card.total_ingested:>16}",
        f"{'admitted':<28}{card.admitted:>16}",
        f"{'rejected':<28}{card.rejected:>16}",
        f"{'quarantined (human review)':<28}{card.quarantined:>16}",
        f"{'registry snapshot':<28}{'v' + str(card.snapshot_version) if card.snapshot_version is not None else '-':>16}",
        f"{'ledger entries':<28}{card.ledger_entries:>16}",
        f"{'rescan records':<28}{card.rescan_records:>16}",
    ]
    for title, hist in (
        ("Rejection reasons", card.rejection_reasons),
        ("Quarantine reasons", card.quarantine_reasons),
        ("Source domains", card.source_domains),
    ):
        lines += ["", title, "-" * width]
        lines += [f"{k:<34}{v:>10}" for k, v in hist.items()] or ["(none)"]
    lines += ["", f"chain head: {card.chain_head_digest}"]
    return "\n".join(lines) + "\n"


def card_rows(card: ProvenanceCard) -> list[tuple[str, str, int]]:
    """(section, key, count) rows for delimited output."""
    rows = [
        ("counts", "total_ingested", card.total_ingested),
        ("counts", "admitted", card.admitted),
        ("counts", "rejected", card.rejected),
        ("counts", "quarantined", card.quarantined),
    ]
    rows += [("rejection_reason", k, v) for k, v in card.rejection_reasons.items()]
    rows += [("quarantine_reason", k, v) for k, v in card.quarantine_reasons.items()]
    rows += [("source_domain", k, v) for k, v in card.source_domains.items()]
    return rows


def records_of(data: bytes) -> Sequence[ProvenanceRecord]:
    return list(Ledger.from_bytes(data).records())
