"""Versioned registry of protected works and document cross-referencing.

A snapshot is an immutable JSON file; "continuous updates" are modelled as
successive versions.  ``rescan_admitted`` re-checks an already admitted
corpus against the works a newer snapshot added.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .config import FunnelConfig
from .errors import DigestMalformed, InputError, InsufficientText, SchemaError, VersionMismatch, VersionOrder
from .fingerprint import (
    FingerprintIndex,
    MinHashSignature,
    image_hash_from_pgm,
    text_fingerprints,
)
from .text import canonical_text_bytes, normalize_text

_DIGEST_RE = re.compile(r"^[0-9a-f]{64}$")
_HASH64_RE = re.compile(r"^[0-9a-f]{16}$")

ENTITY_LINK_STRENGTH = 0.5


class MatchKind(str, Enum):
    EXACT_DIGEST = "EXACT_DIGEST"
    IMAGE_PERCEPTUAL = "IMAGE_PERCEPTUAL"
    TEXT_SIMHASH = "TEXT_SIMHASH"
    MINHASH_JACCARD = "MINHASH_JACCARD"
    ENTITY_LINK = "ENTITY_LINK"


_KIND_ORDER = {kind: i for i, kind in enumerate(MatchKind)}


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace("+00:00", "Z")


def _check_timestamp(value, where: str) -> str:
    if not isinstance(value, str):
        raise SchemaError(f"{where}: timestamp must be a string")
    try:
        datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError as exc:
        raise SchemaError(f"{where}: bad timestamp {value!r}") from exc
    return value


@dataclass(frozen=True)
class RegisteredWork:
    work_id: str
    title: str
    exact_digest: str
    authors: tuple[str, ...] = ()
    image_hashes: tuple[int, ...] = ()
    text_simhash: int | None = None
    minhash: MinHashSignature | None = None
    registered_at: str = "1970-01-01T00:00:00Z"

    def to_dict(self) -> dict:
        return {
            "work_id": self.work_id,
            "title": self.title,
            "authors": list(self.authors),
            "exact_digest": self.exact_digest,
            "image_hashes": [f"{h:016x}" for h in self.image_hashes],
            "text_simhash": None if self.text_simhash is None else f"{self.text_simhash:016x}",
            "minhash": None if self.minhash is None else self.minhash.to_hex(),
            "registered_at": self.registered_at,
        }

    @classmethod
    def from_dict(cls, obj: dict, where: str = "work") -> RegisteredWork:
        if not isinstance(obj, dict):
            raise SchemaError(f"{where}: expected an object")
        try:
            work_id = obj["work_id"]
            digest = obj["exact_digest"]
        except KeyError as exc:
            raise SchemaError(f"{where}: missing field {exc}") from exc
        if not isinstance(work_id, str) or not work_id:
            raise SchemaError(f"{where}: work_id must be a non-empty string")
        where = f"{where} ({work_id})"
        if not isinstance(digest, str) or not _DIGEST_RE.match(digest):
            raise DigestMalformed(f"{where}: exact_digest must be 64 lowercase hex digits")

        def hash64(value, name):
            if not isinstance(value, str) or not _HASH64_RE.match(value):
                raise SchemaError(f"{where}: {name} must be 16 lowercase hex digits")
            return int(value, 16)

        title = obj.get("title", "")
        authors = obj.get("authors", [])
        if not isinstance(title, str) or not isinstance(authors, list) or not all(isinstance(a, str) for a in authors):
            raise SchemaError(f"{where}: title must be a string and authors a list of strings")
        images = obj.get("image_hashes") or []
        if not isinstance(images, list):
            raise SchemaError(f"{where}: image_hashes must be a list")
        simhash = obj.get("text_simhash")
        minhash = obj.get("minhash")
        if minhash is not None and (not isinstance(minhash, list) or not minhash):
            raise SchemaError(f"{where}: minhash must be a non-empty list")
        return cls(
            work_id=work_id,
            title=title,
            exact_digest=digest,
            authors=tuple(authors),
            image_hashes=tuple(hash64(h, "image_hashes[]") for h in images),
            text_simhash=None if simhash is None else hash64(simhash, "text_simhash"),
            minhash=None if minhash is None else MinHashSignature(tuple(hash64(m, "minhash[]") for m in minhash)),
            registered_at=_check_timestamp(obj.get("registered_at", "1970-01-01T00:00:00Z"), where),
        )


@dataclass(frozen=True)
class RegistrySnapshot:
    version: int
    works: tuple[RegisteredWork, ...] = ()
    created_at: str = "1970-01-01T00:00:00Z"
    _by_id: dict = field(init=False, repr=False, compare=False)
    _by_digest: dict = field(init=False, repr=False, compare=False)
    _image_index: FingerprintIndex = field(init=False, repr=False, compare=False)
    _simhash_index: FingerprintIndex = field(init=False, repr=False, compare=False)
    _minhash_ids: tuple = field(init=False, repr=False, compare=False)
    _minhash_matrix: np.ndarray | None = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        works = tuple(sorted(self.works, key=lambda w: w.work_id))
        by_id = {}
        for w in works:
            if w.work_id in by_id:
                raise SchemaError(f"duplicate work_id {w.work_id!r}")
            by_id[w.work_id] = w
        by_digest: dict[str, list[str]] = {}
        for w in works:
            by_digest.setdefault(w.exact_digest, []).append(w.work_id)
        with_minhash = [w for w in works if w.minhash is not None]
        ks = {w.minhash.k for w in with_minhash}
        if len(ks) > 1:
            raise SchemaError(f"minhash signatures have mixed lengths {sorted(ks)}")
        set_ = object.__setattr__
        set_(self, "works", works)
        set_(self, "_by_id", by_id)
        set_(self, "_by_digest", by_digest)
        set_(self, "_image_index", FingerprintIndex((h, w.work_id) for w in works for h in w.image_hashes))
        set_(
            self,
            "_simhash_index",
            FingerprintIndex((w.text_simhash, w.work_id) for w in works if w.text_simhash is not None),
        )
        set_(self, "_minhash_ids", tuple(w.work_id for w in with_minhash))
        set_(
            self,
            "_minhash_matrix",
            np.array([w.minhash.mins for w in with_minhash], dtype=np.uint64) if with_minhash else None,
        )

    @property
    def work_ids(self) -> frozenset[str]:
        return frozenset(self._by_id)

    def __contains__(self, work_id: str) -> bool:
        return work_id in self._by_id

    def get(self, work_id: str) -> RegisteredWork | None:
        return self._by_id.get(work_id)

    def subset(self, work_ids: Iterable[str]) -> RegistrySnapshot:
        keep = set(work_ids)
        return RegistrySnapshot(self.version, tuple(w for w in self.works if w.work_id in keep), self.created_at)

    def to_dict(self) -> dict:
        return {"version": self.version, "created_at": self.created_at, "works": [w.to_dict() for w in self.works]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return sha256_hex(canonical.encode("utf-8"))


def parse_snapshot(text: str, source: str = "<snapshot>") -> RegistrySnapshot:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise SchemaError(f"{source}: snapshot must be a JSON object")
    version = obj.get("version")
    if isinstance(version, bool) or not isinstance(version, int) or version < 0:
        raise SchemaError(f"{source}: version must be a non-negative integer")
    created_at = _check_timestamp(obj.get("created_at", "1970-01-01T00:00:00Z"), f"{source}: created_at")
    works = obj.get("works")
    if not isinstance(works, list):
        raise SchemaError(f"{source}: works must be a list")
    parsed = [RegisteredWork.from_dict(w, f"{source}: works[{i}]") for i, w in enumerate(works)]
    seen = set()
    for i, w in enumerate(parsed):
        if w.work_id in seen:
            raise SchemaError(f"{source}: works[{i}]: duplicate work_id {w.work_id!r}")
        seen.add(w.work_id)
    return RegistrySnapshot(version, tuple(parsed), created_at)


def load_snapshot(path: str | Path) -> RegistrySnapshot:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise SchemaError(f"{path}: not UTF-8") from exc
    return parse_snapshot(text, str(path))


# --- building works -----------------------------------------------------------


def text_work(
    work_id: str,
    text: str,
    title: str = "",
    authors: Sequence[str] = (),
    registered_at: str = "1970-01-01T00:00:00Z",
    config: FunnelConfig | None = None,
) -> RegisteredWork:
    """Canonical bytes are the normalized tokens joined by single spaces."""
    config = config or FunnelConfig()
    tokens = normalize_text(text)
    simhash = minhash = None
    try:
        sim, minhash = text_fingerprints(tokens, config.shingle_width, config.minhash_k)
        simhash = sim.bits
    except InsufficientText:
        pass
    return RegisteredWork(
        work_id=work_id,
        title=title,
        exact_digest=sha256_hex(canonical_text_bytes(tokens)),
        authors=tuple(authors),
        text_simhash=simhash,
        minhash=minhash,
        registered_at=registered_at,
    )


def image_work(
    work_id: str,
    pgm_bytes: bytes,
    title: str = "",
    authors: Sequence[str] = (),
    registered_at: str = "1970-01-01T00:00:00Z",
) -> RegisteredWork:
    return RegisteredWork(
        work_id=work_id,
        title=title,
        exact_digest=sha256_hex(pgm_bytes),
        authors=tuple(authors),
        image_hashes=(image_hash_from_pgm(pgm_bytes).bits,),
        registered_at=registered_at,
    )


def build_snapshot_from_manifest(
    path: str | Path, version: int, created_at: str | None = None, config: FunnelConfig | None = None
) -> RegistrySnapshot:
    """Raw works JSONL: ``{work_id, title?, authors?, registered_at?, text | path}``.

    ``path`` is resolved relative to the JSONL file; ``.pgm`` files become
    image works, anything else is read as UTF-8 text.
    """
    path = Path(path)
    works = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
                meta = dict(
                    title=obj.get("title", ""),
                    authors=obj.get("authors", []),
                    registered_at=_check_timestamp(obj.get("registered_at", "1970-01-01T00:00:00Z"), where),
                )
                if "text" in obj:
                    works.append(text_work(obj["work_id"], obj["text"], config=config, **meta))
                else:
                    source = path.parent / obj["path"]
                    if source.suffix.lower() == ".pgm":
                        works.append(image_work(obj["work_id"], source.read_bytes(), **meta))
                    else:
                        works.append(text_work(obj["work_id"], source.read_text(encoding="utf-8"), config=config, **meta))
            except (ValueError, KeyError, TypeError, OSError, InputError) as exc:
                raise SchemaError(f"{where}: {exc}") from exc
    return RegistrySnapshot(version, tuple(works), created_at or utc_now())


# --- cross-referencing --------------------------------------------------------


@dataclass(frozen=True)
class DocFingerprints:
    """Everything xref needs to know about a document."""

    exact_digest: str
    image_hash: int | None = None
    text_simhash: int | None = None
    minhash: MinHashSignature | None = None
    entity_work_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "exact_digest": self.exact_digest,
            "image_hash": None if self.image_hash is None else f"{self.image_hash:016x}",
            "text_simhash": None if self.text_simhash is None else f"{self.text_simhash:016x}",
            "minhash": None if self.minhash is None else self.minhash.to_hex(),
            "entity_work_ids": list(self.entity_work_ids),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> DocFingerprints:
        def h(v):
            return None if v is None else int(v, 16)

        return cls(
            exact_digest=obj["exact_digest"],
            image_hash=h(obj.get("image_hash")),
            text_simhash=h(obj.get("text_simhash")),
            minhash=None if obj.get("minhash") is None else MinHashSignature.from_hex(obj["minhash"]),
            entity_work_ids=tuple(obj.get("entity_work_ids", [])),
        )


@dataclass(frozen=True)
class XrefHit:
    work_id: str
    match_kind: MatchKind
    strength: float

    def __post_init__(self):
        object.__setattr__(self, "match_kind", MatchKind(self.match_kind))
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError("strength must be in [0, 1]")
        if self.match_kind is MatchKind.EXACT_DIGEST and self.strength != 1.0:
            raise ValueError("exact digest hits have strength 1")

    @property
    def blocking(self) -> bool:
        # entity links are evidence for reviewers, never grounds for rejection
        return self.match_kind is not MatchKind.ENTITY_LINK

    def as_dict(self) -> dict:
        return {"work_id": self.work_id, "match_kind": self.match_kind.value, "strength": self.strength}


def _perceptual_strength(distance: int, radius: int) -> float:
    return 1.0 if radius == 0 else 1.0 - distance / radius


def xref_document(
    doc: DocFingerprints, snapshot: RegistrySnapshot, config: FunnelConfig, elevated: bool = False
) -> list[XrefHit]:
    """All hits of every kind, strongest first.

    ``elevated`` widens the SimHash radius to ``quarantine_simhash_radius``.
    """
    hits: list[XrefHit] = []
    for work_id in snapshot._by_digest.get(doc.exact_digest, ()):
        hits.append(XrefHit(work_id, MatchKind.EXACT_DIGEST, 1.0))

    if doc.image_hash is not None:
        best: dict[str, int] = {}
        for work_id, d in snapshot._image_index.query_within(doc.image_hash, config.image_radius):
            best.setdefault(work_id, d)
        hits.extend(
            XrefHit(w, MatchKind.IMAGE_PERCEPTUAL, _perceptual_strength(d, config.image_radius)) for w, d in best.items()
        )

    if doc.text_simhash is not None:
        radius = config.quarantine_simhash_radius if elevated else config.simhash_radius
        for work_id, d in snapshot._simhash_index.query_within(doc.text_simhash, radius):
            hits.append(XrefHit(work_id, MatchKind.TEXT_SIMHASH, _perceptual_strength(d, radius)))

    matrix = snapshot._minhash_matrix
    if doc.minhash is not None and matrix is not None and matrix.shape[1] == doc.minhash.k:
        probe = np.array(doc.minhash.mins, dtype=np.uint64)
        estimates = (matrix == probe).sum(axis=1) / doc.minhash.k
        for work_id, est in zip(snapshot._minhash_ids, estimates):
            if est >= config.minhash_jaccard_threshold:
                hits.append(XrefHit(work_id, MatchKind.MINHASH_JACCARD, float(est)))

    for work_id in sorted(set(doc.entity_work_ids)):
        if work_id in snapshot:
            hits.append(XrefHit(work_id, MatchKind.ENTITY_LINK, ENTITY_LINK_STRENGTH))

    hits.sort(key=lambda h: (-h.strength, _KIND_ORDER[h.match_kind], h.work_id))
    return hits


def diff_snapshots(old: RegistrySnapshot, new: RegistrySnapshot) -> tuple[list[str], list[str]]:
    if old.version >= new.version:
        raise VersionOrder(f"snapshot versions out of order ({old.version} -> {new.version})")
    return sorted(new.work_ids - old.work_ids), sorted(old.work_ids - new.work_ids)


# --- admitted manifest and rescans ---------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    doc_id: str
    final_verdict: str
    snapshot_version: int
    provenance_digest: str
    source_url: str = ""
    fingerprints: DocFingerprints | None = None
    elevated: bool = False

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "final_verdict": self.final_verdict,
            "snapshot_version": self.snapshot_version,
            "provenance_digest": self.provenance_digest,
            "source_url": self.source_url,
            "fingerprints": None if self.fingerprints is None else self.fingerprints.to_dict(),
            "elevated": self.elevated,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> ManifestEntry:
        fp = obj.get("fingerprints")
        return cls(
            doc_id=obj["doc_id"],
            final_verdict=obj["final_verdict"],
            snapshot_version=int(obj["snapshot_version"]),
            provenance_digest=obj["provenance_digest"],
            source_url=obj.get("source_url", ""),
            fingerprints=None if fp is None else DocFingerprints.from_dict(fp),
            elevated=bool(obj.get("elevated", False)),
        )


def dump_manifest(entries: Iterable[ManifestEntry]) -> str:
    return "".join(json.dumps(e.to_dict(), sort_keys=True, separators=(",", ":")) + "\n" for e in entries)


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(ManifestEntry.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out


def rescan_admitted(
    manifest: Sequence[ManifestEntry],
    old: RegistrySnapshot,
    new: RegistrySnapshot,
    config: FunnelConfig,
) -> list[tuple[str, list[XrefHit]]]:
    """Documents with a blocking hit on any work added between ``old`` and ``new``, in doc_id order."""
    added, _removed = diff_snapshots(old, new)
    for entry in manifest:
        if entry.snapshot_version != old.version:
            raise VersionMismatch(
                f"manifest entry {entry.doc_id!r} was admitted under v{entry.snapshot_version}, "
                f"old snapshot is v{old.version}"
            )
    if not added:
        return []
    delta = new.subset(added)
    results = []
    for entry in sorted(manifest, key=lambda e: e.doc_id):
        if entry.fingerprints is None:
            continue
        hits = xref_document(entry.fingerprints, delta, config, elevated=entry.elevated)
        if any(h.blocking for h in hits):
            results.append((entry.doc_id, hits))
    return results
