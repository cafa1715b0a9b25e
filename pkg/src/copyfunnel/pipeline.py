"""The funnel: gate, fingerprint, entity, classifier and xref stages in fixed order."""

from __future__ import annotations

import json
import os
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .classifier import NGramModel, score
from .config import FunnelConfig
from .entity_flagger import GazetteerEntry, compile_gazetteer, flag_verdict, scan_text
from .errors import FunnelError, InputError, InsufficientText, ReplayMismatch
from .fingerprint import image_hash_from_pgm, text_fingerprints
from .policy_gate import (
    CrawlDirectiveSet,
    FetchRequest,
    PriceSchedule,
    Verdict,
    parse_robots,
    parse_tdm_signals,
    parse_terms_file,
    resolve_access,
    url_path_and_host,
)
from .provenance import Ledger, ProvenanceRecord, RecordKind, atomic_write
from .registry import DocFingerprints, ManifestEntry, RegistrySnapshot, dump_manifest, sha256_hex, xref_document
from .text import canonical_text_bytes, normalize_text
from .verdicts import STAGE_ORDER, Outcome, Stage, StageVerdict, combine


class MediaKind(str, Enum):
    TEXT = "TEXT"
    IMAGE = "IMAGE"


@dataclass(frozen=True)
class Document:
    doc_id: str
    source_url: str
    fetched_at: str
    kind: MediaKind
    text: str | None = None
    data: bytes | None = None
    headers: tuple[tuple[str, str], ...] = ()
    html_head: str = ""
    # set when the corpus entry or its content could not be read
    load_error: str | None = None


def _document_from_json(obj, base: Path, where: str) -> Document:
    if not isinstance(obj, dict):
        raise InputError(f"{where}: corpus entry must be an object")
    doc_id, url = obj.get("doc_id"), obj.get("source_url", "")
    if not isinstance(doc_id, str) or not doc_id:
        raise InputError(f"{where}: doc_id must be a non-empty string")
    media = obj.get("media")
    if not isinstance(media, dict):
        raise InputError(f"{where}: media must be an object")
    kind = MediaKind(media.get("kind"))
    headers = tuple((str(k), str(v)) for k, v in _header_pairs(obj.get("headers")))
    common = dict(
        doc_id=doc_id,
        source_url=str(url),
        fetched_at=str(obj.get("fetched_at", "")),
        kind=kind,
        headers=headers,
        html_head=str(obj.get("html_head", "")),
    )
    try:
        if kind is MediaKind.TEXT:
            if "inline" in media:
                return Document(text=str(media["inline"]), **common)
            return Document(text=(base / media["path"]).read_text(encoding="utf-8"), **common)
        return Document(data=(base / media["path"]).read_bytes(), **common)
    except (OSError, UnicodeDecodeError, KeyError) as exc:
        return Document(load_error=f"content unreadable: {exc}", **common)


def _header_pairs(headers) -> list[tuple[str, str]]:
    if headers is None:
        return []
    if isinstance(headers, dict):
        return list(headers.items())
    if isinstance(headers, list) and all(isinstance(h, list) and len(h) == 2 for h in headers):
        return [tuple(h) for h in headers]
    raise InputError("headers must be an object or a list of [name, value] pairs")


def load_corpus(path: str | Path) -> list[Document]:
    """Read corpus JSONL; malformed lines become documents carrying ``load_error``."""
    path = Path(path)
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path.name}:{lineno}"
            try:
                docs.append(_document_from_json(json.loads(line), path.parent, where))
            except (ValueError, InputError, TypeError) as exc:
                try:
                    obj = json.loads(line)
                    doc_id = obj.get("doc_id") if isinstance(obj, dict) else None
                except ValueError:
                    doc_id = None
                docs.append(
                    Document(
                        doc_id=doc_id if isinstance(doc_id, str) and doc_id else f"<{where}>",
                        source_url="",
                        fetched_at="",
                        kind=MediaKind.TEXT,
                        load_error=f"{where}: {exc}",
                    )
                )
    return docs


def document_to_json(doc: Document, media_path: str | None = None) -> dict:
    obj = {"doc_id": doc.doc_id, "source_url": doc.source_url, "fetched_at": doc.fetched_at}
    if media_path is not None:
        obj["media"] = {"kind": doc.kind.value, "path": media_path}
    else:
        obj["media"] = {"kind": doc.kind.value, "inline": doc.text}
    if doc.headers:
        obj["headers"] = [list(h) for h in doc.headers]
    if doc.html_head:
        obj["html_head"] = doc.html_head
    return obj


# --- sidecar store ----------------------------------------------------------------


@dataclass(frozen=True)
class SourceStore:
    """Pre-captured per-host signals: robots.txt, response headers, site terms file."""

    robots: dict[str, str] = field(default_factory=dict)
    headers: dict[str, tuple[tuple[str, str], ...]] = field(default_factory=dict)
    terms: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, directory: str | Path) -> SourceStore:
        """``<host>.robots.txt``, ``<host>.headers.json`` and ``<host>.tdm.json`` files."""
        directory = Path(directory)
        if not directory.is_dir():
            raise InputError(f"{directory}: not a directory")
        robots, headers, terms = {}, {}, {}
        for entry in sorted(directory.iterdir()):
            name = entry.name
            try:
                if name.endswith(".robots.txt"):
                    robots[name[: -len(".robots.txt")].lower()] = entry.read_text(encoding="utf-8", errors="replace")
                elif name.endswith(".headers.json"):
                    pairs = _header_pairs(json.loads(entry.read_text(encoding="utf-8")))
                    headers[name[: -len(".headers.json")].lower()] = tuple((str(k), str(v)) for k, v in pairs)
                elif name.endswith(".tdm.json"):
                    terms[name[: -len(".tdm.json")].lower()] = entry.read_text(encoding="utf-8")
            except (ValueError, InputError) as exc:
                raise InputError(f"{entry}: {exc}") from exc
        return cls(robots, headers, terms)

    def write(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for host, text in self.robots.items():
            (directory / f"{host}.robots.txt").write_text(text, encoding="utf-8")
        for host, pairs in self.headers.items():
            (directory / f"{host}.headers.json").write_text(json.dumps([list(p) for p in pairs]) + "\n")
        for host, text in self.terms.items():
            (directory / f"{host}.tdm.json").write_text(text, encoding="utf-8")


# --- per-document processing ---------------------------------------------------------


@dataclass(frozen=True)
class DocResult:
    record: ProvenanceRecord
    fingerprints: DocFingerprints | None
    elevated: bool


def _evidence(text: str, limit: int = 160) -> str:
    return text if len(text) <= limit else text[: limit - 3] + "..."


class Funnel:
    """Immutable stage state shared by all documents of a run."""

    def __init__(
        self,
        snapshot: RegistrySnapshot,
        config: FunnelConfig | None = None,
        sources: SourceStore | None = None,
        prices: PriceSchedule | None = None,
        gazetteer: Sequence[GazetteerEntry] = (),
        model: NGramModel | None = None,
    ):
        self.snapshot = snapshot
        self.config = config or FunnelConfig()
        self.sources = sources or SourceStore()
        self.prices = prices or PriceSchedule()
        self.gazetteer = tuple(gazetteer)
        self.model = model
        self.matcher = compile_gazetteer(self.gazetteer) if self.gazetteer else None
        self._directives = {host: parse_robots(text, self.config.agent_id) for host, text in self.sources.robots.items()}
        self._terms = {host: parse_terms_file(text) for host, text in self.sources.terms.items()}

    def with_changes(self, **changes) -> Funnel:
        args = dict(
            snapshot=self.snapshot,
            config=self.config,
            sources=self.sources,
            prices=self.prices,
            gazetteer=self.gazetteer,
            model=self.model,
        )
        args.update(changes)
        return Funnel(**args)

    # each stage returns its verdict; the caller decides whether to continue

    def _gate(self, doc: Document) -> tuple[StageVerdict, dict | None]:
        try:
            request = FetchRequest(doc.source_url, self.config.agent_id, self.config.purpose)
        except InputError as exc:
            return StageVerdict(Stage.GATE, Outcome.QUARANTINE, "INPUT_ERROR", _evidence(str(exc))), None
        _, host = url_path_and_host(doc.source_url)
        signals = parse_tdm_signals(self.sources.headers.get(host, ()) + doc.headers, doc.html_head)
        terms = self._terms.get(host)
        if terms is not None:
            signals.append(terms)
        directives = self._directives.get(host, CrawlDirectiveSet())
        decision = resolve_access(request, directives, signals, self.prices)
        evidence = ",".join(f"{s.source.value}:{int(s.reserved)}:{s.scope.value}" for s in signals)
        if decision.verdict is Verdict.DENY:
            return StageVerdict(Stage.GATE, Outcome.REJECT, decision.reason.value, evidence), decision.as_dict()
        cap = self.config.max_price_micro_units
        if decision.verdict is Verdict.PAY:
            note = f"price={decision.price_micro_units}"
            if cap is not None and decision.price_micro_units > cap:
                return StageVerdict(Stage.GATE, Outcome.REJECT, "UNPAID", f"{note} cap={cap}"), decision.as_dict()
            return StageVerdict(Stage.GATE, Outcome.ADMIT, decision.reason.value, f"obligation {note}"), decision.as_dict()
        return StageVerdict(Stage.GATE, Outcome.ADMIT, decision.reason.value, evidence), decision.as_dict()

    def _fingerprint(self, doc: Document, tokens: list[str] | None) -> tuple[StageVerdict, DocFingerprints | None, dict]:
        if doc.load_error is not None:
            return StageVerdict(Stage.FINGERPRINT, Outcome.QUARANTINE, "INPUT_ERROR", _evidence(doc.load_error)), None, {}
        if doc.kind is MediaKind.IMAGE:
            digest = sha256_hex(doc.data)
            try:
                h = image_hash_from_pgm(doc.data)
            except FunnelError as exc:
                verdict = StageVerdict(Stage.FINGERPRINT, Outcome.QUARANTINE, exc.code, _evidence(str(exc)))
                return verdict, DocFingerprints(digest), {"exact_digest": digest}
            verdict = StageVerdict(Stage.FINGERPRINT, Outcome.ADMIT, "COMPUTED", f"dhash={h.hex}")
            return verdict, DocFingerprints(digest, image_hash=h.bits), {"exact_digest": digest, "dhash": h.hex}
        digest = sha256_hex(canonical_text_bytes(tokens))
        try:
            sim, mh = text_fingerprints(tokens, self.config.shingle_width, self.config.minhash_k)
        except InsufficientText as exc:
            verdict = StageVerdict(Stage.FINGERPRINT, Outcome.QUARANTINE, exc.code, f"{len(tokens)} tokens")
            return verdict, DocFingerprints(digest), {"exact_digest": digest}
        verdict = StageVerdict(Stage.FINGERPRINT, Outcome.ADMIT, "COMPUTED", f"simhash={sim.hex}")
        return verdict, DocFingerprints(digest, text_simhash=sim.bits, minhash=mh), {"exact_digest": digest, "simhash": sim.hex}

    def _entity(self, doc: Document, tokens: list[str] | None) -> tuple[StageVerdict, tuple[str, ...]]:
        if doc.kind is not MediaKind.TEXT:
            return StageVerdict(Stage.ENTITY, Outcome.ADMIT, "NOT_APPLICABLE"), ()
        if self.matcher is None:
            return StageVerdict(Stage.ENTITY, Outcome.ADMIT, "NO_GAZETTEER"), ()
        flags = scan_text(self.matcher, tokens)
        linked = tuple(sorted({f.entry.work_id for f in flags if f.entry.work_id}))
        return flag_verdict(flags, self.config.entity_flag_threshold), linked

    def _classifier(self, doc: Document, tokens: list[str] | None) -> StageVerdict:
        if doc.kind is not MediaKind.TEXT:
            return StageVerdict(Stage.CLASSIFIER, Outcome.ADMIT, "NOT_APPLICABLE")
        if self.model is None:
            return StageVerdict(Stage.CLASSIFIER, Outcome.ADMIT, "NO_MODEL")
        try:
            s = score(self.model, tokens)
        except InsufficientText:
            return StageVerdict(Stage.CLASSIFIER, Outcome.ADMIT, "TOO_SHORT")
        evidence = f"score={s:.6f}"
        if s > self.config.classifier_threshold:
            return StageVerdict(Stage.CLASSIFIER, Outcome.QUARANTINE, "CLASSIFIER_POSITIVE", evidence)
        return StageVerdict(Stage.CLASSIFIER, Outcome.ADMIT, "BELOW_THRESHOLD", evidence)

    def _xref(self, fps: DocFingerprints, elevated: bool) -> StageVerdict:
        hits = xref_document(fps, self.snapshot, self.config, elevated)
        evidence = _evidence(";".join(f"{h.work_id}:{h.match_kind.value}:{h.strength:.3f}" for h in hits[:5]))
        blocking = [h for h in hits if h.blocking]
        if blocking:
            return StageVerdict(Stage.XREF, Outcome.REJECT, blocking[0].match_kind.value, evidence)
        if hits:
            return StageVerdict(Stage.XREF, Outcome.ADMIT, "ENTITY_LINK_ONLY", evidence)
        return StageVerdict(Stage.XREF, Outcome.ADMIT, "NO_HITS")

    def process(self, doc: Document) -> DocResult:
        verdicts: list[StageVerdict] = []
        fps = None
        fingerprints: dict = {}
        gate, access = self._gate(doc)
        verdicts.append(gate)
        if gate.verdict is Outcome.ADMIT:
            tokens = normalize_text(doc.text) if doc.kind is MediaKind.TEXT and doc.load_error is None else None
            fp_verdict, fps, fingerprints = self._fingerprint(doc, tokens)
            verdicts.append(fp_verdict)
            if fps is not None:
                entity, linked = self._entity(doc, tokens)
                verdicts.append(entity)
                verdicts.append(self._classifier(doc, tokens))
                if linked:
                    fps = DocFingerprints(fps.exact_digest, fps.image_hash, fps.text_simhash, fps.minhash, linked)
                elevated = any(v.verdict is Outcome.QUARANTINE for v in verdicts)
                verdicts.append(self._xref(fps, elevated))
        elevated = any(v.verdict is Outcome.QUARANTINE for v in verdicts if v.stage is not Stage.XREF)
        record = ProvenanceRecord(
            doc_id=doc.doc_id,
            source_url=doc.source_url,
            fetched_at=doc.fetched_at,
            stage_verdicts=tuple(verdicts),
            final_verdict=combine(verdicts),
            access_decision=access,
            fingerprints=fingerprints,
            snapshot_version=self.snapshot.version,
            record_kind=RecordKind.INGEST,
        )
        return DocResult(record, fps, elevated)


# --- running -------------------------------------------------------------------------

_WORKER_FUNNEL: Funnel | None = None


def _init_worker(funnel: Funnel) -> None:
    global _WORKER_FUNNEL
    _WORKER_FUNNEL = funnel


def _process_in_worker(doc: Document) -> DocResult:
    return _WORKER_FUNNEL.process(doc)


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return os.cpu_count() or 1


@dataclass
class FunnelStats:
    stage_counts: dict[str, dict[str, int]]
    final_counts: dict[str, int]
    documents: int
    wall_time_s: float = 0.0

    @property
    def throughput(self) -> float:
        return self.documents / self.wall_time_s if self.wall_time_s > 0 else 0.0

    @classmethod
    def from_records(cls, records: Iterable[ProvenanceRecord], wall_time_s: float = 0.0) -> FunnelStats:
        stages = {s.value: {o.value: 0 for o in Outcome} for s in STAGE_ORDER}
        finals = Counter()
        n = 0
        for rec in records:
            n += 1
            finals[rec.final_verdict.value] += 1
            for v in rec.stage_verdicts:
                stages[v.stage.value][v.verdict.value] += 1
        return cls(stages, {o.value: finals[o.value] for o in Outcome}, n, wall_time_s)

    def survivors(self) -> list[tuple[str, int]]:
        """Documents still in the funnel after each stage (not yet rejected)."""
        left = self.documents
        out = [("INPUT", left)]
        for stage in STAGE_ORDER:
            left -= self.stage_counts[stage.value][Outcome.REJECT.value]
            out.append((stage.value, left))
        return out

    def as_dict(self) -> dict:
        return {
            "documents": self.documents,
            "final": self.final_counts,
            "stages": self.stage_counts,
            "wall_time_s": round(self.wall_time_s, 6),
            "throughput_docs_per_s": round(self.throughput, 3),
        }

    def rows(self) -> list[tuple[str, int, int, int]]:
        return [
            (stage, c[Outcome.ADMIT.value], c[Outcome.QUARANTINE.value], c[Outcome.REJECT.value])
            for stage, c in self.stage_counts.items()
        ]

    def render(self) -> str:
        lines = [f"{'stage':<12}{'admit':>8}{'quarantine':>12}{'reject':>8}"]
        lines += [f"{stage:<12}{a:>8}{q:>12}{r:>8}" for stage, a, q, r in self.rows()]
        f = self.final_counts
        lines.append(f"{'FINAL':<12}{f['ADMIT']:>8}{f['QUARANTINE']:>12}{f['REJECT']:>8}")
        lines.append(f"{self.documents} documents in {self.wall_time_s:.2f}s ({self.throughput:.1f} docs/s)")
        return "\n".join(lines) + "\n"


@dataclass
class FunnelRun:
    results: list[DocResult]
    ledger: Ledger
    stats: FunnelStats

    @property
    def manifest(self) -> list[ManifestEntry]:
        out = []
        for result, link in zip(self.results, self.ledger.links):
            rec = result.record
            if rec.final_verdict is Outcome.ADMIT:
                out.append(
                    ManifestEntry(
                        rec.doc_id,
                        rec.final_verdict.value,
                        rec.snapshot_version,
                        link.record_digest,
                        rec.source_url,
                        result.fingerprints,
                        result.elevated,
                    )
                )
        return out

    def quarantine_export(self) -> list[dict]:
        return [
            {
                "doc_id": r.record.doc_id,
                "source_url": r.record.source_url,
                "reasons": [f"{v.stage.value}:{v.reason}" for v in r.record.stage_verdicts if v.verdict is Outcome.QUARANTINE],
            }
            for r in self.results
            if r.record.final_verdict is Outcome.QUARANTINE
        ]


def _mark_duplicates(corpus: Sequence[Document]) -> list[Document]:
    seen: set[str] = set()
    out = []
    for doc in corpus:
        if doc.doc_id in seen and doc.load_error is None:
            doc = Document(doc.doc_id, doc.source_url, doc.fetched_at, doc.kind, headers=doc.headers,
                           html_head=doc.html_head, load_error=f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        out.append(doc)
    return out


def process_all(corpus: Sequence[Document], funnel: Funnel, workers: int = 1) -> list[DocResult]:
    docs = _mark_duplicates(corpus)
    if workers <= 1 or len(docs) < 2:
        return [funnel.process(d) for d in docs]
    chunk = max(1, len(docs) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(funnel,)) as pool:
        return list(pool.map(_process_in_worker, docs, chunksize=chunk))


def run_funnel(corpus: Sequence[Document], funnel: Funnel, workers: int = 1, ledger: Ledger | None = None) -> FunnelRun:
    """Process every document and append one record each, in corpus order."""
    start = time.perf_counter()
    results = process_all(corpus, funnel, workers)
    ledger = ledger if ledger is not None else Ledger()
    for result in results:
        ledger.append(result.record)
    stats = FunnelStats.from_records((r.record for r in results), time.perf_counter() - start)
    return FunnelRun(results, ledger, stats)


def replay(ledger_bytes: bytes, corpus: Sequence[Document], funnel: Funnel, workers: int = 1) -> bool:
    """Re-run and compare; raises ReplayMismatch at the first diverging seq."""
    fresh = run_funnel(corpus, funnel, workers).ledger.to_bytes()
    if fresh == ledger_bytes:
        return True
    old_lines, new_lines = ledger_bytes.split(b"\n"), fresh.split(b"\n")
    for i in range(max(len(old_lines), len(new_lines))):
        a = old_lines[i] if i < len(old_lines) else None
        b = new_lines[i] if i < len(new_lines) else None
        if a != b:
            raise ReplayMismatch(i // 2)
    raise ReplayMismatch(0)  # unreachable: differing bytes differ in some line


@dataclass(frozen=True)
class RunOutputs:
    manifest: Path
    quarantine: Path
    ledger: Path
    stats_json: Path
    stats_tsv: Path
    head: Path
    figure: Path | None


def write_outputs(run: FunnelRun, out_dir: str | Path, dataset_id: str, figure: bool = True) -> RunOutputs:
    """Every file is written via temp-then-rename, so readers never see partial output."""
    out = Path(out_dir)
    paths = RunOutputs(
        manifest=out / "admitted.manifest.jsonl",
        quarantine=out / "quarantine.jsonl",
        ledger=out / "ledger.jsonl",
        stats_json=out / "stats.json",
        stats_tsv=out / "stats.tsv",
        head=out / f"{dataset_id}.head",
        figure=out / "funnel.png" if figure else None,
    )
    atomic_write(paths.ledger, run.ledger.to_bytes())
    atomic_write(paths.head, run.ledger.head + "\n")
    atomic_write(paths.manifest, dump_manifest(run.manifest))
    atomic_write(paths.quarantine, "".join(json.dumps(q, sort_keys=True) + "\n" for q in run.quarantine_export()))
    atomic_write(paths.stats_json, json.dumps(run.stats.as_dict(), sort_keys=True, indent=2) + "\n")
    tsv = ["stage\tadmit\tquarantine\treject"] + ["\t".join(map(str, row)) for row in run.stats.rows()]
    atomic_write(paths.stats_tsv, "\n".join(tsv) + "\n")
    if figure:
        from .report import funnel_figure

        funnel_figure(run.stats, paths.figure, title=dataset_id)
    return paths
