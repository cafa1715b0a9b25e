"""Command-line driver.

Exit codes: 0 success, 1 validation or schema error, 2 chain verification
failure, 3 rescan found new hits, 4 internal error (including failed writes).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .errors import ChainInvalid, FunnelError, ReplayMismatch

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CHAIN = 2
EXIT_RESCAN_HITS = 3
EXIT_INTERNAL = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with the validation code rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _existing(path: str | None, flag: str, kind: str = "file") -> Path | None:
    if path is None:
        return None
    p = Path(path)
    ok = p.is_dir() if kind == "dir" else p.is_file()
    if not ok:
        raise UsageError(f"{flag}: no such {kind}: {path}")
    return p


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True, indent=2))
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# --- config ------------------------------------------------------------------------


def _config(args):
    from .config import FunnelConfig

    base = FunnelConfig.load(_existing(args.config, "--config")) if args.config else FunnelConfig()
    return base.override(
        image_radius=getattr(args, "image_radius", None),
        simhash_radius=getattr(args, "simhash_radius", None),
        quarantine_simhash_radius=getattr(args, "quarantine_simhash_radius", None),
        minhash_jaccard_threshold=getattr(args, "minhash_threshold", None),
        classifier_threshold=getattr(args, "classifier_threshold", None),
        entity_flag_threshold=getattr(args, "entity_threshold", None),
        purpose=getattr(args, "purpose", None),
        agent_id=getattr(args, "agent_id", None),
        max_price_micro_units=getattr(args, "max_price", None),
    )


def _funnel_from_args(args):
    from .classifier import NGramModel
    from .entity_flagger import load_gazetteer
    from .pipeline import Funnel, SourceStore
    from .policy_gate import PriceSchedule
    from .registry import load_snapshot

    config = _config(args)
    snapshot = load_snapshot(_existing(args.registry, "--registry"))
    gazetteer = load_gazetteer(_existing(args.gazetteer, "--gazetteer")) if args.gazetteer else ()
    model = NGramModel.load(_existing(args.model, "--model")) if args.model else None
    prices = PriceSchedule.load(_existing(args.prices, "--prices")) if args.prices else PriceSchedule()
    sources = SourceStore.load(_existing(args.sources, "--sources", "dir")) if args.sources else SourceStore()
    return Funnel(snapshot, config, sources, prices, gazetteer, model)


# --- commands ------------------------------------------------------------------------


def cmd_run(args) -> int:
    from .pipeline import load_corpus, run_funnel, write_outputs

    corpus = load_corpus(_existing(args.corpus, "corpus"))
    funnel = _funnel_from_args(args)
    out = Path(args.out)
    dataset = args.dataset_id or Path(args.corpus).stem
    run = run_funnel(corpus, funnel, workers=args.workers)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = write_outputs(run, out, dataset, figure=not args.no_figure)
    except OSError as exc:
        print(f"error: cannot write outputs to {out}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    payload = {
        "dataset_id": dataset,
        "head": run.ledger.head,
        "stats": run.stats.as_dict(),
        "outputs": {k: str(v) for k, v in paths.__dict__.items() if v is not None},
    }
    _emit(args, payload, run.stats.render() + f"ledger {paths.ledger}\nhead {run.ledger.head}\n")
    return EXIT_OK


def cmd_replay(args) -> int:
    from .pipeline import load_corpus, replay

    ledger = _existing(args.ledger, "--ledger").read_bytes()
    corpus = load_corpus(_existing(args.corpus, "corpus"))
    try:
        replay(ledger, corpus, _funnel_from_args(args), workers=args.workers)
    except ReplayMismatch as exc:
        _emit(args, {"result": "MISMATCH", "seq": exc.seq}, f"MISMATCH at seq {exc.seq}")
        return EXIT_CHAIN
    _emit(args, {"result": "IDENTICAL"}, "IDENTICAL")
    return EXIT_OK


def cmd_rescan(args) -> int:
    from .provenance import Ledger, ProvenanceRecord, RecordKind, atomic_write
    from .registry import load_manifest, load_snapshot, rescan_admitted
    from .verdicts import Outcome, Stage, StageVerdict

    manifest_path = _existing(args.manifest, "manifest")
    manifest = load_manifest(manifest_path)
    old = load_snapshot(_existing(args.old_snapshot, "--old-snapshot"))
    new = load_snapshot(_existing(args.new_snapshot, "--new-snapshot"))
    results = rescan_admitted(manifest, old, new, _config(args))
    report = Path(args.out) if args.out else manifest_path.with_name("rescan.report.jsonl")
    ledger_path = Path(args.ledger) if args.ledger else report.with_name("rescan.ledger.jsonl")
    by_id = {e.doc_id: e for e in manifest}
    lines = []
    try:
        ledger = Ledger(ledger_path) if results else None
        for doc_id, hits in results:
            blocking = [h for h in hits if h.blocking]
            evidence = ";".join(f"{h.work_id}:{h.match_kind.value}:{h.strength:.3f}" for h in hits[:5])
            entry = by_id[doc_id]
            ledger.append(
                ProvenanceRecord(
                    doc_id=doc_id,
                    source_url=entry.source_url,
                    fetched_at="",
                    stage_verdicts=(StageVerdict(Stage.XREF, Outcome.QUARANTINE, blocking[0].match_kind.value, evidence),),
                    final_verdict=Outcome.QUARANTINE,
                    fingerprints={"exact_digest": entry.fingerprints.exact_digest},
                    snapshot_version=new.version,
                    record_kind=RecordKind.RESCAN,
                )
            )
            lines.append({"doc_id": doc_id, "snapshot_version": new.version, "hits": [h.as_dict() for h in hits]})
        atomic_write(report, "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines))
    except OSError as exc:
        print(f"error: cannot write rescan outputs: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    text = [f"rescanned {len(manifest)} admitted documents against v{old.version} -> v{new.version}"]
    text += [f"{line['doc_id']}\t{line['hits'][0]['work_id']}\t{line['hits'][0]['match_kind']}" for line in lines]
    text.append(f"{len(lines)} documents newly hit; report {report}")
    payload = {"documents": len(manifest), "hits": lines, "report": str(report)}
    if ledger is not None:
        payload["ledger_head"] = ledger.head
        text.append(f"rescan ledger {ledger_path} head {ledger.head}")
    _emit(args, payload, "\n".join(text))
    return EXIT_RESCAN_HITS if lines else EXIT_OK


def cmd_audit(args) -> int:
    from .provenance import head_of, verify_chain

    data = _existing(args.ledger, "ledger").read_bytes()
    result = verify_chain(data)
    if not result.ok:
        _emit(args, {"result": "FIRST_BROKEN", "seq": result.first_broken}, f"FIRST_BROKEN seq {result.first_broken}")
        return EXIT_CHAIN
    head = head_of(data)
    if args.expect_head and args.expect_head.strip().lower() != head:
        msg = f"HEAD_MISMATCH ledger head {head} (entries {result.entries}) differs from published head"
        _emit(args, {"result": "HEAD_MISMATCH", "head": head, "entries": result.entries}, msg)
        return EXIT_CHAIN
    _emit(args, {"result": "OK", "entries": result.entries, "head": head}, f"OK {result.entries} entries, head {head}")
    return EXIT_OK


def cmd_card(args) -> int:
    from .provenance import atomic_write, card_rows, emit_card, render_card

    path = _existing(args.ledger, "ledger")
    dataset = args.dataset_id or path.stem
    try:
        card = emit_card(path.read_bytes(), dataset)
    except ChainInvalid as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHAIN
    text = render_card(card)
    if args.out:
        from .report import card_figure

        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            atomic_write(out / "card.json", card.to_json())
            atomic_write(out / "card.txt", text)
            atomic_write(out / "card.tsv", "section\tkey\tcount\n" + "".join(f"{s}\t{k}\t{n}\n" for s, k, n in card_rows(card)))
            card_figure(card, out / "card.png")
        except OSError as exc:
            print(f"error: cannot write card to {out}: {exc}", file=sys.stderr)
            return EXIT_INTERNAL
    _emit(args, card.to_dict(), text)
    return EXIT_OK


def cmd_train(args) -> int:
    from .classifier import load_examples, synthetic_task, train

    if args.examples:
        examples = load_examples(_existing(args.examples, "examples"))
    elif args.synthetic_seed is not None:
        examples = synthetic_task(args.synthetic_seed).train
    else:
        raise UsageError("give an examples file or --synthetic-seed")
    model = train(examples, n=args.n, alpha=args.alpha)
    try:
        model.save(args.out)
    except OSError as exc:
        print(f"error: cannot write model: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    payload = {"examples": len(examples), "vocabulary_size": model.vocabulary_size, "prior": model.prior_log_odds, "model": args.out}
    _emit(args, payload, f"trained on {len(examples)} examples; {model.vocabulary_size} n-grams; model {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .classifier import NGramModel, evaluate, load_examples, synthetic_task

    model = NGramModel.load(_existing(args.model, "--model"))
    benign = []
    if args.examples:
        test = load_examples(_existing(args.examples, "examples"))
    elif args.synthetic_seed is not None:
        task = synthetic_task(args.synthetic_seed)
        test, benign = task.test, task.benign
    else:
        raise UsageError("give an examples file or --synthetic-seed")
    if args.benign:
        benign = [ex.tokens for ex in load_examples(_existing(args.benign, "--benign"))]
    threshold = args.threshold if args.threshold is not None else _config(args).classifier_threshold
    report = evaluate(model, test, benign, threshold=threshold)
    d = report.as_dict()
    text = "\n".join(f"{k:<16}{v:.4f}" if isinstance(v, float) else f"{k:<16}{v}" for k, v in d.items())
    _emit(args, d, text)
    return EXIT_OK


def cmd_registry_build(args) -> int:
    from .registry import build_snapshot_from_manifest, load_snapshot
    from .provenance import atomic_write

    works = _existing(args.works, "works")
    if args.previous:
        prev = load_snapshot(_existing(args.previous, "--previous"))
        if args.version <= prev.version:
            raise UsageError(f"--version {args.version} must exceed previous snapshot version {prev.version}")
    snapshot = build_snapshot_from_manifest(works, args.version, args.created_at, _config(args))
    try:
        atomic_write(args.out, snapshot.to_json())
    except OSError as exc:
        print(f"error: cannot write snapshot: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    payload = {"version": snapshot.version, "works": len(snapshot.works), "digest": snapshot.digest(), "out": args.out}
    _emit(args, payload, f"snapshot v{snapshot.version}: {len(snapshot.works)} works, digest {snapshot.digest()} -> {args.out}")
    return EXIT_OK


def cmd_gazetteer_check(args) -> int:
    from collections import Counter

    from .entity_flagger import compile_gazetteer, load_gazetteer

    summary = {}
    for name in args.files:
        entries = load_gazetteer(_existing(name, "gazetteer"))
        compile_gazetteer(entries)
        summary[name] = dict(sorted(Counter(e.entity_class.value for e in entries).items()))
    text = "\n".join(f"{name}: OK " + ", ".join(f"{k}={v}" for k, v in counts.items()) for name, counts in summary.items())
    _emit(args, summary, text)
    return EXIT_OK


def cmd_make_fixture(args) -> int:
    from .fixture import make_fixture

    fx = make_fixture(seed=args.seed, n_text=args.texts, n_images=args.images, n_works=args.works)
    try:
        paths = fx.write(args.out)
    except OSError as exc:
        print(f"error: cannot write fixture: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    _emit(args, {k: str(v) for k, v in paths.items()}, "\n".join(f"{k:<12}{v}" for k, v in paths.items()))
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------


def _default_workers() -> int:
    from .pipeline import default_workers

    return default_workers()


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    common.add_argument("--config", metavar="PATH", help="JSON config file; explicit flags win over it")

    workers = _Parser(add_help=False)
    workers.add_argument("--workers", type=int, default=None, metavar="N", help="worker processes (default: available CPUs)")

    tuning = _Parser(add_help=False)
    tuning.add_argument("--image-radius", type=int)
    tuning.add_argument("--simhash-radius", type=int)
    tuning.add_argument("--quarantine-simhash-radius", type=int)
    tuning.add_argument("--minhash-threshold", type=float)
    tuning.add_argument("--classifier-threshold", type=float)
    tuning.add_argument("--entity-threshold", type=int)
    tuning.add_argument("--purpose", choices=["TRAINING", "SEARCH"])
    tuning.add_argument("--agent-id")
    tuning.add_argument("--max-price", type=int, metavar="MICRO_UNITS", help="reject PAY decisions above this price as UNPAID")

    inputs = _Parser(add_help=False)
    inputs.add_argument("corpus", help="corpus JSONL")
    inputs.add_argument("--registry", required=True, help="registry snapshot JSON")
    inputs.add_argument("--gazetteer", help="gazetteer JSONL")
    inputs.add_argument("--model", help="classifier model JSON")
    inputs.add_argument("--prices", help="per-host price schedule JSON")
    inputs.add_argument("--sources", help="directory of per-host robots/headers/terms sidecar files")

    parser = _Parser(prog="copyfunnel", description="Pre-training copyright filtering funnel.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", parents=[common, workers, tuning, inputs], help="run the funnel over a corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dataset-id", help="dataset name for the head file (default: corpus file stem)")
    p.add_argument("--no-figure", action="store_true", help="skip funnel.png")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", parents=[common, workers, tuning, inputs], help="re-run and compare against a ledger")
    p.add_argument("--ledger", required=True, help="ledger produced by the original run")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("rescan", parents=[common, tuning], help="re-check admitted documents against newly registered works")
    p.add_argument("manifest", help="admitted.manifest.jsonl from a prior run")
    p.add_argument("--old-snapshot", required=True)
    p.add_argument("--new-snapshot", required=True)
    p.add_argument("--out", help="report JSONL (default: rescan.report.jsonl beside the manifest)")
    p.add_argument("--ledger", help="ledger receiving RESCAN records (default: rescan.ledger.jsonl beside the report)")
    p.set_defaults(func=cmd_rescan)

    p = sub.add_parser("audit", parents=[common], help="verify a ledger's hash chain")
    p.add_argument("ledger")
    p.add_argument("--expect-head", metavar="DIGEST", help="published head digest; detects truncation")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("card", parents=[common], help="emit a provenance card from a ledger")
    p.add_argument("ledger")
    p.add_argument("--dataset-id")
    p.add_argument("--out", help="directory for card.json, card.txt, card.tsv and card.png")
    p.set_defaults(func=cmd_card)

    p = sub.add_parser("train", parents=[common], help="train the n-gram classifier")
    p.add_argument("examples", nargs="?", help="examples JSONL {label, tokens|text}")
    p.add_argument("--synthetic-seed", type=int, help="train on the bundled synthetic task instead")
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a classifier model")
    p.add_argument("examples", nargs="?", help="labelled test examples JSONL")
    p.add_argument("--model", required=True)
    p.add_argument("--synthetic-seed", type=int, help="evaluate on the bundled synthetic task")
    p.add_argument("--benign", help="benign corpus JSONL for the false-positive rate")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("registry-build", parents=[common], help="build a registry snapshot from raw works")
    p.add_argument("works", help="works JSONL {work_id, title?, authors?, registered_at?, text | path}")
    p.add_argument("--version", type=int, required=True, dest="version")
    p.add_argument("--out", required=True)
    p.add_argument("--created-at", help="UTC timestamp recorded in the snapshot (default: now)")
    p.add_argument("--previous", help="previous snapshot; the new version must exceed it")
    p.set_defaults(func=cmd_registry_build)

    p = sub.add_parser("gazetteer-check", parents=[common], help="validate gazetteer files")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_gazetteer_check)

    p = sub.add_parser("make-fixture", parents=[common], help="write the seeded demo fixture")
    p.add_argument("out")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--texts", type=int, default=500)
    p.add_argument("--images", type=int, default=50)
    p.add_argument("--works", type=int, default=100)
    p.set_defaults(func=cmd_make_fixture)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "workers") and args.workers is None:
        args.workers = _default_workers()
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FunnelError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - contract: anything unexpected is exit 4
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
