"""Seeded end-to-end fixture: registry, corpus, sidecars, gazetteer and model.

The corpus mixes benign text with every kind of document the funnel is meant
to stop, so a single run exercises each stage.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import NGramModel, TrainingExample, dump_examples, generate_synthetic, train
from .config import FunnelConfig
from .entity_flagger import EntityClass, GazetteerEntry, dump_gazetteer
from .fingerprint import write_pgm
from .pipeline import Document, Funnel, MediaKind, SourceStore, document_to_json
from .policy_gate import PriceSchedule
from .registry import RegisteredWork, RegistrySnapshot, image_work, text_work
from .synth import PERTURBATIONS, TextGenerator, image_suite, text_suite, textured_image

T_REGISTERED = "2026-01-01T00:00:00Z"
T_LATE = "2026-03-01T00:00:00Z"

OPEN_HOSTS = ["open.example", "commons.example", "blog.example"]
PRICES = {"paid.example": 2_000, "pricey.example": 250_000}
PRICE_CAP = 50_000

# (category, weight) for text documents
_TEXT_MIX = [
    ("benign", 52),
    ("exact_copy", 8),
    ("near_copy", 6),
    ("spliced", 8),
    ("entities", 6),
    ("short", 3),
    ("tdm_header", 3),
    ("noai_meta", 3),
    ("terms_file", 2),
    ("robots", 3),
    ("paid", 3),
    ("pricey", 3),
]


@dataclass
class Fixture:
    corpus: list[Document]
    works: list[RegisteredWork]
    raw_works: list[dict]
    work_files: dict[str, bytes]
    late_works: list[RegisteredWork]
    sources: SourceStore
    prices: PriceSchedule
    gazetteer: list[GazetteerEntry]
    train_examples: list[TrainingExample]
    test_examples: list[TrainingExample]
    model: NGramModel
    config: FunnelConfig
    categories: dict[str, str] = field(default_factory=dict)
    late_target: str | None = None

    @property
    def snapshot(self) -> RegistrySnapshot:
        return RegistrySnapshot(1, tuple(self.works), T_REGISTERED)

    @property
    def snapshot_v2(self) -> RegistrySnapshot:
        return RegistrySnapshot(2, tuple(self.works + self.late_works), T_LATE)

    def funnel(self, **changes) -> Funnel:
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

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        (out / "media").mkdir(parents=True, exist_ok=True)
        (out / "works").mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": out / "corpus.jsonl",
            "registry": out / "registry.v1.json",
            "registry_v2": out / "registry.v2.json",
            "works": out / "works" / "works.jsonl",
            "sources": out / "sources",
            "prices": out / "prices.json",
            "gazetteer": out / "gazetteer.jsonl",
            "model": out / "model.json",
            "train": out / "train.jsonl",
            "test": out / "test.jsonl",
            "config": out / "config.json",
        }
        lines = []
        for doc in self.corpus:
            if doc.kind is MediaKind.IMAGE:
                rel = f"media/{doc.doc_id}.pgm"
                (out / rel).write_bytes(doc.data)
                lines.append(document_to_json(doc, rel))
            elif doc.load_error is not None:
                lines.append({"doc_id": doc.doc_id, "source_url": doc.source_url, "fetched_at": doc.fetched_at,
                              "media": {"kind": "TEXT", "path": f"media/missing-{doc.doc_id}.txt"}})
            else:
                lines.append(document_to_json(doc))
        paths["corpus"].write_text("".join(json.dumps(obj, ensure_ascii=False) + "\n" for obj in lines), encoding="utf-8")
        for name, data in self.work_files.items():
            (out / "works" / name).write_bytes(data)
        paths["works"].write_text("".join(json.dumps(w) + "\n" for w in self.raw_works), encoding="utf-8")
        paths["registry"].write_text(self.snapshot.to_json(), encoding="utf-8")
        paths["registry_v2"].write_text(self.snapshot_v2.to_json(), encoding="utf-8")
        self.sources.write(paths["sources"])
        paths["prices"].write_text(json.dumps(dict(self.prices.per_domain), sort_keys=True, indent=2) + "\n")
        paths["gazetteer"].write_text(dump_gazetteer(self.gazetteer), encoding="utf-8")
        self.model.save(paths["model"])
        paths["train"].write_text(dump_examples(self.train_examples), encoding="utf-8")
        paths["test"].write_text(dump_examples(self.test_examples), encoding="utf-8")
        paths["config"].write_text(json.dumps(self.config.to_dict(), sort_keys=True, indent=2) + "\n")
        return paths


def _pseudo_name(gen: TextGenerator, rng: np.random.Generator, used: set[str], words: int) -> str:
    while True:
        # rare-ish words so names do not occur by chance in generated text
        name = " ".join(gen.vocab[int(rng.integers(5000, len(gen.vocab)))].capitalize() for _ in range(words))
        if name.lower() not in used:
            used.add(name.lower())
            return name


def make_fixture(seed: int = 7, n_text: int = 500, n_images: int = 50, n_works: int = 100) -> Fixture:
    gen = TextGenerator()
    # distinct stream from text_suite(seed), which seeds default_rng(seed) itself
    rng = np.random.default_rng([seed, 0xF1C7])
    pick = random.Random(seed)
    suite = text_suite(seed)

    n_image_works = max(1, n_works * 3 // 10)
    n_text_works = n_works - n_image_works
    texts = [list(w) for w in suite.works[:n_text_works]]
    texts += [gen.tokens(rng, 300) for _ in range(n_text_works - len(texts))]

    used: set[str] = set()
    works, raw_works, gazetteer = [], [], []
    work_files: dict[str, bytes] = {}
    for i, tokens in enumerate(texts):
        work_id = f"txt-{i:03d}"
        title, author = _pseudo_name(gen, rng, used, 2), _pseudo_name(gen, rng, used, 2)
        text = " ".join(tokens)
        works.append(text_work(work_id, text, title=title, authors=[author], registered_at=T_REGISTERED))
        raw_works.append({"work_id": work_id, "title": title, "authors": [author], "registered_at": T_REGISTERED, "text": text})
        gazetteer.append(GazetteerEntry(title, EntityClass.PUBLICATION, work_id))
        gazetteer.append(GazetteerEntry(author, EntityClass.AUTHOR, work_id))
    images = image_suite(n_image_works, seed=seed + 1000)
    for i, pixels in enumerate(images):
        work_id = f"img-{i:03d}"
        data = write_pgm(pixels)
        works.append(image_work(work_id, data, title=f"Plate {i}", registered_at=T_REGISTERED))
        work_files[f"{work_id}.pgm"] = data
        raw_works.append({"work_id": work_id, "title": f"Plate {i}", "registered_at": T_REGISTERED, "path": f"{work_id}.pgm"})

    train_examples = generate_synthetic(suite.works, suite.train_carriers, 0.5, seed)
    test_examples = generate_synthetic(suite.works, suite.test_carriers, 0.5, seed + 1)
    model = train(train_examples)

    sources = SourceStore(
        robots={"robots.example": "User-agent: *\nDisallow: /private\n", "open.example": "User-agent: *\nAllow: /\n"},
        headers={"reserved.example": (("TDM-Reservation", "1"),)},
        terms={"terms.example": json.dumps({"tdm-reservation": 1}) + "\n"},
    )
    config = FunnelConfig(max_price_micro_units=PRICE_CAP)

    categories, weights = zip(*_TEXT_MIX)
    corpus: list[Document] = []
    labels: dict[str, str] = {}
    text_pool = [w for w in suite.works]

    def carrier(length=None):
        return gen.tokens(rng, length or int(rng.integers(120, 260)))

    for i in range(n_text):
        doc_id = f"t{i:04d}"
        category = pick.choices(categories, weights)[0]
        host, path, html_head, headers = pick.choice(OPEN_HOSTS), f"/a/{i}", "", ()
        if category == "exact_copy":
            body = texts[pick.randrange(len(texts))]
            text = body[0].capitalize() + " " + ", ".join(body[1:]) + "."
        elif category == "near_copy":
            body = list(texts[pick.randrange(len(texts))])
            for _ in range(2):
                body[pick.randrange(len(body))] = gen.vocab[int(rng.integers(len(gen.vocab)))]
            text = " ".join(body)
        elif category == "spliced":
            base = carrier(160)
            excerpt = text_pool[pick.randrange(len(text_pool))]
            off = pick.randrange(len(excerpt) - 80)
            at = pick.randrange(len(base))
            text = " ".join(base[:at] + list(excerpt[off : off + 80]) + base[at:])
        elif category == "entities":
            base = carrier()
            a, b = pick.sample(range(len(texts)), 2)
            mention = [gazetteer[2 * a].surface, "by", gazetteer[2 * a + 1].surface, "and", gazetteer[2 * b].surface]
            at = pick.randrange(len(base))
            text = " ".join(base[:at]) + " " + " ".join(mention) + " " + " ".join(base[at:])
        elif category == "short":
            text = " ".join(carrier(3))
        else:
            text = " ".join(carrier())
            if category == "tdm_header":
                host = "reserved.example"
            elif category == "noai_meta":
                host, html_head = "news.example", '<meta name="robots" content="index, noai">'
            elif category == "terms_file":
                host = "terms.example"
            elif category == "robots":
                host, path = "robots.example", f"/private/{i}"
            elif category in ("paid", "pricey"):
                host = f"{category}.example"
        corpus.append(
            Document(doc_id, f"https://{host}{path}", f"2026-02-01T00:{i // 60 % 60:02d}:{i % 60:02d}Z",
                     MediaKind.TEXT, text=text, headers=headers, html_head=html_head)
        )
        labels[doc_id] = category

    if n_text > 20:
        bad = corpus[13]
        corpus[13] = Document(bad.doc_id, bad.source_url, bad.fetched_at, MediaKind.TEXT,
                              load_error="content unreadable: media/missing file")
        labels[bad.doc_id] = "unreadable"

    names = sorted(PERTURBATIONS)
    for j in range(n_images):
        doc_id = f"i{j:04d}"
        kind = ("image_copy", "image_perturbed", "image_fresh")[j % 3] if j % 5 else "image_fresh"
        if kind == "image_copy":
            pixels = images[pick.randrange(len(images))]
        elif kind == "image_perturbed":
            pixels = PERTURBATIONS[names[j % len(names)]](images[pick.randrange(len(images))])
        else:
            pixels = textured_image(rng)
        corpus.append(Document(doc_id, f"https://{pick.choice(OPEN_HOSTS)}/img/{j}.pgm", "2026-02-02T00:00:00Z",
                               MediaKind.IMAGE, data=write_pgm(pixels)))
        labels[doc_id] = kind

    # a benign admitted document whose text is registered only after the run
    target = next((d for d in corpus if labels[d.doc_id] == "benign"), None)
    late = []
    if target is not None:
        late.append(text_work("late-001", target.text, title="Late Registration", registered_at=T_LATE))
    late.append(text_work("late-002", " ".join(carrier(300)), title="Unrelated Late Work", registered_at=T_LATE))

    return Fixture(
        corpus=corpus,
        works=works,
        raw_works=raw_works,
        work_files=work_files,
        late_works=late,
        sources=sources,
        prices=PriceSchedule(PRICES),
        gazetteer=gazetteer,
        train_examples=train_examples,
        test_examples=test_examples,
        model=model,
        config=config,
        categories=labels,
        late_target=target.doc_id if target is not None else None,
    )
