"""Smoothed log-odds n-gram scorer for protected-like vs public-like text.

Score is additive: ``prior + sum(log_odds[g])`` over every n-gram occurrence
in the input, with unseen n-grams contributing zero.  Positive means
protected-like.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import BadRatio, ClassMissing, InputError, InsufficientText
from .fingerprint import shingle_hashes
from .text import normalize_text

DEFAULT_N = 3
DEFAULT_ALPHA = 0.5
DEFAULT_THRESHOLD = 0.0


class Label(str, Enum):
    PROTECTED_LIKE = "PROTECTED_LIKE"
    PUBLIC_LIKE = "PUBLIC_LIKE"


@dataclass(frozen=True)
class TrainingExample:
    tokens: tuple[str, ...]
    label: Label

    def __post_init__(self):
        if not self.tokens:
            raise InputError("training example has no tokens")
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "label", Label(self.label))


@dataclass(frozen=True)
class NGramModel:
    n: int
    alpha: float
    prior_log_odds: float
    vocabulary_size: int
    log_odds: dict[int, float]

    def to_json(self) -> str:
        entries = [{"hash_hex": f"{h:016x}", "log_odds": v} for h, v in sorted(self.log_odds.items())]
        return json.dumps(
            {
                "n": self.n,
                "alpha": self.alpha,
                "prior": self.prior_log_odds,
                "vocabulary_size": self.vocabulary_size,
                "entries": entries,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> NGramModel:
        try:
            obj = json.loads(text)
            log_odds = {int(e["hash_hex"], 16): float(e["log_odds"]) for e in obj["entries"]}
            model = cls(int(obj["n"]), float(obj["alpha"]), float(obj["prior"]), int(obj["vocabulary_size"]), log_odds)
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"bad model file: {exc}") from exc
        if not all(math.isfinite(v) for v in [model.prior_log_odds, *log_odds.values()]):
            raise InputError("model contains non-finite values")
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> NGramModel:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _ngrams(tokens: Sequence[str], n: int) -> list[int]:
    return shingle_hashes(tokens, n) if len(tokens) >= n else []


def train(examples: Iterable[TrainingExample], n: int = DEFAULT_N, alpha: float = DEFAULT_ALPHA) -> NGramModel:
    if n < 1:
        raise ValueError("n must be positive")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    counts = {Label.PROTECTED_LIKE: Counter(), Label.PUBLIC_LIKE: Counter()}
    docs = Counter()
    for ex in examples:
        docs[ex.label] += 1
        counts[ex.label].update(_ngrams(ex.tokens, n))
    missing = [label.value for label in Label if docs[label] == 0]
    if missing:
        raise ClassMissing(f"no training examples for {', '.join(missing)}")

    prot, pub = counts[Label.PROTECTED_LIKE], counts[Label.PUBLIC_LIKE]
    vocab = set(prot) | set(pub)
    v = max(len(vocab), 1)
    denom_prot = sum(prot.values()) + alpha * v
    denom_pub = sum(pub.values()) + alpha * v
    log_odds = {
        g: math.log((prot[g] + alpha) / denom_prot) - math.log((pub[g] + alpha) / denom_pub) for g in sorted(vocab)
    }
    prior = math.log(docs[Label.PROTECTED_LIKE] / docs[Label.PUBLIC_LIKE])
    return NGramModel(n, float(alpha), prior, v, log_odds)


def score(model: NGramModel, tokens: Sequence[str]) -> float:
    if len(tokens) < model.n:
        raise InsufficientText(f"need at least {model.n} tokens to score")
    table = model.log_odds
    return model.prior_log_odds + math.fsum(table.get(g, 0.0) for g in _ngrams(tokens, model.n))


def generate_synthetic(
    registry_excerpts: Sequence[Sequence[str]],
    carrier_texts: Sequence[Sequence[str]],
    mix_ratio: float,
    seed: int,
) -> list[TrainingExample]:
    """Two examples per carrier: the carrier spliced with an excerpt, then the bare carrier.

    The protected-like example keeps the carrier's length; ``ceil(mix_ratio*len)``
    of its tokens are one contiguous excerpt span inserted at a random point
    into a random contiguous window of the carrier.
    """
    if not 0 < mix_ratio <= 1:
        raise BadRatio(f"mix_ratio must be in (0, 1], got {mix_ratio}")
    if not registry_excerpts or not carrier_texts:
        raise InputError("need at least one excerpt and one carrier")
    rng = random.Random(seed)
    out = []
    for carrier in carrier_texts:
        carrier = list(carrier)
        length = len(carrier)
        m = max(1, math.ceil(mix_ratio * length))
        excerpt = list(registry_excerpts[rng.randrange(len(registry_excerpts))])
        if len(excerpt) > m:
            off = rng.randrange(len(excerpt) - m + 1)
            excerpt = excerpt[off : off + m]
        keep = max(length - m, 0)
        c0 = rng.randrange(length - keep + 1)
        kept = carrier[c0 : c0 + keep]
        at = rng.randint(0, keep)
        out.append(TrainingExample(tuple(kept[:at] + excerpt + kept[at:]), Label.PROTECTED_LIKE))
        out.append(TrainingExample(tuple(carrier), Label.PUBLIC_LIKE))
    return out


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    benign_fp_rate: float
    benign_total: int = 0

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int, benign_fp: int = 0, benign_total: int = 0) -> EvalReport:
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 0.0
        rate = benign_fp / benign_total if benign_total else 0.0
        return cls(tp, fp, tn, fn, precision, recall, f1, rate, benign_total)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def predicts_protected(model: NGramModel, tokens: Sequence[str], threshold: float) -> bool:
    # too-short inputs cannot be scored and count as public-like
    try:
        return score(model, tokens) > threshold
    except InsufficientText:
        return False


def evaluate(
    model: NGramModel,
    test: Sequence[TrainingExample],
    benign: Sequence[Sequence[str]] = (),
    threshold: float = DEFAULT_THRESHOLD,
) -> EvalReport:
    if not test:
        raise InputError("empty test set")
    tp = fp = tn = fn = 0
    for ex in test:
        positive = predicts_protected(model, ex.tokens, threshold)
        if ex.label is Label.PROTECTED_LIKE:
            tp, fn = (tp + 1, fn) if positive else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if positive else (fp, tn + 1)
    benign_fp = sum(predicts_protected(model, toks, threshold) for toks in benign)
    return EvalReport.from_counts(tp, fp, tn, fn, benign_fp, len(benign))


# --- bundled task and example files -----------------------------------------


@dataclass(frozen=True)
class SyntheticTask:
    train: list[TrainingExample]
    test: list[TrainingExample]
    benign: list[list[str]]
    excerpts: list[list[str]]


def synthetic_task(seed: int = 42, mix_ratio: float = 0.5) -> SyntheticTask:
    """200 train / 100 test examples plus a disjoint 100-text benign corpus."""
    from .synth import text_suite

    suite = text_suite(seed)
    train_set = generate_synthetic(suite.works, suite.train_carriers, mix_ratio, seed)
    test_set = generate_synthetic(suite.works, suite.test_carriers, mix_ratio, seed + 1)
    return SyntheticTask(train_set, test_set, suite.benign, suite.works)


def load_examples(path: str | Path) -> list[TrainingExample]:
    """JSONL ``{label, tokens | text}``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                tokens = obj["tokens"] if "tokens" in obj else normalize_text(obj["text"])
                out.append(TrainingExample(tuple(tokens), obj["label"]))
            except (ValueError, KeyError, TypeError, InputError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    return out


def dump_examples(examples: Iterable[TrainingExample]) -> str:
    return "".join(
        json.dumps({"label": ex.label.value, "tokens": list(ex.tokens)}) + "\n" for ex in examples
    )
