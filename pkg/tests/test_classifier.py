import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from copyfunnel.classifier import (
    EvalReport,
    Label,
    NGramModel,
    TrainingExample,
    dump_examples,
    evaluate,
    generate_synthetic,
    load_examples,
    score,
    synthetic_task,
    train,
)
from copyfunnel.errors import BadRatio, ClassMissing, InputError, InsufficientText
from copyfunnel.fingerprint import shingle_hash

P, Q = Label.PROTECTED_LIKE, Label.PUBLIC_LIKE

TOY = [
    ("call me ishmael some years ago", P),
    ("it was the best of times", P),
    ("it was the worst of times", P),
    ("call me ishmael never mind how long", P),
    ("the best of times and the worst", P),
    ("some years ago never mind how", P),
    ("it was the age of wisdom", P),
    ("call me later about the age", P),
    ("the worst of times indeed", P),
    ("ishmael some years ago it was", P),
    ("the cat sat on the mat", Q),
    ("a dog ran in the park", Q),
    ("the cat ran on the mat", Q),
    ("it was a sunny day", Q),
    ("the park was green and quiet", Q),
    ("a sunny day in the park", Q),
    ("the dog sat in the sun", Q),
    ("it was the cat again", Q),
    ("a quiet day on the mat", Q),
    ("the mat was green", Q),
]


def toy_examples():
    return [TrainingExample(tuple(text.split()), label) for text, label in TOY]


def hand_log_odds(n=3, alpha=0.5):
    """Count n-gram strings per class directly, then apply the smoothing formula."""
    counts = {P: {}, Q: {}}
    for text, label in TOY:
        toks = text.split()
        for i in range(len(toks) - n + 1):
            g = " ".join(toks[i : i + n])
            counts[label][g] = counts[label].get(g, 0) + 1
    vocab = set(counts[P]) | set(counts[Q])
    tp, tq = sum(counts[P].values()), sum(counts[Q].values())
    out = {}
    for g in vocab:
        a = (counts[P].get(g, 0) + alpha) / (tp + alpha * len(vocab))
        b = (counts[Q].get(g, 0) + alpha) / (tq + alpha * len(vocab))
        out[g] = math.log(a) - math.log(b)
    return out


def test_toy_corpus_matches_hand_counts():
    model = train(toy_examples(), n=3, alpha=0.5)
    expected = hand_log_odds()
    assert model.vocabulary_size == len(expected)
    assert model.prior_log_odds == 0.0  # 10 vs 10 examples
    for g, value in expected.items():
        assert model.log_odds[shingle_hash(g.split())] == pytest.approx(value, abs=1e-12)


def test_toy_training_text_sign_matches_label():
    model = train(toy_examples())
    for ex in toy_examples():
        s = score(model, ex.tokens)
        assert (s > 0) == (ex.label is P), (ex.tokens, s)


def test_identical_class_corpora_are_neutral():
    texts = ["a b c d", "b c d e f", "c d e"]
    examples = [TrainingExample(tuple(t.split()), lab) for t in texts for lab in (P, Q)]
    model = train(examples)
    assert model.prior_log_odds == 0.0
    assert all(v == 0.0 for v in model.log_odds.values())


def test_protected_only_ngram_positive():
    model = train([TrainingExample(("x", "y", "z"), P), TrainingExample(("a", "b", "c"), Q)])
    assert model.log_odds[shingle_hash(("x", "y", "z"))] > 0
    assert model.log_odds[shingle_hash(("a", "b", "c"))] < 0


def test_single_class_corpus():
    with pytest.raises(ClassMissing):
        train([TrainingExample(("a", "b", "c"), P)])


def test_unknown_ngrams_score_prior():
    model = train(toy_examples())
    assert score(model, ["zz", "yy", "xx", "ww"]) == 0.0


def test_neutral_suffix_leaves_score_unchanged():
    model = train(toy_examples())
    tokens = "it was the best of times".split()
    assert score(model, tokens + ["qq1", "qq2", "qq3", "qq4"]) == pytest.approx(score(model, tokens), abs=1e-12)


def test_score_too_short():
    with pytest.raises(InsufficientText):
        score(train(toy_examples()), ["a", "b"])


@given(st.randoms())
def test_training_is_order_independent(rnd):
    examples = toy_examples()
    shuffled = list(examples)
    rnd.shuffle(shuffled)
    assert train(examples) == train(shuffled)


def test_model_json_round_trip(tmp_path):
    model = train(toy_examples())
    path = tmp_path / "m.json"
    model.save(path)
    again = NGramModel.load(path)
    assert again == model
    assert again.to_json() == model.to_json()


def test_model_json_rejects_garbage():
    with pytest.raises(InputError):
        NGramModel.from_json('{"n": 3}')
    with pytest.raises(InputError):
        NGramModel.from_json('{"n": 3, "alpha": 0.5, "prior": NaN, "vocabulary_size": 1, "entries": []}')


# --- synthetic generator -------------------------------------------------------

EXCERPTS = [[f"e{i}_{j}" for j in range(40)] for i in range(3)]
CARRIERS = [[f"c{i}_{j}" for j in range(20)] for i in range(5)]


def test_mix_ratio_one_is_pure_excerpt():
    for ex in generate_synthetic(EXCERPTS, CARRIERS, 1.0, seed=3):
        if ex.label is P:
            assert all(t.startswith("e") for t in ex.tokens)
            assert len(ex.tokens) == 20


def test_synthetic_is_seeded():
    assert generate_synthetic(EXCERPTS, CARRIERS, 0.5, 7) == generate_synthetic(EXCERPTS, CARRIERS, 0.5, 7)
    assert generate_synthetic(EXCERPTS, CARRIERS, 0.5, 7) != generate_synthetic(EXCERPTS, CARRIERS, 0.5, 8)


def test_synthetic_mix_fraction_and_pairs():
    out = generate_synthetic(EXCERPTS, CARRIERS, 0.25, 1)
    assert [ex.label for ex in out] == [P, Q] * len(CARRIERS)
    for prot, pub, carrier in zip(out[::2], out[1::2], CARRIERS):
        assert pub.tokens == tuple(carrier)
        assert sum(t.startswith("e") for t in prot.tokens) == 5
        assert len(prot.tokens) == 20


@pytest.mark.parametrize("ratio", [0.0, -0.1, 1.5])
def test_bad_ratio(ratio):
    with pytest.raises(BadRatio):
        generate_synthetic(EXCERPTS, CARRIERS, ratio, 1)


# --- evaluation -----------------------------------------------------------------


def test_f1_reference_magnitude():
    r = EvalReport.from_counts(tp=48, fp=2, tn=50, fn=2)
    assert r.f1 == 2 * 48 / (96 + 2 + 2) == 0.96


def test_perfect_and_all_wrong():
    model = train(toy_examples())
    assert evaluate(model, toy_examples()).f1 == 1.0
    flipped = [TrainingExample(ex.tokens, Q if ex.label is P else P) for ex in toy_examples()]
    r = evaluate(model, flipped)
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)


def test_evaluate_empty_test():
    with pytest.raises(InputError):
        evaluate(train(toy_examples()), [])


@settings(max_examples=200)
@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
def test_report_identities(tp, fp, tn, fn):
    r = EvalReport.from_counts(tp, fp, tn, fn)
    denom = 2 * tp + fp + fn
    assert r.f1 == (2 * tp / denom if denom else 0.0)
    assert 0 <= r.precision <= 1 and 0 <= r.recall <= 1 and 0 <= r.f1 <= 1
    if r.precision + r.recall:
        assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall), rel=1e-12)


def test_bundled_task_regression():
    task = synthetic_task(42)
    assert (len(task.train), len(task.test), len(task.benign)) == (200, 100, 100)
    report = evaluate(train(task.train), task.test, task.benign, threshold=0.0)
    assert report.f1 >= 0.9
    assert report.benign_fp_rate <= 0.05


def test_examples_file_round_trip(tmp_path):
    path = tmp_path / "ex.jsonl"
    path.write_text(dump_examples(toy_examples()) + '{"label": "PUBLIC_LIKE", "text": "Hello, World again!"}\n')
    loaded = load_examples(path)
    assert loaded[:-1] == toy_examples()
    assert loaded[-1].tokens == ("hello", "world", "again")
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"label": "MAYBE", "tokens": ["a"]}\n')
    with pytest.raises(InputError, match=":1:"):
        load_examples(bad)


def test_random_seeded_scores_deterministic():
    rng = random.Random(4)
    model = train(toy_examples())
    words = [w for text, _ in TOY for w in text.split()]
    for _ in range(20):
        toks = rng.choices(words, k=10)
        assert score(model, toks) == score(model, list(toks))
