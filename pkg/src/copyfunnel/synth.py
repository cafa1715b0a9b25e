"""Deterministic synthetic data: pseudo-language text and smooth grayscale images.

Everything here is a pure function of its seed, so the bundled suites used by
the tests and the demo fixture are reproducible without shipping data files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ONSETS = ["b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z",
           "br", "ch", "dr", "fl", "gr", "pl", "sh", "st", "th", "tr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ea", "io", "ou"]
_CODAS = ["", "", "", "n", "r", "s", "l", "m", "nd", "st", "rk"]


def make_vocabulary(size: int = 20000, seed: int = 7) -> list[str]:
    rng = np.random.default_rng(seed)
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < size:
        n_syll = int(rng.integers(1, 4))
        word = "".join(
            _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] + _CODAS[rng.integers(len(_CODAS))]
            for _ in range(n_syll)
        )
        if word not in seen:
            seen.add(word)
            words.append(word)
    return words


class TextGenerator:
    """Zipf-distributed token streams over a fixed pseudo-word vocabulary."""

    def __init__(self, vocab_size: int = 20000, exponent: float = 0.8, vocab_seed: int = 7):
        self.vocab = make_vocabulary(vocab_size, vocab_seed)
        weights = 1.0 / np.arange(1, vocab_size + 1) ** exponent
        self._p = weights / weights.sum()

    def tokens(self, rng: np.random.Generator, n: int) -> list[str]:
        idx = rng.choice(len(self.vocab), size=n, p=self._p)
        return [self.vocab[i] for i in idx]


@dataclass(frozen=True)
class TextSuite:
    works: list[list[str]]
    train_carriers: list[list[str]]
    test_carriers: list[list[str]]
    benign: list[list[str]]


def text_suite(
    seed: int = 42,
    n_works: int = 20,
    work_len: int = 300,
    n_train: int = 100,
    n_test: int = 50,
    n_benign: int = 100,
    carrier_len: int = 120,
) -> TextSuite:
    """Registry excerpts plus disjoint train/test/benign public-like carriers."""
    gen = TextGenerator()
    rng = np.random.default_rng(seed)
    works = [gen.tokens(rng, work_len) for _ in range(n_works)]
    carriers = [gen.tokens(rng, carrier_len) for _ in range(n_train + n_test + n_benign)]
    return TextSuite(
        works=works,
        train_carriers=carriers[:n_train],
        test_carriers=carriers[n_train : n_train + n_test],
        benign=carriers[n_train + n_test :],
    )


# --- images ------------------------------------------------------------------


def smooth_image(rng: np.random.Generator, height: int = 64, width: int = 64) -> np.ndarray:
    """Gradient plus a few Gaussian blobs, kept inside 20..235 so +/-10 never clips."""
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    img = rng.uniform(-1, 1) * xx / width + rng.uniform(-1, 1) * yy / height
    for _ in range(int(rng.integers(2, 6))):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        sigma = rng.uniform(width / 10, width / 3)
        img += rng.uniform(-1.5, 1.5) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo if hi > lo else 1.0)
    return np.floor(20 + img * 215).astype(np.uint8)


def textured_image(rng: np.random.Generator, height: int = 64, width: int = 64) -> np.ndarray:
    """Sum of three random sinusoidal gratings.

    Low-texture smooth images share coarse gradient structure and can land
    within a small dHash radius of each other; gratings do not.
    """
    yy, xx = np.mgrid[0:height, 0:width].astype(float)
    img = np.zeros((height, width))
    for _ in range(3):
        fy, fx = rng.uniform(1.5, 8, 2) * rng.choice([-1, 1], 2)
        img += rng.uniform(0.5, 1) * np.sin(2 * np.pi * (fx * xx / width + fy * yy / height) + rng.uniform(0, 2 * np.pi))
    lo, hi = img.min(), img.max()
    return np.floor(20 + (img - lo) / (hi - lo) * 215).astype(np.uint8)


def image_suite(n: int = 200, seed: int = 2024, height: int = 64, width: int = 64) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [smooth_image(rng, height, width) for _ in range(n)]


def brighten(pixels: np.ndarray, delta: int) -> np.ndarray:
    return np.clip(pixels.astype(np.int16) + delta, 0, 255).astype(np.uint8)


def crop_border(pixels: np.ndarray, px: int = 1) -> np.ndarray:
    return pixels[px:-px, px:-px]


PERTURBATIONS = {
    "brightness+10": lambda p: brighten(p, 10),
    "brightness-10": lambda p: brighten(p, -10),
    "crop1": crop_border,
}
