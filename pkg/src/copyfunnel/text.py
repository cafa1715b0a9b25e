"""Canonical text view shared by fingerprinting, entity matching and scoring."""

from __future__ import annotations

import unicodedata


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def normalize_text(text: str) -> list[str]:
    """NFC, lowercase, punctuation replaced by whitespace, split on whitespace."""
    text = unicodedata.normalize("NFC", text).lower()
    text = "".join(" " if _is_punct(ch) else ch for ch in text)
    return text.split()


def canonical_text_bytes(tokens: list[str]) -> bytes:
    return " ".join(tokens).encode("utf-8")
