"""Gazetteer flagging of author, publication and publisher names.

Matching runs an Aho-Corasick automaton over normalized *tokens*, so every
hit falls on whole-token boundaries by construction.  Flags only route a
document to closer scrutiny; this stage never rejects.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DuplicateEntry, EmptyGazetteer, InputError
from .text import normalize_text
from .verdicts import Outcome, Stage, StageVerdict


class EntityClass(str, Enum):
    AUTHOR = "AUTHOR"
    PUBLICATION = "PUBLICATION"
    PUBLISHER = "PUBLISHER"
    WORK_TITLE = "WORK_TITLE"


@dataclass(frozen=True)
class GazetteerEntry:
    surface: str
    entity_class: EntityClass
    work_id: str | None = None

    def __post_init__(self):
        surface = " ".join(normalize_text(self.surface))
        if not surface:
            raise InputError(f"gazetteer surface {self.surface!r} is empty after normalization")
        object.__setattr__(self, "surface", surface)
        object.__setattr__(self, "entity_class", EntityClass(self.entity_class))

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self.surface.split(" "))


@dataclass(frozen=True)
class EntityFlag:
    start_token: int
    end_token: int
    entry: GazetteerEntry


class Matcher:
    """Compiled token automaton; immutable after construction."""

    def __init__(self, entries: Sequence[GazetteerEntry]):
        self.entries = tuple(entries)
        self._goto: list[dict[str, int]] = [{}]
        self._fail: list[int] = [0]
        self._out: list[list[int]] = [[]]
        for idx, entry in enumerate(self.entries):
            state = 0
            for tok in entry.tokens:
                nxt = self._goto[state].get(tok)
                if nxt is None:
                    nxt = len(self._goto)
                    self._goto[state][tok] = nxt
                    self._goto.append({})
                    self._fail.append(0)
                    self._out.append([])
                state = nxt
            self._out[state].append(idx)
        self._link()

    def _link(self) -> None:
        queue = deque(self._goto[0].values())
        while queue:
            state = queue.popleft()
            for tok, nxt in self._goto[state].items():
                queue.append(nxt)
                f = self._fail[state]
                while f and tok not in self._goto[f]:
                    f = self._fail[f]
                target = self._goto[f].get(tok, 0)
                self._fail[nxt] = target if target != nxt else 0
                self._out[nxt] = self._out[nxt] + self._out[self._fail[nxt]]

    def scan(self, tokens: Sequence[str]) -> list[EntityFlag]:
        flags = []
        state = 0
        for pos, tok in enumerate(tokens):
            while state and tok not in self._goto[state]:
                state = self._fail[state]
            state = self._goto[state].get(tok, 0)
            for idx in self._out[state]:
                entry = self.entries[idx]
                flags.append(EntityFlag(pos + 1 - len(entry.tokens), pos + 1, entry))
        flags.sort(key=lambda f: (f.start_token, f.end_token, f.entry.entity_class.value, f.entry.surface))
        return flags


def compile_gazetteer(entries: Iterable[GazetteerEntry]) -> Matcher:
    entries = list(entries)
    if not entries:
        raise EmptyGazetteer("gazetteer has no entries")
    seen = set()
    for entry in entries:
        key = (entry.surface, entry.entity_class)
        if key in seen:
            raise DuplicateEntry(f"duplicate gazetteer entry {entry.surface!r} ({entry.entity_class.value})")
        seen.add(key)
    return Matcher(entries)


def scan_text(matcher: Matcher, tokens: Sequence[str]) -> list[EntityFlag]:
    return matcher.scan(tokens)


def flag_verdict(flags: Sequence[EntityFlag], threshold: int) -> StageVerdict:
    if threshold < 1:
        raise ValueError("flag threshold must be >= 1")
    count = len(flags)
    surfaces = sorted({f.entry.surface for f in flags})
    evidence = f"{count} flags" + (": " + ", ".join(surfaces[:5]) if surfaces else "")
    if count >= threshold:
        return StageVerdict(Stage.ENTITY, Outcome.QUARANTINE, "ENTITY_FLAGS", evidence)
    return StageVerdict(Stage.ENTITY, Outcome.ADMIT, "BELOW_THRESHOLD", evidence)


def load_gazetteer(path: str | Path) -> list[GazetteerEntry]:
    """Read JSONL ``{surface, class, work_id?}``; errors carry the line number."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                entries.append(GazetteerEntry(obj["surface"], obj["class"], obj.get("work_id")))
            except (ValueError, KeyError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    return entries


def dump_gazetteer(entries: Iterable[GazetteerEntry]) -> str:
    lines = []
    for e in entries:
        obj = {"surface": e.surface, "class": e.entity_class.value}
        if e.work_id is not None:
            obj["work_id"] = e.work_id
        lines.append(json.dumps(obj, sort_keys=True) + "\n")
    return "".join(lines)
