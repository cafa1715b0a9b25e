"""Perceptual identities for images (dHash) and text (SimHash, MinHash).

All hashing is bit-specified so values agree across implementations:

* shingle hash: FNV-1a 64 over the UTF-8 bytes of the space-joined shingle,
  followed by the ``fmix64`` finalizer below.
* MinHash mixer ``i``: ``fmix64(h ^ seed_i)`` with
  ``seed_i = (i + 1) * 0x9E3779B97F4A7C15 mod 2**64``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DimensionError, InputError, InsufficientText

MASK64 = (1 << 64) - 1

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
FMIX_C1 = 0xFF51AFD7ED558CCD
FMIX_C2 = 0xC4CEB9FE1A85EC53
GOLDEN = 0x9E3779B97F4A7C15

GRID_COLS = 9
GRID_ROWS = 8

DEFAULT_SHINGLE_WIDTH = 5
DEFAULT_K = 128

# below this many entries a linear scan is cheaper than walking the tree
LINEAR_SCAN_LIMIT = 1000


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def fmix64(x: int) -> int:
    x &= MASK64
    x ^= x >> 33
    x = (x * FMIX_C1) & MASK64
    x ^= x >> 33
    x = (x * FMIX_C2) & MASK64
    x ^= x >> 33
    return x


def _fmix64_array(x: np.ndarray) -> np.ndarray:
    # uint64 multiplication wraps modulo 2**64, matching the scalar version
    x = x ^ (x >> np.uint64(33))
    x = x * np.uint64(FMIX_C1)
    x = x ^ (x >> np.uint64(33))
    x = x * np.uint64(FMIX_C2)
    x = x ^ (x >> np.uint64(33))
    return x


def mixer_seed(i: int) -> int:
    return ((i + 1) * GOLDEN) & MASK64


def mix(i: int, h: int) -> int:
    """The i-th MinHash mixing function."""
    return fmix64(h ^ mixer_seed(i))


def hamming(a: int, b: int) -> int:
    return ((a ^ b) & MASK64).bit_count()


def shingle_hash(shingle: Sequence[str]) -> int:
    return fmix64(fnv1a64(" ".join(shingle).encode("utf-8")))


def shingles(tokens: Sequence[str], width: int) -> Iterator[tuple[str, ...]]:
    for start in range(len(tokens) - width + 1):
        yield tuple(tokens[start : start + width])


def shingle_hashes(tokens: Sequence[str], width: int = DEFAULT_SHINGLE_WIDTH) -> list[int]:
    if width < 1:
        raise ValueError("shingle width must be positive")
    if len(tokens) < width:
        raise InsufficientText(f"need at least {width} tokens, got {len(tokens)}")
    return [shingle_hash(s) for s in shingles(tokens, width)]


# --- image hashing -----------------------------------------------------------


@dataclass(frozen=True)
class ImageHash64:
    bits: int
    kind: str = "DHASH"

    @property
    def hex(self) -> str:
        return f"{self.bits:016x}"


def dhash(luma: Sequence[Sequence[int]]) -> ImageHash64:
    """Difference hash of a 9-column by 8-row luma grid.

    Bit ``row*8 + col`` (bit 0 = most significant) is set iff the cell is
    strictly darker than its right neighbour.
    """
    if len(luma) != GRID_ROWS or any(len(row) != GRID_COLS for row in luma):
        raise DimensionError(f"dhash needs an {GRID_ROWS}x{GRID_COLS} grid (rows x cols)")
    bits = 0
    for row in range(GRID_ROWS):
        cells = luma[row]
        for col in range(GRID_COLS - 1):
            bits <<= 1
            if cells[col] < cells[col + 1]:
                bits |= 1
    return ImageHash64(bits)


def read_pgm(data: bytes) -> np.ndarray:
    """Parse a binary (P5) 8-bit PGM into a ``(height, width)`` uint8 array."""
    pos = 0
    fields: list[bytes] = []
    n = len(data)
    while len(fields) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise InputError("truncated PGM header")
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise InputError(f"not a binary PGM (magic {fields[0]!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise InputError("non-numeric PGM header field") from exc
    if width <= 0 or height <= 0:
        raise InputError("PGM dimensions must be positive")
    if not 0 < maxval <= 255:
        raise InputError(f"only 8-bit PGM supported (maxval {maxval})")
    if pos >= n or not data[pos : pos + 1].isspace():
        raise InputError("missing whitespace before PGM raster")
    pos += 1
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise InputError("truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def write_pgm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise DimensionError("PGM pixels must be a 2-D array")
    height, width = pixels.shape
    body = np.clip(pixels, 0, 255).astype(np.uint8).tobytes()
    return b"P5\n%d %d\n255\n" % (width, height) + body


def downsample(pixels: np.ndarray, cols: int = GRID_COLS, rows: int = GRID_ROWS) -> list[list[int]]:
    """Box-filter to ``rows`` x ``cols``; each cell is floor(mean) of the pixels it covers.

    Cell ``(r, c)`` covers source rows ``[r*H//rows, (r+1)*H//rows)`` and
    columns ``[c*W//cols, (c+1)*W//cols)``.
    """
    pixels = np.asarray(pixels, dtype=np.int64)
    height, width = pixels.shape
    if height < rows or width < cols:
        raise DimensionError(f"image {width}x{height} smaller than {cols}x{rows} grid")
    grid = []
    for r in range(rows):
        r0, r1 = r * height // rows, (r + 1) * height // rows
        row = []
        for c in range(cols):
            c0, c1 = c * width // cols, (c + 1) * width // cols
            block = pixels[r0:r1, c0:c1]
            row.append(int(block.sum()) // block.size)
        grid.append(row)
    return grid


def image_hash(pixels: np.ndarray) -> ImageHash64:
    return dhash(downsample(pixels))


def image_hash_from_pgm(data: bytes) -> ImageHash64:
    return image_hash(read_pgm(data))


# --- text hashing ------------------------------------------------------------


@dataclass(frozen=True)
class TextSimHash64:
    bits: int
    shingle_width: int = DEFAULT_SHINGLE_WIDTH

    @property
    def hex(self) -> str:
        return f"{self.bits:016x}"


def simhash_from_hashes(hashes: Iterable[int]) -> int:
    """Per-bit majority vote over 64-bit hashes (ties resolve to 0)."""
    arr = np.fromiter(hashes, dtype=np.uint64)
    if arr.size == 0:
        raise InsufficientText("no shingles to hash")
    shifts = np.arange(63, -1, -1, dtype=np.uint64)
    set_counts = ((arr[:, None] >> shifts) & np.uint64(1)).sum(axis=0, dtype=np.int64)
    votes = 2 * set_counts - arr.size
    bits = 0
    for vote in votes:
        bits = (bits << 1) | int(vote > 0)
    return bits


def simhash(tokens: Sequence[str], shingle_width: int = DEFAULT_SHINGLE_WIDTH) -> TextSimHash64:
    return TextSimHash64(simhash_from_hashes(shingle_hashes(tokens, shingle_width)), shingle_width)


@dataclass(frozen=True)
class MinHashSignature:
    mins: tuple[int, ...]

    @property
    def k(self) -> int:
        return len(self.mins)

    def to_hex(self) -> list[str]:
        return [f"{m:016x}" for m in self.mins]

    @classmethod
    def from_hex(cls, values: Iterable[str]) -> MinHashSignature:
        return cls(tuple(int(v, 16) for v in values))


def _mixer_seeds(k: int) -> np.ndarray:
    return np.array([mixer_seed(i) for i in range(k)], dtype=np.uint64)


def minhash_signature(shingle_set: Iterable[int], k: int = DEFAULT_K) -> MinHashSignature:
    """``mins[i]`` is the minimum of ``mix(i, s)`` over the shingle set."""
    if k < 1:
        raise ValueError("k must be positive")
    values = np.fromiter(set(shingle_set), dtype=np.uint64)
    if values.size == 0:
        raise InsufficientText("empty shingle set")
    mixed = _fmix64_array(values[None, :] ^ _mixer_seeds(k)[:, None])
    return MinHashSignature(tuple(int(v) for v in mixed.min(axis=1)))


def estimate_jaccard(a: MinHashSignature, b: MinHashSignature) -> float:
    if a.k != b.k:
        raise ValueError(f"signature lengths differ ({a.k} vs {b.k})")
    same = sum(1 for x, y in zip(a.mins, b.mins) if x == y)
    return same / a.k


def text_fingerprints(
    tokens: Sequence[str], shingle_width: int = DEFAULT_SHINGLE_WIDTH, k: int = DEFAULT_K
) -> tuple[TextSimHash64, MinHashSignature]:
    hashes = shingle_hashes(tokens, shingle_width)
    return (
        TextSimHash64(simhash_from_hashes(hashes), shingle_width),
        minhash_signature(hashes, k),
    )


# --- Hamming-radius index ----------------------------------------------------


class _Node:
    __slots__ = ("bits", "work_ids", "children")

    def __init__(self, bits: int, work_id: str):
        self.bits = bits
        self.work_ids = [work_id]
        self.children: dict[int, _Node] = {}


class FingerprintIndex:
    """Set of ``(bits, work_id)`` entries answering Hamming-radius queries.

    Entries are kept in a BK-tree keyed by Hamming distance once the index
    reaches ``linear_limit`` entries; smaller indexes are scanned linearly.
    Build once, then query from as many readers as needed.
    """

    def __init__(self, entries: Iterable[tuple[int, str]] = (), linear_limit: int = LINEAR_SCAN_LIMIT):
        self._entries: set[tuple[int, str]] = set()
        self._root: _Node | None = None
        self._linear_limit = linear_limit
        for bits, work_id in entries:
            self.insert(bits, work_id)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[tuple[int, str]]:
        return iter(sorted(self._entries, key=lambda e: (e[1], e[0])))

    def insert(self, bits: int, work_id: str) -> FingerprintIndex:
        entry = (bits & MASK64, work_id)
        if entry in self._entries:
            return self
        self._entries.add(entry)
        if self._root is not None:
            self._tree_add(*entry)
        elif len(self._entries) >= self._linear_limit:
            for e in sorted(self._entries, key=lambda e: (e[1], e[0])):
                self._tree_add(*e)
        return self

    def _tree_add(self, bits: int, work_id: str) -> None:
        if self._root is None:
            self._root = _Node(bits, work_id)
            return
        node = self._root
        while True:
            d = hamming(node.bits, bits)
            if d == 0:
                node.work_ids.append(work_id)
                return
            child = node.children.get(d)
            if child is None:
                node.children[d] = _Node(bits, work_id)
                return
            node = child

    def query_within(self, probe: int, radius: int) -> list[tuple[str, int]]:
        if not 0 <= radius <= 64:
            raise ValueError(f"radius must be in 0..64, got {radius}")
        probe &= MASK64
        if self._root is None:
            found = [(w, d) for b, w in self._entries if (d := hamming(b, probe)) <= radius]
        else:
            found = []
            stack = [self._root]
            while stack:
                node = stack.pop()
                d = hamming(node.bits, probe)
                if d <= radius:
                    found.extend((w, d) for w in node.work_ids)
                lo, hi = d - radius, d + radius
                stack.extend(c for key, c in node.children.items() if lo <= key <= hi)
        return sorted(found, key=lambda wd: (wd[1], wd[0]))


def linear_scan(entries: Iterable[tuple[int, str]], probe: int, radius: int) -> list[tuple[str, int]]:
    found = [(w, hamming(b, probe)) for b, w in set(entries)]
    return sorted(((w, d) for w, d in found if d <= radius), key=lambda wd: (wd[1], wd[0]))


# --- dump format -------------------------------------------------------------


def dump_fingerprints(rows: Iterable[tuple[str, int, str]]) -> str:
    """JSONL lines ``{kind, bits_hex, work_id}`` from ``(kind, bits, work_id)``."""
    lines = [
        json.dumps({"kind": kind, "bits_hex": f"{bits:016x}", "work_id": work_id}, sort_keys=True)
        for kind, bits, work_id in rows
    ]
    return "".join(line + "\n" for line in lines)


def load_fingerprints(text: str) -> list[tuple[str, int, str]]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rows.append((obj["kind"], int(obj["bits_hex"], 16), obj["work_id"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise InputError(f"fingerprint dump line {lineno}: {exc}") from exc
    return rows
