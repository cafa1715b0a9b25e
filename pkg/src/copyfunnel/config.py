from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

from .errors import InputError
from .policy_gate import Purpose


@dataclass(frozen=True)
class FunnelConfig:
    image_radius: int = 10
    simhash_radius: int = 3
    # used once an earlier stage has quarantined the document
    quarantine_simhash_radius: int = 4
    minhash_jaccard_threshold: float = 0.6
    classifier_threshold: float = 0.0
    entity_flag_threshold: int = 2
    purpose: Purpose = Purpose.TRAINING
    agent_id: str = "copyfunnel"
    shingle_width: int = 5
    minhash_k: int = 128
    # PAY decisions above this price are rejected as UNPAID; None means no cap
    max_price_micro_units: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "purpose", Purpose(self.purpose))
        for name in ("image_radius", "simhash_radius", "quarantine_simhash_radius"):
            value = getattr(self, name)
            if not isinstance(value, int) or not 0 <= value <= 64:
                raise InputError(f"{name} must be an integer in 0..64")
        if self.quarantine_simhash_radius < self.simhash_radius:
            raise InputError("quarantine_simhash_radius must be >= simhash_radius")
        for name in ("minhash_jaccard_threshold", "classifier_threshold"):
            if not math.isfinite(getattr(self, name)):
                raise InputError(f"{name} must be finite")
        if self.entity_flag_threshold < 1:
            raise InputError("entity_flag_threshold must be >= 1")
        if self.shingle_width < 1 or self.minhash_k < 1:
            raise InputError("shingle_width and minhash_k must be positive")
        if not self.agent_id:
            raise InputError("agent_id must be non-empty")
        if self.max_price_micro_units is not None and self.max_price_micro_units < 0:
            raise InputError("max_price_micro_units must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["purpose"] = self.purpose.value
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FunnelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> FunnelConfig:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InputError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def override(self, **changes: Any) -> FunnelConfig:
        changes = {k: v for k, v in changes.items() if v is not None}
        try:
            return replace(self, **changes)
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad config: {exc}") from exc
