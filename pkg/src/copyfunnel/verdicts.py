from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Stage(str, Enum):
    GATE = "GATE"
    FINGERPRINT = "FINGERPRINT"
    ENTITY = "ENTITY"
    CLASSIFIER = "CLASSIFIER"
    XREF = "XREF"


STAGE_ORDER = tuple(Stage)


class Outcome(str, Enum):
    ADMIT = "ADMIT"
    QUARANTINE = "QUARANTINE"
    REJECT = "REJECT"

    @property
    def severity(self) -> int:
        return {"ADMIT": 0, "QUARANTINE": 1, "REJECT": 2}[self.value]


GATE_REJECT_REASONS = frozenset({"ROBOTS_DISALLOW", "TDM_RESERVED", "UNPAID"})


@dataclass(frozen=True)
class StageVerdict:
    stage: Stage
    verdict: Outcome
    reason: str
    evidence: str = ""

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "verdict", Outcome(self.verdict))
        if self.stage is Stage.ENTITY and self.verdict is Outcome.REJECT:
            raise ValueError("entity stage can only flag, never reject")
        if self.stage is Stage.GATE and self.verdict is Outcome.REJECT and self.reason not in GATE_REJECT_REASONS:
            raise ValueError(f"gate rejection reason {self.reason!r} not allowed")

    def as_dict(self) -> dict:
        return {
            "stage": self.stage.value,
            "verdict": self.verdict.value,
            "reason": self.reason,
            "evidence": self.evidence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> StageVerdict:
        return cls(d["stage"], d["verdict"], d["reason"], d.get("evidence", ""))


def combine(verdicts: list[StageVerdict]) -> Outcome:
    """Final verdict: any REJECT wins; otherwise QUARANTINE from any stage but ENTITY.

    Entity quarantine only escalates scrutiny for later stages within the run.
    """
    if any(v.verdict is Outcome.REJECT for v in verdicts):
        return Outcome.REJECT
    if any(v.verdict is Outcome.QUARANTINE and v.stage is not Stage.ENTITY for v in verdicts):
        return Outcome.QUARANTINE
    return Outcome.ADMIT
