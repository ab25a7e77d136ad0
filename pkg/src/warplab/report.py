"""Structured pass/fail records."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any


def _jsonable(x):
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item"):
        return _jsonable(x.item())
    return x


@dataclass
class ClaimRecord:
    claim: str
    measured: Any
    bound: Any
    tolerance: float
    passed: bool
    detail: str = ""

    def to_dict(self):
        return _jsonable(
            {
                "claim": self.claim,
                "measured": self.measured,
                "bound": self.bound,
                "tolerance": self.tolerance,
                "passed": bool(self.passed),
                "detail": self.detail,
            }
        )


@dataclass
class VerificationReport:
    records: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, claim, measured, bound, tolerance, passed, detail=""):
        rec = ClaimRecord(claim, measured, bound, tolerance, bool(passed), detail)
        self.records.append(rec)
        return rec

    def extend(self, other: "VerificationReport", prefix: str = ""):
        for r in other.records:
            self.records.append(ClaimRecord(prefix + r.claim, r.measured, r.bound, r.tolerance, r.passed, r.detail))

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def failures(self):
        return [r for r in self.records if not r.passed]

    def __getitem__(self, claim):
        for r in self.records:
            if r.claim == claim:
                return r
        raise KeyError(claim)

    def to_dict(self):
        return {
            "status": "pass" if self.passed else "fail",
            "records": [r.to_dict() for r in self.records],
            "provenance": _jsonable(self.provenance),
        }
