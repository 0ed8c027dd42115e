"""Report containers shared by the verification modules."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from ._stats import Estimate


class Kind(str, enum.Enum):
    UBOUND = "UBOUND"
    CHEEGER = "CHEEGER"
    L1PHI = "L1PHI"
    LSQ = "LSQ"
    IFI2 = "IFI2"
    TIGHT_LEDOUX = "TIGHT_LEDOUX"
    EXP_INT = "EXP_INT"
    SOBOLEV_BASELINE = "SOBOLEV_BASELINE"
    POINCARE_BALL = "POINCARE_BALL"
    DISTANCE_CONDITIONS = "DISTANCE_CONDITIONS"
    ISOPERIMETRY = "ISOPERIMETRY"
    COAREA = "COAREA"
    HEAT_GRADIENT = "HEAT_GRADIENT"
    GIBBS_L1PHI = "GIBBS_L1PHI"
    GIBBS_IFI2 = "GIBBS_IFI2"
    GIBBS_CONTRACTION = "GIBBS_CONTRACTION"


class Status(str, enum.Enum):
    PASS = "pass"
    VIOLATIONS = "violations"
    INCONCLUSIVE = "inconclusive"
    REFUSED = "refused"


def _num(v):
    if isinstance(v, Estimate):
        return {"value": _num(v.value), "se": _num(v.se)}
    if isinstance(v, float):
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, dict):
        return {k: _num(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    if hasattr(v, "item"):
        return _num(v.item())
    return v


@dataclass
class FunctionResult:
    id: str
    lhs: Estimate
    rhs: Dict[str, Estimate] = field(default_factory=dict)
    ratio: Optional[Estimate] = None
    note: str = ""

    def to_dict(self) -> dict:
        out = {"id": self.id, "lhs": _num(self.lhs), "rhs": _num(self.rhs)}
        if self.ratio is not None:
            out["ratio"] = _num(self.ratio)
        if self.note:
            out["note"] = self.note
        return out


@dataclass
class InequalityReport:
    """Outcome of one inequality check over a finite function corpus.

    Fitted constants are the smallest values consistent with this corpus
    and sample; an empty violation list means the check passed at this
    corpus and sample size, nothing more.
    """

    kind: Kind
    per_function: List[FunctionResult] = field(default_factory=list)
    fitted_constants: Dict[str, Estimate] = field(default_factory=dict)
    violations: List[str] = field(default_factory=list)
    excluded: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    corpus_id: str = ""
    n_eff: float = 0.0
    status: Status = Status.PASS
    details: Dict[str, Any] = field(default_factory=dict)

    def constant(self, name: str) -> Estimate:
        return self.fitted_constants[name]

    def finalize(self) -> "InequalityReport":
        if self.status not in (Status.REFUSED, Status.INCONCLUSIVE):
            self.status = Status.VIOLATIONS if self.violations else Status.PASS
        return self

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "status": self.status.value,
            "corpus_id": self.corpus_id,
            "n_eff": _num(float(self.n_eff)),
            "fitted_constants": {k: _num(v) for k, v in sorted(self.fitted_constants.items())},
            "per_function": [r.to_dict() for r in self.per_function],
            "violations": list(self.violations),
            "excluded": list(self.excluded),
            "warnings": list(self.warnings),
            "details": _num(self.details),
        }


to_jsonable = _num
