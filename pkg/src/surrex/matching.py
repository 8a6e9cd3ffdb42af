"""Aggregate-data matching of single-arm studies.

Two arms are compared through a weighted mean of normalised covariate
differences. The largest distance seen between the arms of randomised
trials serves as the similarity threshold, and single-arm treatment
studies are paired with single-arm control studies by ascending distance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError, RangeError, ValidationError

__all__ = [
    "CovariateSpec",
    "ArmSummary",
    "MatchResult",
    "DEFAULT_COVARIATES",
    "normalized_difference",
    "distance_total",
    "distance_matrix",
    "derive_threshold",
    "match_studies",
    "read_arms_csv",
    "read_covariate_spec",
    "write_match_report",
    "rct_arm_pairs",
]


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    weight: float
    kind: str = "proportion"  # "proportion" or "bounded"
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.kind not in ("proportion", "bounded"):
            raise ValidationError(f"covariate {self.name}: unknown kind {self.kind!r}")
        if not (self.weight >= 0 and math.isfinite(self.weight)):
            raise ValidationError(f"covariate {self.name}: weight must be non-negative")
        if self.kind == "proportion":
            object.__setattr__(self, "lo", 0.0)
            object.__setattr__(self, "hi", 1.0)
        elif not self.hi > self.lo:
            raise ValidationError(f"covariate {self.name}: need hi > lo")

    @property
    def span(self) -> float:
        return self.hi - self.lo

    def check(self, value: float) -> None:
        if value is None or not math.isfinite(value) or not self.lo <= value <= self.hi:
            raise RangeError(f"covariate {self.name}: value {value} outside [{self.lo}, {self.hi}]")


# treatment line, age, performance score, tumour location, sex
DEFAULT_COVARIATES = (
    CovariateSpec("treatment_line", 2.0, "bounded", 1.0, 3.0),
    CovariateSpec("age", 2.0, "bounded", 18.0, 100.0),
    CovariateSpec("performance_score", 2.0, "bounded", 0.0, 3.0),
    CovariateSpec("colon_fraction", 2.0, "proportion"),
    CovariateSpec("female_fraction", 1.0, "proportion"),
)


@dataclass(frozen=True)
class ArmSummary:
    arm_id: str
    study_id: str
    role: str  # "treatment" or "control"
    values: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ("treatment", "control"):
            raise ValidationError(f"arm {self.arm_id}: role must be treatment or control")


@dataclass
class MatchResult:
    pairs: list[tuple[str, str, float]]
    threshold: float
    candidate_count: int
    treatment_ids: list[str] = field(default_factory=list)
    control_ids: list[str] = field(default_factory=list)
    distances: np.ndarray | None = None
    # True when two candidate entries shared a distance and lexicographic
    # order decided between them
    ties_broken: bool = False

    @property
    def candidates(self) -> list[tuple[str, str, float]]:
        if self.distances is None:
            return []
        out = []
        for i, t in enumerate(self.treatment_ids):
            for j, c in enumerate(self.control_ids):
                if self.distances[i, j] <= self.threshold:
                    out.append((t, c, float(self.distances[i, j])))
        return out


def normalized_difference(spec: CovariateSpec, a: float, b: float) -> float:
    spec.check(a)
    spec.check(b)
    return abs(a - b) / spec.span


def _check_specs(specs: Sequence[CovariateSpec]) -> float:
    total = sum(s.weight for s in specs)
    if not specs or total <= 0:
        raise ValidationError("distance undefined: all covariate weights are zero")
    return total


def _arm_value(arm: ArmSummary, spec: CovariateSpec) -> float:
    try:
        return float(arm.values[spec.name])
    except KeyError:
        raise ValidationError(f"arm {arm.arm_id}: missing covariate {spec.name}") from None


def distance_total(specs: Sequence[CovariateSpec], j: ArmSummary, k: ArmSummary) -> float:
    """Weighted mean of normalised covariate differences between two arms."""
    total = _check_specs(specs)
    acc = 0.0
    for s in specs:
        acc += s.weight * normalized_difference(s, _arm_value(j, s), _arm_value(k, s))
    return acc / total


def distance_matrix(
    specs: Sequence[CovariateSpec], rows: Sequence[ArmSummary], cols: Sequence[ArmSummary]
) -> np.ndarray:
    out = np.empty((len(rows), len(cols)))
    for i, a in enumerate(rows):
        for j, b in enumerate(cols):
            out[i, j] = distance_total(specs, a, b)
    return out


def derive_threshold(
    rct_arm_pairs: Iterable[tuple[ArmSummary, ArmSummary]],
    specs: Sequence[CovariateSpec] = DEFAULT_COVARIATES,
    override: float | None = None,
) -> float:
    """Largest inter-arm distance over randomised-trial arm pairs.

    ``override`` replaces the derived value (the computed maximum is still
    evaluated so that bad input is reported).
    """
    pairs = list(rct_arm_pairs)
    if not pairs:
        raise ValidationError("threshold needs at least one RCT arm pair")
    derived = max(distance_total(specs, a, b) for a, b in pairs)
    if override is not None:
        if not 0.0 <= override <= 1.0:
            raise ValidationError(f"threshold override {override} outside [0,1]")
        return float(override)
    return derived


def match_studies(
    treatment_arms: Sequence[ArmSummary],
    control_arms: Sequence[ArmSummary],
    specs: Sequence[CovariateSpec],
    threshold: float,
) -> MatchResult:
    """Pair treatment arms with control arms by globally ascending distance.

    Entries above ``threshold`` are never paired and each arm is used at
    most once. Equal distances are ordered by (treatment id, control id).
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold {threshold} outside [0,1]")
    d = distance_matrix(specs, treatment_arms, control_arms)
    t_ids = [a.arm_id for a in treatment_arms]
    c_ids = [a.arm_id for a in control_arms]
    cand = [
        (d[i, j], t_ids[i], c_ids[j], i, j)
        for i in range(len(t_ids))
        for j in range(len(c_ids))
        if d[i, j] <= threshold
    ]
    cand.sort()
    dists = [c[0] for c in cand]
    ties = len(set(dists)) < len(dists)
    used_t, used_c, pairs = set(), set(), []
    for dist, t, c, i, j in cand:
        if i in used_t or j in used_c:
            continue
        used_t.add(i)
        used_c.add(j)
        pairs.append((t, c, float(dist)))
    return MatchResult(
        pairs=pairs,
        threshold=float(threshold),
        candidate_count=len(cand),
        treatment_ids=t_ids,
        control_ids=c_ids,
        distances=d,
        ties_broken=ties,
    )


def rct_arm_pairs(arms: Sequence[ArmSummary]) -> tuple[list[tuple[ArmSummary, ArmSummary]], list[ArmSummary]]:
    """Split arms into two-arm studies (treatment, control) and single arms.

    A study id with exactly one treatment and one control arm is a two-arm
    study; a study id with a single arm is a single-arm study.
    """
    by_study: dict[str, list[ArmSummary]] = {}
    for a in arms:
        by_study.setdefault(a.study_id, []).append(a)
    pairs, singles = [], []
    for sid, group in by_study.items():
        if len(group) == 1:
            singles.append(group[0])
            continue
        roles = sorted(a.role for a in group)
        if roles != ["control", "treatment"]:
            raise ValidationError(f"study {sid}: expected one treatment and one control arm")
        t = next(a for a in group if a.role == "treatment")
        c = next(a for a in group if a.role == "control")
        pairs.append((t, c))
    return pairs, singles


def read_covariate_spec(path: str | Path) -> list[CovariateSpec]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"covariate spec not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if isinstance(raw, dict):
        raw = raw.get("covariates", [])
    specs = []
    for item in raw:
        kind = item.get("kind", "proportion")
        if kind in ("bounded-numeric", "numeric"):
            kind = "bounded"
        specs.append(
            CovariateSpec(
                name=item["name"],
                weight=float(item["weight"]),
                kind=kind,
                lo=float(item.get("lo", 0.0)),
                hi=float(item.get("hi", 1.0)),
            )
        )
    _check_specs(specs)
    return specs


def read_arms_csv(path: str | Path, specs: Sequence[CovariateSpec]) -> list[ArmSummary]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"arms file not found: {path}")
    arms = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or [])
        missing = {"arm_id", "study_id", "role"} - cols
        missing |= {s.name for s in specs} - cols
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            values = {}
            for s in specs:
                text = (row[s.name] or "").strip()
                if text == "":
                    raise ValidationError(f"{path}:{lineno}: missing value for covariate {s.name}")
                v = float(text)
                s.check(v)
                values[s.name] = v
            arms.append(ArmSummary(row["arm_id"].strip(), row["study_id"].strip(), row["role"].strip(), values))
    ids = [a.arm_id for a in arms]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"{path}: duplicate arm ids")
    return arms


def write_match_report(result: MatchResult, directory: str | Path) -> list[Path]:
    """Write the distance matrix (wide) and the flagged long-form report."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    final = {(t, c) for t, c, _ in result.pairs}
    wide = directory / "match_matrix.csv"
    with wide.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["treatment_arm"] + result.control_ids)
        for i, t in enumerate(result.treatment_ids):
            w.writerow([t] + [f"{x:.3f}" for x in result.distances[i]])
    long = directory / "match_report.csv"
    with long.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["treatment_arm", "control_arm", "distance", "candidate", "final"])
        for i, t in enumerate(result.treatment_ids):
            for j, c in enumerate(result.control_ids):
                dist = float(result.distances[i, j])
                w.writerow([t, c, repr(dist), int(dist <= result.threshold), int((t, c) in final)])
    meta = directory / "match_summary.json"
    meta.write_text(json.dumps({
        "threshold": result.threshold,
        "candidate_count": result.candidate_count,
        "possible_count": len(result.treatment_ids) * len(result.control_ids),
        "pairs": [{"treatment": t, "control": c, "distance": d} for t, c, d in result.pairs],
        "tie_break": "lexicographic (treatment_id, control_id)",
        "ties_broken": result.ties_broken,
    }, indent=2) + "\n")
    return [wide, long, meta]
