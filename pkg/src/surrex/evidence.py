"""Study records, effect estimates and evidence provenance.

Effects are held on the log hazard ratio scale throughout; conversion from
hazard ratios happens only when reading or writing files.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InputError, InsufficientDataError, ValidationError

__all__ = [
    "EvidenceClass",
    "EffectPair",
    "StudyRecord",
    "EvidenceBase",
    "build_evidence_base",
    "validate_effect_pair",
    "parse_classes",
    "read_studies_csv",
    "write_studies_csv",
    "STUDY_COLUMNS",
    "MIN_STUDIES",
]

MIN_STUDIES = 3

STUDY_COLUMNS = ["study_id", "label", "class", "y1", "se1", "y2", "se2", "rho_w", "source", "arms"]


class EvidenceClass(str, enum.Enum):
    RCT = "RCT"
    CRWE = "cRWE"
    SRWE = "sRWE"

    @classmethod
    def parse(cls, value: "str | EvidenceClass") -> "EvidenceClass":
        if isinstance(value, EvidenceClass):
            return value
        key = str(value).strip()
        aliases = {
            "rct": cls.RCT,
            "crwe": cls.CRWE,
            "srwe": cls.SRWE,
            "matched-srwe": cls.SRWE,
            "matched_srwe": cls.SRWE,
        }
        try:
            return aliases[key.lower()]
        except KeyError:
            raise ValidationError(f"unknown evidence class {value!r} (expected RCT, cRWE or sRWE)") from None


ALL_CLASSES = frozenset(EvidenceClass)


def parse_classes(values: Iterable[str | EvidenceClass] | str) -> frozenset[EvidenceClass]:
    """Parse a class filter such as ``"RCT,cRWE"`` or ``["RCT"]``."""
    if isinstance(values, str):
        values = [v for v in values.replace("+", ",").split(",") if v.strip()]
    out = frozenset(EvidenceClass.parse(v) for v in values)
    if not out:
        raise ValidationError("empty evidence-class filter")
    return out


@dataclass(frozen=True)
class EffectPair:
    """Treatment effects (logHR) on the surrogate and the final outcome.

    ``rho_w`` is the within-study correlation; ``None`` means the model
    estimates it.
    """

    y1: float
    se1: float
    y2: float
    se2: float
    rho_w: float | None = None


def validate_effect_pair(e: EffectPair) -> list[str]:
    """Return every violated invariant of ``e`` (empty list means valid)."""
    problems = []
    for name in ("y1", "y2"):
        v = getattr(e, name)
        if v is None or not math.isfinite(v):
            problems.append(f"{name} must be finite")
    for name in ("se1", "se2"):
        v = getattr(e, name)
        if v is None or not math.isfinite(v) or v <= 0:
            problems.append(f"{name} must be positive")
    if e.rho_w is not None:
        if not math.isfinite(e.rho_w) or not 0.0 <= e.rho_w <= 1.0:
            problems.append("rho_w outside [0,1]")
    return problems


@dataclass(frozen=True)
class StudyRecord:
    study_id: str
    label: str
    evidence: EvidenceClass
    effects: EffectPair
    source: str = "reported"
    # treatment and control arm ids of a matched single-arm pair
    arms: tuple[str, str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "evidence", EvidenceClass.parse(self.evidence))
        if self.evidence is EvidenceClass.SRWE and (self.arms is None or len(self.arms) != 2):
            raise ValidationError(
                f"study {self.study_id}: matched sRWE records must name their two source arms"
            )


@dataclass(frozen=True)
class EvidenceBase:
    studies: tuple[StudyRecord, ...]
    classes: frozenset[EvidenceClass] = field(default=ALL_CLASSES)

    def __len__(self) -> int:
        return len(self.studies)

    def __iter__(self):
        return iter(self.studies)

    @property
    def ids(self) -> list[str]:
        return [s.study_id for s in self.studies]

    def get(self, study_id: str) -> StudyRecord:
        for s in self.studies:
            if s.study_id == study_id:
                return s
        raise KeyError(study_id)

    def filter(self, classes: Iterable[str | EvidenceClass]) -> "EvidenceBase":
        return build_evidence_base(self.studies, classes)

    def counts(self) -> dict[str, int]:
        out = {c.value: 0 for c in EvidenceClass}
        for s in self.studies:
            out[s.evidence.value] += 1
        return out

    def require_fittable(self) -> None:
        if len(self.studies) < MIN_STUDIES:
            raise InsufficientDataError(
                f"at least {MIN_STUDIES} studies are needed to fit a surrogacy model, got {len(self.studies)}"
            )
        for s in self.studies:
            problems = validate_effect_pair(s.effects)
            if problems:
                raise ValidationError(f"study {s.study_id}: " + "; ".join(problems))


def build_evidence_base(
    records: Sequence[StudyRecord], classes: Iterable[str | EvidenceClass] | None = None
) -> EvidenceBase:
    """Select the records whose evidence class is in ``classes``, keeping order."""
    if not records:
        raise ValidationError("no study records supplied")
    seen = set()
    for r in records:
        if r.study_id in seen:
            raise ValidationError(f"duplicate study id {r.study_id!r}")
        seen.add(r.study_id)
    wanted = ALL_CLASSES if classes is None else parse_classes(classes)
    kept = tuple(r for r in records if r.evidence in wanted)
    if not kept:
        raise ValidationError("no studies after filtering")
    return EvidenceBase(kept, frozenset(wanted))


def _float_or_none(text: str) -> float | None:
    text = (text or "").strip()
    if text == "" or text.lower() in ("na", "nan", "none"):
        return None
    return float(text)


def read_studies_csv(path: str | Path, scale: str = "log") -> list[StudyRecord]:
    """Read the study CSV.

    ``scale="hr"`` means y1/y2 are hazard ratios and are log-transformed on
    entry; standard errors are always on the log scale.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"studies file not found: {path}")
    records = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"study_id", "class", "y1", "se1", "y2", "se2"} - set(reader.fieldnames or [])
        if missing:
            raise ValidationError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                y1 = float(row["y1"])
                y2 = float(row["y2"])
                if scale == "hr":
                    y1, y2 = math.log(y1), math.log(y2)
                effects = EffectPair(
                    y1=y1,
                    se1=float(row["se1"]),
                    y2=y2,
                    se2=float(row["se2"]),
                    rho_w=_float_or_none(row.get("rho_w", "")),
                )
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            problems = validate_effect_pair(effects)
            if problems:
                raise ValidationError(f"{path}:{lineno} ({row['study_id']}): " + "; ".join(problems))
            arms_text = (row.get("arms") or "").strip()
            arms = tuple(a.strip() for a in arms_text.split(";")) if arms_text else None
            records.append(
                StudyRecord(
                    study_id=row["study_id"].strip(),
                    label=(row.get("label") or row["study_id"]).strip(),
                    evidence=EvidenceClass.parse(row["class"]),
                    effects=effects,
                    source=(row.get("source") or "reported").strip() or "reported",
                    arms=arms,
                )
            )
    return records


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_studies_csv(path: str | Path, records: Iterable[StudyRecord]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for r in records:
            e = r.effects
            w.writerow([
                r.study_id, r.label, r.evidence.value,
                _fmt(e.y1), _fmt(e.se1), _fmt(e.y2), _fmt(e.se2), _fmt(e.rho_w),
                r.source, ";".join(r.arms) if r.arms else "",
            ])
