"""Take-one-out cross-validation of surrogate-based predictions.

Each fold refits the model with one study's final-outcome effect treated
as missing (its surrogate effect stays in) and predicts that effect.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InsufficientDataError, SurrexError, ValidationError
from .evidence import EvidenceBase
from .mcmc.sampler import SamplerConfig
from .surrogacy.config import ModelConfig
from .surrogacy.models import Z95, fit_model, predict_final_effect

__all__ = [
    "CVRecord",
    "CVSummary",
    "FoldError",
    "take_one_out",
    "compare_cv",
    "write_cv_csv",
    "write_forest_csv",
    "write_comparison_csv",
    "CV_FIELDS",
]


CV_FIELDS = ["study_id", "observed_y2", "obs_lo", "obs_hi", "pred_mean", "pred_lo", "pred_hi",
             "abs_discrepancy", "width_ratio", "covered"]


class FoldError(SurrexError):
    """A fold's fit failed; carries the held-out study id."""

    def __init__(self, study_id: str, cause: Exception):
        super().__init__(f"cross-validation fold {study_id!r} failed: {cause}")
        self.study_id = study_id
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


@dataclass(frozen=True)
class CVRecord:
    study_id: str
    observed_y2: float
    observed_ci: tuple[float, float]
    predicted_mean: float
    predicted_interval: tuple[float, float]

    @property
    def abs_discrepancy(self) -> float:
        return abs(self.observed_y2 - self.predicted_mean)

    @property
    def width_ratio(self) -> float:
        lo, hi = self.predicted_interval
        olo, ohi = self.observed_ci
        return (hi - lo) / (ohi - olo)

    @property
    def covered(self) -> bool:
        lo, hi = self.predicted_interval
        return lo <= self.observed_y2 <= hi

    def row(self) -> dict[str, object]:
        return {
            "study_id": self.study_id,
            "observed_y2": self.observed_y2,
            "obs_lo": self.observed_ci[0],
            "obs_hi": self.observed_ci[1],
            "pred_mean": self.predicted_mean,
            "pred_lo": self.predicted_interval[0],
            "pred_hi": self.predicted_interval[1],
            "abs_discrepancy": self.abs_discrepancy,
            "width_ratio": self.width_ratio,
            "covered": int(self.covered),
        }


@dataclass
class CVSummary:
    records: list[CVRecord]
    label: str = ""
    meta: dict = field(default_factory=dict)

    def _stat(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def discrepancy_median(self) -> float:
        return float(np.median(self._stat("abs_discrepancy")))

    @property
    def discrepancy_range(self) -> tuple[float, float]:
        d = self._stat("abs_discrepancy")
        return float(d.min()), float(d.max())

    @property
    def width_ratio_median(self) -> float:
        return float(np.median(self._stat("width_ratio")))

    @property
    def width_ratio_range(self) -> tuple[float, float]:
        w = self._stat("width_ratio")
        return float(w.min()), float(w.max())

    @property
    def coverage_fraction(self) -> float:
        return float(np.mean([r.covered for r in self.records]))

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "n_folds": len(self.records),
            "discrepancy_median": self.discrepancy_median,
            "discrepancy_range": list(self.discrepancy_range),
            "width_ratio_median": self.width_ratio_median,
            "width_ratio_range": list(self.width_ratio_range),
            "coverage_fraction": self.coverage_fraction,
            **self.meta,
        }


def take_one_out(base: EvidenceBase, model: ModelConfig | None = None, sampler: SamplerConfig | None = None,
                 label: str = "", stream: Sequence[int] = (),
                 progress: Callable[[int, str], None] | None = None) -> CVSummary:
    """Run one fold per study, in study order.

    Fold ``i`` uses the random stream ``stream + (i,)``, so re-running
    with the same seed reproduces every record exactly.
    """
    model = model or ModelConfig()
    sampler = sampler or SamplerConfig.cv_default()
    if len(base) < 4:
        raise InsufficientDataError(f"cross-validation needs at least 4 studies, got {len(base)}")
    base.require_fittable()
    records = []
    for i, study in enumerate(base.studies):
        sid = study.study_id
        if progress is not None:
            progress(i, sid)
        try:
            fit = fit_model(base, model, sampler, tuple(stream) + (i,), hold_out=[sid])
            pred = predict_final_effect(fit, study_id=sid)
        except SurrexError as exc:
            raise FoldError(sid, exc) from exc
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            raise FoldError(sid, exc) from exc
        e = study.effects
        records.append(CVRecord(
            study_id=sid,
            observed_y2=e.y2,
            observed_ci=(e.y2 - Z95 * e.se2, e.y2 + Z95 * e.se2),
            predicted_mean=pred.mean,
            predicted_interval=(pred.lo, pred.hi),
        ))
    meta = {"model": model.model, "fold_sampler": sampler.to_dict()}
    return CVSummary(records, label, meta)


def compare_cv(summaries: Sequence[CVSummary], labels: Sequence[str] | None = None) -> list[dict]:
    """Side-by-side medians and ranges, with deltas from the first summary."""
    if len(summaries) < 2:
        raise ValidationError("comparison needs at least two CV summaries")
    labels = list(labels) if labels is not None else [s.label or f"scenario{i + 1}" for i, s in enumerate(summaries)]
    if len(labels) != len(summaries):
        raise ValidationError("one label per summary is required")
    ref = summaries[0]
    rows = []
    for lab, s in zip(labels, summaries):
        rows.append({
            "scenario": lab,
            "n_folds": len(s.records),
            "discrepancy_median": s.discrepancy_median,
            "discrepancy_min": s.discrepancy_range[0],
            "discrepancy_max": s.discrepancy_range[1],
            "width_ratio_median": s.width_ratio_median,
            "width_ratio_min": s.width_ratio_range[0],
            "width_ratio_max": s.width_ratio_range[1],
            "coverage_fraction": s.coverage_fraction,
            "delta_discrepancy_median": s.discrepancy_median - ref.discrepancy_median,
            "delta_width_ratio_median": s.width_ratio_median - ref.width_ratio_median,
        })
    return rows


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_cv_csv(path: str | Path, summary: CVSummary) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CV_FIELDS)
        for r in summary.records:
            row = r.row()
            w.writerow([_fmt(row[k]) for k in CV_FIELDS])


def write_forest_csv(path: str | Path, summary: CVSummary) -> None:
    """Observed and predicted intervals per study, two rows per study."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["study_id", "kind", "estimate", "lo", "hi"])
        for r in summary.records:
            w.writerow([r.study_id, "observed", _fmt(r.observed_y2), _fmt(r.observed_ci[0]), _fmt(r.observed_ci[1])])
            w.writerow([r.study_id, "predicted", _fmt(r.predicted_mean),
                        _fmt(r.predicted_interval[0]), _fmt(r.predicted_interval[1])])


def write_comparison_csv(path: str | Path, rows: list[dict]) -> None:
    if not rows:
        return
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for row in rows:
            w.writerow([_fmt(v) for v in row.values()])
