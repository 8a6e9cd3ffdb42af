"""Synthetic evidence bases drawn from the surrogacy model family.

Used for simulation checks and for the demonstration fixture; nothing in
the fitting code depends on this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evidence import EffectPair, EvidenceClass, StudyRecord

__all__ = ["Truth", "generate_studies", "write_demo_fixture", "DH_TRUTH", "PNF_TRUTH"]


@dataclass(frozen=True)
class Truth:
    """Generative parameters.

    delta1 is drawn as N(eta1, tau1²); delta2 | delta1 as
    N(lambda0 + lambda1 delta1, psi2_sq). For a product-normal truth give
    ``rho`` and ``tau2`` and leave lambda1/psi2_sq to :meth:`pnf`.
    """

    lambda0: float = 0.0
    lambda1: float = 0.7
    psi2_sq: float = 0.01
    eta1: float = -0.36
    tau1: float = 0.27

    @classmethod
    def pnf(cls, tau1: float, tau2: float, rho: float, lambda0: float = 0.0, eta1: float = -0.36) -> "Truth":
        lam1 = rho * tau2 / tau1
        return cls(lambda0, lam1, tau2 ** 2 - lam1 ** 2 * tau1 ** 2, eta1, tau1)

    @property
    def tau2(self) -> float:
        return math.sqrt(self.psi2_sq + self.lambda1 ** 2 * self.tau1 ** 2)

    @property
    def rho(self) -> float:
        return self.lambda1 * self.tau1 / self.tau2


DH_TRUTH = Truth()
PNF_TRUTH = Truth.pnf(0.27, 0.21, 0.75)


def generate_studies(
    n: int,
    truth: Truth = DH_TRUTH,
    seed: int = 0,
    se_range: tuple[float, float] = (0.05, 0.15),
    rho_w: float | None = 0.5,
    evidence: EvidenceClass | str = EvidenceClass.RCT,
    prefix: str = "S",
    bias: tuple[float, float] = (0.0, 0.0),
    se2_scale: float = 1.0,
) -> list[StudyRecord]:
    """Draw ``n`` studies with true effects and correlated estimation errors.

    ``rho_w`` is both the generating within-study correlation and the value
    written to the records; pass None to generate with 0.5 but leave it to
    be estimated. ``bias`` is added to (y1, y2).
    """
    rng = np.random.default_rng(seed)
    evidence = EvidenceClass.parse(evidence)
    delta1 = rng.normal(truth.eta1, truth.tau1, n)
    delta2 = truth.lambda0 + truth.lambda1 * delta1 + rng.normal(0.0, math.sqrt(truth.psi2_sq), n)
    s1 = rng.uniform(*se_range, n)
    s2 = rng.uniform(*se_range, n) * se2_scale
    r = 0.5 if rho_w is None else rho_w
    z1 = rng.standard_normal(n)
    z2 = r * z1 + math.sqrt(1.0 - r ** 2) * rng.standard_normal(n)
    y1 = delta1 + bias[0] + s1 * z1
    y2 = delta2 + bias[1] + s2 * z2
    out = []
    for i in range(n):
        sid = f"{prefix}{i + 1:02d}"
        arms = (f"{sid}-T", f"{sid}-C") if evidence is EvidenceClass.SRWE else None
        out.append(StudyRecord(
            study_id=sid,
            label=sid,
            evidence=evidence,
            effects=EffectPair(float(y1[i]), float(s1[i]), float(y2[i]), float(s2[i]), rho_w),
            source="synthetic",
            arms=arms,
        ))
    return out


# -- demonstration fixture -----------------------------------------------------

_RCT_ARM = {"treatment_line": 1.0, "age": 62.0, "performance_score": 0.5, "colon_fraction": 0.6,
            "female_fraction": 0.4}


def _simulate_km(rng: np.random.Generator, n: int, hazard: float, horizon: float = 24.0,
                 grid: int = 16):
    """Digitised KM points on a time grid, event total and risk table."""
    t_event = rng.exponential(1.0 / hazard, n)
    t_cens = np.minimum(rng.exponential(1.0 / 0.02, n), horizon)
    time = np.minimum(t_event, t_cens)
    event = t_event <= t_cens
    order = np.argsort(time, kind="stable")
    time, event = time[order], event[order]
    at_risk = n - np.arange(n)
    factors = np.where(event, 1.0 - 1.0 / at_risk, 1.0)
    surv = np.cumprod(factors)
    points = [(0.0, 1.0)]
    for t in np.linspace(horizon / grid, horizon, grid):
        idx = np.searchsorted(time, t, side="right") - 1
        s = 1.0 if idx < 0 else float(surv[idx])
        points.append((round(float(t), 6), s))
    risk = [(float(t), int(np.sum(time >= t))) for t in np.arange(0.0, horizon + 1e-9, 6.0)]
    risk[0] = (0.0, n)
    return points, int(event.sum()), risk


def write_demo_fixture(directory, seed: int = 0, iterations: int = 3000, burn_in: int = 1000,
                       cv_iterations: int = 2000, cv_burn_in: int = 700) -> Path:
    """Write a complete pipeline input set and return the config path.

    Seven RCTs and four cRWE studies are reported directly; eight single
    arms come with digitised PFS/OS curves, three treatment/control pairs
    of which fall under the RCT-derived distance threshold.
    """
    import csv
    import json

    from .evidence import write_studies_csv

    d = Path(directory)
    (d / "curves").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rct = generate_studies(7, DH_TRUTH, seed=seed + 1, se_range=(0.08, 0.2), rho_w=None, prefix="RCT")
    crwe = generate_studies(4, DH_TRUTH, seed=seed + 2, se_range=(0.08, 0.2), rho_w=None,
                            evidence=EvidenceClass.CRWE, prefix="CRWE")
    write_studies_csv(d / "studies.csv", rct + crwe)

    names = list(_RCT_ARM)
    rows = []
    for i in range(7):
        base = dict(_RCT_ARM, age=55.0 + 2 * i)
        other = dict(base, age=base["age"] + 1.5, female_fraction=base["female_fraction"] + 0.03)
        rows.append([f"RCT{i + 1:02d}-T", f"RCT{i + 1:02d}", "treatment"] + [base[k] for k in names])
        rows.append([f"RCT{i + 1:02d}-C", f"RCT{i + 1:02d}", "control"] + [other[k] for k in names])
    singles = {}
    for j in range(4):
        profile = dict(_RCT_ARM, age=58.0 + 6 * j, colon_fraction=0.3 + 0.15 * j,
                       treatment_line=1.0 + (j % 3))
        t_vals = profile
        # the fourth control arm is deliberately far from every treatment arm
        shift = 0.01 if j < 3 else 0.5
        c_vals = dict(profile, age=min(profile["age"] + 1.0, 100.0),
                      colon_fraction=min(profile["colon_fraction"] + shift, 1.0),
                      performance_score=1.5 if j == 3 else profile["performance_score"])
        for role, vals in (("treatment", t_vals), ("control", c_vals)):
            arm_id = f"SA{j + 1}{role[0].upper()}"
            rows.append([arm_id, arm_id, role] + [vals[k] for k in names])
            singles[arm_id] = role
    with (d / "arms.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm_id", "study_id", "role"] + names)
        w.writerows(rows)

    curves = {}
    for k, (arm_id, role) in enumerate(sorted(singles.items())):
        curves[arm_id] = {}
        for ep, base_h, hr in (("pfs", 0.12, 0.65), ("os", 0.06, 0.8)):
            n = int(rng.integers(120, 200))
            h = base_h * (hr if role == "treatment" else 1.0)
            pts, events, risk = _simulate_km(rng, n, h)
            cpath = d / "curves" / f"{arm_id}_{ep}.csv"
            with cpath.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["time", "survival"])
                w.writerows([[repr(t), repr(s)] for t, s in pts])
            spec = {"curve": f"curves/{cpath.name}", "n_start": n, "total_events": events}
            if k % 2 == 0:
                rpath = d / "curves" / f"{arm_id}_{ep}_risk.csv"
                with rpath.open("w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(["time", "n_at_risk"])
                    w.writerows([[repr(t), r] for t, r in risk])
                spec["risk"] = f"curves/{rpath.name}"
            curves[arm_id][ep] = spec

    config = {
        "description": "synthetic demonstration fixture",
        "studies": "studies.csv",
        "arms": "arms.csv",
        "threshold": 0.035,
        "curves": curves,
        "scenarios": ["RCT", "RCT,cRWE", "RCT,cRWE,sRWE"],
        "models": ["dh", "pnf", "pnf-bias"],
        "cv_models": ["dh"],
        "seed": 20220301,
        "sampler": {"iterations": iterations, "burn_in": burn_in, "chains": 4},
        "cv_sampler": {"iterations": cv_iterations, "burn_in": cv_burn_in, "chains": 4},
        "out": "results",
    }
    path = d / "config.json"
    path.write_text(json.dumps(config, indent=2) + "\n")
    return path
