"""Surrogacy criteria evaluated from posterior summaries."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

from ..errors import ValidationError
from ..mcmc.diagnostics import PosteriorSummary

__all__ = ["SurrogacyVerdict", "evaluate_surrogacy"]


@dataclass(frozen=True)
class SurrogacyVerdict:
    """Criteria of a perfect trial-level surrogate, plus the correlation rule.

    ``overall`` is "pass" when the intercept CrI contains zero, the slope
    CrI excludes zero and the conditional variance is small; "fail" when
    the slope CrI contains zero (no association); otherwise
    "inconclusive". ``iqwig_pass`` is None for models without a
    correlation parameter.
    """

    intercept_zero: bool
    slope_nonzero: bool
    cond_var_small: bool
    iqwig_pass: bool | None
    overall: str
    cond_var_bound: float
    iqwig_bound: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_surrogacy(summaries: Mapping[str, PosteriorSummary], cond_var_bound: float = 0.05,
                       iqwig_bound: float = 0.85) -> SurrogacyVerdict:
    missing = [n for n in ("lambda0", "lambda1", "psi2_sq") if n not in summaries]
    if missing:
        raise ValidationError(f"cannot evaluate surrogacy: missing summaries for {missing}")
    lam0, lam1, psi = summaries["lambda0"], summaries["lambda1"], summaries["psi2_sq"]
    intercept_zero = lam0.cri_low <= 0.0 <= lam0.cri_high
    slope_nonzero = not (lam1.cri_low <= 0.0 <= lam1.cri_high)
    cond_var_small = psi.median < cond_var_bound
    iqwig = None
    if "rho" in summaries:
        rho = summaries["rho"]
        iqwig = rho.cri_low >= iqwig_bound or rho.cri_high <= -iqwig_bound
    if intercept_zero and slope_nonzero and cond_var_small:
        overall = "pass"
    elif not slope_nonzero:
        overall = "fail"
    else:
        overall = "inconclusive"
    return SurrogacyVerdict(
        intercept_zero=bool(intercept_zero),
        slope_nonzero=bool(slope_nonzero),
        cond_var_small=bool(cond_var_small),
        iqwig_pass=None if iqwig is None else bool(iqwig),
        overall=overall,
        cond_var_bound=cond_var_bound,
        iqwig_bound=iqwig_bound,
    )
