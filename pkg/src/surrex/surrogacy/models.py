"""Fitting the surrogacy models and reading results off their posteriors."""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import ConfigurationError, InsufficientDataError, ValidationError
from ..evidence import MIN_STUDIES, EvidenceBase, EvidenceClass
from ..mcmc.diagnostics import ConvergenceReport, PosteriorSummary, check_convergence, summarize
from ..mcmc.sampler import PosteriorSample, SamplerConfig, run_chains
from .config import ModelConfig
from .kernel import CollapsedSurrogacyModel, SurrogacyData
from .verdict import SurrogacyVerdict, evaluate_surrogacy

__all__ = [
    "SurrogacyFit",
    "Prediction",
    "fit_model",
    "fit_dh",
    "fit_pnf",
    "predict_final_effect",
    "build_data",
    "write_parameter_csv",
    "stream_key",
]

_GROUP = {EvidenceClass.RCT: 0, EvidenceClass.CRWE: 1, EvidenceClass.SRWE: 2}
Z95 = 1.959963984540054

# row order of the summary tables
DH_ROWS = ("lambda0", "lambda1", "psi2_sq")
PNF_ROWS = ("d1", "d2", "mean_delta2", "rho", "tau1", "tau2", "lambda0", "lambda1", "psi2_sq", "r_squared")


def stream_key(label: str) -> int:
    """Stable 32-bit stream identifier for a scenario or model label."""
    return zlib.crc32(label.encode("utf-8"))


def build_data(base: EvidenceBase, hold_out: Iterable[str] = ()) -> SurrogacyData:
    hold = set(hold_out)
    unknown = hold - set(base.ids)
    if unknown:
        raise ValidationError(f"held-out studies not in evidence base: {sorted(unknown)}")
    studies = base.studies
    e = [s.effects for s in studies]
    return SurrogacyData(
        ids=tuple(s.study_id for s in studies),
        y1=np.array([x.y1 for x in e], dtype=float),
        s1=np.array([x.se1 for x in e], dtype=float),
        y2=np.array([x.y2 for x in e], dtype=float),
        s2=np.array([x.se2 for x in e], dtype=float),
        rho_w=np.array([np.nan if x.rho_w is None else x.rho_w for x in e], dtype=float),
        group=np.array([_GROUP[s.evidence] for s in studies]),
        observed2=np.array([s.study_id not in hold for s in studies]),
    )


@dataclass(frozen=True)
class Prediction:
    """Predicted final-outcome log hazard ratio for one study."""

    mean: float
    sd: float
    lo: float
    hi: float
    var_delta2: float
    se2: float

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass
class SurrogacyFit:
    """Posterior of one surrogacy model fitted to one evidence base."""

    config: ModelConfig
    kind: str
    data: SurrogacyData
    sample: PosteriorSample
    linear: list[str]
    bias_terms: tuple[str, ...] = ()
    warnings: list[str] = field(default_factory=list)

    @property
    def model(self) -> str:
        return self.config.model

    @property
    def study_ids(self) -> tuple[str, ...]:
        return self.data.ids

    def draws(self, name: str) -> np.ndarray:
        """Draws of a scalar quantity, shape (chains, draws).

        Per-study quantities are addressed as ``"delta1[ID]"``.
        """
        if "[" in name:
            base, sid = name[:-1].split("[", 1)
            arr = self.sample[base]
            if base == "rho_w":
                idx = list(self.data.free_rho).index(self.data.ids.index(sid))
            else:
                idx = self.data.ids.index(sid)
            return arr[:, :, idx]
        return self.sample[name]

    def parameter_names(self) -> list[str]:
        """Names in summary-table order plus per-study rows."""
        if self.kind == "dh":
            names = list(DH_ROWS)
        else:
            names = list(PNF_ROWS) + list(self.bias_terms)
        if self.kind == "dh":
            names += [f"delta1[{sid}]" for sid in self.data.ids]
        names += [f"rho_w[{self.data.ids[i]}]" for i in self.data.free_rho]
        return names

    @cached_property
    def summaries(self) -> dict[str, PosteriorSummary]:
        return {name: summarize(self.draws(name)) for name in self.parameter_names()}

    def summary(self, name: str) -> PosteriorSummary:
        if name in self.summaries:
            return self.summaries[name]
        return summarize(self.draws(name))

    def convergence(self) -> ConvergenceReport:
        core = [n for n in self.parameter_names() if "[" not in n]
        return check_convergence({n: self.summaries[n] for n in core})

    def verdict(self) -> SurrogacyVerdict:
        return evaluate_surrogacy(
            self.summaries,
            cond_var_bound=self.config.cond_var_bound,
            iqwig_bound=self.config.iqwig_bound,
        )

    def table_rows(self) -> list[dict[str, object]]:
        """One row per parameter: point estimate (mean, or median where
        skewed; always the median for the conditional variance) and 95% CrI."""
        rows = []
        for name in self.parameter_names():
            s = self.summaries[name]
            use_median = name == "psi2_sq" or s.skewed
            rows.append({
                "parameter": name,
                "estimate": s.median if use_median else s.mean,
                "statistic": "median" if use_median else "mean",
                "cri_low": s.cri_low,
                "cri_high": s.cri_high,
                "mean": s.mean,
                "median": s.median,
                "sd": s.sd,
                "rhat": s.rhat,
                "ess": s.ess,
            })
        return rows

    def delta1_moments(self, y1: float, se1: float, group: int = 0):
        """Per-draw mean and variance of delta1 given its surrogate estimate alone."""
        if self.kind == "dh":
            prior = self.config.resolved_priors()["delta1"]
            m1 = np.full(self.sample.n_chains * self.sample.n_draws, prior.a)
            v1 = np.full_like(m1, prior.b)
        else:
            m1 = self.sample.pooled("d1")
            v1 = self.sample.pooled("psi1_sq")
        b1 = 0.0
        name = {1: "alpha1", 2: "beta1"}.get(group)
        if name in self.sample.draws:
            b1 = self.sample.pooled(name)
        elif name is not None and self.config.bias_adjust:
            b1 = self.config.fixed_bias.get(name, 0.0)
        prec = 1.0 / np.maximum(v1, 1e-12) + 1.0 / se1 ** 2
        mean = (m1 / np.maximum(v1, 1e-12) + (y1 - b1) / se1 ** 2) / prec
        return mean, 1.0 / prec


def _bias_terms_present(base: EvidenceBase) -> tuple[str, ...]:
    counts = base.counts()
    terms = []
    if counts[EvidenceClass.CRWE.value]:
        terms += ["alpha1", "alpha2"]
    if counts[EvidenceClass.SRWE.value]:
        terms += ["beta1", "beta2"]
    return tuple(terms)


def fit_model(base: EvidenceBase, config: ModelConfig | None = None, sampler: SamplerConfig | None = None,
              stream: Sequence[int] = (), hold_out: Iterable[str] = ()) -> SurrogacyFit:
    """Fit ``config.model`` to ``base``; ``hold_out`` studies lose their y2."""
    config = config or ModelConfig()
    sampler = sampler or SamplerConfig()
    base.require_fittable()
    data = build_data(base, hold_out)
    if int(data.observed2.sum()) < MIN_STUDIES:
        raise InsufficientDataError(
            f"at least {MIN_STUDIES} studies with both outcomes are needed, got {int(data.observed2.sum())}"
        )
    priors = config.resolved_priors()
    bias_terms: tuple[str, ...] = ()
    if config.bias_adjust:
        bias_terms = _bias_terms_present(base)
        if not bias_terms:
            raise ConfigurationError("bias adjustment needs at least one non-RCT study")
        extra = set(config.fixed_bias) - set(bias_terms)
        if extra:
            raise ConfigurationError(f"fixed_bias names terms absent from this evidence base: {sorted(extra)}")
    kind = "dh" if config.model == "dh" else "pnf"
    kernel = CollapsedSurrogacyModel(data, kind, priors, bias_terms, dict(config.fixed_bias))
    sample = run_chains(kernel, sampler, stream)
    sample.meta.update({"model": config.model, "n_studies": data.n})
    estimated_bias = tuple(b for b in bias_terms if b not in config.fixed_bias)
    return SurrogacyFit(config, kind, data, sample, list(kernel.linear), estimated_bias)


def fit_dh(base: EvidenceBase, config: ModelConfig | None = None, sampler: SamplerConfig | None = None,
           stream: Sequence[int] = (), hold_out: Iterable[str] = ()) -> SurrogacyFit:
    config = (config or ModelConfig()).with_model("dh")
    return fit_model(base, config, sampler, stream, hold_out)


def fit_pnf(base: EvidenceBase, config: ModelConfig | None = None, sampler: SamplerConfig | None = None,
            bias_adjust: bool = False, fixed_bias: Mapping[str, float] | None = None,
            stream: Sequence[int] = (), hold_out: Iterable[str] = ()) -> SurrogacyFit:
    config = (config or ModelConfig("pnf")).with_model("pnf-bias" if bias_adjust else "pnf")
    if fixed_bias:
        if not bias_adjust:
            raise ConfigurationError("fixed_bias requires bias_adjust=True")
        config = ModelConfig("pnf-bias", config.priors, config.cond_var_bound, config.iqwig_bound,
                             dict(fixed_bias), config.preset)
    return fit_model(base, config, sampler, stream, hold_out)


def predict_final_effect(fit: SurrogacyFit, y1_new: float | None = None, se1_new: float | None = None,
                         se2_new: float | None = None, study_id: str | None = None) -> Prediction:
    """Predict the final-outcome effect from a surrogate effect.

    With ``study_id`` naming a held-out study of ``fit``, that study's y1,
    se1 and se2 are used. Otherwise the study is new and treated as an RCT;
    ``se2_new`` must then be supplied because the predictive variance is
    ``se2**2 + var(delta2 | data)``.

    The posterior moments of delta2 are averaged over draws of the
    conditional normal distribution of delta2 given the other parameters.
    """
    group = 0
    if study_id is not None:
        try:
            i = fit.data.ids.index(study_id)
        except ValueError:
            raise ValidationError(f"study {study_id!r} is not part of this fit") from None
        if fit.data.observed2[i]:
            raise ValidationError(f"study {study_id!r} was not held out of the fit")
        y1_new = float(fit.data.y1[i]) if y1_new is None else y1_new
        se1_new = float(fit.data.s1[i]) if se1_new is None else se1_new
        se2_new = float(fit.data.s2[i]) if se2_new is None else se2_new
        group = int(fit.data.group[i])
    if y1_new is None or se1_new is None:
        raise ValidationError("y1_new and se1_new are required")
    if not se1_new > 0:
        raise ValidationError("se1_new must be positive")
    if se2_new is None:
        raise ValidationError("se2 of the new study is required for the predictive variance")
    if not se2_new > 0:
        raise ValidationError("se2 must be positive")
    if fit.sample.n_draws == 0:
        raise ValidationError("fit has no retained draws")
    m, v = fit.delta1_moments(y1_new, se1_new, group)
    lam0 = fit.sample.pooled("lambda0")
    lam1 = fit.sample.pooled("lambda1")
    psi2 = np.maximum(fit.sample.pooled("psi2_sq"), 0.0)
    cond_mean = lam0 + lam1 * m
    cond_var = lam1 ** 2 * v + psi2
    mean = float(cond_mean.mean())
    var_delta2 = float(cond_var.mean() + cond_mean.var())
    sd = math.sqrt(se2_new ** 2 + var_delta2)
    return Prediction(mean, sd, mean - Z95 * sd, mean + Z95 * sd, var_delta2, float(se2_new))


def write_parameter_csv(path: str | Path, fit: SurrogacyFit) -> None:
    fields = ["parameter", "estimate", "statistic", "cri_low", "cri_high", "mean", "median", "sd", "rhat", "ess"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in fit.table_rows():
            w.writerow([row[k] if isinstance(row[k], str) else repr(float(row[k])) for k in fields])
