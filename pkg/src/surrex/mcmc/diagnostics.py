"""Posterior summaries and convergence checks.

Rhat is the split-chain potential scale reduction factor and the effective
sample size uses Geyer's initial monotone sequence estimator on split
chains.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import ValidationError

__all__ = [
    "PosteriorSummary",
    "ConvergenceReport",
    "split_rhat",
    "effective_sample_size",
    "autocorrelation",
    "summarize",
    "check_convergence",
    "write_summary_csv",
    "write_trace_csv",
    "write_autocorr_csv",
    "RHAT_MAX",
    "ESS_MIN",
    "SKEW_LIMIT",
    "MIN_DRAWS",
]

RHAT_MAX = 1.05
ESS_MIN = 400.0
SKEW_LIMIT = 0.5
MIN_DRAWS = 1000


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    median: float
    sd: float
    cri_low: float
    cri_high: float
    rhat: float
    ess: float
    skewness: float

    @property
    def skewed(self) -> bool:
        return abs(self.skewness) > SKEW_LIMIT

    @property
    def point(self) -> float:
        """Median for markedly skewed posteriors, mean otherwise."""
        return self.median if self.skewed else self.mean

    @property
    def mcse(self) -> float:
        return self.sd / math.sqrt(self.ess) if self.ess > 0 else math.inf

    def to_dict(self) -> dict[str, float]:
        d = asdict(self)
        d["point"] = self.point
        d["skewed"] = self.skewed
        return d


def _as_chains(draws) -> np.ndarray:
    a = np.asarray(draws, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValidationError("draws must be shaped (chains, iterations)")
    return a


def _split(a: np.ndarray) -> np.ndarray:
    n = a.shape[1] // 2
    return np.concatenate([a[:, :n], a[:, a.shape[1] - n:]], axis=0)


def split_rhat(draws) -> float:
    a = _split(_as_chains(draws))
    n = a.shape[1]
    w = a.var(axis=1, ddof=1).mean()
    b = n * a.mean(axis=1).var(ddof=1)
    if w <= 0:
        return 1.0 if b <= 0 else math.inf
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


def _autocov(a: np.ndarray) -> np.ndarray:
    """Biased autocovariance for each row, via FFT."""
    n = a.shape[1]
    x = a - a.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size, axis=1)
    return np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n] / n


def autocorrelation(draws, max_lag: int | None = None) -> np.ndarray:
    """Per-chain autocorrelation, shape (chains, max_lag + 1)."""
    a = _as_chains(draws)
    acov = _autocov(a)
    lag = a.shape[1] - 1 if max_lag is None else min(max_lag, a.shape[1] - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = acov[:, : lag + 1] / acov[:, :1]
    return np.nan_to_num(rho, nan=0.0)


def effective_sample_size(draws) -> float:
    a = _split(_as_chains(draws))
    m, n = a.shape
    acov = _autocov(a)
    w = acov[:, 0].mean() * n / (n - 1)
    var_plus = w * (n - 1) / n
    if m > 1:
        var_plus += a.mean(axis=1).var(ddof=1)
    if var_plus <= 0 or w <= 0:
        return float(m * n)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum adjacent pairs while positive, forcing them non-increasing
    pairs = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    tau_sum = 0.0
    prev = math.inf
    for p in pairs:
        if p <= 0:
            break
        p = min(p, prev)
        tau_sum += p
        prev = p
    tau = max(-1.0 + 2.0 * tau_sum, 1.0 / math.log10(max(m * n, 10)))
    return float(m * n / tau)


def _skew(x: np.ndarray) -> float:
    sd = x.std()
    if sd == 0:
        return 0.0
    return float(np.mean(((x - x.mean()) / sd) ** 3))


def summarize(draws, level: float = 0.95, min_draws: int = MIN_DRAWS) -> PosteriorSummary:
    """Summarise one scalar quantity from ``(chains, draws)`` samples."""
    a = _as_chains(draws)
    if a.size < min_draws:
        raise ValidationError(f"need at least {min_draws} retained draws, got {a.size}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("draws contain non-finite values")
    flat = a.ravel()
    tail = (1.0 - level) / 2.0
    lo, med, hi = np.quantile(flat, [tail, 0.5, 1.0 - tail])
    return PosteriorSummary(
        mean=float(flat.mean()),
        median=float(med),
        sd=float(flat.std(ddof=1)),
        cri_low=float(lo),
        cri_high=float(hi),
        rhat=split_rhat(a),
        ess=effective_sample_size(a),
        skewness=_skew(flat),
    )


@dataclass
class ConvergenceReport:
    passed: bool
    failures: list[dict] = field(default_factory=list)
    checked: int = 0

    def message(self) -> str:
        if self.passed:
            return f"all {self.checked} monitored quantities converged"
        parts = [f"{f['parameter']} (rhat={f['rhat']:.3f}, ess={f['ess']:.0f})" for f in self.failures]
        return "not converged: " + ", ".join(parts)


def check_convergence(summaries: Mapping[str, PosteriorSummary], rhat_max: float = RHAT_MAX,
                      ess_min: float = ESS_MIN) -> ConvergenceReport:
    failures = []
    for name, s in summaries.items():
        if not (s.rhat < rhat_max) or not (s.ess > ess_min):
            failures.append({"parameter": name, "rhat": s.rhat, "ess": s.ess})
    return ConvergenceReport(passed=not failures, failures=failures, checked=len(summaries))


_SUMMARY_FIELDS = ["parameter", "mean", "median", "sd", "cri_low", "cri_high", "rhat", "ess", "skewness", "point"]


def write_summary_csv(path: str | Path, summaries: Mapping[str, PosteriorSummary]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_SUMMARY_FIELDS)
        for name, s in summaries.items():
            d = s.to_dict()
            w.writerow([name] + [repr(float(d[k])) for k in _SUMMARY_FIELDS[1:]])


def write_trace_csv(path: str | Path, draws: Mapping[str, np.ndarray], every: int = 1) -> None:
    """Long-format trace: one row per (chain, iteration)."""
    names = list(draws)
    arrays = [_as_chains(draws[k]) for k in names]
    n_chains, n = arrays[0].shape
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "draw"] + names)
        for c in range(n_chains):
            for i in range(0, n, every):
                w.writerow([c, i] + [repr(float(a[c, i])) for a in arrays])


def write_autocorr_csv(path: str | Path, draws: Mapping[str, np.ndarray], max_lag: int = 50) -> None:
    names = list(draws)
    acf = {k: autocorrelation(draws[k], max_lag).mean(axis=0) for k in names}
    lags = len(next(iter(acf.values())))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lag"] + names)
        for lag in range(lags):
            w.writerow([lag] + [f"{acf[k][lag]:.6f}" for k in names])
