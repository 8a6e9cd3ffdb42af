"""Prior catalogue and the transforms used to sample bounded parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np
from scipy import special, stats

from ..errors import ValidationError

__all__ = ["PriorSpec", "parse_prior"]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PriorSpec:
    """A normal(mean, variance) or uniform(lo, hi) prior.

    For uniform priors ``a``/``b`` are the bounds; for normal priors they
    are the mean and the variance.
    """

    shape: str
    a: float
    b: float
    target: str = ""

    def __post_init__(self):
        if self.shape == "normal":
            if not self.b > 0:
                raise ValidationError(f"prior {self.target or '?'}: variance must be positive")
        elif self.shape == "uniform":
            if not self.b > self.a:
                raise ValidationError(f"prior {self.target or '?'}: need hi > lo")
        else:
            raise ValidationError(f"unknown prior shape {self.shape!r}")

    @classmethod
    def normal(cls, mean: float, variance: float, target: str = "") -> "PriorSpec":
        return cls("normal", float(mean), float(variance), target)

    @classmethod
    def uniform(cls, lo: float, hi: float, target: str = "") -> "PriorSpec":
        return cls("uniform", float(lo), float(hi), target)

    @property
    def mean(self) -> float:
        return self.a if self.shape == "normal" else 0.5 * (self.a + self.b)

    @property
    def variance(self) -> float:
        return self.b if self.shape == "normal" else (self.b - self.a) ** 2 / 12.0

    @property
    def bounded(self) -> bool:
        return self.shape == "uniform"

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.shape == "normal":
            return -0.5 * (_LOG_2PI + math.log(self.b) + (x - self.a) ** 2 / self.b)
        inside = (x > self.a) & (x < self.b)
        return np.where(inside, -math.log(self.b - self.a), -np.inf)

    def ppf(self, q):
        q = np.asarray(q, dtype=float)
        if self.shape == "normal":
            return stats.norm.ppf(q, loc=self.a, scale=math.sqrt(self.b))
        return self.a + q * (self.b - self.a)

    def sample(self, rng: np.random.Generator, size=None):
        if self.shape == "normal":
            return rng.normal(self.a, math.sqrt(self.b), size)
        return rng.uniform(self.a, self.b, size)

    # Bounded parameters are sampled as logit((x - lo) / (hi - lo)).

    def to_unconstrained(self, x):
        x = np.asarray(x, dtype=float)
        if self.shape == "normal":
            return x
        return special.logit((x - self.a) / (self.b - self.a))

    def from_unconstrained(self, u):
        """Map back to the natural scale; returns (x, log |dx/du|)."""
        u = np.asarray(u, dtype=float)
        if self.shape == "normal":
            return u, np.zeros_like(u)
        p = special.expit(u)
        width = self.b - self.a
        # log(p (1 - p)) written to stay finite for large |u|
        log_jac = math.log(width) - np.logaddexp(0.0, u) - np.logaddexp(0.0, -u)
        return self.a + width * p, log_jac

    def to_dict(self) -> dict[str, Any]:
        if self.shape == "normal":
            return {"shape": "normal", "mean": self.a, "variance": self.b}
        return {"shape": "uniform", "lo": self.a, "hi": self.b}


def parse_prior(raw: Mapping[str, Any] | PriorSpec, target: str = "") -> PriorSpec:
    """Build a prior from ``{"shape": "normal", "mean": m, "variance": v}``
    or ``{"shape": "uniform", "lo": a, "hi": b}``."""
    if isinstance(raw, PriorSpec):
        return raw
    shape = raw.get("shape")
    try:
        if shape == "normal":
            return PriorSpec.normal(raw["mean"], raw["variance"], target)
        if shape == "uniform":
            return PriorSpec.uniform(raw["lo"], raw["hi"], target)
    except KeyError as exc:
        raise ValidationError(f"prior {target}: missing field {exc}") from None
    raise ValidationError(f"prior {target}: unknown shape {shape!r}")
