"""Model configuration: model choice, priors, verdict bounds and presets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from ..errors import ConfigurationError, InputError, ValidationError
from ..mcmc.priors import PriorSpec, parse_prior

__all__ = ["ModelConfig", "default_priors", "PRESETS", "MODELS", "BIAS_TERMS", "read_model_config"]

MODELS = ("dh", "pnf", "pnf-bias")
BIAS_TERMS = ("alpha1", "alpha2", "beta1", "beta2")
VAGUE = 1e4


def default_priors(model: str) -> dict[str, PriorSpec]:
    if model == "dh":
        return {
            "delta1": PriorSpec.normal(0.0, VAGUE, "delta1"),
            "lambda0": PriorSpec.normal(0.0, VAGUE, "lambda0"),
            "lambda1": PriorSpec.normal(0.0, VAGUE, "lambda1"),
            "psi2": PriorSpec.uniform(0.0, 2.0, "psi2"),
            "rho_w": PriorSpec.uniform(0.0, 1.0, "rho_w"),
        }
    if model in ("pnf", "pnf-bias"):
        out = {
            "eta1": PriorSpec.normal(0.0, VAGUE, "eta1"),
            "lambda0": PriorSpec.normal(0.0, VAGUE, "lambda0"),
            "tau1": PriorSpec.uniform(0.0, 2.0, "tau1"),
            "tau2": PriorSpec.uniform(0.0, 2.0, "tau2"),
            "rho": PriorSpec.uniform(-1.0, 1.0, "rho"),
            "rho_w": PriorSpec.uniform(0.0, 1.0, "rho_w"),
        }
        for name in BIAS_TERMS:
            out[name] = PriorSpec.normal(0.0, VAGUE, name)
        return out
    raise ConfigurationError(f"unknown model {model!r} (expected one of {', '.join(MODELS)})")


def _preset(scale_hi: float, variance: float) -> dict[str, dict[str, Any]]:
    normal = {"shape": "normal", "mean": 0.0, "variance": variance}
    return {
        "delta1": normal, "lambda0": normal, "lambda1": normal, "eta1": normal,
        "alpha1": normal, "alpha2": normal, "beta1": normal, "beta2": normal,
        "psi2": {"shape": "uniform", "lo": 0.0, "hi": scale_hi},
        "tau1": {"shape": "uniform", "lo": 0.0, "hi": scale_hi},
        "tau2": {"shape": "uniform", "lo": 0.0, "hi": scale_hi},
    }


# Sensitivity analyses to the vague priors: wider and narrower variants.
PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "default": {},
    "wide": _preset(5.0, 1e6),
    "narrow": _preset(1.0, 1e2),
}


@dataclass(frozen=True)
class ModelConfig:
    """Settings for one surrogacy model fit.

    Parameters
    ----------
    model : {"dh", "pnf", "pnf-bias"}
    priors : dict
        Overrides of the default priors, keyed by parameter name.
    cond_var_bound : float
        Posterior median of the conditional variance must fall below this
        for the "conditional variance is zero" criterion.
    iqwig_bound : float
        Required lower credible bound of the between-studies correlation.
    fixed_bias : dict
        Bias terms pinned to constants instead of being estimated.
    """

    model: str = "dh"
    priors: Mapping[str, PriorSpec] = field(default_factory=dict)
    cond_var_bound: float = 0.05
    iqwig_bound: float = 0.85
    fixed_bias: Mapping[str, float] = field(default_factory=dict)
    preset: str = "default"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigurationError(f"unknown model {self.model!r} (expected one of {', '.join(MODELS)})")
        if not self.cond_var_bound > 0:
            raise ConfigurationError("cond_var_bound must be positive")
        if not 0 < self.iqwig_bound <= 1:
            raise ConfigurationError("iqwig_bound must lie in (0, 1]")
        if self.preset not in PRESETS:
            raise ConfigurationError(f"unknown prior preset {self.preset!r}")
        defaults = default_priors(self.model)
        unknown = set(self.priors) - set(defaults)
        if unknown:
            raise ConfigurationError(f"model {self.model}: no parameters named {sorted(unknown)}")
        bad = set(self.fixed_bias) - set(BIAS_TERMS)
        if bad:
            raise ConfigurationError(f"fixed_bias: unknown bias terms {sorted(bad)}")
        if self.fixed_bias and self.model != "pnf-bias":
            raise ConfigurationError("fixed_bias only applies to the pnf-bias model")

    @property
    def bias_adjust(self) -> bool:
        return self.model == "pnf-bias"

    def resolved_priors(self) -> dict[str, PriorSpec]:
        out = default_priors(self.model)
        for name, raw in PRESETS[self.preset].items():
            if name in out:
                out[name] = parse_prior(raw, name)
        out.update(self.priors)
        return out

    def with_model(self, model: str) -> "ModelConfig":
        priors = {k: v for k, v in self.priors.items() if k in default_priors(model)}
        fixed = dict(self.fixed_bias) if model == "pnf-bias" else {}
        return ModelConfig(model, priors, self.cond_var_bound, self.iqwig_bound, fixed, self.preset)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any] | None, model: str | None = None) -> "ModelConfig":
        raw = dict(raw or {})
        known = {"model", "priors", "cond_var_bound", "iqwig_bound", "fixed_bias", "preset"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown model settings: {sorted(unknown)}")
        chosen = model or raw.get("model", "dh")
        defaults = default_priors(chosen)
        priors = {k: parse_prior(v, k) for k, v in (raw.get("priors") or {}).items() if k in defaults}
        return cls(
            model=chosen,
            priors=priors,
            cond_var_bound=float(raw.get("cond_var_bound", 0.05)),
            iqwig_bound=float(raw.get("iqwig_bound", 0.85)),
            fixed_bias={k: float(v) for k, v in (raw.get("fixed_bias") or {}).items()} if chosen == "pnf-bias" else {},
            preset=raw.get("preset", "default"),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "preset": self.preset,
            "priors": {k: v.to_dict() for k, v in self.resolved_priors().items()},
            "cond_var_bound": self.cond_var_bound,
            "iqwig_bound": self.iqwig_bound,
            "fixed_bias": dict(self.fixed_bias),
        }


def read_model_config(path: str | Path, model: str | None = None) -> ModelConfig:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"model config not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return ModelConfig.from_dict(raw, model)
