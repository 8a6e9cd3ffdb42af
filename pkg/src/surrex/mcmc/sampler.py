"""Chain execution for Metropolis-within-Gibbs samplers.

All chains of a run advance together: model state arrays carry a leading
chain axis, so one sweep updates every chain with vectorised numpy code.
Each chain still owns an independent random stream derived from the seed,
which makes a chain's draws independent of how many chains run beside it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

import numpy as np

from ..errors import ConfigurationError, InitializationError
from .priors import PriorSpec

__all__ = [
    "SamplerConfig",
    "ChainRandom",
    "AdaptiveScales",
    "PosteriorSample",
    "Model",
    "LogDensityModel",
    "run_chains",
    "mh_accept",
]

log = logging.getLogger(__name__)

TARGET_ACCEPT = 0.44
MAX_INIT_TRIES = 100


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 150_000
    burn_in: int = 50_000
    n_chains: int = 4
    seed: int = 20220301
    thin: int = 1
    adapt_window: int = 50

    def __post_init__(self):
        if self.iterations < 1 or self.burn_in < 0 or self.burn_in >= self.iterations:
            raise ConfigurationError("need 0 <= burn_in < iterations")
        if self.n_chains < 2:
            raise ConfigurationError("at least two chains are required")
        if self.thin < 1 or self.adapt_window < 1:
            raise ConfigurationError("thin and adapt_window must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    @property
    def n_retained(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))

    @classmethod
    def cv_default(cls, **overrides) -> "SamplerConfig":
        """Reduced budget used for cross-validation folds."""
        base = dict(iterations=30_000, burn_in=10_000)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any] | None, base: "SamplerConfig | None" = None) -> "SamplerConfig":
        base = base or cls()
        if not raw:
            return base
        known = {"iterations", "burn_in", "n_chains", "chains", "seed", "thin", "adapt_window"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown sampler settings: {sorted(unknown)}")
        values = asdict(base)
        for key, value in raw.items():
            values["n_chains" if key == "chains" else key] = int(value)
        return cls(**values)

    def replace(self, **changes) -> "SamplerConfig":
        values = asdict(self)
        values.update({k: v for k, v in changes.items() if v is not None})
        return SamplerConfig(**values)

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


class ChainRandom:
    """Per-chain random streams served in chain-stacked blocks.

    ``normal(k)`` returns an array of shape ``(n_chains, k)`` whose row ``c``
    comes only from chain ``c``'s generator.
    """

    def __init__(self, seed: int, n_chains: int, stream: Sequence[int] = (), block: int = 8192):
        root = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
        self.generators = [np.random.Generator(np.random.PCG64(s)) for s in root.spawn(n_chains)]
        self.n_chains = n_chains
        self._block = block
        self._buf = {}
        self._pos = {}

    def _take(self, kind: str, shape) -> np.ndarray:
        k = int(np.prod(shape)) if shape else 1
        buf = self._buf.get(kind)
        pos = self._pos.get(kind, 0)
        if buf is None or pos + k > buf.shape[1]:
            size = max(self._block, 4 * k)
            rest = buf[:, pos:] if buf is not None else np.empty((self.n_chains, 0))
            if kind == "normal":
                fresh = [g.standard_normal(size) for g in self.generators]
            else:
                fresh = [g.random(size) for g in self.generators]
            buf = np.concatenate([rest, np.stack(fresh)], axis=1)
            pos = 0
            self._buf[kind] = buf
        self._pos[kind] = pos + k
        return buf[:, pos:pos + k].reshape((self.n_chains,) + tuple(shape))

    def normal(self, *shape) -> np.ndarray:
        return self._take("normal", shape)

    def uniform(self, *shape) -> np.ndarray:
        return self._take("uniform", shape)


def mh_accept(log_ratio: np.ndarray, rng: ChainRandom) -> np.ndarray:
    """Metropolis accept/reject for a (chains, ...) array of log ratios."""
    u = rng.uniform(*log_ratio.shape[1:])
    with np.errstate(invalid="ignore"):
        return np.log(u) < np.where(np.isnan(log_ratio), -np.inf, log_ratio)


class AdaptiveScales:
    """Random-walk proposal scales tuned towards a 0.44 acceptance rate.

    Scales move once per window by a diminishing step on the log scale and
    stop changing when :meth:`freeze` is called.
    """

    def __init__(self, n_chains: int, initial: np.ndarray, window: int, target: float = TARGET_ACCEPT):
        self.log_scale = np.tile(np.log(np.asarray(initial, dtype=float)), (n_chains, 1))
        self.window = window
        self.target = target
        self._acc = np.zeros_like(self.log_scale)
        self._seen = 0
        self._k = 0
        self.frozen = False

    @property
    def values(self) -> np.ndarray:
        return np.exp(self.log_scale)

    def observe(self, accepted: np.ndarray) -> None:
        if self.frozen:
            return
        self._acc += accepted
        self._seen += 1
        if self._seen == self.window:
            self._k += 1
            rate = self._acc / self._seen
            step = min(1.0, 2.0 / math.sqrt(self._k))
            self.log_scale += step * (rate - self.target) / (self.target * (1 - self.target))
            np.clip(self.log_scale, -25.0, 5.0, out=self.log_scale)
            self._acc[:] = 0.0
            self._seen = 0

    def freeze(self) -> None:
        self.frozen = True


@dataclass
class PosteriorSample:
    """Retained draws, each array shaped ``(chains, draws, ...)``."""

    draws: dict[str, np.ndarray]
    config: SamplerConfig
    accept_rate: dict[str, np.ndarray] = field(default_factory=dict)
    scales: np.ndarray | None = None
    scales_at_burn_in: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.draws)

    @property
    def n_chains(self) -> int:
        return next(iter(self.draws.values())).shape[0]

    @property
    def n_draws(self) -> int:
        return next(iter(self.draws.values())).shape[1]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.draws[name]

    def pooled(self, name: str) -> np.ndarray:
        a = self.draws[name]
        return a.reshape((-1,) + a.shape[2:])


class Model(Protocol):
    """What :func:`run_chains` needs from a model.

    ``block_names`` label the scalar random-walk blocks whose proposal
    scales are adapted; ``sweep`` returns the new state and a boolean
    ``(chains, blocks)`` acceptance array. ``record`` is called only for
    retained iterations and may draw quantities that do not feed back into
    the chain.
    """

    block_names: list[str]

    def initial_scales(self) -> np.ndarray: ...

    def init(self, rng: ChainRandom, attempt: int) -> Any: ...

    def log_density(self, state: Any) -> np.ndarray: ...

    def sweep(self, state: Any, rng: ChainRandom, scales: np.ndarray) -> tuple[Any, np.ndarray]: ...

    def record(self, state: Any, rng: ChainRandom) -> dict[str, np.ndarray]: ...


def run_chains(model: Model, config: SamplerConfig, stream: Sequence[int] = (),
               progress: Callable[[int], None] | None = None) -> PosteriorSample:
    """Run ``config.n_chains`` chains of ``model`` and keep post-burn-in draws."""
    rng = ChainRandom(config.seed, config.n_chains, stream)
    state = None
    for attempt in range(MAX_INIT_TRIES):
        state = model.init(rng, attempt)
        lp = model.log_density(state)
        if np.all(np.isfinite(lp)):
            break
    else:
        raise InitializationError(
            f"log-density not finite at initial values after {MAX_INIT_TRIES} jittered retries"
        )

    n_blocks = len(model.block_names)
    scales = AdaptiveScales(config.n_chains, model.initial_scales(), config.adapt_window)
    accepted_total = np.zeros((config.n_chains, n_blocks))
    n_keep = config.n_retained
    store: dict[str, np.ndarray] = {}
    scales_at_burn_in = None
    slot = 0
    for it in range(config.iterations):
        if it == config.burn_in:
            scales.freeze()
            scales_at_burn_in = scales.values.copy()
        state, acc = model.sweep(state, rng, scales.values)
        if it < config.burn_in:
            scales.observe(acc)
            continue
        accepted_total += acc
        if (it - config.burn_in) % config.thin:
            continue
        rec = model.record(state, rng)
        if not store:
            store = {k: np.empty((config.n_chains, n_keep) + np.shape(v)[1:]) for k, v in rec.items()}
        for k, v in rec.items():
            store[k][:, slot] = v
        slot += 1
        if progress is not None:
            progress(it)
    if scales_at_burn_in is None:
        scales_at_burn_in = scales.values.copy()
    n_post = config.iterations - config.burn_in
    rates = accepted_total / max(n_post, 1)
    return PosteriorSample(
        draws=store,
        config=config,
        accept_rate={name: rates[:, i] for i, name in enumerate(model.block_names)},
        scales=scales.values.copy(),
        scales_at_burn_in=scales_at_burn_in,
        meta={"stream": list(stream), "adapt_target": TARGET_ACCEPT},
    )


class LogDensityModel:
    """Random-walk Metropolis-within-Gibbs over named scalar parameters.

    Each parameter has a :class:`PriorSpec`; bounded ones are updated on the
    logit scale with the Jacobian included. ``loglik`` maps a dict of
    ``(chains,)`` arrays on the natural scale to a ``(chains,)`` array and
    may be ``None`` for prior-only sampling.
    """

    def __init__(self, priors: Mapping[str, PriorSpec], loglik: Callable[[dict], np.ndarray] | None = None,
                 init: Mapping[str, float] | None = None, jitter: float = 1.0):
        self.priors = dict(priors)
        self.block_names = list(self.priors)
        self.loglik = loglik
        self.init_values = dict(init or {})
        self.jitter = jitter

    def initial_scales(self) -> np.ndarray:
        out = []
        for p in self.priors.values():
            out.append(1.0 if p.bounded else min(1.0, math.sqrt(p.variance)))
        return np.array(out)

    def _natural(self, state):
        return {k: self.priors[k].from_unconstrained(u)[0] for k, u in state["u"].items()}

    def _target(self, u: dict[str, np.ndarray]) -> np.ndarray:
        total = 0.0
        x = {}
        for k, uk in u.items():
            xk, lj = self.priors[k].from_unconstrained(uk)
            x[k] = xk
            total = total + self.priors[k].logpdf(xk) + lj
        if self.loglik is not None:
            total = total + self.loglik(x)
        return np.asarray(total, dtype=float)

    def init(self, rng: ChainRandom, attempt: int):
        u = {}
        for k, p in self.priors.items():
            z = rng.normal()
            if p.bounded:
                centre = p.to_unconstrained(self.init_values.get(k, p.mean))
                u[k] = centre + 0.5 * self.jitter * z
            else:
                sd = min(1.0, math.sqrt(p.variance)) * self.jitter * (1 + attempt)
                u[k] = self.init_values.get(k, p.mean) + sd * z
        return {"u": u, "lp": self._target(u)}

    def log_density(self, state) -> np.ndarray:
        return state["lp"]

    def sweep(self, state, rng: ChainRandom, scales: np.ndarray):
        u = dict(state["u"])
        lp = state["lp"]
        acc = np.zeros((len(lp), len(self.block_names)), bool)
        for b, k in enumerate(self.block_names):
            prop = dict(u)
            prop[k] = u[k] + scales[:, b] * rng.normal()
            lp_prop = self._target(prop)
            ok = mh_accept(lp_prop - lp, rng)
            u[k] = np.where(ok, prop[k], u[k])
            lp = np.where(ok, lp_prop, lp)
            acc[:, b] = ok
        return {"u": u, "lp": lp}, acc

    def record(self, state, rng=None) -> dict[str, np.ndarray]:
        return self._natural(state)
