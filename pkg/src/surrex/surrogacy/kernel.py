"""Collapsed Metropolis-within-Gibbs kernel shared by the surrogacy models.

Both models share the within-study likelihood

    (y1, y2) ~ BVN((delta1 + b1, delta2 + b2), [[s1², r s1 s2], [r s1 s2, s2²]])
    delta2 | delta1 ~ N(lambda0 + lambda1 delta1, psi²)

and differ in the distribution of delta1: independent N(m, v) with fixed
(m, v) for Daniels & Hughes, exchangeable N(eta1, tau1²) for the product
normal formulation.

The true effects are integrated out, which leaves each study's data as
``y1 ~ N(mu1, V11)`` followed by ``y2 | y1 ~ N(mu2 + k (y1 - mu1), cv)``.
Those means are linear in the "linear" parameters (intercept, mean effect,
bias terms), which have normal priors and are integrated out as well when
updating the remaining scalar parameters. Each sweep then draws the linear
parameters exactly, updates within-study correlations given them, and the
true effects are drawn exactly only for retained iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..mcmc.priors import PriorSpec
from ..mcmc.sampler import ChainRandom, mh_accept

__all__ = ["SurrogacyData", "CollapsedSurrogacyModel", "VAR_FLOOR"]

VAR_FLOOR = 1e-12
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SurrogacyData:
    """Column arrays for the studies of one fit.

    ``observed2`` is False for studies whose final-outcome effect is
    treated as missing; ``rho_w`` holds NaN where the correlation is
    estimated. ``group`` is 0 for RCTs, 1 for cRWE and 2 for matched sRWE.
    """

    ids: tuple[str, ...]
    y1: np.ndarray
    s1: np.ndarray
    y2: np.ndarray
    s2: np.ndarray
    rho_w: np.ndarray
    group: np.ndarray
    observed2: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def free_rho(self) -> np.ndarray:
        return np.flatnonzero(np.isnan(self.rho_w))


class CollapsedSurrogacyModel:
    """Sampler model for ``kind`` "dh" or "pnf" (bias terms optional)."""

    def __init__(self, data: SurrogacyData, kind: str, priors: dict[str, PriorSpec],
                 bias_terms: tuple[str, ...] = (), fixed_bias: dict[str, float] | None = None):
        if kind not in ("dh", "pnf"):
            raise ConfigurationError(f"unknown kernel {kind!r}")
        self.data = data
        self.kind = kind
        self.priors = priors
        fixed_bias = dict(fixed_bias or {})

        self.nonlinear = ["lambda1", "psi2"] if kind == "dh" else ["tau1", "tau2", "rho"]
        for name in self.nonlinear:
            p = priors[name]
            if name in ("psi2", "tau1", "tau2") and not (p.bounded and p.a >= 0):
                raise ConfigurationError(f"prior on {name} must be uniform on a non-negative interval")
            if name == "rho" and not (p.bounded and p.a >= -1 and p.b <= 1):
                raise ConfigurationError("prior on rho must be uniform within [-1, 1]")
        rp = priors["rho_w"]
        if not (rp.bounded and rp.a >= 0 and rp.b <= 1):
            raise ConfigurationError("prior on rho_w must be uniform within [0, 1]")

        self.linear = (["lambda0"] if kind == "dh" else ["eta1", "lambda0"]) + [
            b for b in bias_terms if b not in fixed_bias
        ]
        for name in self.linear:
            if priors[name].shape != "normal":
                raise ConfigurationError(f"prior on {name} must be normal")
        self.m0 = np.array([priors[k].a for k in self.linear])
        self.s0 = np.array([priors[k].b for k in self.linear])

        n, P = data.n, len(self.linear)
        ind = {1: (data.group == 1).astype(float), 2: (data.group == 2).astype(float)}
        # X1 rows for y1; X2 = a + k * b + lambda1 * e for the y2 | y1 rows
        self._x1 = np.zeros((n, P))
        self._a = np.zeros((n, P))
        self._b = np.zeros((n, P))
        self._e = np.zeros((n, P))
        for j, name in enumerate(self.linear):
            if name == "eta1":
                self._x1[:, j] = 1.0
                self._b[:, j] = -1.0
                self._e[:, j] = 1.0
            elif name == "lambda0":
                self._a[:, j] = 1.0
            else:
                g = 1 if name.startswith("alpha") else 2
                if name.endswith("1"):
                    self._x1[:, j] = ind[g]
                    self._b[:, j] = -ind[g]
                else:
                    self._a[:, j] = ind[g]
        # constant offsets from pinned bias terms
        self._fb1 = np.zeros(n)
        self._fb2 = np.zeros(n)
        for name, value in fixed_bias.items():
            g = 1 if name.startswith("alpha") else 2
            target = self._fb1 if name.endswith("1") else self._fb2
            target += value * ind[g]
        if kind == "dh":
            self._m1c = priors["delta1"].a
            self._v1c = priors["delta1"].b
        else:
            self._m1c = 0.0
            self._v1c = None

        self.free = data.free_rho
        self.block_names = list(self.nonlinear) + [f"rho_w[{data.ids[i]}]" for i in self.free]
        self._mask = data.observed2.astype(float)
        self._y2 = np.where(data.observed2, data.y2, 0.0)
        self._logdet_s0 = float(np.sum(np.log(self.s0)))
        self._P = P
        self._prec0 = np.diag(1.0 / self.s0)
        self._m0_nonzero = bool(np.any(self.m0 != 0))
        self._has_x1 = bool(np.any(self._x1 != 0))
        self._has_e = bool(np.any(self._e != 0))
        self._r_fixed = np.where(np.isnan(data.rho_w), 0.5, data.rho_w)
        self._s1sq = data.s1 ** 2
        self._s2sq = data.s2 ** 2
        self._s1s2 = data.s1 * data.s2
        self._s1s2sq = self._s1sq * self._s2sq
        self._w1 = data.y1 - self._m1c - self._fb1
        self._const = data.n * _LOG_2PI + float(self._mask.sum()) * _LOG_2PI + self._logdet_s0

    # parameter maps

    def structural(self, x: dict[str, np.ndarray]):
        """(lambda1, psi2_sq, v1) as (chains, 1) arrays."""
        if self.kind == "dh":
            lam1 = x["lambda1"]
            psi2sq = x["psi2"] ** 2
            v1 = np.full_like(lam1, self._v1c)
        else:
            tau1, tau2, rho = x["tau1"], x["tau2"], x["rho"]
            lam1 = rho * tau2 / tau1
            psi2sq = tau2 ** 2 * (1.0 - rho ** 2)
            v1 = tau1 ** 2
        return lam1[:, None], np.maximum(psi2sq, VAR_FLOOR)[:, None], np.maximum(v1, VAR_FLOOR)[:, None]

    def _rho(self, ru: np.ndarray) -> np.ndarray:
        if not self.free.size:
            return self._r_fixed
        r = np.broadcast_to(self._r_fixed, (ru.shape[0], self.data.n)).copy()
        r[:, self.free] = self.priors["rho_w"].from_unconstrained(ru)[0]
        return r

    def _terms(self, lam1, psi2sq, v1, r):
        s1, s2 = self.data.s1, self.data.s2
        v11 = v1 + self._s1sq
        rs12 = r * self._s1s2
        k = (lam1 * v1 + rs12) / v11
        one_r2 = 1.0 - r * r
        cv = psi2sq + (v1 * ((lam1 * s1 - r * s2) ** 2 + self._s2sq * one_r2) + self._s1s2sq * one_r2) / v11
        cv = np.maximum(cv, VAR_FLOOR)
        w1 = self._w1
        w2 = self._y2 - self._fb2 - lam1 * self._m1c - k * w1
        x2 = self._a + k[..., None] * self._b
        if self._has_e:
            x2 = x2 + lam1[..., None] * self._e
        return v11, k, cv, w1, w2, x2

    def _marginal(self, x: dict[str, np.ndarray], ru: np.ndarray):
        """Log-likelihood with true effects and linear parameters integrated out."""
        lam1, psi2sq, v1 = self.structural(x)
        r = self._rho(ru)
        v11, k, cv, w1, w2, x2 = self._terms(lam1, psi2sq, v1, r)
        if self._m0_nonzero:
            w1 = w1 - self._x1 @ self.m0
            w2 = w2 - x2 @ self.m0
        p1 = 1.0 / v11
        p2 = self._mask / cv
        pw2 = p2 * w2
        quad = np.sum(np.log(v11) + p1 * w1 ** 2 + self._mask * np.log(cv) + pw2 * w2, axis=1)
        if self._P == 1:
            # scalar linear block: no batched linear algebra needed
            x2v = x2[..., 0]
            A = np.sum(p2 * x2v * x2v, axis=1) + 1.0 / self.s0[0]
            h = np.sum(pw2 * x2v, axis=1)
            if self._has_x1:
                A = A + np.sum(p1 * self._x1[:, 0] ** 2, axis=1)
                h = h + np.sum(p1 * w1 * self._x1[:, 0], axis=1)
            L = np.sqrt(A)
            z = h / L
            ll = -0.5 * (self._const + quad - z * z + 2.0 * np.log(L))
            return ll, (L[:, None, None], z[:, None])
        A = np.einsum("cnp,cnq->cpq", p2[..., None] * x2, x2) + self._prec0
        h = np.einsum("cn,cnp->cp", pw2, x2)
        if self._has_x1:
            A += np.einsum("cn,np,nq->cpq", p1, self._x1, self._x1)
            h += np.einsum("cn,np->cp", p1 * w1, self._x1)
        L = np.linalg.cholesky(A)
        z = np.linalg.solve(L, h[..., None])[..., 0]
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        ll = -0.5 * (self._const + quad - np.sum(z * z, axis=1) + logdet)
        return ll, (L, z)

    def _prior_nonlinear(self, u: dict[str, np.ndarray]):
        total = 0.0
        x = {}
        for name in self.nonlinear:
            p = self.priors[name]
            xv, lj = p.from_unconstrained(u[name])
            x[name] = xv
            total = total + p.logpdf(xv) + lj
        return x, total

    def _prior_rho(self, ru: np.ndarray) -> np.ndarray:
        p = self.priors["rho_w"]
        xv, lj = p.from_unconstrained(ru)
        return p.logpdf(xv) + lj

    def _evaluate(self, u, ru):
        x, lp_prior = self._prior_nonlinear(u)
        ll, cache = self._marginal(x, ru)
        lp = ll + lp_prior + np.sum(self._prior_rho(ru), axis=1)
        return np.where(np.isfinite(lp), lp, -np.inf), cache

    def _draw_linear(self, cache, rng: ChainRandom) -> np.ndarray:
        L, z = cache
        P = len(self.linear)
        eps = rng.normal(P)
        if P == 1:
            return self.m0 + (z + eps) / L[:, 0]
        Lt = np.swapaxes(L, 1, 2)
        return self.m0 + np.linalg.solve(Lt, (z + eps)[..., None])[..., 0]

    # sampler interface

    def initial_scales(self) -> np.ndarray:
        scales = [0.3 if n == "lambda1" else 0.8 for n in self.nonlinear]
        return np.array(scales + [1.5] * len(self.free))

    def init(self, rng: ChainRandom, attempt: int):
        C = rng.n_chains
        spread = 1.0 + attempt
        u = {}
        for name in self.nonlinear:
            p = self.priors[name]
            if name == "lambda1" and not p.bounded:
                u[name] = 0.5 + 0.5 * spread * rng.normal()
                continue
            frac = {"rho": (0.1, 0.9)}.get(name, (0.01, 0.5))
            lo = p.a + frac[0] * (p.b - p.a)
            hi = p.a + frac[1] * (p.b - p.a)
            xv = lo + (hi - lo) * rng.uniform()
            u[name] = p.to_unconstrained(xv)
        ru = self.priors["rho_w"].to_unconstrained(0.1 + 0.8 * rng.uniform(self.free.size))
        lp, cache = self._evaluate(u, ru)
        theta = np.zeros((C, len(self.linear)))
        if np.all(np.isfinite(lp)):
            theta = self._draw_linear(cache, rng)
        return {"u": u, "ru": ru, "lp": lp, "cache": cache, "theta": theta}

    def log_density(self, state) -> np.ndarray:
        return state["lp"]

    def sweep(self, state, rng: ChainRandom, scales: np.ndarray):
        u = dict(state["u"])
        ru = state["ru"]
        lp, cache = state["lp"], state["cache"]
        C = len(lp)
        acc = np.zeros((C, len(self.block_names)), bool)
        for b, name in enumerate(self.nonlinear):
            prop = dict(u)
            prop[name] = u[name] + scales[:, b] * rng.normal()
            lp_new, cache_new = self._evaluate(prop, ru)
            ok = mh_accept(lp_new - lp, rng)
            u[name] = np.where(ok, prop[name], u[name])
            lp = np.where(ok, lp_new, lp)
            cache = tuple(np.where(ok.reshape((C,) + (1,) * (c.ndim - 1)), cn, c) for c, cn in zip(cache, cache_new))
            acc[:, b] = ok
        theta = self._draw_linear(cache, rng)
        if self.free.size:
            x, _ = self._prior_nonlinear(u)
            nb = len(self.nonlinear)
            ru_new = ru + scales[:, nb:] * rng.normal(self.free.size)
            ratio = (self._study_rho_term(x, theta, ru_new) - self._study_rho_term(x, theta, ru)
                     + self._prior_rho(ru_new) - self._prior_rho(ru))
            ok = mh_accept(ratio, rng)
            ru = np.where(ok, ru_new, ru)
            acc[:, nb:] = ok
            lp, cache = self._evaluate(u, ru)
        return {"u": u, "ru": ru, "lp": lp, "cache": cache, "theta": theta}, acc

    def _study_rho_term(self, x, theta, ru) -> np.ndarray:
        """Per-study y2 | y1 log density given linear parameters (free studies only)."""
        lam1, psi2sq, v1 = self.structural(x)
        r = self._rho(ru)
        v11, k, cv, w1, w2, x2 = self._terms(lam1, psi2sq, v1, r)
        resid = w2 - np.einsum("cnp,cp->cn", x2, theta)
        dens = -0.5 * self._mask * (np.log(cv) + resid ** 2 / cv)
        return dens[:, self.free]

    def record(self, state, rng: ChainRandom) -> dict[str, np.ndarray]:
        x, _ = self._prior_nonlinear(state["u"])
        theta = state["theta"]
        lin = {name: theta[:, j] for j, name in enumerate(self.linear)}
        out: dict[str, np.ndarray] = {}
        lam1, psi2sq, v1 = self.structural(x)
        if self.kind == "dh":
            out["lambda0"] = lin["lambda0"]
            out["lambda1"] = x["lambda1"]
            out["psi2"] = x["psi2"]
            out["psi2_sq"] = x["psi2"] ** 2
        else:
            tau1, tau2, rho = x["tau1"], x["tau2"], x["rho"]
            l1 = rho * tau2 / tau1
            out["d1"] = lin["eta1"]
            out["lambda0"] = lin["lambda0"]
            out["lambda1"] = l1
            out["d2"] = lin["lambda0"] + l1 * lin["eta1"]
            out["tau1"] = tau1
            out["tau2"] = tau2
            out["rho"] = rho
            out["psi1_sq"] = tau1 ** 2
            out["psi2_sq"] = tau2 ** 2 - l1 ** 2 * tau1 ** 2
            out["r_squared"] = rho ** 2
            for name in self.linear[2:]:
                out[name] = lin[name]
        delta1, delta2 = self._draw_effects(lin, lam1, psi2sq, v1, self._rho(state["ru"]), rng)
        if self.kind == "pnf":
            out["mean_delta2"] = delta2.mean(axis=1)
        out["delta1"] = delta1
        out["delta2"] = delta2
        if self.free.size:
            out["rho_w"] = self._rho(state["ru"])[:, self.free]
        return out

    def _bias(self, lin, which: int) -> np.ndarray:
        g = self.data.group
        fixed = self._fb1 if which == 1 else self._fb2
        total = np.broadcast_to(fixed, (next(iter(lin.values())).shape[0], self.data.n)).copy()
        for name, val in lin.items():
            if name[:-1] in ("alpha", "beta") and name.endswith(str(which)):
                grp = 1 if name.startswith("alpha") else 2
                total += val[:, None] * (g == grp)
        return total

    def _draw_effects(self, lin, lam1, psi2sq, v1, r, rng: ChainRandom):
        """Exact draw of (delta1, delta2) per study from their full conditional."""
        d = self.data
        s1, s2 = d.s1, d.s2
        m1 = lin["eta1"][:, None] if "eta1" in lin else self._m1c
        o1 = d.y1 - self._bias(lin, 1)
        o2 = self._y2 - self._bias(lin, 2) - lin["lambda0"][:, None]
        obs = d.observed2
        n11 = s1 ** 2
        n12 = r * s1 * s2
        n22 = s2 ** 2 + psi2sq
        det = np.maximum(s1 ** 2 * (s2 ** 2 * (1 - r ** 2) + psi2sq), VAR_FLOOR)
        prec_obs = 1.0 / v1 + (n22 - 2 * lam1 * n12 + lam1 ** 2 * n11) / det
        lin_obs = m1 / v1 + (n22 * o1 - n12 * o2 - n12 * lam1 * o1 + lam1 * n11 * o2) / det
        prec_mis = 1.0 / v1 + 1.0 / n11
        lin_mis = m1 / v1 + o1 / n11
        prec = np.where(obs, prec_obs, prec_mis)
        mean = np.where(obs, lin_obs, lin_mis) / prec
        z = rng.normal(2, d.n)
        delta1 = mean + z[:, 0] / np.sqrt(prec)
        eta_var = np.maximum(s2 ** 2 * (1 - r ** 2), VAR_FLOOR)
        g = o2 - lam1 * delta1 - r * s2 / s1 * (o1 - delta1)
        eprec = np.where(obs, 1.0 / psi2sq + 1.0 / eta_var, 1.0 / psi2sq)
        emean = np.where(obs, g / eta_var, 0.0) / eprec
        eps = emean + z[:, 1] / np.sqrt(eprec)
        delta2 = lin["lambda0"][:, None] + lam1 * delta1 + eps
        return delta1, delta2
