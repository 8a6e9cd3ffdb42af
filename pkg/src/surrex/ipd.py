"""Pseudo individual-patient data from digitised Kaplan-Meier curves.

A digitised curve (time, survival) plus either a risk table or the total
number of events is turned into per-subject (time, event) records whose
Kaplan-Meier estimate reproduces the digitised survival values. Two
reconstructed arms are then compared with a one-covariate Cox model
(Efron ties) to give a log hazard ratio and its standard error.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DivergenceError, InputError, NumericError, ReconstructionError, ValidationError
from .evidence import EffectPair

__all__ = [
    "DigitizedCurve",
    "RiskTable",
    "PseudoIPD",
    "HazardFit",
    "ArmCurve",
    "reconstruct_ipd",
    "kaplan_meier",
    "km_at",
    "fit_cox",
    "efron_loglik",
    "derive_effect_pair",
    "read_curve_csv",
    "read_risk_csv",
    "write_ipd_csv",
]

# digitisation jitter up to this size is clamped instead of rejected
CLAMP_LIMIT = 0.005


@dataclass
class DigitizedCurve:
    points: list[tuple[float, float]]
    n_start: int
    total_events: int | None = None
    name: str = "curve"

    def __post_init__(self):
        if self.n_start is None or int(self.n_start) < 1:
            raise ValidationError(f"{self.name}: n_start must be >= 1")
        self.n_start = int(self.n_start)
        if self.total_events is not None:
            self.total_events = int(self.total_events)
            if not 0 <= self.total_events <= self.n_start:
                raise ValidationError(f"{self.name}: total_events outside [0, n_start]")
        if not self.points:
            raise ValidationError(f"{self.name}: no digitised points")
        times = [float(t) for t, _ in self.points]
        surv = [float(s) for _, s in self.points]
        for i, t in enumerate(times):
            if t < 0 or not math.isfinite(t):
                raise ValidationError(f"{self.name}: negative or non-finite time at point {i}")
            if i and t <= times[i - 1]:
                raise ValidationError(f"{self.name}: times not strictly increasing at point {i} (t={t})")
        # clamp small rises, reject large ones
        clamped = False
        level = 1.0
        for i, s in enumerate(surv):
            if not math.isfinite(s) or s < 0 or s > 1.0 + CLAMP_LIMIT:
                raise ValidationError(f"{self.name}: survival {s} outside [0,1] at point {i}")
            if s > level:
                if s - level > CLAMP_LIMIT:
                    prev_t = times[i - 1] if i else 0.0
                    raise ReconstructionError(
                        f"{self.name}: survival rises by {s - level:.4f} in interval "
                        f"[{prev_t}, {times[i]}]"
                    )
                surv[i] = level
                clamped = True
            level = surv[i]
        if clamped:
            warnings.warn(f"{self.name}: survival clamped to be non-increasing", stacklevel=2)
        self.points = list(zip(times, surv))


@dataclass
class RiskTable:
    entries: list[tuple[float, int]]
    name: str = "risk table"

    def __post_init__(self):
        if not self.entries:
            raise ValidationError(f"{self.name}: empty")
        entries = [(float(t), int(n)) for t, n in self.entries]
        if entries[0][0] != 0.0:
            raise ValidationError(f"{self.name}: first entry must be at time 0")
        for i in range(1, len(entries)):
            (t0, n0), (t1, n1) = entries[i - 1], entries[i]
            if t1 <= t0:
                raise ValidationError(f"{self.name}: times not strictly increasing at {t1}")
            if n1 > n0:
                raise ReconstructionError(
                    f"{self.name}: number at risk increases in interval [{t0}, {t1}] ({n0} -> {n1})"
                )
        if any(n < 0 for _, n in entries):
            raise ValidationError(f"{self.name}: negative number at risk")
        self.entries = entries


@dataclass
class PseudoIPD:
    time: np.ndarray
    event: np.ndarray
    arm: np.ndarray
    # per-digitised-point diagnostics of the reconstruction
    max_km_error: float = 0.0
    risk_deviation: int = 0

    def __len__(self) -> int:
        return len(self.time)

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def with_arm(self, arm: int) -> "PseudoIPD":
        return PseudoIPD(self.time, self.event, np.full(len(self.time), arm, dtype=int),
                         self.max_km_error, self.risk_deviation)


@dataclass
class HazardFit:
    loghr: float
    se: float
    n_events: int
    iterations: int
    converged: bool = True
    loglik: float = float("nan")


@dataclass
class ArmCurve:
    curve: DigitizedCurve
    risk: RiskTable | None = None


# -- Kaplan-Meier -----------------------------------------------------------


def kaplan_meier(time, event) -> tuple[np.ndarray, np.ndarray]:
    """Product-limit estimate at each distinct event time.

    Censorings tied with events are counted as at risk at that time.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    ev_times = np.unique(time[event == 1])
    if ev_times.size == 0:
        return ev_times, np.ones(0)
    sorted_t = np.sort(time)
    at_risk = len(time) - np.searchsorted(sorted_t, ev_times, side="left")
    deaths = np.array([np.sum((time == u) & (event == 1)) for u in ev_times])
    return ev_times, np.cumprod(1.0 - deaths / at_risk)


def km_at(time, event, query) -> np.ndarray:
    ev_t, surv = kaplan_meier(time, event)
    idx = np.searchsorted(ev_t, np.asarray(query, dtype=float), side="right") - 1
    return np.where(idx >= 0, surv[np.clip(idx, 0, None)] if surv.size else 1.0, 1.0)


# -- reconstruction ---------------------------------------------------------


def _steps(curve: DigitizedCurve) -> tuple[np.ndarray, np.ndarray]:
    pts = curve.points
    times = np.array([t for t, _ in pts])
    surv = np.array([s for _, s in pts])
    if times[0] == 0.0:
        if surv[0] < 1.0 - CLAMP_LIMIT:
            raise ReconstructionError(f"{curve.name}: survival {surv[0]} at time 0 implies events at time 0")
        times, surv = times[1:], surv[1:]
    return times, surv


def _uniform_allocation(total: int, lengths: np.ndarray) -> np.ndarray:
    """Split an integer count across gaps proportionally to their length."""
    out = np.zeros(len(lengths), dtype=int)
    span = lengths.sum()
    if total <= 0 or span <= 0:
        return out
    exact = total * lengths / span
    out = np.floor(exact).astype(int)
    short = total - out.sum()
    if short > 0:
        order = np.argsort(-(exact - out), kind="stable")
        out[order[:short]] += 1
    return out


def _forward_events(n_start, targets, cens) -> tuple[int, float]:
    n, s, total, worst = n_start, 1.0, 0, 0.0
    for sk, c in zip(targets, cens):
        n_at = n - min(c, n)
        if n_at > 0 and s > 0:
            d = int(np.clip(np.rint(n_at * (1.0 - sk / s)), 0, n_at))
            s *= 1.0 - d / n_at
        else:
            d = 0
        worst = max(worst, abs(s - sk))
        total += d
        n = n_at - d
    return total, worst


@dataclass
class _Item:
    time: float
    kind: str  # "step" or "risk"
    value: float
    gap: float  # length of the censoring window before this item
    expected_cens: float = 0.0


def _build_items(times, surv, risk: RiskTable | None) -> list[_Item]:
    raw = [(t, 1, "step", s) for t, s in zip(times, surv)]
    if risk is not None:
        # a checkpoint at a step time is applied before that step's events
        raw += [(t, 0, "risk", n) for t, n in risk.entries[1:]]
    raw.sort(key=lambda r: (r[0], r[1]))
    items, prev = [], 0.0
    for t, _, kind, v in raw:
        items.append(_Item(t, kind, float(v), t - prev))
        prev = t
    return items


def _expected_censoring_with_risk(items: list[_Item], risk: RiskTable, surv_start=1.0) -> None:
    entries = risk.entries
    bounds = [t for t, _ in entries]
    counts = [n for _, n in entries]
    rate = 0.0
    s_prev = surv_start
    for j in range(len(entries)):
        lo = bounds[j]
        hi = bounds[j + 1] if j + 1 < len(entries) else math.inf
        members = [it for it in items if lo < it.time <= hi] if math.isfinite(hi) else [
            it for it in items if it.time > lo]
        if math.isfinite(hi):
            n0, n1 = counts[j], counts[j + 1]
            d_est = 0.0
            for it in members:
                if it.kind == "step":
                    frac = (it.time - lo) / (hi - lo)
                    n_at = n0 + (n1 - n0) * frac
                    if s_prev > 0:
                        d_est += n_at * max(0.0, 1.0 - it.value / s_prev)
                    s_prev = it.value
            c_est = max(0.0, n0 - n1 - d_est)
            rate = c_est / (hi - lo)
        for it in members:
            it.expected_cens = rate * it.gap


@dataclass
class _Paths:
    """Flat arrays of partial reconstruction paths (one entry per path)."""

    n: np.ndarray  # number still at risk
    events: np.ndarray
    excess: np.ndarray  # summed KM error above tolerance
    riskdev: np.ndarray  # summed risk-table shortfall
    spread: np.ndarray  # squared deviation from expected censoring
    surv: np.ndarray  # KM value of the path so far
    worst: np.ndarray  # largest KM error so far


def _dp(n_start: int, items: list[_Item], tol: float, beam: int = 1,
        target_events: int | None = None):
    """Dynamic programme over the number at risk.

    Paths reaching the same number at risk are compared on (KM excess over
    ``tol``, risk-table shortfall, censoring spread, current KM error).
    With ``beam > 1`` up to ``beam`` paths per number at risk are kept,
    chosen to have distinct and evenly spread event totals, which lets the
    caller anchor the final event count; entries from which
    ``target_events`` is no longer reachable are dropped first.
    """
    final_surv = min((it.value for it in items if it.kind == "step"), default=1.0)
    one = lambda v, dt=float: np.array([v], dtype=dt)
    paths = _Paths(one(n_start, np.int64), one(0, np.int64), one(0.0), one(0.0), one(0.0), one(1.0), one(0.0))
    back = []
    cs_all = np.arange(n_start + 1)
    for it in items:
        idx = np.arange(len(paths.n))
        if it.kind == "risk":
            target = int(it.value)
            src = idx
            n_from = paths.n
            c = np.where(n_from >= target, n_from - target, 0)
            d = np.zeros_like(n_from)
            s_new = paths.surv.copy()
            err = np.zeros(len(src))
            rd_new = paths.riskdev + np.where(n_from >= target, 0, target - n_from)
            ex_new = paths.excess
            wr_new = paths.worst
        else:
            if it.gap > 0:
                grid_i, grid_c = np.meshgrid(idx, cs_all, indexing="ij")
                keep = grid_c <= paths.n[grid_i]
                src, c = grid_i[keep], grid_c[keep]
            else:
                src, c = idx, np.zeros(len(idx), dtype=np.int64)
            n_from = paths.n[src]
            n_at = n_from - c
            s_prev = paths.surv[src]
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(s_prev > 0, 1.0 - it.value / s_prev, 0.0)
                d = np.clip(np.rint(n_at * frac), 0, n_at).astype(np.int64)
                s_new = np.where(n_at > 0, s_prev * (1.0 - d / np.maximum(n_at, 1)), s_prev)
            err = np.abs(s_new - it.value)
            ex_new = paths.excess[src] + np.maximum(0.0, err - tol)
            rd_new = paths.riskdev[src]
            wr_new = np.maximum(paths.worst[src], err)
        n_new = n_from - c - d
        ev_new = paths.events[src] + d
        sp_new = paths.spread[src] + (c - it.expected_cens) ** 2
        ex_key = np.round(ex_new, 12)

        if beam == 1:
            order = np.lexsort((err, sp_new, rd_new, ex_key, n_new))
            grp = n_new[order]
        else:
            order = np.lexsort((err, sp_new, rd_new, ex_key, ev_new, n_new))
            grp = n_new[order] * (n_start + 2) + ev_new[order]
        first = np.ones(len(order), bool)
        first[1:] = grp[1:] != grp[:-1]
        pick = order[first]
        if beam > 1:
            gap = np.zeros(len(n_new))
            if target_events is not None:
                with np.errstate(divide="ignore", invalid="ignore"):
                    room = np.where(s_new > 0, n_new * (1.0 - final_surv / s_new), 0.0)
                # room is a rounding-level estimate, so allow one event of slack
                gap = np.maximum(0, ev_new - target_events) + np.maximum(0.0, target_events - ev_new - room - 1.0)
            pick = _thin_beam(pick, n_new, ex_key + rd_new + np.round(gap, 9), beam)
        paths = _Paths(n_new[pick], ev_new[pick], ex_new[pick], rd_new[pick], sp_new[pick],
                       s_new[pick], wr_new[pick])
        back.append((src[pick], c[pick], d[pick]))
    return paths, back


def _thin_beam(pick, n_new, quality, beam):
    """Keep up to ``beam`` entries per number at risk with spread event totals.

    ``pick`` is sorted by (n, events); only the entries with the best
    ``quality`` within each n are eligible.
    """
    n_p = n_new[pick]
    starts = np.flatnonzero(np.r_[True, n_p[1:] != n_p[:-1]])
    stops = np.r_[starts[1:], len(pick)]
    kept = []
    for a, b in zip(starts, stops):
        block = pick[a:b]
        if b - a > 1:
            q = quality[block]
            block = block[q <= q.min()]
        if len(block) > beam:
            sel = np.unique(np.rint(np.linspace(0, len(block) - 1, beam)).astype(int))
            block = block[sel]
        kept.append(block)
    return np.concatenate(kept)


def _final_choice(paths: _Paths, target_events: int | None, risk_first: bool) -> int:
    ev_gap = np.abs(paths.events - target_events) if target_events is not None else np.zeros(len(paths.n))
    ex_key = np.round(paths.excess, 12)
    if risk_first:
        order = np.lexsort((paths.worst, paths.spread, ev_gap, paths.riskdev, ex_key))
    else:
        order = np.lexsort((paths.worst, paths.spread, paths.riskdev, ev_gap, ex_key))
    return int(order[0])


def reconstruct_ipd(curve: DigitizedCurve, risk: RiskTable | None = None, arm: int = 0,
                    beam: int = 8) -> PseudoIPD:
    """Reconstruct one arm's pseudo-IPD from its digitised curve.

    Events are placed at the digitised times and censorings inside the
    gaps between them. With a risk table the number at risk is matched at
    each table time whenever that is arithmetically possible; without one,
    censoring is spread uniformly in time and the total number of events is
    anchored to ``curve.total_events``. Subjects still at risk after the
    last digitised or tabulated time are censored there.
    """
    n0 = curve.n_start
    if risk is None and curve.total_events is None:
        raise ValidationError(f"{curve.name}: total_events is required when no risk table is given")
    if risk is not None and risk.entries[0][1] != n0:
        raise ValidationError(
            f"{curve.name}: risk table starts at {risk.entries[0][1]} but n_start is {n0}"
        )
    times, surv = _steps(curve)
    items = _build_items(times, surv, risk)
    tol = 0.5 / n0
    end_time = max([it.time for it in items], default=0.0)
    target_events = curve.total_events

    if risk is not None:
        _expected_censoring_with_risk(items, risk)
        paths, back = _dp(n0, items, tol, beam=1)
        best = _final_choice(paths, target_events, risk_first=True)
    else:
        gaps = np.array([it.gap for it in items])
        chosen, best_key = 0, None
        for cw in range(0, n0 - target_events + 1):
            total, worst = _forward_events(n0, surv, _uniform_allocation(cw, gaps))
            key = (abs(total - target_events), worst > tol, worst, cw)
            if best_key is None or key < best_key:
                best_key, chosen = key, cw
            if total < target_events - 1:
                break
        rate = chosen / gaps.sum() if gaps.sum() > 0 else 0.0
        for it in items:
            it.expected_cens = rate * it.gap
        paths, back = _dp(n0, items, tol, beam=beam, target_events=target_events)
        best = _final_choice(paths, target_events, risk_first=False)

    # backtrack
    plan = []
    entry = best
    for it, (src, cens, dead) in zip(reversed(items), reversed(back)):
        plan.append((it, int(cens[entry]), int(dead[entry])))
        entry = int(src[entry])
    plan.reverse()

    t_out, e_out = [], []
    prev_t = 0.0
    for it, c, d in plan:
        if c:
            width = it.time - prev_t
            t_out.extend(prev_t + width * (np.arange(c) + 1) / (c + 1))
            e_out.extend([0] * c)
        if d:
            t_out.extend([it.time] * d)
            e_out.extend([1] * d)
        prev_t = it.time
    remaining = n0 - len(t_out)
    if remaining:
        # a curve with no points after time 0 still needs positive times
        t_out.extend([end_time if end_time > 0 else 1.0] * remaining)
        e_out.extend([0] * remaining)
    t_arr = np.asarray(t_out, dtype=float)
    return PseudoIPD(
        time=t_arr,
        event=np.asarray(e_out, dtype=int),
        arm=np.full(len(t_arr), arm, dtype=int),
        max_km_error=float(paths.worst[best]),
        risk_deviation=int(paths.riskdev[best]),
    )


# -- Cox model --------------------------------------------------------------


def _efron_parts(time, event, x):
    order = np.argsort(time, kind="stable")
    time, event, x = time[order], event[order], x[order]
    ev_times, d = np.unique(time[event == 1], return_counts=True)
    first = np.searchsorted(time, ev_times, side="left")
    return time, event, x, ev_times, d, first


def efron_loglik(beta: float, time, event, x) -> tuple[float, float, float]:
    """Efron partial log-likelihood, score and observed information."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=int)
    x = np.asarray(x, dtype=float)
    time, event, x, ev_times, d, first = _efron_parts(time, event, x)
    w = np.exp(beta * x)
    # reverse cumulative sums give risk-set totals from each index onward
    r0 = np.cumsum(w[::-1])[::-1]
    r1 = np.cumsum((w * x)[::-1])[::-1]
    r2 = np.cumsum((w * x * x)[::-1])[::-1]
    is_ev = event == 1
    grp = np.searchsorted(ev_times, time[is_ev])
    k = len(ev_times)
    d0 = np.bincount(grp, weights=w[is_ev], minlength=k)
    d1 = np.bincount(grp, weights=(w * x)[is_ev], minlength=k)
    d2 = np.bincount(grp, weights=(w * x * x)[is_ev], minlength=k)
    xsum = np.bincount(grp, weights=x[is_ev], minlength=k)

    rep = np.repeat(np.arange(k), d)
    l = np.arange(rep.size) - np.repeat(np.cumsum(d) - d, d)
    frac = l / d[rep]
    phi0 = r0[first][rep] - frac * d0[rep]
    phi1 = r1[first][rep] - frac * d1[rep]
    phi2 = r2[first][rep] - frac * d2[rep]
    ll = beta * xsum.sum() - np.log(phi0).sum()
    score = xsum.sum() - (phi1 / phi0).sum()
    info = (phi2 / phi0 - (phi1 / phi0) ** 2).sum()
    return float(ll), float(score), float(info)


def _monotone_direction(time, event, x) -> int:
    """+1 / -1 when the partial likelihood increases without bound."""
    time, event, x, ev_times, d, first = _efron_parts(
        np.asarray(time, float), np.asarray(event, int), np.asarray(x, float))
    # suffix max/min of the covariate over each risk set
    smax = np.maximum.accumulate(x[::-1])[::-1][first]
    smin = np.minimum.accumulate(x[::-1])[::-1][first]
    is_ev = event == 1
    grp = np.searchsorted(ev_times, time[is_ev])
    xe = x[is_ev]
    up = np.all(xe >= smax[grp]) and np.any(smin[grp] < xe)
    down = np.all(xe <= smin[grp]) and np.any(smax[grp] > xe)
    return 1 if up else (-1 if down else 0)


def fit_cox(treated: PseudoIPD, control: PseudoIPD, max_iter: int = 50, max_halvings: int = 10,
            tol: float = 1e-8) -> HazardFit:
    """Log hazard ratio of ``treated`` versus ``control`` (Efron ties).

    Damped Newton-Raphson from zero with step halving; the standard error
    is the inverse square root of the observed information at the optimum.
    """
    if len(treated) == 0 or len(control) == 0:
        raise ValidationError("both arms must contain subjects")
    time = np.concatenate([treated.time, control.time]).astype(float)
    event = np.concatenate([treated.event, control.event]).astype(int)
    x = np.concatenate([np.ones(len(treated)), np.zeros(len(control))])
    n_events = int(event.sum())
    if n_events == 0:
        raise NumericError("no events in the pooled data; hazard ratio undefined")
    direction = _monotone_direction(time, event, x)
    if direction:
        raise DivergenceError(
            f"monotone partial likelihood: log hazard ratio diverges to {'+' if direction > 0 else '-'}infinity",
            direction,
        )
    beta = 0.0
    ll, score, info = efron_loglik(beta, time, event, x)
    for it in range(1, max_iter + 1):
        if info <= 0:
            raise NumericError("non-positive observed information in Cox fit")
        step = score / info
        # converged when either the score or the Newton step is negligible
        if abs(score) < tol or abs(step) < tol:
            return HazardFit(beta, 1.0 / math.sqrt(info), n_events, it - 1, True, ll)
        slack = 1e-12 * max(1.0, abs(ll))
        for _ in range(max_halvings + 1):
            cand = beta + step
            ll_c, score_c, info_c = efron_loglik(cand, time, event, x)
            if ll_c >= ll - slack:
                break
            step /= 2.0
        else:
            raise NumericError("step halving failed to increase the partial likelihood")
        beta, ll, score, info = cand, ll_c, score_c, info_c
        if abs(beta) > 30:
            raise DivergenceError("log hazard ratio diverging", int(np.sign(beta)))
    if abs(score) < tol or (info > 0 and abs(score / info) < tol):
        return HazardFit(beta, 1.0 / math.sqrt(info), n_events, max_iter, True, ll)
    raise NumericError(f"Cox fit did not converge in {max_iter} iterations (score {score:.3g})")


# -- effect pairs -----------------------------------------------------------

ENDPOINTS = ("pfs", "os")
ARMS = ("treatment", "control")


def derive_effect_pair(curves: Mapping[str, Mapping[str, ArmCurve | None]]) -> EffectPair:
    """logHR on PFS (surrogate) and OS (final) for one matched pair.

    ``curves[endpoint][arm]`` holds the digitised curve and optional risk
    table, with endpoint in {"pfs", "os"} and arm in {"treatment", "control"}.
    """
    fits = {}
    for endpoint in ENDPOINTS:
        per_arm = curves.get(endpoint) or {}
        ipd = {}
        for arm in ARMS:
            ac = per_arm.get(arm)
            if ac is None:
                raise ValidationError(f"missing {endpoint.upper()} curve for {arm} arm")
            ipd[arm] = reconstruct_ipd(ac.curve, ac.risk, arm=1 if arm == "treatment" else 0)
        fits[endpoint] = fit_cox(ipd["treatment"], ipd["control"])
    return EffectPair(
        y1=fits["pfs"].loghr, se1=fits["pfs"].se,
        y2=fits["os"].loghr, se2=fits["os"].se,
        rho_w=None,
    )


# -- files ------------------------------------------------------------------


def _read_two_columns(path: Path, names: Sequence[str]) -> list[tuple[str, str]]:
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader if r and any(x.strip() for x in r)]
    if not rows:
        raise ValidationError(f"{path}: empty")
    head = [h.strip().lower() for h in rows[0]]
    if head[: len(names)] == list(names):
        rows = rows[1:]
    return [(r[0], r[1]) for r in rows]


def read_curve_csv(path: str | Path, n_start: int, total_events: int | None = None) -> DigitizedCurve:
    path = Path(path)
    try:
        pts = [(float(t), float(s)) for t, s in _read_two_columns(path, ["time", "survival"])]
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return DigitizedCurve(pts, n_start, total_events, name=str(path))


def read_risk_csv(path: str | Path) -> RiskTable:
    path = Path(path)
    try:
        rows = [(float(t), int(float(n))) for t, n in _read_two_columns(path, ["time", "n_at_risk"])]
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return RiskTable(rows, name=str(path))


def write_ipd_csv(path: str | Path, ipd: PseudoIPD) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "event", "arm"])
        for t, e, a in zip(ipd.time, ipd.event, ipd.arm):
            w.writerow([repr(float(t)), int(e), int(a)])
