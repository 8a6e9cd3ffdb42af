import math

import numpy as np
import pytest
from scipy import stats

from surrex.errors import ConfigurationError, InsufficientDataError, ValidationError
from surrex.evidence import build_evidence_base
from surrex.mcmc import ChainRandom, PosteriorSummary, SamplerConfig
from surrex.surrogacy import (
    ModelConfig,
    evaluate_surrogacy,
    fit_dh,
    fit_model,
    fit_pnf,
    predict_final_effect,
)
from surrex.surrogacy.config import PRESETS, default_priors, read_model_config
from surrex.surrogacy.kernel import CollapsedSurrogacyModel
from surrex.surrogacy.models import build_data, write_parameter_csv
from surrex.mcmc.priors import PriorSpec
from surrex.synthetic import DH_TRUTH, PNF_TRUTH, Truth, generate_studies

from conftest import make_record

SMALL = SamplerConfig(iterations=3000, burn_in=1000, n_chains=4, seed=7)


def dh_base(n=20, seed=0, truth=DH_TRUTH, **kw):
    return build_evidence_base(generate_studies(n, truth, seed=seed, **kw))


def mixed_base(seed=0):
    recs = generate_studies(8, PNF_TRUTH, seed=seed, prefix="R")
    recs += generate_studies(5, PNF_TRUTH, seed=seed + 1, prefix="C", evidence="cRWE")
    recs += generate_studies(4, PNF_TRUTH, seed=seed + 2, prefix="S", evidence="sRWE")
    return build_evidence_base(recs)


# -- closed-form oracles for the collapsed kernel ----------------------------------


def _direct_marginal(data, kind, priors, x, theta_names, fixed_bias=None):
    """log p(y) with effects and linear parameters integrated, by brute force."""
    fixed_bias = fixed_bias or {}
    if kind == "dh":
        lam1, psi2sq = x["lambda1"], x["psi2"] ** 2
        m1, v1 = priors["delta1"].a, priors["delta1"].b
    else:
        lam1 = x["rho"] * x["tau2"] / x["tau1"]
        psi2sq = x["tau2"] ** 2 * (1 - x["rho"] ** 2)
        m1, v1 = 0.0, x["tau1"] ** 2
    rows, mean0, design = [], [], []
    P = len(theta_names)
    for i in range(data.n):
        g = data.group[i]
        for which in (1, 2):
            if which == 2 and not data.observed2[i]:
                continue
            row = np.zeros(P)
            off = 0.0
            for j, name in enumerate(theta_names):
                if name == "eta1":
                    row[j] = 1.0 if which == 1 else lam1
                elif name == "lambda0":
                    row[j] = 1.0 if which == 2 else 0.0
                else:
                    grp = 1 if name.startswith("alpha") else 2
                    row[j] = float(g == grp and name.endswith(str(which)))
            for name, val in fixed_bias.items():
                grp = 1 if name.startswith("alpha") else 2
                off += val * float(g == grp and name.endswith(str(which)))
            if which == 1:
                off += m1
            else:
                off += lam1 * m1
            rows.append((i, which))
            mean0.append(off)
            design.append(row)
    X = np.array(design)
    n = len(rows)
    cov = np.zeros((n, n))
    r = np.where(np.isnan(data.rho_w), 0.5, data.rho_w)
    for a, (i, wa) in enumerate(rows):
        for b, (k, wb) in enumerate(rows):
            if i != k:
                continue
            if wa == wb == 1:
                cov[a, b] = v1 + data.s1[i] ** 2
            elif wa == wb == 2:
                cov[a, b] = lam1 ** 2 * v1 + psi2sq + data.s2[i] ** 2
            else:
                cov[a, b] = lam1 * v1 + r[i] * data.s1[i] * data.s2[i]
    m0 = np.array([priors[k].a for k in theta_names])
    S0 = np.diag([priors[k].b for k in theta_names])
    y = np.array([data.y1[i] if w == 1 else data.y2[i] for i, w in rows])
    return stats.multivariate_normal(np.array(mean0) + X @ m0, cov + X @ S0 @ X.T).logpdf(y)


def _small_priors(kind):
    p = default_priors("dh" if kind == "dh" else "pnf-bias")
    for k in ("delta1", "lambda0", "eta1", "alpha1", "alpha2", "beta1", "beta2"):
        if k in p:
            p[k] = PriorSpec.normal(0.2, 2.0)
    return p


@pytest.mark.parametrize("kind,bias", [("dh", ()), ("pnf", ()), ("pnf", ("alpha1", "alpha2", "beta1", "beta2"))])
def test_collapsed_likelihood_matches_joint_gaussian(kind, bias):
    base = mixed_base(3)
    data = build_data(base, hold_out=["R02", "C01"])
    priors = _small_priors(kind)
    fixed = {"beta2": 0.3} if bias else {}
    model = CollapsedSurrogacyModel(data, kind, priors, bias, fixed)
    rng = np.random.default_rng(0)
    for _ in range(3):
        if kind == "dh":
            x = {"lambda1": rng.normal(0.5, 0.3, 1), "psi2": rng.uniform(0.05, 0.5, 1)}
        else:
            x = {"tau1": rng.uniform(0.1, 1, 1), "tau2": rng.uniform(0.1, 1, 1), "rho": rng.uniform(-1, 1, 1)}
        ll, _ = model._marginal(x, np.zeros((1, 0)))
        direct = _direct_marginal(data, kind, priors, {k: v[0] for k, v in x.items()}, model.linear, fixed)
        assert ll[0] == pytest.approx(direct, rel=1e-9, abs=1e-9)


def test_effect_draws_match_gaussian_conditioning():
    base = dh_base(3, seed=4)
    data = build_data(base)
    model = CollapsedSurrogacyModel(data, "dh", _small_priors("dh"))
    C = 4000
    lin = {"lambda0": np.full(C, 0.1)}
    lam1, psi2sq, v1 = np.full((C, 1), 0.7), np.full((C, 1), 0.04), np.full((C, 1), 2.0)
    r = np.broadcast_to(data.rho_w, (C, data.n))
    d1, d2 = model._draw_effects(lin, lam1, psi2sq, v1, r, ChainRandom(1, C))
    i = 0
    s1, s2, rw = data.s1[i], data.s2[i], data.rho_w[i]
    # prior of (delta1, delta2) and the noise covariance
    mu = np.array([0.2, 0.1 + 0.7 * 0.2])
    P = np.array([[2.0, 0.7 * 2.0], [0.7 * 2.0, 0.49 * 2.0 + 0.04]])
    S = np.array([[s1 ** 2, rw * s1 * s2], [rw * s1 * s2, s2 ** 2]])
    K = P @ np.linalg.inv(P + S)
    post_mean = mu + K @ (np.array([data.y1[i], data.y2[i]]) - mu)
    post_cov = P - K @ P
    draws = np.stack([d1[:, i], d2[:, i]], axis=1)
    se = np.sqrt(np.diag(post_cov) / C)
    assert np.all(np.abs(draws.mean(0) - post_mean) < 4 * se)
    np.testing.assert_allclose(np.cov(draws.T), post_cov, rtol=0.1, atol=1e-6)


# -- parameter maps ------------------------------------------------------------------


def test_mapping_example():
    data = build_data(dh_base(5))
    model = CollapsedSurrogacyModel(data, "pnf", default_priors("pnf"))
    lam1, psi2sq, v1 = model.structural({"tau1": np.array([0.27]), "tau2": np.array([0.21]),
                                         "rho": np.array([0.75])})
    assert lam1[0, 0] == pytest.approx(0.5833333333, abs=1e-9)
    assert psi2sq[0, 0] == pytest.approx(0.21 ** 2 - 0.5833333333 ** 2 * 0.27 ** 2, rel=1e-8)
    assert psi2sq[0, 0] == pytest.approx(0.0193, abs=5e-5)
    assert v1[0, 0] == pytest.approx(0.27 ** 2)
    truth = Truth.pnf(0.27, 0.21, 0.75)
    assert truth.lambda1 == pytest.approx(0.5833333333)
    assert truth.rho == pytest.approx(0.75) and truth.tau2 == pytest.approx(0.21)


# -- fits ---------------------------------------------------------------------------


def test_dh_recovers_truth_with_tiny_ses():
    fit = fit_dh(dh_base(20, seed=1, se_range=(0.01, 0.02)), sampler=SMALL)
    for name, value in (("lambda0", 0.0), ("lambda1", 0.7), ("psi2_sq", 0.01)):
        s = fit.summaries[name]
        assert s.cri_low <= value <= s.cri_high, name
    assert fit.verdict().slope_nonzero


def test_dh_row_set():
    base = dh_base(7, rho_w=None)
    fit = fit_dh(base, sampler=SMALL)
    ids = base.ids
    assert fit.parameter_names() == (["lambda0", "lambda1", "psi2_sq"] + [f"delta1[{i}]" for i in ids]
                                     + [f"rho_w[{i}]" for i in ids])
    rows = {r["parameter"]: r for r in fit.table_rows()}
    assert rows["psi2_sq"]["statistic"] == "median"
    for i in ids:
        s = fit.summaries[f"rho_w[{i}]"]
        assert 0.0 <= s.cri_low and s.cri_high <= 1.0


def test_dh_identity_relationship():
    recs = [make_record(f"S{i}", y1=v, y2=v, se1=0.02, se2=0.02, rho_w=0.5)
            for i, v in enumerate(np.linspace(-1.0, 0.5, 12))]
    fit = fit_dh(build_evidence_base(recs), sampler=SMALL)
    assert fit.summaries["lambda1"].mean == pytest.approx(1.0, abs=0.05)
    assert fit.summaries["lambda0"].mean == pytest.approx(0.0, abs=0.05)
    pred = predict_final_effect(fit, -0.3, 0.02, se2_new=0.02)
    assert pred.mean == pytest.approx(-0.3, abs=0.03)


def test_dh_weighted_least_squares_oracle():
    rng = np.random.default_rng(8)
    n = 25
    x = rng.normal(-0.3, 0.4, n)
    s2 = rng.uniform(0.01, 0.03, n)
    y2 = 0.05 + 0.8 * x + s2 * rng.standard_normal(n)
    recs = [make_record(f"S{i}", y1=float(x[i]), se1=1e-3, y2=float(y2[i]), se2=float(s2[i]), rho_w=0.0)
            for i in range(n)]
    fit = fit_dh(build_evidence_base(recs), sampler=SMALL)
    w = 1.0 / s2 ** 2
    X = np.column_stack([np.ones(n), x])
    beta = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w * y2))
    s = fit.summaries["lambda1"]
    # psi2 is not exactly zero a posteriori, which shifts the weights a little
    assert abs(s.mean - beta[1]) < 3 * s.mcse + 0.25 * s.sd


def test_relabeling_invariance():
    recs = generate_studies(12, seed=5)
    a = fit_dh(build_evidence_base(recs), sampler=SMALL).summaries["lambda1"]
    b = fit_dh(build_evidence_base(recs[::-1]), sampler=SMALL.replace(seed=8)).summaries["lambda1"]
    assert abs(a.mean - b.mean) < 4 * math.hypot(a.mcse, b.mcse)


def test_insufficient_data():
    with pytest.raises(InsufficientDataError):
        fit_dh(dh_base(2), sampler=SMALL)
    with pytest.raises(InsufficientDataError):
        fit_dh(dh_base(4), sampler=SMALL, hold_out=["S01", "S02"])


def test_pnf_link_identities_and_rows():
    fit = fit_pnf(mixed_base(), sampler=SMALL, bias_adjust=True)
    d = fit.sample.draws
    lam1, tau1, tau2, rho = d["lambda1"], d["tau1"], d["tau2"], d["rho"]
    np.testing.assert_allclose(lam1 * tau1, rho * tau2, rtol=1e-12)
    np.testing.assert_allclose(d["psi2_sq"] + lam1 ** 2 * tau1 ** 2, tau2 ** 2, rtol=1e-12)
    assert np.array_equal(d["r_squared"], rho ** 2)
    assert np.all((tau1 > 0) & (tau1 <= 2) & (tau2 > 0) & (tau2 <= 2) & (np.abs(rho) <= 1))
    names = fit.parameter_names()
    assert names[:10] == ["d1", "d2", "mean_delta2", "rho", "tau1", "tau2", "lambda0", "lambda1",
                          "psi2_sq", "r_squared"]
    assert names[10:14] == ["alpha1", "alpha2", "beta1", "beta2"]
    assert fit.verdict().iqwig_pass is not None


def test_pnf_perfect_correlation():
    truth = Truth.pnf(0.4, 0.4, 1.0)
    base = dh_base(25, seed=2, truth=truth, se_range=(0.01, 0.02))
    fit = fit_pnf(base, sampler=SMALL)
    assert fit.summaries["lambda1"].mean == pytest.approx(1.0, abs=0.1)
    assert fit.summaries["psi2_sq"].median < 0.005


def test_bias_configuration_errors():
    with pytest.raises(ConfigurationError, match="non-RCT"):
        fit_pnf(dh_base(6), sampler=SMALL, bias_adjust=True)
    rct_crwe = build_evidence_base(mixed_base().filter({"RCT", "cRWE"}).studies)
    with pytest.raises(ConfigurationError, match="absent"):
        fit_pnf(rct_crwe, sampler=SMALL, bias_adjust=True, fixed_bias={"beta1": 0.0})
    with pytest.raises(ConfigurationError):
        fit_pnf(rct_crwe, sampler=SMALL, fixed_bias={"alpha1": 0.0})
    with pytest.raises(ConfigurationError):
        ModelConfig("dh", fixed_bias={"alpha1": 0.0})


def test_pinned_bias_terms_drop_out():
    base = mixed_base()
    pinned = {"alpha1": 0.0, "alpha2": 0.0, "beta1": 0.0, "beta2": 0.0}
    fit = fit_pnf(base, sampler=SMALL, bias_adjust=True, fixed_bias=pinned)
    assert fit.bias_terms == ()
    assert "alpha1" not in fit.sample.draws


def test_pinned_bias_used_in_prediction():
    base = mixed_base()
    cfg = SamplerConfig(iterations=1500, burn_in=500, seed=3)
    fit = fit_pnf(base, sampler=cfg, bias_adjust=True, fixed_bias={"alpha1": 0.5, "alpha2": 0.0},
                  hold_out=["C01"])
    shifted = fit_pnf(base, sampler=cfg, bias_adjust=True, fixed_bias={"alpha1": 0.0, "alpha2": 0.0},
                      hold_out=["C01"])
    a = predict_final_effect(fit, study_id="C01")
    b = predict_final_effect(shifted, study_id="C01")
    # a surrogate bias of 0.5 lowers the implied true surrogate effect
    assert a.mean < b.mean


# -- verdict ------------------------------------------------------------------------


def _s(lo, hi, median=None):
    mid = (lo + hi) / 2 if median is None else median
    return PosteriorSummary(mid, mid, 0.1, lo, hi, 1.0, 1000.0, 0.0)


def test_verdict_examples():
    v = evaluate_surrogacy({"lambda0": _s(-0.13, 0.34), "lambda1": _s(0.13, 1.30),
                            "psi2_sq": _s(0.0, 0.2, 0.02)})
    assert v.intercept_zero and v.slope_nonzero and v.cond_var_small
    assert v.overall == "pass" and v.iqwig_pass is None
    v = evaluate_surrogacy({"lambda0": _s(-0.1, 0.3), "lambda1": _s(-0.16, 1.31),
                            "psi2_sq": _s(0.0, 0.2, 0.02), "rho": _s(-0.081, 0.98)})
    assert not v.slope_nonzero and v.overall == "fail" and v.iqwig_pass is False
    v = evaluate_surrogacy({"lambda0": _s(0.1, 0.3), "lambda1": _s(0.5, 1.0),
                            "psi2_sq": _s(0.0, 0.4, 0.1), "rho": _s(0.9, 0.99)}, cond_var_bound=0.05)
    assert v.overall == "inconclusive" and v.iqwig_pass is True
    v = evaluate_surrogacy({"lambda0": _s(0, 1), "lambda1": _s(0.5, 1), "psi2_sq": _s(0, 1, 0.1)},
                           cond_var_bound=0.2)
    assert v.cond_var_small


def test_verdict_missing_parameter():
    with pytest.raises(ValidationError, match="psi2_sq"):
        evaluate_surrogacy({"lambda0": _s(0, 1), "lambda1": _s(0, 1)})


# -- prediction ---------------------------------------------------------------------


def test_predict_requires_se2():
    fit = fit_dh(dh_base(8), sampler=SMALL)
    with pytest.raises(ValidationError, match="se2"):
        predict_final_effect(fit, -0.3, 0.1)
    with pytest.raises(ValidationError):
        predict_final_effect(fit, -0.3, 0.0, se2_new=0.1)
    with pytest.raises(ValidationError, match="not held out"):
        predict_final_effect(fit, study_id="S01")


def test_prediction_coverage_on_new_studies():
    fit = fit_dh(dh_base(30, seed=11), sampler=SMALL)
    new = generate_studies(100, seed=12)
    hits = 0
    for rec in new:
        e = rec.effects
        p = predict_final_effect(fit, e.y1, e.se1, se2_new=e.se2)
        hits += p.lo <= e.y2 <= p.hi
    assert hits >= 90


def test_prediction_width_grows_with_psi2():
    narrow = fit_dh(dh_base(20, seed=4, truth=Truth(psi2_sq=0.001)), sampler=SMALL)
    wide = fit_dh(dh_base(20, seed=4, truth=Truth(psi2_sq=0.09)), sampler=SMALL)
    a = predict_final_effect(narrow, -0.3, 0.1, se2_new=0.1)
    b = predict_final_effect(wide, -0.3, 0.1, se2_new=0.1)
    assert b.width > a.width
    assert a.sd ** 2 == pytest.approx(0.01 + a.var_delta2)


# -- config -------------------------------------------------------------------------


def _shape(p):
    return (p.shape, p.a, p.b)


def test_model_config(tmp_path):
    assert _shape(default_priors("dh")["psi2"]) == ("uniform", 0, 2)
    assert _shape(default_priors("pnf")["rho"]) == ("uniform", -1, 1)
    assert _shape(default_priors("dh")["lambda1"]) == ("normal", 0, 1e4)
    wide = ModelConfig("pnf", preset="wide").resolved_priors()
    assert _shape(wide["tau1"]) == ("uniform", 0, 5) and wide["lambda0"].b == 1e6
    assert set(PRESETS) == {"default", "wide", "narrow"}
    path = tmp_path / "m.json"
    path.write_text('{"model": "pnf-bias", "priors": {"rho": {"shape": "uniform", "lo": 0, "hi": 1}},'
                    ' "cond_var_bound": 0.1, "fixed_bias": {"alpha1": 0}}')
    cfg = read_model_config(path)
    assert cfg.model == "pnf-bias" and cfg.cond_var_bound == 0.1
    assert _shape(cfg.resolved_priors()["rho"]) == ("uniform", 0, 1)
    assert cfg.fixed_bias == {"alpha1": 0.0}
    with pytest.raises(ConfigurationError):
        ModelConfig("pnf", priors={"psi2": PriorSpec.uniform(0, 1)})
    with pytest.raises(ConfigurationError):
        ModelConfig("brma")
    bad = ModelConfig("pnf", priors={"tau1": PriorSpec.normal(0, 1)})
    with pytest.raises(ConfigurationError, match="tau1"):
        fit_model(dh_base(5), bad, SMALL)


def test_parameter_csv(tmp_path):
    fit = fit_dh(dh_base(6), sampler=SMALL)
    write_parameter_csv(tmp_path / "p.csv", fit)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0].startswith("parameter,estimate,statistic,cri_low,cri_high")
    assert [l.split(",")[0] for l in lines[1:4]] == ["lambda0", "lambda1", "psi2_sq"]
