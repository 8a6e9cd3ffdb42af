import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surrex.errors import InputError, RangeError, ValidationError
from surrex.matching import (
    DEFAULT_COVARIATES,
    ArmSummary,
    CovariateSpec,
    derive_threshold,
    distance_matrix,
    distance_total,
    match_studies,
    normalized_difference,
    rct_arm_pairs,
    read_arms_csv,
    read_covariate_spec,
    write_match_report,
)

from oracles import exhaustive_pairing, naive_distance, random_arms, sequential_minimum

AGE = CovariateSpec("age", 2.0, "bounded", 18.0, 100.0)
PROP = CovariateSpec("p", 1.0, "proportion")


def arm(aid, role="treatment", **values):
    return ArmSummary(aid, aid, role, values)


def test_normalized_difference_examples():
    assert normalized_difference(AGE, 60, 70) == pytest.approx(10 / 82)
    assert normalized_difference(AGE, 55, 55) == 0.0
    assert normalized_difference(PROP, 0.0, 1.0) == 1.0


def test_normalized_difference_range_error_names_covariate():
    with pytest.raises(RangeError, match="age"):
        normalized_difference(AGE, 10, 50)


def test_distance_weighted_mean_example():
    specs = [CovariateSpec(f"c{i}", w, "proportion") for i, w in enumerate((2, 2, 2, 2, 1))]
    a = arm("a", **{f"c{i}": 0.0 for i in range(5)})
    b = arm("b", "control", **dict({f"c{i}": 0.0 for i in range(5)}, c0=0.5))
    assert distance_total(specs, a, b) == pytest.approx(1.0 / 9)


def test_distance_extremes():
    specs = [CovariateSpec(f"c{i}", w, "proportion") for i, w in enumerate((2, 1, 3))]
    zero = arm("a", c0=0.0, c1=0.0, c2=0.0)
    one = arm("b", c0=1.0, c1=1.0, c2=1.0)
    assert distance_total(specs, zero, zero) == 0.0
    assert distance_total(specs, zero, one) == pytest.approx(1.0)


def test_all_zero_weights():
    with pytest.raises(ValidationError, match="undefined"):
        distance_total([CovariateSpec("p", 0.0)], arm("a", p=0.1), arm("b", p=0.2))


def test_missing_covariate_is_error():
    with pytest.raises(ValidationError, match="age"):
        distance_total([AGE], arm("a", age=50.0), arm("b"))


def test_spec_invariants():
    with pytest.raises(ValidationError):
        CovariateSpec("x", -1.0)
    with pytest.raises(ValidationError):
        CovariateSpec("x", 1.0, "bounded", 3.0, 3.0)


def test_derive_threshold_examples():
    specs = [AGE]
    pairs = []
    for d in (0.01, 0.032, 0.02):
        pairs.append((arm("t", age=50.0), arm("c", "control", age=50.0 + d * 82)))
    assert derive_threshold(pairs, specs) == pytest.approx(0.032)
    assert derive_threshold(pairs[:1], specs) == pytest.approx(0.01)
    same = [(arm("t", age=40.0), arm("c", "control", age=40.0))]
    assert derive_threshold(same, specs) == 0.0
    assert derive_threshold(pairs, specs, override=0.035) == 0.035
    with pytest.raises(ValidationError):
        derive_threshold([], specs)


def test_sixteen_by_eight_candidate_count():
    rng = np.random.default_rng(3)
    t = random_arms(rng, 16, "treatment")
    c = random_arms(rng, 8, "control")
    d = distance_matrix(DEFAULT_COVARIATES, t, c)
    threshold = float(np.sort(d, axis=None)[10])
    res = match_studies(t, c, DEFAULT_COVARIATES, threshold)
    assert res.candidate_count == 11
    assert len(res.candidates) == 11


def test_single_candidate_forced():
    t = [arm("t1", age=30.0), arm("t2", age=90.0)]
    c = [arm("c1", "control", age=31.0), arm("c2", "control", age=60.0)]
    res = match_studies(t, c, [AGE], 0.02)
    assert [(a, b) for a, b, _ in res.pairs] == [("t1", "c1")]
    assert res.candidate_count == 1


def test_three_by_three_matches_exhaustive_search():
    rng = np.random.default_rng(11)
    t = random_arms(rng, 3, "treatment")
    c = random_arms(rng, 3, "control")
    res = match_studies(t, c, DEFAULT_COVARIATES, 1.0)
    oracle = exhaustive_pairing(res.distances, 1.0, res.treatment_ids, res.control_ids)
    assert res.pairs == oracle


def test_tie_break_is_lexicographic():
    t = [arm("tB", age=50.0), arm("tA", age=50.0)]
    c = [arm("c1", "control", age=50.0)]
    res = match_studies(t, c, [AGE], 0.1)
    assert res.pairs == [("tA", "c1", 0.0)]
    assert res.ties_broken


def test_empty_pairing_is_valid():
    res = match_studies([arm("t", age=20.0)], [arm("c", "control", age=99.0)], [AGE], 0.01)
    assert res.pairs == [] and res.candidate_count == 0


@pytest.mark.parametrize("seed", range(20))
def test_greedy_equals_oracles(seed):
    rng = np.random.default_rng(seed)
    t = random_arms(rng, int(rng.integers(1, 6)), "treatment")
    c = random_arms(rng, int(rng.integers(1, 6)), "control")
    d = distance_matrix(DEFAULT_COVARIATES, t, c)
    thr = float(rng.uniform(d.min(), d.max()))
    res = match_studies(t, c, DEFAULT_COVARIATES, thr)
    ids = (res.treatment_ids, res.control_ids)
    assert res.pairs == sequential_minimum(d, thr, *ids)
    assert res.pairs == exhaustive_pairing(d, thr, *ids)


values = st.floats(0.0, 1.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(values, values), min_size=5, max_size=5),
       st.floats(0.01, 100.0))
def test_distance_properties(vals, scale):
    specs = [
        CovariateSpec("line", 2.0, "bounded", 1.0, 3.0),
        CovariateSpec("age", 2.0, "bounded", 18.0, 100.0),
        CovariateSpec("ps", 2.0, "bounded", 0.0, 3.0),
        CovariateSpec("colon", 2.0),
        CovariateSpec("female", 1.0),
    ]
    a = arm("a", **{s.name: s.lo + u * s.span for s, (u, _) in zip(specs, vals)})
    b = arm("b", "control", **{s.name: s.lo + v * s.span for s, (_, v) in zip(specs, vals)})
    d = distance_total(specs, a, b)
    assert d == distance_total(specs, b, a)
    assert 0.0 <= d <= 1.0 + 1e-15
    assert d == pytest.approx(naive_distance(specs, a, b), abs=1e-14)
    scaled = [CovariateSpec(s.name, s.weight * scale, s.kind, s.lo, s.hi) for s in specs]
    assert distance_total(scaled, a, b) == pytest.approx(d, rel=1e-12, abs=1e-15)
    assert (d == 0.0) == all(a.values[s.name] == b.values[s.name] for s in specs)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 1.0))
def test_match_invariants(seed, thr):
    rng = np.random.default_rng(seed)
    t = random_arms(rng, 5, "treatment")
    c = random_arms(rng, 4, "control")
    res = match_studies(t, c, DEFAULT_COVARIATES, thr)
    ts = [p[0] for p in res.pairs]
    cs = [p[1] for p in res.pairs]
    assert len(set(ts)) == len(ts) and len(set(cs)) == len(cs)
    assert all(p[2] <= thr for p in res.pairs)


def test_rct_arm_pairs():
    arms = [
        ArmSummary("a1", "S1", "treatment", {}),
        ArmSummary("a2", "S1", "control", {}),
        ArmSummary("b", "S2", "treatment", {}),
    ]
    pairs, singles = rct_arm_pairs(arms)
    assert [(t.arm_id, c.arm_id) for t, c in pairs] == [("a1", "a2")]
    assert [a.arm_id for a in singles] == ["b"]
    with pytest.raises(ValidationError):
        rct_arm_pairs(arms + [ArmSummary("a3", "S1", "control", {})])


def test_io_round_trip(tmp_path):
    spec_path = tmp_path / "cov.json"
    spec_path.write_text(json.dumps([
        {"name": "age", "weight": 2, "kind": "bounded-numeric", "lo": 18, "hi": 100},
        {"name": "female", "weight": 1, "kind": "proportion"},
    ]))
    specs = read_covariate_spec(spec_path)
    assert specs[0].kind == "bounded" and specs[1].span == 1.0
    arms_path = tmp_path / "arms.csv"
    arms_path.write_text("arm_id,study_id,role,age,female\nT1,T1,treatment,60,0.4\nC1,C1,control,61,0.45\n")
    arms = read_arms_csv(arms_path, specs)
    res = match_studies(arms[:1], arms[1:], specs, 0.1)
    write_match_report(res, tmp_path / "out")
    report = (tmp_path / "out" / "match_report.csv").read_text().splitlines()
    assert report[0] == "treatment_arm,control_arm,distance,candidate,final"
    assert report[1].endswith(",1,1")
    summary = json.loads((tmp_path / "out" / "match_summary.json").read_text())
    assert summary["candidate_count"] == 1


def test_io_errors(tmp_path):
    with pytest.raises(InputError):
        read_covariate_spec(tmp_path / "nope.json")
    p = tmp_path / "arms.csv"
    p.write_text("arm_id,study_id,role,age\nT1,T1,treatment,\n")
    with pytest.raises(ValidationError, match="missing value"):
        read_arms_csv(p, [AGE])
    p.write_text("arm_id,study_id,role,age\nT1,T1,treatment,120\n")
    with pytest.raises(RangeError):
        read_arms_csv(p, [AGE])
