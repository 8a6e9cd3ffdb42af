import csv

import numpy as np
import pytest

from surrex.crossval import (
    CV_FIELDS,
    CVRecord,
    CVSummary,
    FoldError,
    compare_cv,
    take_one_out,
    write_comparison_csv,
    write_cv_csv,
    write_forest_csv,
)
from surrex.errors import InsufficientDataError, ValidationError
from surrex.evidence import build_evidence_base
from surrex.mcmc import SamplerConfig
from surrex.surrogacy import ModelConfig
from surrex.surrogacy.models import build_data
from surrex.synthetic import generate_studies

from conftest import make_record

FOLD = SamplerConfig(iterations=1500, burn_in=500, n_chains=4, seed=5)


def record(sid, y2, ci, mean, interval):
    return CVRecord(sid, y2, ci, mean, interval)


def test_record_statistics():
    r = record("A", -0.2, (-0.4, 0.0), -0.25, (-0.65, 0.15))
    assert r.abs_discrepancy == pytest.approx(0.05)
    assert r.width_ratio == pytest.approx(2.0)
    assert r.covered
    assert not record("B", 0.5, (0.3, 0.7), 0.0, (-0.2, 0.2)).covered
    assert set(r.row()) == set(CV_FIELDS)


def test_summary_statistics():
    recs = [record(str(i), 0.0, (-1.0, 1.0), d, (-w, w)) for i, (d, w) in enumerate([(0.1, 1), (0.3, 2), (0.2, 3)])]
    s = CVSummary(recs, "x")
    assert s.discrepancy_median == pytest.approx(0.2)
    assert s.discrepancy_range == pytest.approx((0.1, 0.3))
    assert s.width_ratio_median == pytest.approx(2.0)
    assert s.width_ratio_range == pytest.approx((1.0, 3.0))
    assert s.coverage_fraction == 1.0
    assert s.to_dict()["n_folds"] == 3


def test_fold_excludes_only_held_out_y2():
    base = build_evidence_base(generate_studies(6))
    data = build_data(base, hold_out=["S03"])
    assert list(data.observed2) == [True, True, False, True, True, True]
    # the held-out study keeps its surrogate effect
    assert data.y1[2] == base.get("S03").effects.y1


def test_take_one_out_shape_and_determinism():
    base = build_evidence_base(generate_studies(14, seed=3))
    a = take_one_out(base, ModelConfig("dh"), FOLD, label="RCT", stream=(1,))
    assert [r.study_id for r in a.records] == base.ids
    assert all(r.width_ratio > 0 and r.abs_discrepancy >= 0 for r in a.records)
    lo, hi = a.discrepancy_range
    assert lo <= a.discrepancy_median <= hi
    assert a.to_dict()["fold_sampler"]["iterations"] == 1500
    small = build_evidence_base(generate_studies(5, seed=3))
    b = take_one_out(small, ModelConfig("dh"), FOLD, stream=(1,))
    c = take_one_out(small, ModelConfig("dh"), FOLD, stream=(1,))
    assert b.records == c.records


def test_noiseless_identity():
    recs = [make_record(f"S{i}", y1=v, y2=v, se1=0.005, se2=0.005, rho_w=0.0)
            for i, v in enumerate(np.linspace(-1.0, 0.5, 8))]
    s = take_one_out(build_evidence_base(recs), ModelConfig("dh"), FOLD)
    assert max(r.abs_discrepancy for r in s.records) < 0.03


def test_pnf_folds_run():
    base = build_evidence_base(generate_studies(5, seed=1))
    s = take_one_out(base, ModelConfig("pnf"), FOLD)
    assert len(s.records) == 5


def test_too_few_studies():
    with pytest.raises(InsufficientDataError):
        take_one_out(build_evidence_base(generate_studies(3)), sampler=FOLD)


def test_fold_error_names_study():
    recs = generate_studies(5, seed=2)
    bad = ModelConfig("pnf-bias")
    with pytest.raises(FoldError, match="S01") as info:
        take_one_out(build_evidence_base(recs), bad, FOLD)
    assert info.value.study_id == "S01" and info.value.exit_code == 2


def _summary(widths, label):
    recs = [record(str(i), 0.0, (-1, 1), 0.1, (-w, w)) for i, w in enumerate(widths)]
    return CVSummary(recs, label)


def test_compare_cv():
    a, b, c = _summary([2, 3], "RCT"), _summary([1, 2], "RCT+cRWE"), _summary([1, 1], "all")
    rows = compare_cv([a, a])
    assert rows[1]["delta_width_ratio_median"] == 0 and rows[1]["delta_discrepancy_median"] == 0
    rows = compare_cv([a, b, c])
    assert [r["scenario"] for r in rows] == ["RCT", "RCT+cRWE", "all"]
    assert rows[1]["delta_width_ratio_median"] < 0
    with pytest.raises(ValidationError):
        compare_cv([a])
    with pytest.raises(ValidationError):
        compare_cv([a, b], ["x"])


def test_writers(tmp_path):
    s = _summary([2, 3], "RCT")
    write_cv_csv(tmp_path / "cv.csv", s)
    with open(tmp_path / "cv.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == CV_FIELDS and rows[0]["covered"] == "1"
    write_forest_csv(tmp_path / "f.csv", s)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "study_id,kind,estimate,lo,hi" and len(lines) == 5
    write_comparison_csv(tmp_path / "cmp.csv", compare_cv([s, s]))
    assert (tmp_path / "cmp.csv").read_text().startswith("scenario,")
