import json
import math

import pytest
from hypothesis import given, strategies as st

from simident import designs, sbi, stats_io
from simident.sbi import SbiReport, TrialResult
from simident.stats_io import ExperimentRow, SweepRow

names = st.sampled_from(designs.DESIGN_NAMES)
fams = st.sampled_from(designs.FAMILIES)
labels = st.sampled_from([designs.ID, designs.NOT_ID, designs.UNKNOWN])
pos = st.floats(0, 1e6, allow_nan=False)

rows = st.builds(ExperimentRow, names, fams, st.integers(1, 10**6), st.integers(2, 100),
                 pos, st.integers(0, 2**31), pos, pos,
                 st.sampled_from([designs.ID, designs.NOT_ID]), labels, st.booleans())


def report(q_true=1.5, dqs=(0.1, 0.3)):
    trials = [TrialResult(1.0, 1.0 + d, d, -5.0, -6.0, -7.0, q_true, 0.123, i)
              for i, d in enumerate(dqs)]
    return sbi.build_report(designs.get_design("confounded", "linear"), trials,
                            sbi.SbiConfig(k=len(dqs), seed=7))


def test_header_is_exact():
    text = stats_io.rows_to_csv([])
    assert text == "design,family,n,k,lambda,seed,dq_norm,dq_se,decision,ground_truth,match\n"


@given(st.lists(rows, max_size=6))
def test_table_csv_round_trip(rs):
    assert stats_io.rows_from_csv(stats_io.rows_to_csv(rs)) == rs


@given(st.lists(st.builds(SweepRow, pos, pos, pos, st.integers(1, 10**5), st.integers(2, 50),
                          st.integers(0, 2**31)), max_size=6))
def test_sweep_csv_round_trip(rs):
    assert stats_io.sweep_from_csv(stats_io.sweep_to_csv(rs)) == rs


def test_match_column_values():
    base = dict(design="iv", family="gp", n=50, k=5, lam=1.0, seed=0, dq_norm=0.4, dq_se=0.1)
    assert ExperimentRow(**base, decision="NotID", ground_truth="NotID").match is True
    assert ExperimentRow(**base, decision="ID", ground_truth="NotID").match is False
    assert ExperimentRow(**base, decision="ID", ground_truth="Unknown").match is None
    text = stats_io.rows_to_csv([ExperimentRow(**base, decision="ID", ground_truth="Unknown")])
    assert text.strip().endswith(",ID,Unknown,na")


def test_inconsistent_match_flag_rejected():
    text = stats_io.rows_to_csv([ExperimentRow("iv", "linear", 5, 2, 1.0, 0, 0.1, 0.0, "ID", "ID")])
    with pytest.raises(ValueError):
        stats_io.rows_from_csv(text.replace(",true", ",false"))
    with pytest.raises(ValueError):
        stats_io.rows_from_csv("bad,header\n")


def test_negative_gap_rejected():
    with pytest.raises(ValueError):
        ExperimentRow("iv", "linear", 5, 2, 1.0, 0, -0.1, 0.0, "ID", "ID")


def test_row_from_report_normalizes():
    r = report(q_true=-2.0)
    row = stats_io.row_from_report(r, designs.NOT_ID)
    assert row.dq_norm == pytest.approx(0.2 / 2.0)
    assert row.dq_se == pytest.approx(math.sqrt(0.02) / math.sqrt(2) / 2.0)
    assert (row.n, row.k, row.seed, row.lam) == (5000, 2, 7, 1.0)


def test_zero_true_effect_is_flagged_raw():
    row = stats_io.row_from_report(report(q_true=0.0), designs.ID)
    assert not row.normalized and row.dq_norm == pytest.approx(0.2)
    text = stats_io.rows_to_csv([row])
    assert ",raw:0.2" in text
    assert stats_io.rows_from_csv(text) == [row]


def test_report_json_round_trip_and_layout():
    r = report()
    text = stats_io.report_to_json(r)
    d = json.loads(text)
    assert set(d) == {"design", "family", "trials", "mu_dq", "sigma_dq", "z", "decision",
                      "q_true", "threshold", "failed_trials", "config"}
    assert "wall_time" not in text
    back = stats_io.report_from_json(text)
    assert back.mu == r.mu and back.sigma == r.sigma and back.decision == r.decision
    assert [t.dq for t in back.trials] == [t.dq for t in r.trials]
    assert stats_io.report_to_json(back) == text


def test_non_finite_values_survive_json():
    r = report(dqs=(0.2, 0.2))
    assert math.isinf(r.z)
    back = stats_io.report_from_json(stats_io.report_to_json(r))
    assert back.z == r.z


def test_to_json_is_sorted_and_plain():
    from simident.baseline import BaselineResult
    text = stats_io.to_json(BaselineResult(0.1, 0.3, 0.2, [0.1, 0.3], 0))
    assert json.loads(text)["qs"] == [0.1, 0.3]
    assert text.index('"q_max"') < text.index('"q_min"') < text.index('"qs"')


def test_sweep_normalization_divides_by_true_effect(monkeypatch):
    fake = report(q_true=-4.0, dqs=(0.4, 0.8))
    monkeypatch.setattr(sbi, "run", lambda *a, **k: fake)
    cfg = sbi.SbiConfig(k=2)
    raw = stats_io.rdd_cate_sweep("linear", [1.0, 0.5], cfg)
    norm = stats_io.rdd_cate_sweep("linear", [1.0, 0.5], cfg, normalize=True)
    assert [r.distance for r in raw] == [0.5, 1.0]
    assert norm[0].dq_mean == pytest.approx(raw[0].dq_mean / 4.0)
    assert norm[0].dq_se == pytest.approx(raw[0].dq_se / 4.0)
    with pytest.raises(ValueError):
        stats_io.rdd_cate_sweep("linear", [-0.1], cfg)
