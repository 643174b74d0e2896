import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrp.data import N_CELLS
from mrp.model import ModelSpec, ParameterVector
from mrp.poststrat import CellPrediction, EstimateSeries, SubsetQuery, poststratify, series_from_cell_theta
from mrp.replication import compare_runs, smoothness_diagnostic, verify_manifest, write_manifest
from mrp.replication.compare import ComparisonError, second_difference_msd, sign_changes
from mrp.replication.manifest import IntegrityError, StagingError, canonical_json
from mrp.replication.simulate import PRESETS, SimulationConfigError, SyntheticConfig, simulate_survey

STAMP = "2024-01-01T00:00:00Z"


def curve_series(curves, slice_="all"):
    """EstimateSeries from {state: 5-point curve}."""
    rows = [{"survey_id": "t", "state": s, "income": i + 1, "slice": slice_, "mean": float(v), "q25": None,
             "q75": None, "q025": None, "q975": None, "raw_p": None, "raw_n": 0}
            for s, c in curves.items() for i, v in enumerate(c)]
    return EstimateSeries(rows)


# simulator

def test_null_truth_half(table, spec):
    truth = ParameterVector(np.zeros(spec.n_fixed), np.zeros(spec.n_beta), np.ones(spec.n_batches))
    data, rec = simulate_survey(SyntheticConfig(n=1_000_000, seed=5, truth=truth), table, spec)
    assert abs(data.vote.mean() - 0.5) <= 0.002
    assert rec.population_value == 0.5


def test_presets():
    assert PRESETS == {"pew2008-scale": 19_170, "annenberg2004-scale": 43_970}
    assert SyntheticConfig.preset("annenberg2004-scale").n == 43_970
    with pytest.raises(SimulationConfigError):
        SyntheticConfig.preset("gallup")


def test_truth_record_consistent(table, sim2000):
    rec = sim2000[1]
    assert rec.population_value == poststratify(CellPrediction(rec.cell_theta), table, SubsetQuery()).mean
    row = rec.series.by_key()[(12, 3, "white")]
    assert row["mean"] == poststratify(CellPrediction(rec.cell_theta), table,
                                       SubsetQuery(state=12, income=3, slice="white")).mean


@pytest.mark.parametrize("kw", [dict(n=0), dict(n=10, bias_scale=-0.1), dict(n=10, sampling_weights=np.zeros(N_CELLS))])
def test_config_errors(table, spec, kw):
    with pytest.raises(SimulationConfigError):
        simulate_survey(SyntheticConfig(**kw), table, spec)


def test_custom_sampling_weights(table, spec):
    w = np.zeros(N_CELLS)
    per_state = N_CELLS // 51
    w[:20] = 1.0  # whites in states 1 and 2 only
    w[per_state:per_state + 20] = 1.0
    data, _ = simulate_survey(SyntheticConfig(n=500, seed=1, sampling_weights=w), table, spec)
    assert set(data.state.tolist()) == {1, 2}
    assert set(data.ethnicity.tolist()) == {1}


def test_bias_changes_votes_not_truth(table, spec):
    a, ta = simulate_survey(SyntheticConfig(n=3000, seed=4), table, spec)
    b, tb = simulate_survey(SyntheticConfig(n=3000, seed=4, bias_scale=0.3), table, spec)
    assert np.array_equal(ta.cell_theta, tb.cell_theta)
    assert np.all(ta.cell_bias == 0) and tb.cell_bias.std() == pytest.approx(0.3, rel=0.1)


def test_simulation_deterministic(table, spec):
    a, _ = simulate_survey(SyntheticConfig(n=400, seed=8), table, spec)
    b, _ = simulate_survey(SyntheticConfig(n=400, seed=8), table, spec)
    assert a.same_responses(b)


# smoothness

def test_smoothness_examples():
    assert second_difference_msd([0.4] * 5) == 0.0
    assert second_difference_msd([0.3, 0.35, 0.4, 0.45, 0.5]) == pytest.approx(0.0, abs=1e-30)
    assert second_difference_msd([0.3, 0.5, 0.3, 0.5, 0.3]) == pytest.approx(0.16, rel=1e-12)
    assert sign_changes([0.3, 0.5, 0.3, 0.5, 0.3]) == 3
    assert sign_changes([0.3, 0.35, 0.4, 0.45, 0.5]) == 0


def test_smoothness_pooling_and_missing_point():
    s = curve_series({1: [0.3, 0.5, 0.3, 0.5, 0.3], 2: [0.5] * 5})
    rep = smoothness_diagnostic(s, weights={1: 1.0, 2: 3.0})
    assert rep.pooled["all"] == pytest.approx(0.04)
    assert rep.per_state[(1, "all")]["sign_changes"] == 3
    bad = EstimateSeries([r for r in s.rows if not (r["state"] == 2 and r["income"] == 4)])
    with pytest.raises(ComparisonError, match="state 2"):
        smoothness_diagnostic(bad)


curves = st.lists(st.floats(-1, 1), min_size=5, max_size=5)


@given(curves, st.floats(-5, 5), st.floats(-10, 10))
def test_smoothness_shift_and_scale(c, shift, scale):
    base = second_difference_msd(c)
    assert second_difference_msd(np.array(c) + shift) == pytest.approx(base, rel=1e-9, abs=1e-12)
    mean = np.mean(c)
    scaled = mean + scale * (np.array(c) - mean)
    assert second_difference_msd(scaled) == pytest.approx(scale**2 * base, rel=1e-9, abs=1e-12)


# comparison

def test_compare_identity_and_shift(sim2000):
    a = sim2000[1].series
    same = compare_runs(a, a)
    assert same.max_abs_diff == 0.0 and same.sign_agreement == 1.0
    shifted = compare_runs(a, a.shifted(0.01))
    assert shifted.mean_abs_diff == pytest.approx(0.01, abs=1e-12)
    assert shifted.sign_agreement == 1.0


@given(st.integers(0, 2**32 - 1))
def test_compare_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    a = curve_series({s: rng.random(5) for s in range(1, 6)})
    b = curve_series({s: rng.random(5) for s in range(1, 6)})
    ab, ba = compare_runs(a, b), compare_runs(b, a)
    assert [p["diff"] for p in ab.pairs] == [-p["diff"] for p in ba.pairs]
    assert ab.mean_abs_diff == ba.mean_abs_diff and ab.max_abs_diff == ba.max_abs_diff
    assert ab.mean_diff == pytest.approx(-ba.mean_diff, abs=1e-15)
    assert ab.sign_agreement == ba.sign_agreement
    assert ab.smoothness_a.pooled == ba.smoothness_b.pooled


def test_compare_key_mismatch_lists_keys():
    a = curve_series({1: [0.1] * 5, 2: [0.2] * 5})
    b = curve_series({1: [0.1] * 5, 3: [0.2] * 5})
    with pytest.raises(ComparisonError, match=r"\(2, 1, 'all'\)"):
        compare_runs(a, b)


def test_compare_report_outputs(tmp_path, sim2000):
    rep = compare_runs(sim2000[1].series, sim2000[1].series.shifted(-0.02))
    doc = json.loads(rep.to_json(tmp_path / "r.json"))
    assert doc["n_pairs"] == 510 and doc["mean_diff"] == pytest.approx(-0.02)
    assert len(rep.to_csv(tmp_path / "r.csv").read_text().splitlines()) == 511


# manifest

def test_manifest_deterministic(tmp_path):
    cfg = tmp_path / "spec.json"
    cfg.write_text('{"a": 1}')
    write_manifest("pre", tmp_path / "m1.json", configs={"spec": cfg, "sampler": "{}"}, timestamp=STAMP)
    write_manifest("pre", tmp_path / "m2.json", configs={"spec": cfg, "sampler": "{}"}, timestamp=STAMP)
    assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
    m = json.loads((tmp_path / "m1.json").read_text())
    assert "outputs" not in m and len(m["configs"]["spec"]["sha256"]) == 64


def test_manifest_detects_config_byte_change(tmp_path):
    cfg = tmp_path / "spec.json"
    cfg.write_text('{"a": 1}')
    a = write_manifest("pre", tmp_path / "m1.json", configs={"spec": cfg}, timestamp=STAMP)
    cfg.write_text('{"a": 2}')
    b = write_manifest("pre", tmp_path / "m2.json", configs={"spec": cfg}, timestamp=STAMP)
    assert a["configs"]["spec"]["sha256"] != b["configs"]["spec"]["sha256"]
    with pytest.raises(IntegrityError):
        verify_manifest(tmp_path / "m1.json", configs={"spec": cfg})


def test_manifest_staging(tmp_path):
    with pytest.raises(StagingError):
        write_manifest("post", tmp_path / "post.json", outputs={}, pre_manifest=tmp_path / "nope.json")
    with pytest.raises(StagingError):
        write_manifest("pre", tmp_path / "pre.json", configs={})


def test_manifest_post_extends_pre_and_verifies(tmp_path):
    pre = tmp_path / "pre.json"
    write_manifest("pre", pre, configs={"spec": "x"}, statement="plan", timestamp=STAMP)
    out = tmp_path / "est.csv"
    out.write_text("1\n")
    post = write_manifest("post", tmp_path / "post.json", outputs={"est": out}, pre_manifest=pre, timestamp=STAMP)
    assert post["pre"] == json.loads(pre.read_text())
    assert verify_manifest(tmp_path / "post.json", configs={"spec": "x"}, outputs={"est": out},
                           pre_manifest=pre) == ["pre_manifest", "est", "spec"]
    out.write_text("2\n")
    with pytest.raises(IntegrityError, match="est"):
        verify_manifest(tmp_path / "post.json", outputs={"est": out})
    pre.write_text(pre.read_text().replace("plan", "plan!"))
    with pytest.raises(IntegrityError):
        verify_manifest(tmp_path / "post.json", pre_manifest=pre)


def test_canonical_json_sorted():
    assert canonical_json({"b": 1, "a": [0.1, 2]}) == '{"a":[0.1,2],"b":1}\n'
