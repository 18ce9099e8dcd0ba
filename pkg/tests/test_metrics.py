import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reference import monte_carlo_overlap
from vpmeta import geometry as geo
from vpmeta import metrics as mt
from vpmeta import sim
from vpmeta.errors import EmptyRecords, MismatchedCohorts, NonPositiveInput
from vpmeta.seqmodel import ArchSpec, forward, init_params

ALPHA = math.pi / 8


def _record(u, v, beta=ALPHA, t=0):
    return sim.score_tick(t, geo.normalize(u), sim.PrefetchDecision(geo.normalize(v), beta, 0.0), ALPHA)


def _random_records(n, seed=0):
    rng = np.random.default_rng(seed)
    us = geo.random_directions(rng, n)
    # predictions scattered around the truth so ratios span (0, 1)
    vs = geo.normalize(us + rng.normal(scale=0.3, size=us.shape))
    betas = rng.uniform(ALPHA, math.pi / 2, n)
    return [_record(u, v, b, t) for t, (u, v, b) in enumerate(zip(us, vs, betas))]


def test_mae_examples():
    u = [0, 0, -1]
    assert mt.mae([_record(u, u)] * 4) == 0.0
    side = [1, 0, 0]
    assert mt.mae([_record(u, u), _record(u, side)] * 3) == pytest.approx(math.pi / 4, abs=1e-15)
    with pytest.raises(EmptyRecords):
        mt.mae([])


def test_mspr_examples():
    u = [0, 0, -1]
    assert mt.mspr([_record(u, u)] * 3) == 1.0
    assert mt.mspr([_record(u, u), _record(u, [0, 0, 1])] * 2) == 0.5
    with pytest.raises(EmptyRecords):
        mt.mspr([])


def test_aggregates_match_recomputation_from_raw_streams():
    recs = _random_records(300)
    gam = [geo.angular_distance(r.actual, r.predicted) for r in recs]
    assert mt.mae(recs) == float(np.mean(gam))
    assert mt.mspr(recs, ALPHA) == mt.mspr(recs)
    back = sim.parse_records_csv(sim.format_records_csv(recs))
    assert mt.run_metrics("1", back) == mt.run_metrics("1", recs)


def test_mspr_agrees_with_monte_carlo():
    rng = np.random.default_rng(3)
    for r in _random_records(20, seed=5):
        p, se = monte_carlo_overlap(rng, r.actual, ALPHA, r.predicted, r.beta, 200_000)
        assert abs(r.overlap_ratio - p) <= 3 * se + 1e-12


def test_run_metrics_fields():
    recs = _random_records(10)
    m = mt.run_metrics(7, recs)
    assert m.user_id == "7" and m.n_ticks == 10 and m.missing_tiles is None
    assert m.total_prefetched_area == pytest.approx(sum(geo.solid_angle(r.beta) for r in recs), rel=1e-14)
    assert 0 <= m.mae <= math.pi and 0 <= m.mspr <= 1


def _rm(uid, mspr, mae=0.1):
    return mt.RunMetrics(str(uid), mae, mspr, 1.0, 10)


def test_iwp_examples():
    base = [_rm(0, 0.35), _rm(1, 0.9)]
    assert mt.iwp(base, base) == 0.0
    assert mt.iwp(base, [_rm(0, 0.89), _rm(1, 0.9)]) == pytest.approx(0.54, abs=1e-12)


def test_iwp_tie_breaks_on_lowest_id():
    base = [_rm(10, 0.5), _rm(2, 0.5), _rm(3, 0.7)]
    ours = [_rm(10, 0.9), _rm(2, 0.6), _rm(3, 0.7)]
    assert mt.iwp(base, ours) == pytest.approx(0.1)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=12),
       st.randoms(use_true_random=False), st.floats(0.01, 1.0))
def test_iwp_permutation_and_scaling_invariance(pairs, rnd, scale):
    base = [_rm(i, b) for i, (b, _) in enumerate(pairs)]
    ours = [_rm(i, o) for i, (_, o) in enumerate(pairs)]
    ref = mt.iwp(base, ours)
    perm = list(range(len(pairs)))
    rnd.shuffle(perm)
    assert mt.iwp([base[i] for i in perm], [ours[i] for i in perm]) == ref
    scaled_b = [_rm(m.user_id, m.mspr * scale) for m in base]
    scaled_o = [_rm(m.user_id, m.mspr * scale) for m in ours]
    assert mt.iwp(scaled_b, scaled_o) == pytest.approx(ref * scale, abs=1e-15)


def test_mismatched_cohorts():
    with pytest.raises(MismatchedCohorts):
        mt.iwp([_rm(0, 0.5)], [_rm(1, 0.5)])
    with pytest.raises(MismatchedCohorts):
        mt.iwp([], [])
    with pytest.raises(MismatchedCohorts):
        mt.cohort_report("1", [_rm(0, 0.5), _rm(0, 0.6)], [_rm(0, 0.5), _rm(0, 0.6)])


def test_cohort_report_contents():
    base = [_rm(0, 0.35, 0.4), _rm(1, 0.9, 0.2)]
    ours = [_rm(0, 0.89, 0.1), _rm(1, 0.9, 0.2)]
    eq = mt.equal_bandwidth_section([_rm(0, 0.5), _rm(1, 0.95)], ours, {"0": 0.5, "1": 0.6})
    rep = mt.cohort_report("3", base, ours, equal_bandwidth=eq)
    assert rep.delta_mae == pytest.approx({"0": -0.3, "1": 0.0})
    assert rep.iwp == pytest.approx(0.54)
    assert eq["iwp"] == pytest.approx(0.39) and eq["delta_mspr"]["1"] == pytest.approx(-0.05)
    doc = json.loads(rep.to_json())
    assert doc["iwp"] == pytest.approx(0.54) and len(doc["users"]) == 2
    rows = {r["metric"]: r for r in rep.summary_rows()}
    assert rows["delta_mae_deg"]["min"] == pytest.approx(math.degrees(-0.3))
    assert rows["delta_mspr_pct"]["max"] == pytest.approx(54.0)
    assert "iwp_equal_bw_pct" in rows
    assert rep.to_csv().splitlines()[0] == "video,metric,min,max,mean"


def test_identical_streams_give_zero_deltas():
    base = [_rm(i, 0.1 * i + 0.2, 0.05 * i) for i in range(4)]
    rep = mt.cohort_report("1", base, list(base))
    assert all(v == 0.0 for v in rep.delta_mae.values())
    assert all(v == 0.0 for v in rep.delta_mspr.values()) and rep.iwp == 0.0


def _models(n, S=5):
    return [init_params(ArchSpec(3, 4, 3, S), s) for s in range(n)]


def test_ecls_examples():
    rng = np.random.default_rng(0)
    window = geo.random_directions(rng, 5)
    (m,) = _models(1)
    own = geo.normalize(forward(m, window))
    assert np.allclose(mt.ecls_oracle_predict([m], window, np.array([1.0, 0, 0])), own)
    models = _models(4)
    truth = geo.normalize(forward(models[2], window))
    assert np.allclose(mt.ecls_oracle_predict(models, window, truth), truth)
    with pytest.raises(EmptyRecords):
        mt.ecls_oracle_predict([], window, truth)


def test_ecls_matches_brute_force():
    rng = np.random.default_rng(1)
    models = _models(6)
    for _ in range(20):
        window, truth = geo.random_directions(rng, 5), geo.random_directions(rng, 1)[0]
        preds = [geo.normalize(forward(m, window)) for m in models]
        best = preds[int(np.argmin([geo.angular_distance(p, truth) for p in preds]))]
        assert np.allclose(mt.ecls_oracle_predict(models, window, truth), best, rtol=0, atol=1e-15)


def test_cub360_examples():
    p, q = geo.normalize([1, 1, 0]), geo.normalize([0, 0, 1])
    assert np.allclose(mt.cub360_knn_predict([(q, 0.5), (p, 0.1)], 1), p)
    assert np.allclose(mt.cub360_knn_predict([(p, 0.3), (p, 0.3)], 2), p)
    three = [(np.array([1.0, 0, 0]), 0.1), (np.array([0, 1.0, 0]), 0.2), (np.array([0, 0, 1.0]), 0.4)]
    # weights proportional to 10 : 5 : 2.5, i.e. (4, 2, 1) / sqrt(21)
    assert np.allclose(mt.cub360_knn_predict(three, 3), np.array([4, 2, 1]) / math.sqrt(21), rtol=0, atol=2e-5)
    assert np.allclose(mt.cub360_knn_predict(three + [(np.array([0, -1.0, 0]), 5.0)], 3),
                       np.array([4, 2, 1]) / math.sqrt(21), atol=2e-5)
    with pytest.raises(EmptyRecords):
        mt.cub360_knn_predict([], 1)
    with pytest.raises(ValueError):
        mt.cub360_knn_predict(three, 0)


def test_window_distance():
    a = np.tile([0.0, 0.0, -1.0], (4, 1))
    b = np.array([[0, 0, -1.0], [1, 0, 0], [0, 0, -1.0], [0, 0, 1.0]])
    assert mt.window_distance(a, b) == pytest.approx((math.pi / 2 + math.pi) / 4)


def test_flops_examples():
    assert mt.flops_per_training_cycle(ArchSpec(3, 128, 3, 100)) == 40_243_200
    assert mt.flops_per_training_cycle(ArchSpec(1, 128, 1, 100)) == 39_628_800
    assert mt.flops_with_sequence_length(ArchSpec(3, 128, 3, 100), 0) == 0
    with pytest.raises(ValueError):
        mt.flops_per_training_cycle(ArchSpec(3, 1, 3, 10, cell="linear"))


@given(st.integers(1, 50), st.integers(1, 64), st.integers(1, 5), st.integers(1, 200))
def test_flops_formula(i, d, o, s):
    assert mt.flops_per_training_cycle(ArchSpec(i, d, o, s)) == 3 * 2 * s * (i + d) * d * 4


def test_linear_flops_convention():
    fwd, total = mt.linear_flops(7, 5, 3)
    assert fwd == 2 * 7 * 5 * 3 and total == 6 * 7 * 5 * 3


def test_battery_steps():
    per_step = 40_243_200 + 39_628_800
    steps = mt.battery_steps(50_400, 1.18e-11, per_step)
    assert steps == pytest.approx(5.35e7, rel=5e-3)
    assert steps == math.floor(50_400 / (1.18e-11 * per_step))
    assert mt.battery_steps(0, 1.18e-11, per_step) == 0
    assert mt.battery_steps(2 * 50_400, 1.18e-11, per_step) in (2 * steps, 2 * steps + 1)
    for bad in ((-1, 1e-11, 10), (1, 0, 10), (1, 1e-11, 0)):
        with pytest.raises(NonPositiveInput):
            mt.battery_steps(*bad)
