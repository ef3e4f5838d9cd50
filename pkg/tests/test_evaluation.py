import math

import numpy as np
import pytest

from scanobs.evaluation import (
    FomEstimate,
    alroc,
    auc,
    compare_systems,
    curve_to_csv,
    empirical_lroc,
    empirical_roc,
    lroc_trapezoid_area,
)
from scanobs.observers import ObserverRecord


def _rec(t, j_star, label, binary=None):
    binary = t if binary is None else binary
    return ObserverRecord(float(t), int(j_star), int(label),
                          np.full(9, float(t)), float(binary))


def _synthetic(rng, n_sig, n_abs, shift=1.0, p_correct=0.8):
    records = [_rec(rng.normal(), 1, 0) for _ in range(n_abs)]
    for _ in range(n_sig):
        correct = rng.random() < p_correct
        records.append(_rec(rng.normal(shift), 1 if correct else 2, 1))
    return records


def test_perfect_observer():
    records = [_rec(-1.0 - i, 1, 0) for i in range(10)] \
        + [_rec(1.0 + i, 3, 3) for i in range(10)]
    assert alroc(records, n_bootstrap=50).value == 1.0
    assert auc(records, n_bootstrap=50).value == 1.0
    curve = empirical_lroc(records)
    assert lroc_trapezoid_area(curve) == pytest.approx(1.0)
    assert curve.pcl[-1] == 1.0 and curve.fpf[-1] == 1.0


def test_hopeless_observer():
    records = [_rec(1.0 + i, 1, 0) for i in range(10)] \
        + [_rec(-1.0 - i, 2, 1) for i in range(10)]  # always mislocalized too
    assert alroc(records, n_bootstrap=50).value == 0.0
    assert auc(records, n_bootstrap=50).value == 0.0


def test_guessing_observer_alroc_near_chance():
    # with exchangeable scores and uniform localization over 9 sites the
    # expected ALROC is (1/2) * (1/9) = 1/18
    rng = np.random.default_rng(0)
    n = 4000
    records = [_rec(rng.normal(), 1, 0) for _ in range(n)]
    records += [_rec(rng.normal(), rng.integers(1, 10), 5) for _ in range(n)]
    est = alroc(records, n_bootstrap=10)
    assert abs(est.value - 1.0 / 18.0) < 3.0 * math.sqrt(0.5 / 9 / n)
    assert abs(auc(records, n_bootstrap=10).value - 0.5) < 0.03


def test_pairwise_equals_trapezoid():
    rng = np.random.default_rng(1)
    for trial in range(5):
        records = _synthetic(rng, 150, 120, shift=0.8)
        pair = alroc(records, n_bootstrap=10).value
        trap = lroc_trapezoid_area(empirical_lroc(records))
        # identical up to tie handling on the discrete grid
        assert pair == pytest.approx(trap, abs=1.0 / min(150, 120))


def test_roc_pairwise_equals_trapezoid():
    rng = np.random.default_rng(2)
    records = _synthetic(rng, 200, 180)
    pair = auc(records, n_bootstrap=10).value
    curve = empirical_roc(records)
    assert pair == pytest.approx(float(np.trapezoid(curve.pcl, curve.fpf)),
                                 abs=1.0 / 180)


def test_alroc_never_exceeds_auc():
    rng = np.random.default_rng(3)
    for trial in range(10):
        records = _synthetic(rng, 100, 100, shift=rng.uniform(0, 2),
                             p_correct=rng.uniform(0.2, 1.0))
        a = alroc(records, n_bootstrap=10).value
        b = auc(records, n_bootstrap=10).value
        assert a <= b + 1e-12


def test_monotone_transform_invariance():
    rng = np.random.default_rng(4)
    records = _synthetic(rng, 120, 120)
    mapped = [ObserverRecord(math.atan(r.statistic) * 3.0 + 1.0,
                             r.chosen_location, r.true_label, r.per_location,
                             math.atan(r.binary_statistic))
              for r in records]
    assert alroc(records, n_bootstrap=10).value == pytest.approx(
        alroc(mapped, n_bootstrap=10).value, abs=1e-12)
    assert auc(records, n_bootstrap=10).value == pytest.approx(
        auc(mapped, n_bootstrap=10).value, abs=1e-12)


def test_ties_get_half_credit():
    records = [_rec(0.0, 1, 0), _rec(0.0, 1, 1)]
    assert auc(records, n_bootstrap=10).value == 0.5
    assert alroc(records, n_bootstrap=10).value == 0.5
    records = [_rec(0.0, 1, 0), _rec(0.0, 2, 1)]  # tied but mislocalized
    assert alroc(records, n_bootstrap=10).value == 0.0


def test_bootstrap_se_tracks_monte_carlo_se():
    # the within-class bootstrap SE should approximate the sampling SD of
    # the ALROC over independent datasets
    rng = np.random.default_rng(5)
    values = []
    for _ in range(200):
        records = _synthetic(rng, 200, 200, shift=1.0, p_correct=0.85)
        values.append(alroc(records, n_bootstrap=10).value)
    mc_se = np.std(values, ddof=1)
    records = _synthetic(rng, 200, 200, shift=1.0, p_correct=0.85)
    boot_se = alroc(records, n_bootstrap=1000,
                    rng=np.random.default_rng(6)).std_error
    assert abs(boot_se - mc_se) / mc_se < 0.25


def test_bootstrap_reproducible_and_counted():
    rng = np.random.default_rng(7)
    records = _synthetic(rng, 80, 80)
    a = alroc(records, n_bootstrap=200, rng=np.random.default_rng(8))
    b = alroc(records, n_bootstrap=200, rng=np.random.default_rng(8))
    assert a.std_error == b.std_error
    assert a.n_bootstrap == 200
    assert a.std_error > 0


def test_requires_both_classes():
    with pytest.raises(ValueError):
        alroc([_rec(0.0, 1, 0)])
    with pytest.raises(ValueError):
        auc([_rec(0.0, 1, 1)])


def test_roc_requires_binary_statistic():
    bad = [ObserverRecord(0.0, 1, 0, np.zeros(9), None),
           ObserverRecord(1.0, 1, 1, np.zeros(9), None)]
    with pytest.raises(ValueError):
        auc(bad)


def test_compare_systems_agree_and_disagree():
    def fom(v):
        return FomEstimate(v, 0.01, 10)

    agree = compare_systems([("s1", fom(0.8), fom(0.9)),
                             ("s2", fom(0.6), fom(0.7))])
    assert agree["alroc_ranking"] == ["s1", "s2"]
    assert not agree["rankings_disagree"]

    flip = compare_systems([("s1", fom(0.8), fom(0.7)),
                            ("s2", fom(0.6), fom(0.9))])
    assert flip["alroc_ranking"] == ["s1", "s2"]
    assert flip["auc_ranking"] == ["s2", "s1"]
    assert flip["rankings_disagree"]

    with pytest.raises(ValueError):
        compare_systems([])


def test_curve_csv(tmp_path):
    rng = np.random.default_rng(9)
    curve = empirical_lroc(_synthetic(rng, 30, 30))
    path = tmp_path / "curve.csv"
    curve_to_csv(path, curve)
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    assert data.shape == (len(curve.thresholds), 3)
    np.testing.assert_allclose(data[1:, 0], curve.thresholds[1:])
    np.testing.assert_allclose(data[:, 1], curve.fpf)
