import numpy as np
import pytest

from quadgroup.applications import build_interaction, heritability_report
from quadgroup.data import Dataset, GroupSpec
from quadgroup.errors import ValidationError
from quadgroup.inference import estimate_q_sigma
from quadgroup.lasso import fit_initial

from conftest import random_dataset


def test_interaction_hand_instance():
    d = Dataset(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([0.5, 1.5]), ("a", "b"))
    w, g = build_interaction(d, [2.0, 0.0])
    np.testing.assert_array_equal(w.x, [[2, 4, 1, 2], [0, 0, 3, 4]])
    np.testing.assert_array_equal(w.y, d.y)
    assert g.indices == (1, 2)
    assert w.columns == ("D*a", "D*b", "a", "b")


def test_unit_treatment_duplicates_design(rng):
    d, _ = random_dataset(rng, 30, 5)
    w, g = build_interaction(d, np.ones(30))
    np.testing.assert_array_equal(w.x[:, :5], w.x[:, 5:])
    assert g == GroupSpec.range(1, 5)
    assert w.p == 10


def test_zero_treatment_warns(rng):
    d, _ = random_dataset(rng, 30, 5)
    with pytest.warns(UserWarning, match="identically zero"):
        w, _ = build_interaction(d, np.zeros(30))
    assert not w.x[:, :5].any()


def test_interaction_recovers_inputs(rng):
    d, _ = random_dataset(rng, 40, 6)
    t = rng.normal(size=40)
    w, _ = build_interaction(d, t)
    np.testing.assert_array_equal(w.x[:, 6:], d.x)
    np.testing.assert_allclose(w.x[:, :6] / d.x, np.repeat(t[:, None], 6, axis=1))


def test_interaction_shape_errors(rng):
    d, _ = random_dataset(rng, 30, 5)
    with pytest.raises(ValidationError):
        build_interaction(d, np.ones(29))
    with pytest.raises(ValidationError):
        build_interaction(d, np.full(30, np.nan))


def test_interaction_effect_detected(rng):
    n, p = 300, 20
    x = rng.standard_normal((n, p))
    t = rng.integers(0, 2, n).astype(float)
    y = x[:, 0] + 1.0 * t * x[:, 1] + rng.standard_normal(n)
    w, g = build_interaction(Dataset(x, y), t)
    est = estimate_q_sigma(w, fit_initial(w), g)
    assert est.q_hat / np.sqrt(est.v_hat) > 3


def test_single_group_report_matches_estimator(rng):
    d, _ = random_dataset(rng, 120, 40, k=4, amp=0.6)
    fit = fit_initial(d)
    g = GroupSpec.range(1, 6)
    (rec,) = heritability_report(d, [g], fit=fit)
    ref = estimate_q_sigma(d, fit, g)
    assert rec.estimate.q_hat == ref.q_hat
    assert rec.estimate.v_hat == ref.v_hat
    assert rec.proportion is None


def test_windows_bracket_estimate(rng):
    d, _ = random_dataset(rng, 150, 100, k=10, amp=0.4, rho=0.5)
    windows = [GroupSpec.range(10 * k + 1, 10 * k + 10) for k in range(10)]
    recs = heritability_report(d, windows, normalize=True)
    assert len(recs) == 10
    var_y = np.var(d.y, ddof=1)
    for r in recs:
        assert r.interval.lower <= r.estimate.q_hat <= r.interval.upper
        assert r.proportion[0] == pytest.approx(r.estimate.q_hat / var_y)
        assert set(r.to_json()) >= {"group", "q_hat", "ci", "proportion"}


def test_null_coverage():
    covered = 0
    reps = 200
    for seed in range(reps):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((100, 40))
        d = Dataset(x, rng.standard_normal(100))
        (rec,) = heritability_report(d, [GroupSpec.range(1, 5)])
        covered += rec.interval.covers(0.0)
    assert covered / reps >= 0.93


def test_report_validation(rng):
    d, _ = random_dataset(rng, 30, 5)
    with pytest.raises(ValidationError):
        heritability_report(d, [])
