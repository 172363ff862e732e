import math

import numpy as np
import pytest

from quadgroup.data import GroupSpec
from quadgroup.errors import ValidationError
from quadgroup.simharness import (
    Methods,
    Scenario,
    adaptive_power,
    generate,
    run_scenario,
    stream,
    true_values,
)


def _truth_by_loops(sc):
    """Quadratic forms evaluated entry by entry from the stated design."""
    b = sc.beta()
    g = [j - 1 for j in sc.group().indices]
    cov = sc.covariance()
    q_sigma = sum(b[i] * cov[i, j] * b[j] for i in g for j in g)
    return q_sigma, sum(b[i] ** 2 for i in g)


def test_dense_truth():
    sc = Scenario("dense", 500, delta=0.06)
    tv = true_values(sc)
    q_sigma, q_id = _truth_by_loops(sc)
    # support 25..50 meets the group 30..200 in 21 coordinates
    assert tv["q_identity"] == pytest.approx(21 * 0.06**2) == pytest.approx(q_id)
    assert tv["q_sigma"] == pytest.approx(q_sigma)
    assert tv["q_identity"] == pytest.approx(0.076, abs=5e-4)
    assert tv["q_sigma"] == pytest.approx(0.275, abs=5e-4)


def test_highcorr_truth():
    tv = true_values(Scenario("highcorr", 500, delta=0.5))
    assert tv["q_identity"] == pytest.approx(0.5)
    assert tv["q_sigma"] == pytest.approx(0.25 + 0.25 + 2 * 0.8 * 0.25)


def test_null_truth_is_zero():
    tv = true_values(Scenario("dense", 500, delta=0.0))
    assert tv == {"q_sigma": 0.0, "q_identity": 0.0}


@pytest.mark.parametrize("name,p", [("highcorr", 5), ("hier1", 20)])
def test_generator_moments(name, p):
    sc = Scenario(name, 100_000, p=p, delta=0.5)
    d = generate(sc, 0)
    emp = d.x.T @ d.x / d.n
    assert np.max(np.abs(emp - sc.covariance())) < 0.02
    resid = d.y - d.x @ sc.beta()
    assert abs(resid.mean()) < 0.02 and abs(resid.std() - 1.0) < 0.02


def test_hier2_covariance_blocks():
    cov = Scenario("hier2", 800).covariance()
    assert cov[0, 49] == 0.7 and cov[49, 50] == 0.0 and cov[450, 499] == 0.7
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_substreams_independent():
    draws = {(r, role): stream(7, r, role).standard_normal(20_000) for r in range(3) for role in range(3)}
    keys = list(draws)
    for i, a in enumerate(keys):
        for b in keys[i + 1 :]:
            assert abs(np.corrcoef(draws[a], draws[b])[0, 1]) < 0.05
    np.testing.assert_array_equal(stream(7, 1, 2).standard_normal(5), stream(7, 1, 2).standard_normal(5))
    assert not np.array_equal(stream(7, 1, 2).standard_normal(5), stream(8, 1, 2).standard_normal(5))


def test_adaptive_power_examples():
    s0 = GroupSpec((1, 3, 5, 7))
    assert adaptive_power([[1], [3], [5], [7]], s0) == 1.0
    assert adaptive_power([[1, 2], [3]], s0) == pytest.approx((0.5 + 1) / 4)
    assert adaptive_power([[2, 4]], s0) == 0.0
    assert adaptive_power([], s0) == 0.0
    ten = GroupSpec(tuple(range(1, 452, 50)))
    assert adaptive_power([list(range(1, 51))], ten) == pytest.approx(0.002)


def test_scenario_validation():
    with pytest.raises(ValidationError):
        Scenario("sparse", 100)
    with pytest.raises(ValidationError):
        Scenario("dense", 100, p=50)
    with pytest.raises(ValidationError):
        Scenario("dense", 100, replicates=0)


def _small():
    return Scenario("dense", 120, p=200, delta=0.06, replicates=4, seed=11)


def test_rates_and_layout():
    rep = run_scenario(_small())
    assert rep.completed == 4 and not rep.failures
    for table, method, value, _ in rep.rows:
        if table in ("decision", "coverage") and not math.isnan(value):
            assert 0.0 <= value <= 1.0
    names = {m for _, m, _, _ in rep.rows}
    assert {"phi_Sigma(1)", "phi_I(0)", "CI_Sigma(1)", "proposed_Sigma_abs_bias", "z_Sigma(0)_sd"} <= names


def _read_all(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir()) if p.name != "timing.json"}


def test_reports_byte_identical(tmp_path):
    a = run_scenario(_small())
    b = run_scenario(_small())
    a.write(tmp_path / "a", runtime=1.0)
    b.write(tmp_path / "b", runtime=2.0)
    assert _read_all(tmp_path / "a") == _read_all(tmp_path / "b")
    assert (tmp_path / "a" / "timing.json").exists()


def _values(rep):
    # NaN placeholders compare unequal to themselves
    return [(t, m, None if math.isnan(v) else v) for t, m, v, _ in rep.rows]


def test_worker_count_invariance():
    assert _values(run_scenario(_small(), threads=1)) == _values(run_scenario(_small(), threads=2))


def test_hier_summary():
    sc = Scenario("hier1", 200, p=40, replicates=2, seed=5)
    rep = run_scenario(sc, Methods())
    fwer = rep.value("hier", "FWER")
    power = rep.value("hier", "adaptive_power")
    assert 0 <= fwer <= 1 and 0 <= power <= 1
    assert rep.manifest()["hier_beta_note"]
