"""End-to-end acceptance checks at full Monte Carlo scale.

Each criterion appends one PASS/FAIL line that is printed in the terminal
summary. The Monte Carlo criteria take a few minutes in total on one
core.
"""

import math
from functools import lru_cache

import numpy as np
import pytest

import test_hiertest
import test_inference
import test_lasso
import test_projection
import test_simharness
from quadgroup.simharness import Methods, Scenario, run_scenario

RESULTS: list[str] = []

pytestmark = pytest.mark.slow


def record(label: str, ok: bool, detail: str) -> None:
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")


@lru_cache(maxsize=None)
def run(name: str, n: int, delta: float = 0.0, replicates: int = 500, p: int = 500):
    return run_scenario(Scenario(name, n, p=p, delta=delta, replicates=replicates, seed=1), Methods())


def _fmt(rep, method, table):
    return f"{method}={rep.value(table, method):.3f} (se {rep.stderr(table, method):.3f})"


def test_criterion_1_null_dense():
    rep = run("dense", 500, 0.0)
    s, i = rep.value("decision", "phi_Sigma(1)"), rep.value("decision", "phi_I(1)")
    ok = s <= 0.03 and i <= 0.03
    record("1 null ERR dense n=500 R=500", ok,
           f"{_fmt(rep, 'phi_Sigma(1)', 'decision')}, {_fmt(rep, 'phi_I(1)', 'decision')}; need <= 0.03")
    assert ok


def test_criterion_1_fast_gate():
    rep = run("dense", 500, 0.0, replicates=200, p=200)
    s, i = rep.value("decision", "phi_Sigma(1)"), rep.value("decision", "phi_I(1)")
    ok = s <= 0.05 and i <= 0.05
    record("1 fast gate p=200 R=200", ok, f"phi_Sigma(1)={s:.3f}, phi_I(1)={i:.3f}; need <= 0.05")
    assert ok


def test_criterion_2_power_dense():
    rep = run("dense", 800, 0.06)
    s, i = rep.value("decision", "phi_Sigma(1)"), rep.value("decision", "phi_I(1)")
    ok = s >= 0.95 and i >= 0.90
    record("2 power dense n=800 R=500", ok,
           f"{_fmt(rep, 'phi_Sigma(1)', 'decision')} (need >= 0.95), {_fmt(rep, 'phi_I(1)', 'decision')} (need >= 0.90)")
    assert ok


def test_criterion_3_coverage_dense():
    rep = run("dense", 500, 0.06)
    s, i = rep.value("coverage", "CI_Sigma(1)"), rep.value("coverage", "CI_I(1)")
    ok = s >= 0.93 and i >= 0.93
    record("3 coverage dense n=500 R=500", ok,
           f"{_fmt(rep, 'CI_Sigma(1)', 'coverage')}, {_fmt(rep, 'CI_I(1)', 'coverage')}; need >= 0.93")
    assert ok


def test_criterion_4_highcorr_decisions():
    null = run("highcorr", 500, 0.0)
    alt = run("highcorr", 500, 0.3)
    a, b = null.value("decision", "phi_Sigma(1)"), alt.value("decision", "phi_Sigma(1)")
    ok = a <= 0.03 and b >= 0.95
    record("4 highcorr n=500 R=500", ok,
           f"null phi_Sigma(1)={a:.3f} (need <= 0.03), delta=0.3 phi_Sigma(1)={b:.3f} (need >= 0.95)")
    assert ok


def test_criterion_5_bias_highcorr():
    rep = run("highcorr", 500, 0.5)
    prop, plug = rep.value("bias", "proposed_Sigma_abs_bias"), rep.value("bias", "plugin_Sigma_abs_bias")
    ok = prop < plug and prop <= 0.04
    record("5 bias highcorr delta=0.5 R=500", ok,
           f"proposed={prop:.4f}, plug-in={plug:.4f}; need proposed < plug-in and <= 0.04")
    assert ok


def test_criterion_6_hierarchical():
    one = run("hier1", 500, replicates=200)
    two = run("hier2", 800, replicates=100)
    fwer, pow1 = one.value("hier", "FWER"), one.value("hier", "adaptive_power")
    pow2 = two.value("hier", "adaptive_power")
    ok = fwer <= 0.05 and pow1 >= 0.90 and pow2 >= 0.70
    record("6 hierarchical", ok,
           f"setting 1 FWER={fwer:.3f} (<= 0.05), power={pow1:.3f} (>= 0.90); "
           f"setting 2 power={pow2:.3f} (>= 0.70)")
    assert ok


def test_criterion_7_property_suites(tmp_path):
    checks = {
        "lasso KKT x100": test_lasso.test_kkt_certificate_on_100_instances,
        "projection feasibility x100": lambda: [
            test_projection.test_feasibility_certificates_high_dimensional(m) for m in ("sigma", "identity")
        ],
        "projection oracle x100": lambda: [
            test_projection.test_matches_active_set_oracle(m) for m in ("sigma", "identity")
        ],
        "adjusted-p monotonicity": test_hiertest.test_monotone_adjusted_pvalues_random_trees,
        "determinism": lambda: test_simharness.test_reports_byte_identical(tmp_path),
        "additivity": lambda: [test_inference.test_exact_additivity(m) for m in ("sigma", "identity")],
    }
    failed = []
    for name, fn in checks.items():
        try:
            fn()
        except AssertionError as exc:
            failed.append(f"{name} ({str(exc).splitlines()[0] if str(exc) else 'assertion'})")
    ok = not failed
    record("7 property suites", ok, "all six hold" if ok else "failed: " + "; ".join(failed))
    assert ok


def test_criterion_8_normality():
    rep = run("dense", 800, 0.06)
    mu, sd = rep.value("normality", "z_Sigma(0)_mean"), rep.value("normality", "z_Sigma(0)_sd")
    ok = -0.3 <= mu <= 0.3 and 0.6 <= sd <= 1.3
    record("8 standardized error dense n=800 tau=0", ok,
           f"mean={mu:.3f} (in [-0.3, 0.3]), sd={sd:.3f} (in [0.6, 1.3])")
    assert ok and math.isfinite(sd) and np.isfinite(mu)
