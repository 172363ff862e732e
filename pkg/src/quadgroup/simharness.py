"""Monte Carlo harness for the dense, highly-correlated and hierarchical designs.

Random streams
--------------
Every replicate draws from independent counter-based streams::

    Generator(Philox(SeedSequence(seed, spawn_key=(rep, role))))

with ``role`` 0 for the covariates, 1 for the noise and 2 for the sample
split. Gaussian variates use numpy's ziggurat sampler. Replicate ``r``'s data
therefore depend only on ``(seed, r)``; changing the replicate count or the
worker count never changes them.
"""

from __future__ import annotations

import csv
import json
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, GroupSpec
from .errors import QuadGroupError, SolverError, ValidationError
from .hiertest import EngineConfig, build_tree, run_hierarchy
from .inference import CorrectionSample, confidence_interval, test_group
from .lasso import fit_initial
from .projection import DEFAULT_C_LAMBDA

SCENARIOS = ("dense", "highcorr", "hier1", "hier2")
ROLE_X, ROLE_EPS, ROLE_SPLIT = 0, 1, 2
MAX_FAILURE_RATE = 0.02


class SimulationAborted(SolverError):
    """Too many replicates failed."""


@dataclass(frozen=True)
class Scenario:
    """One simulation design.

    ``delta`` is the signal strength for ``dense`` and ``highcorr``;
    ``hier_beta`` is the coefficient on each active covariate of the
    hierarchical designs.
    """

    name: str
    n: int
    p: int = 500
    delta: float = 0.0
    replicates: int = 500
    seed: int = 1
    hier_beta: float = 1.0
    noise_sd: float = 1.0

    def __post_init__(self):
        if self.name not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.name!r}; expected one of {SCENARIOS}")
        if self.replicates < 1:
            raise ValidationError("replicates must be at least 1")
        if self.n < 10:
            raise ValidationError(f"n must be at least 10, got {self.n}")
        min_p = {"dense": 200, "highcorr": 5, "hier1": 20, "hier2": 500}[self.name]
        if self.p < min_p:
            raise ValidationError(f"scenario {self.name} needs p >= {min_p}, got {self.p}")
        if self.noise_sd <= 0:
            raise ValidationError("noise_sd must be positive")

    @property
    def hierarchical(self) -> bool:
        return self.name.startswith("hier")

    def covariance(self) -> np.ndarray:
        return _covariance(self.name, self.p).copy()

    def beta(self) -> np.ndarray:
        b = np.zeros(self.p)
        if self.name == "dense":
            b[24:50] = self.delta
        elif self.name == "highcorr":
            b[[0, 2]] = self.delta
        else:
            b[self.s0().positions] = self.hier_beta
        return b

    def group(self) -> GroupSpec | None:
        if self.name == "dense":
            return GroupSpec.range(30, 200)
        if self.name == "highcorr":
            return GroupSpec.range(1, 5)
        return None

    def s0(self) -> GroupSpec | None:
        if self.name == "hier1":
            return GroupSpec(tuple(range(1, 20, 2)))
        if self.name == "hier2":
            return GroupSpec(tuple(range(1, 452, 50)))
        return None


@lru_cache(maxsize=8)
def _covariance(name: str, p: int) -> np.ndarray:
    idx = np.arange(p)
    if name in ("dense", "highcorr"):
        s = 0.6 ** np.abs(idx[:, None] - idx[None, :])
        if name == "highcorr":
            s[:5, :5] = 0.8
    elif name == "hier1":
        s = np.zeros((p, p))
        for i in range(0, 20, 2):
            s[i, i + 1] = s[i + 1, i] = 0.7
    else:
        s = np.zeros((p, p))
        for k in range(0, 500, 50):
            s[k : k + 50, k : k + 50] = 0.7
    np.fill_diagonal(s, 1.0)
    s.setflags(write=False)
    return s


@lru_cache(maxsize=8)
def _cholesky(name: str, p: int) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(_covariance(name, p))
    except np.linalg.LinAlgError:
        raise ValidationError(f"covariance of scenario {name} is not positive definite") from None
    chol.setflags(write=False)
    return chol


def stream(seed: int, rep: int, role: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(rep, role))))


def true_values(sc: Scenario) -> dict:
    """Exact ``b_G' Sigma_GG b_G`` and ``||b_G||^2`` for the scenario's design."""
    g = sc.group()
    if g is None:
        g = GroupSpec.range(1, sc.p)
    pos = g.positions
    b = sc.beta()[pos]
    s = sc.covariance()[np.ix_(pos, pos)]
    return {"q_sigma": float(b @ s @ b), "q_identity": float(b @ b)}


def generate(sc: Scenario, rep: int) -> Dataset:
    """Replicate ``rep`` of the design: X ~ N(0, Sigma), y = X b + noise."""
    z = stream(sc.seed, rep, ROLE_X).standard_normal((sc.n, sc.p))
    x = z @ _cholesky(sc.name, sc.p).T
    eps = stream(sc.seed, rep, ROLE_EPS).standard_normal(sc.n) * sc.noise_sd
    return Dataset(x, x @ sc.beta() + eps)


def adaptive_power(findings, s0: GroupSpec) -> float:
    """``(1/|S0|) * sum 1/|C|`` over findings that contain an active index."""
    active = set(s0.indices)
    total = sum(1.0 / len(c) for c in findings if active.intersection(c))
    return total / len(active)


@dataclass(frozen=True)
class Methods:
    modes: tuple[str, ...] = ("sigma", "identity")
    taus: tuple[float, ...] = (0.0, 1.0)
    alpha: float = 0.05
    level: float = 0.95
    c_lambda: float = DEFAULT_C_LAMBDA
    split: bool = False
    linkage: str = "complete"
    hier_mode: str = "sigma"
    hier_tau: float = 1.0


METHOD_LABEL = {"sigma": "Sigma", "identity": "I"}


def _tau_label(t: float) -> str:
    return f"{t:g}"


def _replicate(sc: Scenario, methods: Methods, rep: int) -> dict:
    d = generate(sc, rep)
    fit = fit_initial(d, split=methods.split, seed=stream(sc.seed, rep, ROLE_SPLIT) if methods.split else None)
    sample = CorrectionSample(d, fit)
    if sc.hierarchical:
        tree = build_tree(d, methods.linkage)
        res = run_hierarchy(
            d, tree, methods.alpha, EngineConfig(methods.hier_mode, methods.hier_tau, methods.c_lambda),
            sample=sample,
        )
        return {"findings": [list(f.group.indices) for f in res.findings], "tested": res.tested_count}
    out = {}
    g = sc.group()
    for mode in methods.modes:
        est = sample.estimate(g, mode, max(methods.taus), methods.c_lambda)
        row = {"q_hat": est.q_hat, "plug_in": est.plug_in, "v": {}, "reject": {}, "lower": {}, "upper": {}}
        for t in methods.taus:
            e = est.with_tau(t)
            ci = confidence_interval(e, methods.level)
            row["v"][t] = e.v_hat
            row["reject"][t] = bool(test_group(e, methods.alpha).reject)
            row["lower"][t] = ci.lower
            row["upper"][t] = ci.upper
        out[mode] = row
    return out


def _safe_replicate(args) -> tuple[int, dict | None, str | None]:
    sc, methods, rep = args
    try:
        return rep, _replicate(sc, methods, rep), None
    except QuadGroupError as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"


def _rate(hits: int, total: int) -> tuple[float, float]:
    if total == 0:
        return math.nan, math.nan
    r = hits / total
    return r, math.sqrt(r * (1 - r) / total)


def _mean_se(xs: list[float]) -> tuple[float, float]:
    if not xs:
        return math.nan, math.nan
    mu = statistics.fmean(xs)
    se = statistics.stdev(xs) / math.sqrt(len(xs)) if len(xs) > 1 else math.nan
    return mu, se


@dataclass
class SimReport:
    """Aggregated metrics for one scenario.

    ``rows`` hold ``(table, method, value, mc_stderr)`` tuples; tables are
    ``decision``, ``coverage``, ``bias``, ``normality`` or ``hier``.
    """

    scenario: Scenario
    methods: Methods
    truth: dict
    rows: list[tuple[str, str, float, float]]
    completed: int
    failures: list[tuple[int, str]] = field(default_factory=list)
    raw: list[dict] = field(default_factory=list, repr=False)

    def value(self, table: str, method: str) -> float:
        for t, m, v, _ in self.rows:
            if t == table and m == method:
                return v
        raise KeyError((table, method))

    def stderr(self, table: str, method: str) -> float:
        for t, m, _, se in self.rows:
            if t == table and m == method:
                return se
        raise KeyError((table, method))

    def manifest(self) -> dict:
        return {
            "version": __version__,
            "scenario": asdict(self.scenario),
            "methods": asdict(self.methods),
            "truth": self.truth,
            "completed": self.completed,
            "failures": [{"rep": r, "error": e} for r, e in self.failures],
            "rng": "Philox(SeedSequence(seed, spawn_key=(rep, role))); roles X=0 eps=1 split=2; ziggurat normals",
            "hier_beta_note": (
                "active coefficient magnitude and noise level are harness defaults"
                if self.scenario.hierarchical else None
            ),
        }

    def write(self, out_dir: str | Path, runtime: float | None = None) -> list[Path]:
        """One CSV per table plus ``manifest.json``; runtime goes to ``timing.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        tables = sorted({r[0] for r in self.rows})
        for t in tables:
            path = out / f"{self.scenario.name}_{t}.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["delta", "n", "method", "value", "mc_stderr"])
                for tt, m, v, se in self.rows:
                    if tt == t:
                        w.writerow([repr(self.scenario.delta), self.scenario.n, m, repr(v), repr(se)])
            written.append(path)
        mpath = out / "manifest.json"
        mpath.write_text(json.dumps(self.manifest(), indent=1, sort_keys=True) + "\n")
        written.append(mpath)
        if runtime is not None:
            (out / "timing.json").write_text(json.dumps({"runtime_seconds": runtime}) + "\n")
        return written


def _summarize_regression(sc: Scenario, methods: Methods, results: list[dict], truth: dict) -> list:
    rows = []
    r_total = len(results)
    key = {"sigma": "q_sigma", "identity": "q_identity"}
    for mode in methods.modes:
        lab = METHOD_LABEL.get(mode, mode)
        q = truth[key[mode]]
        for t in methods.taus:
            rej = sum(r[mode]["reject"][t] for r in results)
            rows.append(("decision", f"phi_{lab}({_tau_label(t)})", *_rate(rej, r_total)))
        for t in methods.taus:
            cov = sum(r[mode]["lower"][t] <= q <= r[mode]["upper"][t] for r in results)
            rows.append(("coverage", f"CI_{lab}({_tau_label(t)})", *_rate(cov, r_total)))
        qh = [r[mode]["q_hat"] for r in results]
        pi = [r[mode]["plug_in"] for r in results]
        for name, xs in (("proposed", qh), ("plugin", pi)):
            mu, se = _mean_se(xs)
            rows.append(("bias", f"{name}_{lab}_abs_bias", abs(mu - q), se))
            rows.append(("bias", f"{name}_{lab}_mae", *_mean_se([abs(x - q) for x in xs])))
        for t in methods.taus:
            z = [(r[mode]["q_hat"] - q) / math.sqrt(r[mode]["v"][t]) for r in results]
            mu, se = _mean_se(z)
            sd = statistics.stdev(z) if len(z) > 1 else math.nan
            rows.append(("normality", f"z_{lab}({_tau_label(t)})_mean", mu, se))
            rows.append(("normality", f"z_{lab}({_tau_label(t)})_sd", sd, sd / math.sqrt(2 * (len(z) - 1)) if len(z) > 1 else math.nan))
    # competitor max-tests are not implemented; keep the columns for layout
    rows.append(("decision", "phi_FD", math.nan, math.nan))
    rows.append(("decision", "phi_hdi", math.nan, math.nan))
    return rows


def _summarize_hier(sc: Scenario, results: list[dict]) -> list:
    s0 = sc.s0()
    active = set(s0.indices)
    r_total = len(results)
    false_runs = 0
    powers, counts, sizes = [], [], []
    for r in results:
        f = r["findings"]
        if any(not active.intersection(c) for c in f):
            false_runs += 1
        powers.append(adaptive_power(f, s0))
        counts.append(len(f))
        sizes.extend(len(c) for c in f)
    rows = [("hier", "FWER", *_rate(false_runs, r_total))]
    rows.append(("hier", "adaptive_power", *_mean_se(powers)))
    rows.append(("hier", "avg_number", *_mean_se([float(c) for c in counts])))
    rows.append(("hier", "avg_size", *_mean_se([float(s) for s in sizes])))
    rows.append(("hier", "median_size", float(statistics.median(sizes)) if sizes else math.nan, math.nan))
    return rows


def run_scenario(
    sc: Scenario,
    methods: Methods | None = None,
    threads: int = 1,
    keep_raw: bool = False,
    progress=None,
) -> SimReport:
    """Run every replicate and aggregate.

    Failed replicates (solver errors) are excluded and listed; more than 2%
    failures raises :class:`SimulationAborted`. With ``threads > 1`` the
    replicates run in worker processes; the report does not depend on the
    worker count.
    """
    methods = methods or Methods()
    jobs = [(sc, methods, r) for r in range(sc.replicates)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            outcomes = list(ex.map(_safe_replicate, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        outcomes = []
        for job in jobs:
            outcomes.append(_safe_replicate(job))
            if progress is not None:
                progress(len(outcomes), len(jobs))
    outcomes.sort(key=lambda o: o[0])
    failures = [(r, e) for r, _, e in outcomes if e is not None]
    results = [res for _, res, e in outcomes if e is None]
    if len(failures) > MAX_FAILURE_RATE * sc.replicates:
        raise SimulationAborted(
            f"{len(failures)} of {sc.replicates} replicates failed (first: rep {failures[0][0]}: {failures[0][1]})"
        )
    truth = true_values(sc)
    if sc.hierarchical:
        rows = _summarize_hier(sc, results)
    else:
        rows = _summarize_regression(sc, methods, results, truth)
    return SimReport(sc, methods, truth, rows, len(results), failures, results if keep_raw else [])


def default_threads() -> int:
    return os.cpu_count() or 1


def timed_run(sc: Scenario, methods: Methods | None = None, threads: int = 1) -> tuple[SimReport, float]:
    t0 = time.perf_counter()
    rep = run_scenario(sc, methods, threads)
    return rep, time.perf_counter() - t0
