"""Bias-corrected quadratic functionals, one-sided tests and confidence intervals.

The estimators are

    Q_hat = plug_in + (2/m) u' X' (y - X beta_hat)

with variance

    sigma:            4 sigma_hat^2/m u'S u + (1/m^2) sum_i ((X_iG' b_G)^2 - plug_in)^2 + tau/m
    general/identity: 4 sigma_hat^2/m u'S u + tau/m

where ``m`` is the size of the correction sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from statistics import NormalDist

import numpy as np

from .data import Dataset, GroupSpec, WeightMatrix, validate_group
from .errors import ValidationError
from .lasso import InitialFit
from .projection import DEFAULT_C_LAMBDA, ProjectionProblem, lambda_n, loading, solve_projection

_STD_NORMAL = NormalDist()
_TINY = np.finfo(float).tiny


def norm_cdf(x: float) -> float:
    return _STD_NORMAL.cdf(x)


def norm_ppf(q: float) -> float:
    return _STD_NORMAL.inv_cdf(q)


@dataclass(frozen=True)
class QuadEstimate:
    """Point estimate and variance for one group.

    ``base_variance`` is the variance without the ``tau/m`` enlargement, so
    :meth:`with_tau` can re-derive ``v_hat`` for another tau without
    re-solving the projection.
    """

    q_hat: float
    v_hat: float
    plug_in: float
    correction: float
    mode: str
    tau: float
    group: GroupSpec
    n_used: int
    base_variance: float = 0.0
    fluctuation: float = 0.0
    quad_value: float = 0.0
    lambda_effective: float = float("nan")
    sigma_hat: float = float("nan")
    projection: dict = field(default_factory=dict, compare=False, repr=False)

    def with_tau(self, tau: float) -> "QuadEstimate":
        if tau < 0:
            raise ValidationError(f"tau must be nonnegative, got {tau}")
        return replace(self, tau=tau, v_hat=_variance(self.base_variance, tau, self.n_used))


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    reject: bool
    alpha: float

    __test__ = False  # keep pytest from collecting this class


@dataclass(frozen=True)
class ConfInterval:
    lower: float
    upper: float
    level: float
    truncated_at_zero: bool = False

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


def _variance(base: float, tau: float, m: int) -> float:
    v = base + tau / m
    # v_hat must stay positive: with tau = 0 and a zero loading the base is 0
    return v if v > 0 else _TINY


class CorrectionSample:
    """Per-dataset quantities shared by every group tested against one fit.

    Holds the correction rows (the held-out half under sample splitting),
    ``S = X'X/m`` and ``X'(y - X beta_hat)/m``, so each group costs one
    projection solve.
    """

    def __init__(self, d: Dataset, fit: InitialFit, sigma_hat_mat: np.ndarray | None = None):
        if fit.beta_hat.size != d.p:
            raise ValidationError(f"fit has {fit.beta_hat.size} coefficients but data has p={d.p}")
        if fit.split is not None:
            if fit.split.n != d.n:
                raise ValidationError("sample split does not match the dataset size")
            rows = fit.split.second_half
            x, y = d.x[rows], d.y[rows]
            sigma_hat_mat = None
        else:
            x, y = d.x, d.y
        self.x = x
        self.m, self.p = x.shape
        self.fit = fit
        self.S = x.T @ x / self.m if sigma_hat_mat is None else sigma_hat_mat
        resid = y - x @ fit.beta_hat
        self.xtr = x.T @ resid / self.m

    def estimate(
        self,
        g: GroupSpec,
        mode: str = "sigma",
        tau: float = 1.0,
        c_lambda: float = DEFAULT_C_LAMBDA,
        a: WeightMatrix | None = None,
    ) -> QuadEstimate:
        if tau < 0:
            raise ValidationError(f"tau must be nonnegative, got {tau}")
        if not c_lambda > 0:
            raise ValidationError(f"c_lambda must be positive, got {c_lambda}")
        g = validate_group(g, self.p)
        pos = g.positions
        b_g = np.asarray(self.fit.beta_hat)[pos]
        S_gg = self.S[np.ix_(pos, pos)]

        if mode == "sigma":
            plug_in = float(b_g @ S_gg @ b_g)
        elif mode == "general":
            if a is None:
                raise ValidationError("mode 'general' requires a weight matrix")
            if a.dim != g.size:
                raise ValidationError(f"weight matrix is {a.dim}x{a.dim} but |G| = {g.size}")
            plug_in = float(b_g @ a.a @ b_g)
        elif mode == "identity":
            plug_in = float(b_g @ b_g)
        else:
            raise ValidationError(f"unknown mode {mode!r}")

        block = loading(b_g, S_gg if mode == "sigma" else None, mode, a)
        v = np.zeros(self.p)
        v[pos] = block
        prob = ProjectionProblem(
            self.S, v, float(np.linalg.norm(block)), lambda_n(c_lambda, self.p, self.m), mode
        )
        sol = solve_projection(prob)

        q_hat = plug_in + 2.0 * float(sol.u @ self.xtr)
        sigma2 = self.fit.sigma_hat ** 2
        base = 4.0 * sigma2 / self.m * sol.quad_value
        fluct = 0.0
        if mode == "sigma":
            xb = self.x[:, pos] @ b_g
            fluct = float(np.sum((xb * xb - plug_in) ** 2)) / self.m ** 2
            base += fluct
        return QuadEstimate(
            q_hat=q_hat,
            v_hat=_variance(base, tau, self.m),
            plug_in=plug_in,
            # defined by subtraction so q_hat - plug_in == correction holds bit for bit
            correction=q_hat - plug_in,
            mode=mode,
            tau=tau,
            group=g,
            n_used=self.m,
            base_variance=base,
            fluctuation=fluct,
            quad_value=sol.quad_value,
            lambda_effective=sol.lambda_effective,
            sigma_hat=self.fit.sigma_hat,
            projection=sol.diagnostics(),
        )


def estimate_q_sigma(
    d: Dataset,
    fit: InitialFit,
    g: GroupSpec,
    tau: float = 1.0,
    c_lambda: float = DEFAULT_C_LAMBDA,
) -> QuadEstimate:
    """Bias-corrected estimate of b_G' Sigma_GG b_G (weight matrix estimated)."""
    return CorrectionSample(d, fit).estimate(g, "sigma", tau, c_lambda)


def estimate_q_a(
    d: Dataset,
    fit: InitialFit,
    g: GroupSpec,
    a: WeightMatrix | None = None,
    tau: float = 1.0,
    c_lambda: float = DEFAULT_C_LAMBDA,
) -> QuadEstimate:
    """Bias-corrected estimate of b_G' A b_G for a known weight matrix.

    ``a=None`` selects the identity special case, whose projection drops
    the extra loading-direction constraint.
    """
    mode = "identity" if a is None else "general"
    return CorrectionSample(d, fit).estimate(g, mode, tau, c_lambda, a)


def test_group(est: QuadEstimate, alpha: float = 0.05) -> TestResult:
    """One-sided level-alpha test rejecting for large Q_hat / sqrt(V_hat)."""
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    stat = est.q_hat / math.sqrt(est.v_hat)
    return TestResult(stat, p_value(stat), stat >= norm_ppf(1 - alpha), alpha)


test_group.__test__ = False


def p_value(statistic: float) -> float:
    """Upper-tail normal p-value 1 - Phi(statistic)."""
    return norm_cdf(-statistic)


def confidence_interval(est: QuadEstimate, level: float = 0.95, truncate: bool = False) -> ConfInterval:
    """Two-sided normal interval ``q_hat +/- z * sqrt(v_hat)``."""
    if not 0 < level < 1:
        raise ValidationError(f"level must lie in (0, 1), got {level}")
    half = norm_ppf(1 - (1 - level) / 2) * math.sqrt(est.v_hat)
    lo, hi = est.q_hat - half, est.q_hat + half
    if truncate:
        return ConfInterval(max(lo, 0.0), max(hi, 0.0), level, True)
    return ConfInterval(lo, hi, level, False)


def result_record(
    est: QuadEstimate,
    test: TestResult,
    ci: ConfInterval,
    p: int,
    n: int,
) -> dict:
    """JSON-ready record for one group."""
    return {
        "mode": est.mode,
        "group": list(est.group.indices),
        "q_hat": est.q_hat,
        "v_hat": est.v_hat,
        "plug_in": est.plug_in,
        "correction": est.correction,
        "statistic": test.statistic,
        "p_value": test.p_value,
        "reject": bool(test.reject),
        "alpha": test.alpha,
        "ci": [ci.lower, ci.upper],
        "level": ci.level,
        "ci_truncated": ci.truncated_at_zero,
        "tau": est.tau,
        "lambda_effective": est.lambda_effective,
        "sigma_hat": est.sigma_hat,
        "n": n,
        "n_used": est.n_used,
        "p": p,
    }
