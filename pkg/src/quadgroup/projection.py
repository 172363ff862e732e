"""Bias-correcting projection directions.

For a loading vector ``v`` (zero outside the group) with scale ``s`` the
direction solves::

    minimize   u' S u
    subject to |(S u - v)_j| <= s * lam          j = 1..p
               |<v / s, S u - v>| <= s * lam     (modes "sigma", "general")

where ``S`` is the sample second-moment matrix. Writing the constraint
directions as the columns of ``W = [I, v/s]`` and ``u = W h``, the program
is dual to the l1-penalized quadratic::

    minimize_h  0.5 h' M h - b' h + s * lam * ||h||_1,   M = W'SW,  b = W'v

whose stationarity conditions ``|(M h - b)_k| <= s * lam`` are exactly the
primal constraints. The dual is solved by cyclic coordinate descent.
The program is positively homogeneous, so it is solved for ``v / s`` and
rescaled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .data import Dataset, GroupSpec, WeightMatrix, validate_group
from .errors import InfeasibleError, ValidationError

MODES = ("sigma", "general", "identity")

FEAS_TOL = 1e-6
KKT_TOL = 1e-8
REL_OBJ_TOL = 1e-9
MAX_SWEEPS = 50_000
ESCALATION = 1.5
MAX_ESCALATIONS = 10
# u'Su / s^2 above this is treated as divergence of the dual (infeasible primal)
DIVERGENCE_CAP = 1e8
# linear-growth detector: objective decrements per block of sweeps that do not
# decay, once u'Su / s^2 already exceeds DRIFT_FLOOR
DRIFT_BLOCK = 200
DRIFT_RATIO = 0.98
DRIFT_FLOOR = 10.0
DRIFT_STREAK = 3
# sweeps between active-set Newton steps
NEWTON_EVERY = 10
# lambda_n = C * sqrt(log p / m); C calibrated on the reference simulation designs
DEFAULT_C_LAMBDA = 0.75


@dataclass(frozen=True)
class ProjectionProblem:
    sigma_hat_mat: np.ndarray
    target: np.ndarray
    scale: float
    lambda_n: float
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")
        if not self.lambda_n > 0:
            raise ValidationError(f"lambda_n must be positive, got {self.lambda_n}")
        if self.scale < 0:
            raise ValidationError("scale must be nonnegative")

    @property
    def extra_direction(self) -> bool:
        return self.mode != "identity"

    @property
    def p(self) -> int:
        return self.target.size


@dataclass(frozen=True)
class ProjectionSolution:
    u: np.ndarray
    quad_value: float
    max_violation: float
    lambda_effective: float
    iterations: int
    gap: float = 0.0

    def diagnostics(self) -> dict:
        return {
            "lambda_effective": self.lambda_effective,
            "max_violation": self.max_violation,
            "quad_value": self.quad_value,
            "iterations": self.iterations,
        }


def lambda_n(c_lambda: float, p: int, m: int) -> float:
    """c * sqrt(log p / m)."""
    return c_lambda * math.sqrt(math.log(max(p, 2)) / m)


def loading(
    beta_g: np.ndarray,
    sigma_gg: np.ndarray | None,
    mode: str,
    a: WeightMatrix | None = None,
) -> np.ndarray:
    """Group block of the loading vector for each mode."""
    if mode == "sigma":
        return sigma_gg @ beta_g
    if mode == "general":
        if a is None:
            raise ValidationError("mode 'general' requires a weight matrix")
        if a.dim != beta_g.size:
            raise ValidationError(
                f"weight matrix is {a.dim}x{a.dim} but the group has {beta_g.size} members"
            )
        return a.a @ beta_g
    if mode == "identity":
        return beta_g.copy()
    raise ValidationError(f"unknown mode {mode!r}")


def build_problem(
    fit,
    d: Dataset,
    g: GroupSpec,
    mode: str,
    a: WeightMatrix | None = None,
    c_lambda: float = DEFAULT_C_LAMBDA,
    sigma_hat_mat: np.ndarray | None = None,
) -> ProjectionProblem:
    """Assemble the program for group ``g`` on the correction sample.

    ``d`` must already be the correction sample (the held-out half when the
    fit used sample splitting). ``sigma_hat_mat`` may be passed to reuse a
    precomputed ``X'X/m``.
    """
    g = validate_group(g, d.p)
    m, p = d.x.shape
    S = d.x.T @ d.x / m if sigma_hat_mat is None else sigma_hat_mat
    pos = g.positions
    beta_g = np.asarray(fit.beta_hat)[pos]
    block = loading(beta_g, S[np.ix_(pos, pos)] if mode == "sigma" else None, mode, a)
    v = np.zeros(p)
    v[pos] = block
    return ProjectionProblem(S, v, float(np.linalg.norm(block)), lambda_n(c_lambda, p, m), mode)


@numba.njit(cache=True)
def _newton_step(M, b, lam, h, grad):
    """Exact line search towards the minimizer on the current sign pattern.

    The direction is the Newton step of the quadratic restricted to the
    support of ``h`` with its current signs. Along that segment the full
    objective is convex and piecewise quadratic, so it is minimized exactly
    by walking its breakpoints; coordinates may change sign. Returns False
    when the reduced system is not positive definite.
    """
    q = h.size
    k = 0
    for j in range(q):
        if h[j] != 0.0:
            k += 1
    if k == 0:
        return False
    idx = np.empty(k, dtype=np.int64)
    k = 0
    for j in range(q):
        if h[j] != 0.0:
            idx[k] = j
            k += 1
    Maa = np.empty((k, k))
    r = np.empty(k)
    for a in range(k):
        ja = idx[a]
        r[a] = b[ja] - lam * np.sign(h[ja])
        for c in range(k):
            Maa[a, c] = M[ja, idx[c]]
    # rounding can let a singular block pass the Cholesky check
    try:
        np.linalg.cholesky(Maa)
        x = np.linalg.solve(Maa, r)
    except Exception:
        return False
    d = x.copy()
    for a in range(k):
        d[a] -= h[idx[a]]
    # phi'(t) = gd + t * dMd + lam * sum_a sign(h_a + t d_a) d_a
    gd = 0.0
    for a in range(k):
        gd += grad[idx[a]] * d[a]
    dMd = 0.0
    for a in range(k):
        acc = 0.0
        for c in range(k):
            acc += Maa[a, c] * d[c]
        dMd += d[a] * acc
    if dMd <= 0.0:
        return False
    slope = gd
    nb = 0
    bt = np.empty(k)
    bd = np.empty(k)
    for a in range(k):
        ha = h[idx[a]]
        slope += lam * np.sign(ha) * d[a]
        if d[a] * ha < 0.0:
            bt[nb] = -ha / d[a]
            bd[nb] = abs(d[a])
            nb += 1
    if slope >= 0.0:
        return True
    order = np.argsort(bt[:nb])
    t0 = 0.0
    t = -1.0
    for kk in range(nb):
        tb = bt[order[kk]]
        # derivative at the end of the current piece
        if slope + (tb - t0) * dMd >= 0.0:
            t = t0 - slope / dMd
            break
        slope += (tb - t0) * dMd
        # crossing zero flips sign(h_a + t d_a) from -sign(d_a) to sign(d_a)
        slope += 2.0 * lam * bd[order[kk]]
        t0 = tb
        if slope >= 0.0:
            t = tb
            break
    if t < 0.0:
        t = t0 - slope / dMd
    for a in range(k):
        ja = idx[a]
        ha = h[ja]
        nh = ha + t * d[a]
        if abs(nh) <= 1e-15 * abs(ha):
            nh = 0.0
        step = nh - ha
        if step != 0.0:
            h[ja] = nh
            for i in range(q):
                grad[i] += M[i, ja] * step
    return True


@numba.njit(cache=True)
def _dual_cd(M, b, lam, h, max_sweeps, kkt_tol, rel_tol, cap,
             block=DRIFT_BLOCK, ratio=DRIFT_RATIO, floor=DRIFT_FLOOR, streak_max=DRIFT_STREAK,
             newton_every=NEWTON_EVERY):
    """Coordinate descent on 0.5 h'Mh - b'h + lam ||h||_1.

    Every ``newton_every`` sweeps an active-set Newton step is taken, which
    makes ill-conditioned instances converge in few sweeps.

    Returns (status, sweeps, objective) with status 0 = converged,
    1 = sweep cap, 2 = divergence, 3 = zero-curvature infeasibility.
    """
    q = b.size
    grad = M @ h - b
    for k in range(q):
        if M[k, k] <= 0.0 and abs(b[k]) > lam:
            return 3, 0, -np.inf
    prev = np.inf
    block_start = 0.0
    prev_dec = 0.0
    streak = 0
    for sweep in range(max_sweeps):
        for j in range(q):
            mjj = M[j, j]
            if mjj <= 0.0:
                continue
            old = h[j]
            z = mjj * old - grad[j]
            if z > lam:
                new = (z - lam) / mjj
            elif z < -lam:
                new = (z + lam) / mjj
            else:
                new = 0.0
            if new != old:
                d = new - old
                h[j] = new
                for k in range(q):
                    grad[k] += M[k, j] * d
        if newton_every > 0 and (sweep + 1) % newton_every == 0:
            _newton_step(M, b, lam, h, grad)
        # f = 0.5 h'(grad - b) + lam ||h||_1, since M h = grad + b
        f = 0.0
        viol = 0.0
        for k in range(q):
            f += 0.5 * h[k] * (grad[k] - b[k]) + lam * abs(h[k])
            if h[k] == 0.0:
                e = abs(grad[k]) - lam
            elif h[k] > 0.0:
                e = abs(grad[k] + lam)
            else:
                e = abs(grad[k] - lam)
            if e > viol:
                viol = e
        if -2.0 * f > cap:
            return 2, sweep + 1, f
        if viol <= kkt_tol * lam:
            return 0, sweep + 1, f
        if abs(prev - f) <= rel_tol * max(abs(f), 1e-300) and viol <= 1e-7 * lam:
            return 0, sweep + 1, f
        prev = f
        if (sweep + 1) % block == 0:
            dec = block_start - f
            if prev_dec > 0.0 and dec >= ratio * prev_dec and -2.0 * f > floor:
                streak += 1
                if streak >= streak_max:
                    return 2, sweep + 1, f
            else:
                streak = 0
            prev_dec = dec
            block_start = f
    return 1, max_sweeps, prev


def _augmented(S: np.ndarray, w: np.ndarray | None, v: np.ndarray):
    """M = W'SW and b = W'v for W = [I, w] (or W = I)."""
    if w is None:
        return np.ascontiguousarray(S), v.copy()
    p = S.shape[0]
    nz = np.flatnonzero(w)
    Sw = S[:, nz] @ w[nz]
    M = np.empty((p + 1, p + 1))
    M[:p, :p] = S
    M[:p, p] = Sw
    M[p, :p] = Sw
    M[p, p] = w @ Sw
    b = np.empty(p + 1)
    b[:p] = v
    b[p] = w @ v
    return M, b


def constraint_violation(S: np.ndarray, u: np.ndarray, v: np.ndarray, extra: bool) -> tuple[float, float]:
    """(basis violation ||Su - v||_inf, extra-direction violation)."""
    r = S @ u - v
    basis = float(np.max(np.abs(r)))
    nv = np.linalg.norm(v)
    extra_v = float(abs(v @ r) / nv) if extra and nv > 0 else 0.0
    return basis, extra_v


def solve_projection(
    prob: ProjectionProblem,
    max_sweeps: int = MAX_SWEEPS,
    escalation: float = ESCALATION,
    max_escalations: int = MAX_ESCALATIONS,
) -> ProjectionSolution:
    """Minimum-variance direction satisfying the two-sided constraints.

    If the program is infeasible at ``lambda_n`` the tuning is multiplied by
    ``escalation`` up to ``max_escalations`` times; the value actually used
    is reported as ``lambda_effective``.

    Raises
    ------
    InfeasibleError
        When still infeasible after the last escalation.
    """
    p = prob.p
    if prob.scale == 0.0:
        return ProjectionSolution(np.zeros(p), 0.0, 0.0, prob.lambda_n, 0)

    S = prob.sigma_hat_mat
    v = prob.target / prob.scale
    w = v if prob.extra_direction else None
    M, b = _augmented(S, w, v)
    lam = prob.lambda_n
    total = 0
    last_violation = math.inf
    for _ in range(max_escalations + 1):
        h = np.zeros(b.size)
        status, sweeps, f = _dual_cd(M, b, lam, h, max_sweeps, KKT_TOL, REL_OBJ_TOL, DIVERGENCE_CAP)
        total += sweeps
        if status == 0:
            u = h[:p].copy()
            if w is not None:
                u += h[p] * w
            basis, extra = constraint_violation(S, u, v, w is not None)
            worst = max(basis, extra)
            if worst <= lam * (1 + FEAS_TOL):
                quad = float(u @ S @ u)
                gap = quad + 2.0 * f
                s = prob.scale
                return ProjectionSolution(
                    u * s, quad * s * s, worst * s, lam, total, gap * s * s
                )
            last_violation = worst * prob.scale
        else:
            grad = M @ h - b
            last_violation = float(np.max(np.abs(grad)) * prob.scale)
        lam *= escalation
    raise InfeasibleError(
        f"projection infeasible after {max_escalations} escalations "
        f"(last lambda {lam / escalation:.4g}, violation {last_violation:.3g})",
        violation=last_violation,
    )
