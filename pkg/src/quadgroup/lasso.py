"""Initial estimators: l1-penalized least squares and the scaled-Lasso noise level.

The solver works on sufficient statistics (Gram matrix ``X'X/m``,
``X'y/m``, ``y'y/m``) with cyclic coordinate descent and covariance
updates, so repeated fits on one sample reuse a single Gram matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .data import Dataset, SampleSplit, make_split
from .errors import ConvergenceError, ValidationError

MAX_SWEEPS = 100_000
STEP_TOL = 1e-7
GAP_TOL = 1e-8
MAX_OUTER = 50


@numba.njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@numba.njit(cache=True)
def _objective(beta, grad, xty, yy, pen):
    # grad = xty - G beta  =>  beta'G beta = beta'(xty - grad)
    bgb = 0.0
    bxty = 0.0
    l1 = 0.0
    for j in range(beta.size):
        bgb += beta[j] * (xty[j] - grad[j])
        bxty += beta[j] * xty[j]
        l1 += pen[j] * abs(beta[j])
    rss = yy - 2.0 * bxty + bgb
    return 0.5 * rss + l1, rss, bxty


@numba.njit(cache=True)
def _cd_lasso(gram, xty, yy, pen, beta, max_sweeps, step_tol, gap_tol, history):
    """Cyclic coordinate descent. Returns (sweeps, gap, converged)."""
    p = beta.size
    grad = xty - gram @ beta
    gap = np.inf
    for sweep in range(max_sweeps):
        max_step = 0.0
        for j in range(p):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            old = beta[j]
            new = _soft(grad[j] + gjj * old, pen[j]) / gjj
            if new != old:
                d = new - old
                beta[j] = new
                for k in range(p):
                    grad[k] -= gram[k, j] * d
                if abs(d) > max_step:
                    max_step = abs(d)
        primal, rss, bxty = _objective(beta, grad, xty, yy, pen)
        if sweep < history.size:
            history[sweep] = primal
        # dual point: residual rescaled into the feasible box |X_j' theta| <= pen_j
        s = 1.0
        for j in range(p):
            a = abs(grad[j])
            if a > pen[j]:
                if pen[j] <= 0.0:
                    s = 0.0
                elif pen[j] / a < s:
                    s = pen[j] / a
        yr = yy - bxty
        dual = 0.5 * yy - 0.5 * (yy - 2.0 * s * yr + s * s * rss)
        gap = primal - dual
        if max_step <= step_tol or gap <= gap_tol:
            return sweep + 1, gap, True
    return max_sweeps, gap, False


@dataclass
class LassoPath:
    """Diagnostics for one solve."""

    beta: np.ndarray
    sweeps: int
    gap: float
    objective: np.ndarray


def lasso_gram(
    gram: np.ndarray,
    xty: np.ndarray,
    yy: float,
    lam: float,
    weights: np.ndarray | None = None,
    beta0: np.ndarray | None = None,
    max_sweeps: int = MAX_SWEEPS,
    record: bool = False,
) -> LassoPath:
    """Minimize ``0.5 b'Gb - b'c + 0.5 yy + lam * sum_j w_j |b_j|``.

    This equals ``(1/2m)||y - Xb||^2 + lam * ||w * b||_1`` when
    ``G = X'X/m``, ``c = X'y/m`` and ``yy = y'y/m``.
    """
    if not lam > 0:
        raise ValidationError(f"lambda must be positive, got {lam}")
    p = xty.size
    pen = lam * (np.ones(p) if weights is None else np.asarray(weights, dtype=float))
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    history = np.empty(max_sweeps if record else 0)
    sweeps, gap, ok = _cd_lasso(
        np.ascontiguousarray(gram), np.asarray(xty, dtype=float), float(yy),
        pen, beta, max_sweeps, STEP_TOL, GAP_TOL, history,
    )
    if not ok:
        raise ConvergenceError(
            f"lasso did not converge in {max_sweeps} sweeps (duality gap {gap:.3g})", gap=gap
        )
    return LassoPath(beta, sweeps, gap, history[: min(sweeps, history.size)])


def fit_lasso(
    d: Dataset,
    lam: float,
    weights: np.ndarray | None = None,
    beta0: np.ndarray | None = None,
) -> np.ndarray:
    """Lasso coefficients for ``(1/2m)||y - X b||^2 + lam ||w * b||_1``.

    No intercept is fitted and columns are used as given; pass
    ``weights`` (e.g. column root-mean-squares) for a scale-equivariant
    penalty.
    """
    m = d.n
    gram = d.x.T @ d.x / m
    xty = d.x.T @ d.y / m
    yy = float(d.y @ d.y / m)
    return lasso_gram(gram, xty, yy, lam, weights, beta0).beta


@dataclass(frozen=True)
class InitialFit:
    """Initial estimates feeding the bias correction.

    ``lambda_used`` is the final penalty ``sigma_hat * lambda0`` and
    ``weights`` the per-column penalty factors (root mean square of each
    column on the fitting sample). ``split`` is set when the correction must
    run on the held-out half.
    """

    beta_hat: np.ndarray
    sigma_hat: float
    lambda_used: float
    lambda0: float
    weights: np.ndarray
    split: SampleSplit | None = None
    outer_iterations: int = 0

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.beta_hat)


def scaled_lasso(
    gram: np.ndarray,
    xty: np.ndarray,
    yy: float,
    m: int,
    lambda0: float,
    weights: np.ndarray | None = None,
    tol: float = 1e-6,
) -> tuple[np.ndarray, float, float, int]:
    """Alternate Lasso fits at penalty ``sigma * lambda0`` with
    ``sigma^2 = RSS / (m - s)``, ``s = min(||b||_0, m - 1)``.

    Returns ``(beta, sigma, lambda_used, outer_iterations)``.

    The degrees-of-freedom correction can make the update jump between a
    few support sizes forever. When an iterate revisits an earlier sigma the
    cycle is resolved by refitting at the largest sigma on it.
    """
    p = xty.size
    beta = np.zeros(p)
    sigma = math.sqrt(max(yy, 0.0))
    floor = 1e-10 * max(sigma, 1e-300)
    if sigma <= 0:
        return beta, np.finfo(float).tiny, np.finfo(float).tiny * lambda0, 0

    def update(sig, start):
        b = lasso_gram(gram, xty, yy, sig * lambda0, weights, start).beta
        rss = max(yy - 2.0 * b @ xty + b @ gram @ b, 0.0) * m
        s = min(np.count_nonzero(b), m - 1)
        return b, math.sqrt(rss / (m - s))

    visited = [sigma]
    for it in range(1, MAX_OUTER + 1):
        beta, new_sigma = update(sigma, beta)
        if new_sigma <= floor:
            # noiseless data: the fixed point is sigma = 0
            return beta, floor, floor * lambda0, it
        if abs(new_sigma - sigma) <= tol * sigma:
            return beta, new_sigma, new_sigma * lambda0, it
        for k in range(len(visited) - 1):
            if abs(new_sigma - visited[k]) <= tol * visited[k]:
                top = max(visited[k:])
                beta, _ = update(top, beta)
                return beta, top, top * lambda0, it
        visited.append(new_sigma)
        sigma = new_sigma
    raise ConvergenceError(f"scaled lasso did not stabilize in {MAX_OUTER} outer iterations")


def fit_initial(
    d: Dataset,
    split: bool = False,
    seed=None,
    lambda0: float | None = None,
) -> InitialFit:
    """Scaled-Lasso estimates of beta and the noise level.

    With ``split=True`` the fit uses a random half of the rows (size
    floor(n/2)) and records the split so the correction step uses the rest.
    """
    if d.n < 10:
        raise ValidationError(f"need n >= 10 for the initial fit, got {d.n}")
    sp = make_split(d.n, seed) if split else None
    x, y = (d.x[sp.first_half], d.y[sp.first_half]) if sp is not None else (d.x, d.y)
    m, p = x.shape
    gram = x.T @ x / m
    xty = x.T @ y / m
    yy = float(y @ y / m)
    return fit_initial_gram(gram, xty, yy, m, lambda0, split=sp)


def fit_initial_gram(
    gram: np.ndarray,
    xty: np.ndarray,
    yy: float,
    m: int,
    lambda0: float | None = None,
    split: SampleSplit | None = None,
) -> InitialFit:
    """:func:`fit_initial` on precomputed sufficient statistics."""
    p = xty.size
    if lambda0 is None:
        lambda0 = default_lambda0(p, m)
    if not lambda0 > 0:
        raise ValidationError(f"lambda0 must be positive, got {lambda0}")
    weights = np.sqrt(np.clip(np.diag(gram), 0.0, None))
    beta, sigma, lam, it = scaled_lasso(gram, xty, yy, m, lambda0, weights)
    beta.setflags(write=False)
    weights.setflags(write=False)
    return InitialFit(beta, sigma, lam, lambda0, weights, split, it)


def default_lambda0(p: int, m: int) -> float:
    """Half the universal level: ``sqrt(2 log p / m) / 2`` (p = 1 uses log 2).

    The universal level ``sqrt(2 log p / m)`` over-shrinks dense signals and
    leaves a large quadratic remainder in the corrected estimators.
    """
    return 0.5 * math.sqrt(2.0 * math.log(max(p, 2)) / m)
