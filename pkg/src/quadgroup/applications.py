"""Adapters for interaction testing and local heritability."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset, GroupSpec
from .errors import ValidationError
from .inference import ConfInterval, CorrectionSample, QuadEstimate, confidence_interval
from .lasso import InitialFit, fit_initial
from .projection import DEFAULT_C_LAMBDA


def build_interaction(d: Dataset, treatment) -> tuple[Dataset, GroupSpec]:
    """Design ``W = (D * X, X)`` and the interaction block ``{1..p}``.

    Testing the returned group asks whether the effect of ``X`` varies with
    the (not necessarily binary) treatment ``D``.
    """
    t = np.asarray(treatment, dtype=float)
    if t.ndim != 1 or t.size != d.n:
        raise ValidationError(f"treatment must be a vector of length n={d.n}, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValidationError("treatment has non-finite entries")
    if not np.any(t):
        warnings.warn("treatment is identically zero; the interaction block is all zeros")
    w = np.hstack([t[:, None] * d.x, d.x])
    cols = None
    if d.columns is not None:
        cols = tuple(f"D*{c}" for c in d.columns) + d.columns
    return Dataset(w, d.y, cols), GroupSpec.range(1, d.p)


@dataclass(frozen=True)
class HeritabilityRecord:
    group: GroupSpec
    estimate: QuadEstimate
    interval: ConfInterval
    proportion: tuple[float, float, float] | None = None

    def to_json(self) -> dict:
        out = {
            "group": list(self.group.indices),
            "q_hat": self.estimate.q_hat,
            "v_hat": self.estimate.v_hat,
            "plug_in": self.estimate.plug_in,
            "ci": [self.interval.lower, self.interval.upper],
            "level": self.interval.level,
            "mode": self.estimate.mode,
            "tau": self.estimate.tau,
        }
        if self.proportion is not None:
            out["proportion"] = list(self.proportion)
        return out


def heritability_report(
    d: Dataset,
    groups: list[GroupSpec],
    level: float = 0.95,
    tau: float = 1.0,
    mode: str = "sigma",
    normalize: bool = False,
    fit: InitialFit | None = None,
    c_lambda: float = DEFAULT_C_LAMBDA,
) -> list[HeritabilityRecord]:
    """Explained-variance estimate and interval for each group.

    All groups share one initial fit. With ``normalize=True`` each record
    also carries ``(q_hat, lower, upper)`` divided by the sample variance of
    ``y``.
    """
    if not groups:
        raise ValidationError("no groups given")
    sample = CorrectionSample(d, fit if fit is not None else fit_initial(d))
    var_y = float(np.var(d.y, ddof=1))
    out = []
    for g in groups:
        est = sample.estimate(g, mode, tau, c_lambda)
        ci = confidence_interval(est, level)
        prop = None
        if normalize:
            if var_y <= 0:
                raise ValidationError("response has zero variance; cannot normalize")
            prop = (est.q_hat / var_y, ci.lower / var_y, ci.upper / var_y)
        out.append(HeritabilityRecord(est.group, est, ci, prop))
    return out
