"""Inference for groups of regression coefficients in high dimensions.

Bias-corrected estimators of the quadratic functionals ``b_G' Sigma_GG b_G``
and ``b_G' A b_G`` drive one-sided group significance tests, confidence
intervals, hierarchical testing over a covariate clustering tree, and a
simulation harness.
"""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    Dataset,
    GroupSpec,
    SampleSplit,
    WeightMatrix,
    load_dataset,
    make_split,
    save_dataset,
    validate_group,
)
from .errors import (  # noqa: E402
    ConvergenceError,
    InfeasibleError,
    QuadGroupError,
    SolverError,
    ValidationError,
)
from .lasso import InitialFit, fit_initial, fit_lasso  # noqa: E402
from .projection import ProjectionProblem, ProjectionSolution, solve_projection  # noqa: E402
from .inference import (  # noqa: E402
    ConfInterval,
    CorrectionSample,
    QuadEstimate,
    TestResult,
    confidence_interval,
    estimate_q_a,
    estimate_q_sigma,
    test_group,
)
from .hiertest import ClusterTree, HierResult, adjust_pvalue, build_tree, descend, run_hierarchy  # noqa: E402
from .applications import build_interaction, heritability_report  # noqa: E402

__all__ = [
    "ClusterTree",
    "ConfInterval",
    "ConvergenceError",
    "CorrectionSample",
    "Dataset",
    "GroupSpec",
    "HierResult",
    "InfeasibleError",
    "InitialFit",
    "ProjectionProblem",
    "ProjectionSolution",
    "QuadEstimate",
    "QuadGroupError",
    "SampleSplit",
    "SolverError",
    "TestResult",
    "ValidationError",
    "WeightMatrix",
    "adjust_pvalue",
    "build_interaction",
    "build_tree",
    "confidence_interval",
    "descend",
    "estimate_q_a",
    "estimate_q_sigma",
    "fit_initial",
    "fit_lasso",
    "heritability_report",
    "load_dataset",
    "make_split",
    "run_hierarchy",
    "save_dataset",
    "solve_projection",
    "test_group",
    "validate_group",
]
