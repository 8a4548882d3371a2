"""Logistic regression with known class-conditional label noise.

Two estimators are provided: the (non-convex) likelihood of the observed
labels and a convex surrogate built from the unbiased label transform.
Both come in unpenalised and l1-penalised forms, with de-biased confidence
intervals and simulation studies comparing their efficiency.
"""
__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DimensionError, DomainError, NoisyGLMError, RankDeficiencyError, SolverError,
    UnboundedObjectiveError,
)
from .glm_core import NoiseModel, h_ln, link_ln, mean_z, surrogate_target  # noqa: E402
from .losses import LIKELIHOOD, SURROGATE, Dataset, loss_lik, loss_sur  # noqa: E402
from .optim import FitConfig, FitResult, cv_select_lambda, fit  # noqa: E402
from .inference import (  # noqa: E402
    PsiSpec, debias, info_matrices, nodewise_theta, subspace_gap, wald_intervals,
)
from .kernels import BACKEND  # noqa: E402

__all__ = [
    "__version__", "BACKEND",
    "NoisyGLMError", "DomainError", "DimensionError", "RankDeficiencyError", "SolverError",
    "UnboundedObjectiveError",
    "NoiseModel", "h_ln", "link_ln", "mean_z", "surrogate_target",
    "Dataset", "LIKELIHOOD", "SURROGATE", "loss_lik", "loss_sur",
    "FitConfig", "FitResult", "fit", "cv_select_lambda",
    "PsiSpec", "info_matrices", "subspace_gap", "nodewise_theta", "debias", "wald_intervals",
]
