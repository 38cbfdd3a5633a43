"""Design-based survey estimation toolkit.

Finite-population estimation under complex sampling designs: weighted and
model-assisted estimators with cross-fitting, imputation and doubly robust
estimation under item nonresponse, inverse probability weighting with a
pseudo-population bootstrap under unit nonresponse, orthogonality
diagnostics, and a reproducible Monte Carlo simulation engine.
"""

__version__ = "1.0.0"

from .designs import (
    DesignSpec,
    EnumerationSizeError,
    FoldPartition,
    SampleRealization,
    UnsupportedDesignError,
    conditional_inclusion_probs,
    draw_sample,
    enumerate_design,
    inclusion_probs,
    joint_inclusion_matrix,
    joint_inclusion_probs,
    make_folds,
)
from .estimators import (
    CompletedFile,
    EstimateResult,
    aipw_crossfit,
    aipw_oracle,
    build_completed_file,
    greg,
    ht_mean,
    ht_variance,
    imputed_mean,
    ipw_mean,
    ipw_variance,
    ma_crossfit,
    ma_crossfit_modified,
    ma_feasible,
    ma_oracle,
    wald_ci,
)
from .learners import FittedPredictor, LearnerSpec, fit, fit_crossfitted
from .nonresponse import (
    ResponseMechanism,
    ResponsePattern,
    appendix_mechanism,
    constant_mechanism,
    draw_responses,
)
from .population import (
    DgpConfig,
    FinitePopulation,
    generate_population,
    population_mean,
    read_population_csv,
    write_population_csv,
)

__all__ = [
    "__version__",
    "CompletedFile",
    "DesignSpec",
    "DgpConfig",
    "EnumerationSizeError",
    "EstimateResult",
    "FinitePopulation",
    "FittedPredictor",
    "FoldPartition",
    "LearnerSpec",
    "ResponseMechanism",
    "ResponsePattern",
    "SampleRealization",
    "UnsupportedDesignError",
    "aipw_crossfit",
    "aipw_oracle",
    "appendix_mechanism",
    "build_completed_file",
    "conditional_inclusion_probs",
    "constant_mechanism",
    "draw_responses",
    "draw_sample",
    "enumerate_design",
    "fit",
    "fit_crossfitted",
    "generate_population",
    "greg",
    "ht_mean",
    "ht_variance",
    "imputed_mean",
    "inclusion_probs",
    "ipw_mean",
    "ipw_variance",
    "joint_inclusion_matrix",
    "joint_inclusion_probs",
    "ma_crossfit",
    "ma_crossfit_modified",
    "ma_feasible",
    "ma_oracle",
    "make_folds",
    "population_mean",
    "read_population_csv",
    "wald_ci",
    "write_population_csv",
]
