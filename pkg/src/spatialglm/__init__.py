"""Conservative confidence intervals for GLM coefficients at fixed spatial targets."""

from .baselines import (
    BaselineResult,
    baseline_interval,
    classic_se,
    fit_training_mle,
    kde_importance_weights,
    sandwich_se,
)
from .data import (
    SchemaError,
    TargetSet,
    TrainingSet,
    ValidationError,
    load_target,
    load_training,
    save_target,
    save_training,
)
from .families import (
    BERNOULLI,
    GAUSSIAN,
    POISSON,
    ExponentialFamily,
    family_from_token,
)
from .glm import (
    NonConvergenceError,
    NonExistenceError,
    SingularHessianError,
    SolveReport,
    population_estimand,
    tau,
    tau_jacobian,
)
from .inference import (
    FitStageError,
    InferenceResult,
    bias_bound,
    fit,
    normal_quantile,
    sigma_hat,
    variance_diag,
    write_result,
)
from .neighbors import (
    KSelectionTrace,
    NeighborIndex,
    WeightMatrix,
    build_weight_matrix,
    max_nn_radius,
    select_adaptive_k,
    self_nn_map,
)
from .simulation import (
    ReplicateRecord,
    SimConfig,
    gen_counterexample,
    gen_extrapolation,
    gen_infill,
    run_study,
    summarize,
)
from .transport import (
    DiscreteMeasure,
    MassImbalanceError,
    SignedWeighting,
    dual_check,
    lipschitz_supremum,
    wasserstein1,
)

__version__ = "0.1.0"
