"""Message-passing detection for overloaded real-valued linear systems.

Detectors, closed-form performance predictions, convergence analysis,
and a seeded Monte-Carlo benchmark harness for systems y = H x + n with
more users than receive antennas.  The exact LMMSE solution acts as the
accuracy oracle throughout; the iterative detectors trade a dense
matrix solve for per-iteration work linear in the channel size.
"""

from .analysis import (
    BETA_CONVERGENCE_THRESHOLD,
    ClassicalResult,
    ConvergencePrediction,
    VarianceFixedPoint,
    asymptotic_relaxation,
    classical_iterate,
    gamma_tilde,
    gmpid_asymptotic_radius,
    gmpid_limit_formula,
    gmpid_mean_operator,
    jacobi_preset,
    mean_convergence_report,
    richardson_preset,
    sa_asymptotic_radius,
    sa_iteration_matrix_operator,
    sa_mean_operator,
    solve_variance_fixed_point,
    spectral_radius,
    symmetric_extremes,
)
from .gmpid import (
    VARIANCE_SCHEDULE_JOINT,
    VARIANCE_SCHEDULE_PRESOLVE,
    VERDICT_CONVERGED,
    VERDICT_DIVERGED,
    VERDICT_MAX_ITERATIONS,
    DetectionReport,
    IterationOptions,
    MessageState,
    VarianceSolution,
    decide,
    extrinsic,
    gmpid_run,
    initial_state,
    solve_variance_recursion,
    sum_node_update,
    variable_node_update,
)
from .harness import (
    CSV_HEADER,
    KNOWN_DETECTORS,
    ExperimentResult,
    ExperimentSpec,
    TrialRecord,
    csv_bytes,
    derive_trial_seed,
    format_summary,
    load_spec,
    mean_mse_by_iteration,
    predict,
    predict_rows,
    prediction_row,
    run_experiment,
    write_csv,
)
from .lmmse import LmmseResult, lmmse_detect, predict_mmse_mse
from .model import (
    PRIOR_MODE_GENIE_NOISY,
    PRIOR_MODE_UNINFORMATIVE,
    ChannelInstance,
    DetectorError,
    GaussianMessage,
    NonInformativeObservation,
    NumericalFault,
    Observation,
    PriorBelief,
    SystemConfig,
    combine_extrinsic,
    gaussian_product,
    generate_instance,
    mse,
)
from .sagmpid import (
    RELAXATION_ASYMPTOTIC,
    RELAXATION_EXACT_EIGEN,
    RELAXATION_MANUAL,
    RelaxationChoice,
    choose_relaxation,
    precompute_sum_variances,
    sa_gmpid_run,
    sa_sum_node_update,
    sa_variable_node_update,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # model
    "SystemConfig",
    "ChannelInstance",
    "Observation",
    "PriorBelief",
    "GaussianMessage",
    "DetectorError",
    "NumericalFault",
    "NonInformativeObservation",
    "PRIOR_MODE_UNINFORMATIVE",
    "PRIOR_MODE_GENIE_NOISY",
    "generate_instance",
    "gaussian_product",
    "combine_extrinsic",
    "mse",
    # lmmse
    "LmmseResult",
    "lmmse_detect",
    "predict_mmse_mse",
    # gmpid
    "IterationOptions",
    "MessageState",
    "DetectionReport",
    "VarianceSolution",
    "VERDICT_CONVERGED",
    "VERDICT_MAX_ITERATIONS",
    "VERDICT_DIVERGED",
    "VARIANCE_SCHEDULE_PRESOLVE",
    "VARIANCE_SCHEDULE_JOINT",
    "initial_state",
    "sum_node_update",
    "variable_node_update",
    "decide",
    "extrinsic",
    "solve_variance_recursion",
    "gmpid_run",
    # sagmpid
    "RELAXATION_ASYMPTOTIC",
    "RELAXATION_EXACT_EIGEN",
    "RELAXATION_MANUAL",
    "RelaxationChoice",
    "choose_relaxation",
    "precompute_sum_variances",
    "sa_sum_node_update",
    "sa_variable_node_update",
    "sa_gmpid_run",
    # analysis
    "BETA_CONVERGENCE_THRESHOLD",
    "VarianceFixedPoint",
    "ConvergencePrediction",
    "ClassicalResult",
    "solve_variance_fixed_point",
    "gamma_tilde",
    "asymptotic_relaxation",
    "gmpid_asymptotic_radius",
    "sa_asymptotic_radius",
    "spectral_radius",
    "symmetric_extremes",
    "gmpid_mean_operator",
    "sa_mean_operator",
    "sa_iteration_matrix_operator",
    "mean_convergence_report",
    "gmpid_limit_formula",
    "classical_iterate",
    "jacobi_preset",
    "richardson_preset",
    # harness
    "ExperimentSpec",
    "TrialRecord",
    "ExperimentResult",
    "KNOWN_DETECTORS",
    "CSV_HEADER",
    "derive_trial_seed",
    "run_experiment",
    "csv_bytes",
    "write_csv",
    "mean_mse_by_iteration",
    "prediction_row",
    "predict_rows",
    "predict",
    "format_summary",
    "load_spec",
]
