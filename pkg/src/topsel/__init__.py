"""Top-p sensor selection for RSS target localization.

Library layout:
  geometry      deployments, grids, frames, answer sets
  propagation   log-linear and spline RSS models, fitting, sampling
  maxsel        the max-value selection rule and its error probability
  bayes_single  grid posterior and (k, m) sensor list construction
  bayes_multi   multi-target joint posterior on synchronized local grids
  harness       canned experiments with seeded reproducibility
  ingest        timestamped trace alignment into frames
  cli           the `topsel` command

Set TOPSEL_NO_NUMBA=1 before import to force the pure-numpy compute lane.
"""

from ._kernels import BACKEND, HAVE_NUMBA

__version__ = "0.1.0"
from .errors import (
    AlignmentError,
    CapacityError,
    FitError,
    InferenceError,
    NumericalError,
    ParameterError,
    ParseError,
    TopselError,
)
from .geometry import (
    D_MIN,
    DeploymentMap,
    HypothesisGrid,
    Location,
    MeasurementFrame,
    Rect,
    TopPSet,
    containment_success,
    empirical_accuracy,
    floored_distances,
    grid_covering,
    load_deployment,
    load_grid,
    save_deployment,
    save_grid,
    true_top_p,
)
from .propagation import (
    VARIANCE_FLOOR,
    LogLinearModel,
    NormalizedModel,
    PropagationModel,
    SplineModel,
    fit_log_linear,
    fit_spline,
    likelihood,
    load_model,
    log_likelihood,
    normalize,
    normalized,
    sample_measurements,
    save_model,
    superposed_mean,
)
from .maxsel import (
    ErrorProbReport,
    TopPProblem,
    conditional_correct_quadrature,
    difference_moments,
    empirical_error,
    error_prob_orthant_mc,
    error_prob_quadrature,
    error_probability,
    top_p_select,
)
from .bayes_single import (
    ListParams,
    Posterior,
    RunResult,
    SelectionResult,
    construct_list,
    posterior_update,
    run_single_target,
    top_k_indices,
)
from .bayes_multi import (
    DEFAULT_SIDE_SCHEDULE,
    JOINT_CAP,
    GridSchedule,
    JointHypothesis,
    JointPosterior,
    LocalGridState,
    joint_posterior,
    local_grid,
    run_multi_target,
)
from .ingest import (
    DEFAULT_BUCKET_MS,
    DropReport,
    TraceRecord,
    TruthRecord,
    build_fit_dataset,
    parse_traces,
    read_trace_records,
    read_truth_records,
    write_traces,
)
from .harness import (
    SCENARIOS,
    ExperimentSpec,
    ResultTable,
    TrajectorySpec,
    child_seed,
    fit_baseline_models,
    load_spec,
    max_value_baseline,
    random_deployment,
    run_experiment,
    spec_from_doc,
    spec_hash,
    spec_to_doc,
    waypoint_trajectory,
    write_results,
)

__all__ = [name for name in dir() if not name.startswith("_")]
