"""Simulation lab for contaminated recursive training (CRT/BCRT) of 1-D
generative estimators: closed-form Gaussian-mixture targets, ECDF/KDE/neural
estimators over an accumulating sample store, W1/MMD trajectory metrics,
log-log rate fitting, and numeric oracles for the predicted convergence rates.
"""

__version__ = "0.1.0"

from .distributions import (
    BiasSchedule,
    EvalGrid,
    GaussianComponent,
    TargetSpec,
    biased_spec_at,
    build_grid,
    default_bias_component,
    default_target,
    mixture_cdf,
    mixture_pdf,
    sample_mixture,
)
from .estimators import (
    EstimatorSpec,
    EstimatorState,
    SampleStore,
    bandwidth_at,
    cdf_on_grid,
    ingest,
    new_state,
    pdf_on_grid,
    sample_synthetic,
)
from .expcli import (
    ConfigError,
    ExperimentConfig,
    build_config,
    cell_seed,
    emit_density_snapshot,
    emit_phase_diagram,
    emit_rate_plot,
    parse_config,
    run_experiment,
    theory_check_report,
)
from .metrics import (
    EvalContext,
    MetricSettings,
    eval_state,
    mmd_grid,
    w1_grid,
    w1_quantile,
)
from .neuralgen import (
    MlpSpec,
    NeuralRunConfig,
    TrainSpec,
    forward,
    init_mlp,
    quantile_w1_loss_and_grad,
    run_crt_neural,
    train_iteration,
)
from .rates import RateFit, RateSummary, fit_rate, should_normalize, summarize
from .recursion import (
    RecursionConfig,
    Trajectory,
    TrajectoryPoint,
    m2_of,
    run_bcrt,
    run_crt,
    run_with_state,
)
from .theory import (
    EnvelopeResult,
    RatePrediction,
    RatioBoundReport,
    baseline_rate_table,
    cesaro_average,
    check_cesaro_bound,
    check_gamma_ratio_bounds,
    check_product_gamma_identity,
    log_gamma,
    predicted_rate,
    simulate_recursion_envelope,
)

__all__ = [
    "BiasSchedule",
    "ConfigError",
    "EnvelopeResult",
    "EstimatorSpec",
    "EstimatorState",
    "EvalContext",
    "EvalGrid",
    "ExperimentConfig",
    "GaussianComponent",
    "MetricSettings",
    "MlpSpec",
    "NeuralRunConfig",
    "RateFit",
    "RatePrediction",
    "RateSummary",
    "RatioBoundReport",
    "RecursionConfig",
    "SampleStore",
    "TargetSpec",
    "TrainSpec",
    "Trajectory",
    "TrajectoryPoint",
    "bandwidth_at",
    "baseline_rate_table",
    "biased_spec_at",
    "build_config",
    "build_grid",
    "cdf_on_grid",
    "cell_seed",
    "cesaro_average",
    "check_cesaro_bound",
    "check_gamma_ratio_bounds",
    "check_product_gamma_identity",
    "default_bias_component",
    "default_target",
    "emit_density_snapshot",
    "emit_phase_diagram",
    "emit_rate_plot",
    "eval_state",
    "fit_rate",
    "forward",
    "ingest",
    "init_mlp",
    "log_gamma",
    "m2_of",
    "mixture_cdf",
    "mixture_pdf",
    "mmd_grid",
    "new_state",
    "parse_config",
    "pdf_on_grid",
    "predicted_rate",
    "quantile_w1_loss_and_grad",
    "run_bcrt",
    "run_crt",
    "run_crt_neural",
    "run_experiment",
    "run_with_state",
    "sample_mixture",
    "sample_synthetic",
    "should_normalize",
    "simulate_recursion_envelope",
    "summarize",
    "theory_check_report",
    "train_iteration",
    "w1_grid",
    "w1_quantile",
]
