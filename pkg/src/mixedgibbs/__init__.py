"""Two-block Gibbs sampler for Bayesian linear mixed models with a
convergence-rate laboratory.

Subpackages by concern:

* ``model_core``      data containers, design aggregates, drift function,
                      joint log density, growth-regime audit, dataset CSV
* ``gibbs_kernel``    the five-step transition, its random-mapping form,
                      and the exact conditional log densities
* ``linalg_props``    SPD square roots, PSD ordering checks, the dense
                      test-only smoothing matrix
* ``coupling_lab``    coupled-chain estimators for drift and contraction
                      constants and Wasserstein distance curves
* ``bounds_engine``   explicit rate formulas and assembled TV bounds
* ``data_forge``      synthetic growth-regime dataset generation
* ``fastpath``        compiled chain driver for long runs
* ``cli``             command-line orchestration of the pipelines
"""

from .model_core import (
    AssumptionReport,
    AssumptionThresholds,
    ChainState,
    DatasetFormatError,
    DerivedDesign,
    Hyperparameters,
    MixedModelData,
    ModelContext,
    build_derived,
    check_assumptions,
    drift_value,
    load_dataset,
    log_unnormalized_joint,
    sufficient_stats,
    write_dataset,
)
from .gibbs_kernel import (
    GibbsConstants,
    NoiseDraw,
    PrecisionPair,
    SingularDesignError,
    draw_noise,
    eta_from_noise,
    gibbs_constants,
    log_precision_conditional,
    log_state_conditional,
    precisions_from_noise,
    random_map,
    run_chain,
    transition,
)
from .bounds_engine import (
    RateInputs,
    RateReport,
    TvBound,
    assemble_tv_bound,
    conversion_scale,
    exponent_interval,
    gamma_rate_l1_bound,
    gamma_rate_l1_exact,
    optimize_rate,
    rate_at,
)
from .coupling_lab import (
    ContractionEstimate,
    CouplingConfig,
    DriftEstimate,
    coupled_step,
    estimate_contraction,
    estimate_drift,
    geometric_decay_rate,
    make_drift_probes,
    wasserstein_curve,
)
from .data_forge import GenConfig, generate, scale_sequence

__version__ = "0.1.0"
