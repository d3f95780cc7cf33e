"""chclab: a spectral Galerkin / backward Euler laboratory for the
conserved-order-parameter phase field equation driven by additive Q-Wiener
noise, plus the Monte Carlo machinery to measure its strong convergence
rates."""

from .spectral import (
    EigenBasis,
    SpectralField,
    apply_fractional_power,
    apply_semigroup,
    build_basis,
    from_grid,
    project_mean_free,
    to_grid,
    truncate,
    verify_smoothing_bounds,
)
from .nonlinearity import (
    check_structure_conditions,
    energy,
    eval_F,
    eval_F_prime_apply,
)
from .noise import (
    GAMMA_MARGIN,
    BrownianSkeleton,
    NoiseModel,
    certify_gamma,
    effective_gamma,
    increment,
    increments,
    load_skeleton,
    sample_stochastic_convolution,
    save_skeleton,
)
from .stepper import (
    SchemeConfig,
    SchemeResult,
    SolverDiverged,
    StepState,
    backward_euler_step,
    discrete_solution_operator,
    run_scheme,
    run_scheme_batch,
    verify_discrete_smoothing,
)
from .dense_oracle import NonConvergence, dense_laplacian, oracle_F, oracle_run, oracle_step
from .presets import InitialData
from .simulator import (
    MomentReport,
    Trajectory,
    ensemble_moments,
    ensemble_states,
    holder_probe,
    load_fields,
    observable_kappa,
    save_fields,
    simulate_path,
    trajectory_to_csv,
)
from .convergence import (
    DegenerateFit,
    LadderInfeasible,
    LadderSpec,
    RateReport,
    fit_rate,
    galerkin_rate_study,
    strong_error_study,
)
from .config import ConfigError, config_hash, load_config, validate_config

__version__ = "0.1.0"
