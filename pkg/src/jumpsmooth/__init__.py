"""Numerical toolkit for one-dimensional jumping dynamics with
state-dependent jump rates: pathwise simulation by thinning, density
evolution under the adjoint generator, regularizing decompositions of the
jump kernel, and Fourier-decay smoothness certificates."""

from .errors import (
    BlowUpError,
    ConfigError,
    ContractError,
    DegenerateKernelError,
    DivergenceError,
    DomainEscapeError,
    InvalidModelError,
    JumpsmoothError,
    MassBracketError,
    MassConservationError,
    NearSingularError,
    NumericalError,
    ResolutionError,
    StabilityError,
    WindowTooSmallError,
)
from .calculus import (
    DerivativeStack,
    TransferCoefficients,
    composition_terms,
    faa_di_bruno,
    inverse_derivatives,
    leibniz_product,
    solve_tau,
    solve_tau_grid,
    solve_tau_i,
    solve_tau_i_grid,
    tau_i_stack_grid,
    tau_stack_grid,
    transfer_alpha,
    transfer_alpha_grid,
    transfer_beta,
    transfer_beta_grid,
)
from .presets import (
    Affine,
    ExpDecay,
    Function1D,
    FunctionProduct,
    FunctionSum,
    GaussBump,
    Indicator,
    InversePower,
    IsoPower,
    JumpAmplitude,
    Sinusoidal,
    SmoothstepBump,
    StretchedExp,
    Tabulated,
    TanhSigmoid,
    constant,
    smoothstep_coefficients,
)
from .model import (
    AssumptionReport,
    CoefficientSet,
    JumpMeasureSpec,
    QuadratureSpec,
    check_A,
    check_B,
    check_S,
    gauss_panels,
)
from .fokker_planck import (
    AdjointOperator,
    EvolutionConfig,
    EvolutionResult,
    GridDensity,
    apply_adjoint,
    apply_generator,
    duality_residual,
    evolve,
    gaussian_density,
    norm_growth_audit,
    picard_validate,
    sobolev_norm,
)
from .kernels import (
    CutoffFamily,
    KernelDecomposition,
    conditional_jump_density,
    cutoff_window_mass,
    kernel_mass,
    kernel_sobolev_audit,
    make_cutoff,
    make_kernels,
    mu_density,
)
from .simulate import (
    CFEstimate,
    JumpEvent,
    MarkSampler,
    OdeOptions,
    RegularizingJumpRecord,
    RngSpec,
    Trajectory,
    empirical_cf,
    estimate_density,
    histogram_density,
    sample_tau_n,
    simulate_batch,
    simulate_exact,
    simulate_poissonized,
)
from .diagnostics import (
    DecayReport,
    PipelineConfig,
    compare_densities,
    decay_fit,
    frequency_grid,
    smoothness_pipeline,
)
from .config import ExperimentConfig, build_function, build_model, load_config

__version__ = "0.1.0"

__all__ = [
    "AdjointOperator",
    "Affine",
    "AssumptionReport",
    "BlowUpError",
    "CFEstimate",
    "CoefficientSet",
    "ConfigError",
    "ContractError",
    "CutoffFamily",
    "DecayReport",
    "DegenerateKernelError",
    "DerivativeStack",
    "DivergenceError",
    "DomainEscapeError",
    "EvolutionConfig",
    "EvolutionResult",
    "ExpDecay",
    "ExperimentConfig",
    "Function1D",
    "FunctionProduct",
    "FunctionSum",
    "GaussBump",
    "GridDensity",
    "Indicator",
    "InvalidModelError",
    "InversePower",
    "IsoPower",
    "JumpAmplitude",
    "JumpEvent",
    "JumpsmoothError",
    "KernelDecomposition",
    "MarkSampler",
    "MassBracketError",
    "MassConservationError",
    "NearSingularError",
    "NumericalError",
    "OdeOptions",
    "PipelineConfig",
    "QuadratureSpec",
    "RegularizingJumpRecord",
    "ResolutionError",
    "RngSpec",
    "Sinusoidal",
    "SmoothstepBump",
    "StabilityError",
    "StretchedExp",
    "Tabulated",
    "TanhSigmoid",
    "TransferCoefficients",
    "Trajectory",
    "WindowTooSmallError",
    "apply_adjoint",
    "apply_generator",
    "build_function",
    "build_model",
    "check_A",
    "check_B",
    "check_S",
    "compare_densities",
    "composition_terms",
    "conditional_jump_density",
    "constant",
    "cutoff_window_mass",
    "decay_fit",
    "duality_residual",
    "empirical_cf",
    "estimate_density",
    "evolve",
    "faa_di_bruno",
    "frequency_grid",
    "gauss_panels",
    "gaussian_density",
    "histogram_density",
    "inverse_derivatives",
    "kernel_mass",
    "kernel_sobolev_audit",
    "leibniz_product",
    "load_config",
    "make_cutoff",
    "make_kernels",
    "mu_density",
    "norm_growth_audit",
    "picard_validate",
    "sample_tau_n",
    "simulate_batch",
    "simulate_exact",
    "simulate_poissonized",
    "smoothness_pipeline",
    "smoothstep_coefficients",
    "sobolev_norm",
    "solve_tau",
    "solve_tau_grid",
    "solve_tau_i",
    "solve_tau_i_grid",
    "tau_i_stack_grid",
    "tau_stack_grid",
    "transfer_alpha",
    "transfer_alpha_grid",
    "transfer_beta",
    "transfer_beta_grid",
    "__version__",
]
