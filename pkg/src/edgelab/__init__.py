"""edgelab: a numerical laboratory for Kahler-Einstein edge metrics on
conic surfaces -- singular Monge-Ampere continuity method, Ricci iteration,
model-cone linear analysis, energies, polyhomogeneous expansion fits,
explicit curvature, and Holder estimators."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    ContinuationStallError,
    ConvergenceFailureError,
    DampingFailureError,
    DomainError,
    EdgeLabError,
    EstimateViolationError,
    GaussBonnetMismatchError,
    IllConditionedBasisError,
    InadmissibleGammaError,
    InvalidParameterError,
    LinearSolveFailureError,
    PositivityFailureError,
    SingularSystemError,
    StencilUnderflowError,
)
from .grids import (  # noqa: F401
    ConeAngle,
    EdgeGrid,
    ScalarField,
    TorusGrid,
    coord_transform,
    grading_for_depth,
    make_grid,
)
from .geometry import (  # noqa: F401
    ConicSurfaceMetric,
    FlatConeBackground,
    FlatTorusBackground,
    RoundSphereBackground,
    asymptotic_equivalence_ratios,
    build_reference_surface,
    edge_profile_ratio,
    flat_cone_metric,
    football_metric,
    metric_manifest,
    metric_value_rows,
    singular_radius,
)
from .model_cone import (  # noqa: F401
    FriedrichsProbeReport,
    ModeOperator,
    QOperator,
    apply_Q,
    friedrichs_domain_probe,
    green_apply,
    indicial_roots,
    lowest_eigenvalue,
    mode_green_solve,
    model_laplacian_apply,
    surface_q_family,
)
from .ma_solver import (  # noqa: F401
    BarrierCheck,
    ContinuityState,
    IterationState,
    barrier_check,
    continuity_solve,
    default_schedule,
    estimate_monitor,
    ma_residual,
    newton_step,
    ricci_iterate,
)
from .energy import (  # noqa: F401
    EnergyReport,
    energy_I_J,
    energy_report,
    gauss_bonnet_defect,
    k_energy_closed,
    k_energy_path,
    linear_path,
    monotonicity_report,
    natural_mu,
    twisted_ricci_potential,
)
from .asymptotics import (  # noqa: F401
    ExpansionFit,
    StructureVerdicts,
    default_basis,
    f_omega_expansion_check,
    fit_expansion,
    surface_polar_field,
    verify_structure,
)
from .curvature import (  # noqa: F401
    AdaptedFrame,
    BisectionalScan,
    CurvatureSample,
    LocalModelMetric,
    adapted_frame,
    bisectional_scan,
    chern_lu_residual,
    curvature_tensor,
    gauss_curvature,
    local_model_metric_eval,
    model_symbols,
)
from .holder import (  # noqa: F401
    DomainSeminormReport,
    HolderReport,
    continuity_path_holder_monitor,
    domain_seminorm,
    holder_seminorm,
    polar_patch,
)
