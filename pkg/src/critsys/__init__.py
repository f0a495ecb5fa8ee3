"""Critical elliptic systems on symmetry-reduced model manifolds."""
from .analytic import (
    BubbleParams,
    Coupling,
    blowup_pair_coupling,
    coupling_from_scalars,
    euclid_bubble,
    manifold_bubble,
    named_matrices,
    remark11_system,
    remark13_family,
    sharp_constant,
    sphere_bubble,
    structure_tests,
)
from .blowup import (
    BlowupReport,
    BlowupSequence,
    build_family,
    corollary81_ratio,
    energy_splitting_residual,
    extract_center_weight,
    l2_concentration_ratio,
    local_balance_checks,
    pohozaev_residual,
    pointwise_envelope,
    sharp_asymptotics_fit,
    standard_rescale,
)
from .errors import ConfigurationError, CritsysError, DomainError, NumericError, ShapeError, SolverError
from .fields import Field, PMap, grad_energy, lq_norm, pmap_abs_q
from .geometry import Grid1D, ManifoldModel, ModelKind, build_model, laplacian, sphere_volume
from .variational import (
    MinimizeOptions,
    NewtonOptions,
    SolveReport,
    coercivity_lambda,
    constraint_phi,
    free_energy,
    functional_IA,
    gradient_residual,
    hv_inequality_check,
    minimize_mu,
    multiplicity_energies,
    newton_solve,
    rescale_to_solution,
)

__version__ = "0.1.0"
