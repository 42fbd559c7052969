"""Spectral-Galerkin laboratory for stochastic control of truncated fluid
models.

The package builds finite mode systems (diagonal dissipation, divergence
free trig convection, diagonal noise), solves the associated dynamic
programming equation on small boxes by three independent routes (monotone
grid march, mild fixed point, weighted Monte Carlo), simulates the
controlled dynamics, and cross-checks everything against closed forms and
each other.
"""

__version__ = "0.1.0"

from .galerkin import (
    GalerkinSystem,
    HypothesisParams,
    HypothesisReport,
    apply_fractional,
    build_torus_system,
    empirical_convection_bound,
    ensure_field,
    system_from_json,
    system_to_json,
    validate_hypotheses,
    with_q_spectrum,
    without_bilinear,
)
from .hamiltonian import (
    apply_control_adjoint,
    control_weights,
    feedback_control,
    saturated_gradient,
    saturated_value,
)
from .ou import (
    OUTransition,
    apply_R,
    gauss_hermite_rule,
    ou_transition,
    sample_ou,
    single_mode_transition,
    stochastic_convolution_path,
)
from .hjb import (
    BoundsReport,
    CostSpec,
    GridSpec,
    HJBNumericalError,
    ValueGrid,
    assert_value_bounds,
    default_halfwidths,
    gradient,
    gradient_at,
    refinement_deltas,
    solve_hjb_grid,
    value_at,
)
from .mild import PicardDivergenceError, solve_hjb_mild
from .fk import FKReport, FKUnderflowError, default_killing_rate, \
    feynman_kac_value
from .sde import (
    IntegratorSpec,
    PathEnsemble,
    energy_estimate,
    simulate_closed_loop,
    simulate_controlled,
    theta_delta_diagnostic,
)
from .policies import (
    constant_policy,
    feedback_policy,
    perturbed_policy,
    random_ball_policy,
    zero_policy,
)
from .cost import (
    CostReport,
    DPReport,
    compare_costs,
    dp_verify,
    estimate_cost,
    make_cost,
    make_cost_component,
    running_integrand,
    value_identity,
)
from .lq import LQProblem, LQSolution, closed_form_p, solve_riccati
from .config import (
    ConfigError,
    build_cost,
    build_grid,
    build_integrator,
    build_system,
    fingerprint,
    hypothesis_gate,
    load_config,
    mild_grid,
    resolve_config,
)

__all__ = [name for name in dir() if not name.startswith("_")]
