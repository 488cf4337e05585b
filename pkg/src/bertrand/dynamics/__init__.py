"""Classical dynamics of PDM systems: integration, integrals of motion, orbit analysis."""

from .integrals import (
    Integral,
    angular_integral,
    angular_integrals,
    conservation_report,
    conserved_set,
    darboux_integrals,
    darboux_params,
    fradkin_component,
    fradkin_tensor,
    fradkin_unit_vector,
    hamiltonian_integral,
    independence_rank,
    independence_set,
    involutive_sets,
    pericenter_angle,
    poisson_bracket,
    runge_lenz,
)
from .integrators import (
    IntegratorConfig,
    PhaseState,
    Trajectory,
    gauss_step,
    gauss_tableau,
    hamiltonian_gradient,
    hamiltonian_hessian,
    integrate,
    integrate_batch,
)
from .orbits import (
    CircularOrbit,
    MeasuredApsides,
    OrbitAnalysis,
    analyze_orbit,
    angle_from_pericenter,
    angular_momentum,
    apsidal_angle,
    circular_orbit,
    measured_apsidal_angle,
    orbit_from_excitation,
    radial_period,
    random_bounded_states,
    state_at_pericenter,
    turning_points,
)
