"""Simple exclusion process with conductances on a segment.

Library + CLI for the spectra, couplings, exact mixing computations and
Monte Carlo cutoff estimators of the k-particle exclusion chain with
edge-dependent swap rates on sites 1..N.
"""

__version__ = "0.1.0"

from .env import AssumptionReport, ConductanceProfile, ProfileSpec, build_profile, check_assumptions
from .states import (
    Configuration,
    HeightFunction,
    config_of,
    extremal,
    height_of,
    leq,
    max_monotone_run,
    skeleton,
)
from .spectral import (
    EigenSystem,
    ExtendedEigenData,
    SolverError,
    heat_solution,
    solve_dirichlet,
    solve_extended,
    solve_neumann,
)
from .shooting import angle_count, b_recursion
from .dynamics import (
    CensoringScheme,
    ClockField,
    CoalescenceRecord,
    CoupledEnsemble,
    evolve_censored,
    evolve_coupled,
    run_coalescence,
    sample_stationary,
    step_markov,
)
from .exact import (
    CapacityError,
    ChainMatrix,
    MixingCurve,
    build_chain,
    distribution_at,
    distribution_piecewise,
    gap_of,
    lift_eigenfunction,
    mixing_time,
    sandwich_bounds,
    tv_curve,
)
from .twoparticle import TwoParticleChain, build_two_particle, no_merge_probability, two_particle_check
from .estimators import (
    TwoPhaseSampler,
    area_supermartingale_audit,
    bracket_variance,
    heat_mean_check,
    stationary_q_exceedance,
    two_phase_covariance_audit,
    wilson_lower_estimate,
    wilson_mean_check,
)
