"""Monte Carlo laboratory for cookie-perturbed random walks in random
environments and their associated branching processes."""

from .environment import (
    BetaP,
    ConstantM,
    ConstantP,
    Environment,
    EnvironmentSpec,
    FinitePMFM,
    FinitePMFP,
    GeometricM,
    LogHeavyTailM,
    ParetoTailM,
    SiteEnvironment,
    TwoPointP,
    TwoPointWithInfinityM,
    check_assumptions,
    load_spec,
    make_spec,
    sample_site,
    save_spec,
)
from .moments import MomentReport, mc_moment_estimates, mgf, moment_report, solve_beta
from .classify import Verdict, classify_rwre, classify_speed, classify_transience, tilde_reduction
from .walk import (
    Censored,
    RegenerationRecord,
    WalkRecord,
    WalkState,
    detect_regenerations,
    downcrossings,
    hitting_time,
    left_speed_reciprocal,
    run_walk,
    step,
)
from .branching import (
    BranchingTrajectory,
    coupled_run,
    offspring_sum,
    progeny_tail_diagnostic,
    run_backward_process,
    run_difference_equation,
    run_emigration_process,
    run_growth_collapse,
)
from .harness import ExperimentConfig, ExperimentReport, run_experiment
from .rng import KeyedStream
from .suite import run_suite

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
