"""Shuffling-type stochastic gradient methods with an exponential step-size
schedule, plus numerical checks of the assumptions behind their analysis."""

from ._accel import USE_NUMBA, backend_name
from .optimizer import DivergenceError, EpochRecord, RunTrace, run, run_epoch
from .problems import (
    BiasMlpArchitecture,
    ContractViolation,
    FiniteSumProblem,
    GroundTruth,
    LeastSquaresProblem,
    build_bias_mlp,
    build_interpolating_generator,
    build_least_squares,
    build_teacher_mlp,
    eval_objective,
    finite_diff_grad,
    grad_component,
    problem_from_dict,
)
from .schedule import (
    ConstantSchedule,
    ConstantsLedger,
    SchedulePlan,
    ScheduleRejected,
    compute_constants,
    corollary_epochs,
    plan_schedule,
    verify_eta_recursion,
)
from .shuffling import (
    Permutation,
    ShufflingScheme,
    incremental_gradient,
    make_permutation,
    random_reshuffle,
    single_shuffle,
)

__version__ = "0.1.0"
