"""Simulation and convergence certification for time-periodic closed-loop
negative-feedback systems, via monotone bracketing of the period map of the
symmetric doubled system."""

from .order import OrderInterval, OrthantCone, cmp_leq, in_interval, product_cone
from .expr import (
    EvalError,
    ParseError,
    diff_expr_numeric,
    eval_expr,
    parse_expr,
)
from .integrate import (
    IntegrationError,
    IntegratorSettings,
    Trajectory,
    flow,
    sample_trajectory,
)
from .model import (
    ClosedLoopModel,
    DoubledModel,
    FeedbackSignature,
    ModelError,
    build_doubled,
    classify_cyclic,
    eval_closed_loop_field,
    load_model,
)
from .poincare import (
    Orbit,
    PeriodicityError,
    doubled_map,
    iterate_orbit,
    periodic_solution,
    poincare_map,
)
from .certify import (
    CertificationError,
    CheckResult,
    ConvergenceCertificate,
    bracket_converge,
    check_A1_quasimonotone,
    check_A2_input_monotone,
    check_A3_output_decreasing,
    check_bracket_condition,
    verify_box_invariance,
)
from .genereg import GeneSpec, build_gene_model, check_H, compute_box_X

__version__ = "0.1.0"
