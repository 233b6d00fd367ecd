"""Hypothesis checks and the monotone bracketing iteration."""

import math

import numpy as np
import pytest

from perifix.certify import (
    CertificationError,
    bracket_converge,
    check_A1_quasimonotone,
    check_A2_input_monotone,
    check_A3_output_decreasing,
    check_bracket_condition,
    input_box,
    verify_box_invariance,
)
from perifix.integrate import IntegratorSettings, flow
from perifix.model import build_doubled, load_model
from perifix.order import OrderInterval


def make_model(n, f, h, box_hi, box_lo=None, period=1.0):
    return load_model({
        "type": "closed_loop",
        "n": n,
        "period": period,
        "f": f,
        "h": h,
        "state_box": {"lo": box_lo or [0.0] * n, "hi": box_hi},
    })


# -- A1: quasimonotone open loop ----------------------------------------------

def test_A1_reference_passes(reference_model):
    res = check_A1_quasimonotone(reference_model, samples=128, seed=3)
    assert res.passed
    # the only nonzero off-diagonal couplings are the chain gains, all 1
    assert res.worst_margin == pytest.approx(1.0, abs=1e-6)
    assert res.seed == 3 and res.samples_used == 128


def test_A1_negative_offdiagonal_fails():
    mdl = make_model(2, ["-x2", "x1 - x2"], ["0"], [1.0, 1.0])
    res = check_A1_quasimonotone(mdl, samples=64)
    assert res.verdict == "fail"
    assert res.worst_margin == pytest.approx(-1.0, abs=1e-6)
    assert res.witnesses


def test_A1_vacuous_in_one_dimension():
    mdl = make_model(1, ["-x1"], ["0"], [1.0])
    res = check_A1_quasimonotone(mdl, samples=16)
    assert res.passed
    assert res.worst_margin == math.inf


# -- A2: field increasing in the input ------------------------------------------

def test_A2_reference_passes(reference_model):
    res = check_A2_input_monotone(reference_model, samples=128)
    assert res.passed
    assert res.worst_margin == pytest.approx(1.0, abs=1e-6)


def test_A2_decreasing_input_fails():
    mdl = make_model(1, ["-u1 - x1"], ["0.5"], [1.0])
    res = check_A2_input_monotone(mdl, samples=64)
    assert res.verdict == "fail"
    assert res.worst_margin == pytest.approx(-1.0, abs=1e-6)


def test_A2_input_independent_passes_with_zero_margin():
    mdl = make_model(1, ["-x1"], ["0.5"], [1.0])
    res = check_A2_input_monotone(mdl, samples=64)
    assert res.passed
    assert res.worst_margin == 0.0


# -- A3: decreasing output -------------------------------------------------------

def test_A3_reference_passes(reference_model):
    res = check_A3_output_decreasing(reference_model, samples=128)
    assert res.passed
    # steepest response slope on the box is at x3 = 5/6, flattest at x3 = 0
    assert 72 / 121 - 1e-6 < res.worst_margin <= 2.0


def test_A3_increasing_output_fails():
    mdl = make_model(1, ["u1 - x1"], ["x1"], [1.0])
    res = check_A3_output_decreasing(mdl, samples=64)
    assert res.verdict == "fail"
    assert res.worst_margin == pytest.approx(-1.0, abs=1e-6)


def test_A3_constant_output_margin_zero():
    mdl = make_model(1, ["u1 - x1"], ["0.7"], [1.0])
    res = check_A3_output_decreasing(mdl, samples=64)
    assert res.passed
    assert res.worst_margin == 0.0


def test_unevaluable_field_rejected_at_load():
    from perifix.model import ModelError

    with pytest.raises(ModelError, match="evaluation failed"):
        make_model(1, ["0"], ["x1^0.5"], [1.0], box_lo=[-1.0])


def test_A3_indeterminate_on_evaluation_error(monkeypatch):
    from perifix.expr import EvalError

    mdl = make_model(1, ["u1 - x1"], ["0.7"], [1.0])

    def boom(x):
        raise EvalError("synthetic output failure")

    monkeypatch.setattr(mdl, "output", boom)
    res = check_A3_output_decreasing(mdl, samples=8)
    assert res.verdict == "indeterminate"
    assert res.witnesses and "synthetic" in res.witnesses[0]["error"]


def test_input_box_covers_output_range(reference_model):
    ulo, uhi = input_box(reference_model)
    # g is decreasing: range is [g(5/6), g(0)] = [12/11, 2]
    assert ulo[0] == pytest.approx(12 / 11, abs=1e-3)
    assert uhi[0] == pytest.approx(2.0, abs=1e-3)


# -- box invariance ---------------------------------------------------------------

def test_reference_box_is_invariant(reference_model):
    res = verify_box_invariance(reference_model, reference_model.X, seed=5)
    assert res.passed
    assert res.worst_margin >= -1e-8


def test_shrunken_box_fails(reference_model):
    small = OrderInterval(reference_model.K, [0, 0, 0], [0.5, 1.0, 5 / 6])
    res = verify_box_invariance(reference_model, small, seed=5)
    assert res.verdict == "fail"
    # at the corner x = (0.5, *, 0) the first component grows at rate 1
    assert res.worst_margin == pytest.approx(-1.0, abs=1e-9)
    assert res.witnesses[0]["face"] == "upper[1]"


def test_zero_field_box_margin_zero():
    mdl = make_model(2, ["0", "0"], ["0"], [1.0, 1.0])
    box = OrderInterval(mdl.K, [0, 0], [1, 1])
    res = verify_box_invariance(mdl, box)
    assert res.passed
    assert res.worst_margin == 0.0


# -- bracket displacement test ------------------------------------------------------

def test_bracket_condition_reference(reference_model, reference_doubled):
    res = check_bracket_condition(reference_doubled, reference_model.X.lo,
                                  reference_model.X.hi)
    assert res.passed
    assert res.worst_margin > 0.0


def test_bracket_condition_at_fixed_point(reference_doubled, reference_certificate):
    r = reference_certificate.r
    res = check_bracket_condition(reference_doubled, r, r)
    assert res.passed
    assert abs(res.worst_margin) < 1e-8


def test_bracket_condition_too_small_a_box(reference_doubled):
    res = check_bracket_condition(reference_doubled, np.zeros(3),
                                  np.array([0.1, 0.1, 0.1]))
    assert res.verdict == "fail"
    assert res.worst_margin < -res.eps


def test_bracket_condition_requires_ordered_corners(reference_doubled):
    with pytest.raises(ValueError, match="x0 <= y0"):
        check_bracket_condition(reference_doubled, np.array([1.0, 1.0, 5 / 6]),
                                np.zeros(3))


# -- bracketing iteration -------------------------------------------------------------

def test_reference_certificate(reference_certificate):
    cert = reference_certificate
    assert cert.status == "converged"
    assert cert.iterations <= 500
    assert cert.gap < 1e-6
    assert cert.fixed_point_residual < 1e-8
    assert cert.r is not None


def test_certificate_chain_is_monotone(reference_certificate):
    for entry in reference_certificate.chain_log[1:]:
        assert entry["margin_a_step"] >= -1e-8
        assert entry["margin_between"] >= -1e-8
        assert entry["margin_b_step"] >= -1e-8
    gaps = [entry["gap"] for entry in reference_certificate.chain_log]
    assert all(g1 <= g0 + 1e-8 for g0, g1 in zip(gaps, gaps[1:]))


def test_certificate_limits_are_symmetric(reference_certificate):
    p, q = reference_certificate.p, reference_certificate.q
    assert np.max(np.abs(q - np.r_[p[3:], p[:3]])) < 1e-6


def test_limit_matches_long_run_orbit(reference_model, reference_certificate):
    # independent oracle: march the midpoint of the box for 60 periods and
    # compare with the certified fixed point
    from perifix.poincare import iterate_orbit

    orbit = iterate_orbit(reference_model, np.array([0.5, 0.5, 5 / 12]), 60)
    assert np.max(np.abs(orbit.points[-1] - reference_certificate.r)) < 1e-4


def test_start_at_fixed_point_converges_immediately(reference_doubled,
                                                    reference_certificate):
    r = reference_certificate.r
    cert = bracket_converge(reference_doubled, r, r, tol=1e-6, residual_tol=1e-8)
    assert cert.status == "converged"
    assert cert.iterations == 0
    assert cert.gap == 0.0


def test_bracket_requires_ordered_corners(reference_doubled):
    with pytest.raises(ValueError, match="x0 <= y0"):
        bracket_converge(reference_doubled, np.ones(3), np.zeros(3))


def test_max_iters_status(reference_model, reference_doubled):
    cert = bracket_converge(reference_doubled, reference_model.X.lo,
                            reference_model.X.hi, tol=1e-6, max_iters=2)
    assert cert.status == "max_iters"
    assert cert.iterations == 2
    assert cert.r is None


def test_boundary_case_stalls_honestly():
    # f = u - x with h(x) = 1 - x sits exactly on the uniqueness boundary
    # (output slope 1 against decay rate 1): the corner pair (0, 1) is a
    # genuine off-diagonal fixed point of the doubled map, so the chains
    # are monotone but never contract, and the iteration must report that
    # rather than fake convergence.
    mdl = make_model(1, ["u1 - x1"], ["1 - x1"], [1.0])
    dm = build_doubled(mdl)
    disp = check_bracket_condition(dm, np.zeros(1), np.ones(1))
    assert disp.passed and abs(disp.worst_margin) < 1e-8
    cert = bracket_converge(dm, np.zeros(1), np.ones(1), tol=1e-6, max_iters=5)
    assert cert.status == "max_iters"
    assert cert.gap == pytest.approx(1.0, abs=1e-6)
    for entry in cert.chain_log[1:]:
        assert min(entry["margin_a_step"], entry["margin_between"],
                   entry["margin_b_step"]) >= -1e-8


def test_bracket_violation_detected():
    # inverting output breaks the doubling trick: from the corner (0, 1) the
    # x-block immediately drifts below 0, outside the product-cone order
    mdl = make_model(1, ["-x1 + u1"], ["0 - x1"], [1.0])
    cert = bracket_converge(build_doubled(mdl), np.zeros(1), np.ones(1))
    assert cert.status == "bracket_violated"
    assert cert.violation is not None
    assert cert.violation["iteration"] == 1


def test_residual_verification_failure_raises(reference_model, reference_doubled):
    # an absurdly tight residual requirement cannot be met
    with pytest.raises(CertificationError):
        bracket_converge(reference_doubled, reference_model.X.lo,
                         reference_model.X.hi, tol=1e-6, residual_tol=1e-16)


def test_doubled_flow_converges_to_periodic_limit(reference_model,
                                                  reference_doubled,
                                                  reference_certificate):
    # sampling the doubled flow from the corner at a fixed phase approaches
    # the flow through the limit point at that phase
    cert = reference_certificate
    t_star = 1.7
    k = cert.iterations
    a0 = np.r_[reference_model.X.lo, reference_model.X.hi]
    s = reference_model.settings
    from_corner, _ = flow(reference_doubled.field, 0.0, a0,
                          k * reference_model.tau + t_star, s)
    from_limit, _ = flow(reference_doubled.field, 0.0, cert.p, t_star, s)
    assert np.max(np.abs(from_corner - from_limit)) < 1e-4


def test_scale_consistency(reference_model, reference_doubled, reference_certificate):
    # tightening the solver tolerances moves the limits by less than the gap
    tight = IntegratorSettings(rtol=1e-10, atol=1e-13,
                               max_step=reference_model.tau / 100)
    cert2 = bracket_converge(reference_doubled, reference_model.X.lo,
                             reference_model.X.hi, tol=1e-6,
                             residual_tol=1e-8, s=tight)
    prev_gap = reference_certificate.gap
    assert np.max(np.abs(cert2.p - reference_certificate.p)) < prev_gap
    assert np.max(np.abs(cert2.q - reference_certificate.q)) < prev_gap
