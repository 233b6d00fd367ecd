"""Configuration ingestion, closed-loop and doubled fields, cyclic signatures."""

import numpy as np
import pytest

from perifix.genereg import reference_config
from perifix.model import (
    ModelError,
    build_doubled,
    classify_cyclic,
    eval_closed_loop_field,
    load_model,
)


def closed_loop_doc(**overrides):
    doc = {
        "type": "closed_loop",
        "n": 2,
        "period": 1.0,
        "f": ["-x1 + x2", "-x2 + x1"],
        "h": ["0"],
        "state_box": {"lo": [0.0, 0.0], "hi": [1.0, 1.0]},
    }
    doc.update(overrides)
    return doc


# -- loading -----------------------------------------------------------------

def test_load_reference_model(reference_model):
    mdl = reference_model
    assert (mdl.n, mdl.m, mdl.tau) == (3, 1, 5.0)
    assert mdl.K.signs == (1, 1, 1)
    assert np.allclose(mdl.X.lo, 0.0, atol=0.0)
    assert np.max(np.abs(mdl.X.hi - np.array([1.0, 1.0, 5 / 6]))) < 1e-12


def test_missing_period():
    doc = closed_loop_doc()
    del doc["period"]
    with pytest.raises(ModelError, match="period"):
        load_model(doc)


def test_component_count_mismatch():
    with pytest.raises(ModelError, match="f"):
        load_model(closed_loop_doc(f=["-x1 + x2", "-x2 + x1", "0"]))


def test_unknown_keys_rejected():
    with pytest.raises(ModelError, match="unknown keys"):
        load_model(closed_loop_doc(extra=1))
    with pytest.raises(ModelError, match="unknown keys"):
        load_model(dict(reference_config(), f=["0"]))


def test_bad_type():
    with pytest.raises(ModelError, match="type"):
        load_model(closed_loop_doc(type="odd"))


def test_expression_error_names_field():
    with pytest.raises(ModelError, match=r"f\[1\]"):
        load_model(closed_loop_doc(f=["-x1 + x2", "2*(1+"]))


def test_state_box_required_for_closed_loop():
    doc = closed_loop_doc()
    del doc["state_box"]
    with pytest.raises(ModelError, match="state_box"):
        load_model(doc)


def test_state_box_must_be_ordered():
    with pytest.raises(ModelError, match="state_box"):
        load_model(closed_loop_doc(state_box={"lo": [1.0, 0.0], "hi": [0.0, 1.0]}))


def test_unknown_variable_rejected():
    with pytest.raises(ModelError, match="u2"):
        load_model(closed_loop_doc(f=["-x1 + u2", "-x2"]))


def test_gene_with_explicit_box():
    doc = dict(reference_config(), state_box={"lo": [0, 0, 0], "hi": [2, 2, 2]})
    mdl = load_model(doc)
    assert np.array_equal(mdl.X.hi, [2.0, 2.0, 2.0])


def test_gene_rejects_vector_input():
    with pytest.raises(ModelError, match="scalar input"):
        load_model(dict(reference_config(), m=2))


def test_gene_rejects_signed_cone():
    with pytest.raises(ModelError, match="orthant"):
        load_model(dict(reference_config(), cone=[1, 1, -1]))


def test_declared_period_must_hold():
    doc = closed_loop_doc(f=["sin(t) - x1", "-x2"], period=3.0)
    with pytest.raises(ModelError, match="periodic"):
        load_model(doc)
    # with the true period it loads fine
    load_model(closed_loop_doc(f=["sin(t) - x1", "-x2"], period=2 * np.pi))


def test_booleans_are_not_numbers():
    with pytest.raises(ModelError):
        load_model(closed_loop_doc(n=True))


# -- field evaluation ----------------------------------------------------------

def test_reference_field_at_lower_corner(reference_model):
    F = eval_closed_loop_field(reference_model, 0.0, np.zeros(3))
    assert np.max(np.abs(F - np.array([2.0, 0.0, 0.0]))) < 1e-15


def test_reference_field_at_upper_corner(reference_model):
    # direct substitution: (2/(1 + 5/6) - 2, 1 - 1, 1 - 2 * 5/6)
    F = eval_closed_loop_field(reference_model, 0.0, reference_model.X.hi)
    expected = np.array([2.0 / (1.0 + 5 / 6) - 2.0, 0.0, 1.0 - 2.0 * (5 / 6)])
    assert np.max(np.abs(F - expected)) < 1e-12


def test_zero_field_model():
    mdl = load_model(closed_loop_doc(f=["0", "0"]))
    assert np.array_equal(eval_closed_loop_field(mdl, 0.3, np.array([0.5, 0.5])),
                          np.zeros(2))


def test_field_dimension_check(reference_model):
    with pytest.raises(ValueError):
        eval_closed_loop_field(reference_model, 0.0, np.zeros(2))


# -- doubling ------------------------------------------------------------------

def test_doubled_diagonal_identity(reference_model):
    dm = build_doubled(reference_model)
    rng = np.random.default_rng(20)
    lo, hi = reference_model.X.geometric_bounds()
    for _ in range(25):
        x = rng.uniform(lo, hi)
        t = rng.uniform(0.0, reference_model.tau)
        G = dm.field(t, np.r_[x, x])
        F = reference_model.field(t, x)
        assert np.array_equal(G[:3], F)  # same evaluation path, bit-identical
        assert np.array_equal(G[3:], F)


def test_doubled_swap_symmetry(reference_model):
    dm = build_doubled(reference_model)
    rng = np.random.default_rng(21)
    lo, hi = reference_model.X.geometric_bounds()
    for _ in range(25):
        x, y = rng.uniform(lo, hi, size=(2, 3))
        t = rng.uniform(0.0, reference_model.tau)
        G_xy = dm.field(t, np.r_[x, y])
        G_yx = dm.field(t, np.r_[y, x])
        assert np.array_equal(G_yx, np.r_[G_xy[3:], G_xy[:3]])


def test_doubled_cone_and_box(reference_model):
    dm = build_doubled(reference_model)
    assert dm.C.signs == (1, 1, 1, -1, -1, -1)
    assert np.array_equal(dm.I.lo, np.r_[reference_model.X.lo, reference_model.X.hi])
    assert np.array_equal(dm.I.hi, np.r_[reference_model.X.hi, reference_model.X.lo])


# -- cyclic classification -----------------------------------------------------

def test_classify_reference_model(reference_model):
    sig = classify_cyclic(reference_model)
    assert sig.deltas == (-1, 1, 1)
    assert sig.delta == -1


def test_classify_positive_two_cycle():
    mdl = load_model(closed_loop_doc())
    sig = classify_cyclic(mdl)
    assert sig.deltas == (1, 1)
    assert sig.delta == 1


def test_classify_rejects_non_adjacent_coupling():
    doc = closed_loop_doc(
        n=3,
        f=["x2 - x1", "x1 - x2", "x2 - x3"],
        state_box={"lo": [0, 0, 0], "hi": [1, 1, 1]},
    )
    mdl = load_model(doc)
    with pytest.raises(ModelError, match="non-cyclic"):
        classify_cyclic(mdl)


def test_classify_indeterminate_sign():
    doc = closed_loop_doc(f=["(x2 - 0.5)^2 - x1", "x1 - x2"])
    sig = classify_cyclic(load_model(doc))
    assert sig.deltas[0] == 0
    assert sig.delta is None
