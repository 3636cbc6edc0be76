import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from pytest import approx

from hkcollapse import calibration as cal
from hkcollapse.calibration import (NotCalibratedError, calibrated_map, calibration_report,
                                    energy_density, gap_half_squares, identity_block, reconstruct,
                                    tau, tau_wedge)
from hkcollapse.forms4 import basis_form, is_su2, standard_triple

maps = arrays(np.float64, (3, 4), elements=st.floats(-10, 10, allow_nan=False))


def test_identity_is_calibrated():
    rep = calibration_report(identity_block())
    assert rep.tau == approx(3.0)
    assert rep.energy == approx(3.0)
    assert rep.gap == approx(0.0)
    assert rep.calibrated
    assert rep.d_const == approx(1.0)
    assert rep.reconstruction.matches == "both"


def test_swapped_entries_give_gap():
    a = np.zeros((3, 4))
    a[0, 2] = a[1, 1] = 1.0  # A^1_2 = A^2_1 = 1
    rep = calibration_report(a)
    assert rep.energy == approx(2.0)
    assert rep.tau == approx(-1.0)
    assert rep.gap == approx(3.0)
    assert rep.gap_oracle == approx(3.0)
    assert not rep.calibrated


def test_zero_map():
    rep = calibration_report(np.zeros((3, 4)))
    assert rep.tau == 0.0 and rep.energy == 0.0
    assert rep.calibrated and rep.reconstruction is None
    with pytest.raises(NotCalibratedError):
        reconstruct(np.zeros((3, 4)))


def test_reconstruct_rejects_uncalibrated():
    a = np.zeros((3, 4))
    a[0, 1] = 1.0
    with pytest.raises(NotCalibratedError):
        reconstruct(a)


def test_d_constant_half_identity():
    # A = B * (identity block) with B = 1/2: tr(A*A) = 3/4
    rec = reconstruct(identity_block(0.5))
    assert rec.d_const == approx(4.0)
    assert rec.d_proof == approx(4.0)
    assert rec.d_statement == approx(0.5)
    assert rec.matches == "proof"


def test_d_constant_mixed_map():
    rec = reconstruct(calibrated_map(2.0, 1.0, 1.0, 1.0))
    assert rec.d_const == approx(1.0 / 7.0)
    assert rec.residual < 1e-12
    assert is_su2(rec.triple, tol=1e-9)


def test_calibrated_map_satisfies_relations():
    a = calibrated_map(0.3, -1.2, 0.7, 2.0)
    assert np.allclose(cal.equality_relations(a), 0.0)
    assert gap_half_squares(a) == approx(0.0, abs=1e-14)


def test_trace_energy_euclidean():
    a = np.arange(12.0).reshape(3, 4)
    assert cal.trace_energy(a, np.eye(4)) == approx(energy_density(a))
    assert cal.trace_energy(a, 4 * np.eye(4)) == approx(energy_density(a) / 4)


def test_pullback_of_eta():
    a = identity_block().a
    assert cal.pullback(a, cal.eta(1)).allclose(basis_form((2, 3)))
    assert cal.pullback(a, cal.eta(2)).allclose(basis_form((3, 1)))
    with pytest.raises(ValueError):
        cal.pullback(a, standard_triple()[0])


@settings(max_examples=200, deadline=None)
@given(maps)
def test_inequality_and_gap_expansion(a):
    t = tau(a)
    en = energy_density(a)
    assert t <= en + 1e-12 * max(1.0, en)
    assert en - t == approx(gap_half_squares(a), rel=1e-10, abs=1e-10 * max(1.0, en))
    assert t == approx(tau_wedge(a), abs=1e-12 * max(1.0, en))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=4, max_size=4))
def test_calibrated_family_reconstructs(params):
    a = calibrated_map(*params)
    en = float(energy_density(a))
    if en < 1e-6:
        return
    assert tau(a) == approx(en, rel=1e-12)
    rec = reconstruct(a)
    assert rec.residual <= 1e-10
    assert is_su2(rec.triple, tol=1e-9)
    assert rec.matches in ("proof", "both")


def test_batched_matches_scalar():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(5, 3, 4))
    assert np.allclose(tau(A), [tau(x) for x in A])
    assert np.allclose(tau_wedge(A), [tau_wedge(x) for x in A])
