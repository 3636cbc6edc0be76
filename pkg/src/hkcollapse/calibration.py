"""The calibration functional tau on linear maps R^4 -> R^3.

A linear map is a 3x4 table ``a[h-1, l]`` = A^h_l (target index h = 1..3,
source index l = 0..3).  The reference triple on R^4 is the standard one,
omega_i = e0^ei + ej^ek, and on R^3 we pair against eta_i = fj^fk.

Every scalar function here broadcasts over leading axes of shape (..., 3, 4).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .forms4 import (BASIS3, FormTriple, KForm, KForm4, is_su2, pullback_linear,
                     standard_triple, wedge, wedge_coeffs, wedge_table)

CAL_TOL = 1e-10
CYCLIC = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


class NotCalibratedError(ValueError):
    pass


@dataclass(frozen=True)
class LinearMap34:
    a: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(3, 4)
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite entries")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    def entry(self, h, l):
        """A^h_l with h in 1..3, l in 0..3."""
        return float(self.a[h - 1, l])


def _arr(A):
    return A.a if isinstance(A, LinearMap34) else np.asarray(A, dtype=float)


def identity_block(scale=1.0):
    """A with A^i_i = scale and all other entries zero."""
    a = np.zeros((3, 4))
    a[:, 1:] = scale * np.eye(3)
    return LinearMap34(a)


def calibrated_map(B, A1, A2, A3):
    """The general solution of the equality conditions, parametrised by B and A^l."""
    a = np.zeros((3, 4))
    Al = (A1, A2, A3)
    for i, j, k in CYCLIC:
        a[i, i + 1] = B
        a[i, 0] = Al[i]          # A^i_0
        a[j, k + 1] = Al[i]      # A^j_k
        a[k, j + 1] = -Al[i]     # A^k_j = -A^i
    return LinearMap34(a)


def energy_density(A):
    """tr(A*A): the sum of squares of all entries."""
    a = _arr(A)
    return np.sum(a * a, axis=(-2, -1))


def tau(A):
    """Closed-form tau(A) = sum_i (A^j_0 A^k_i - A^j_i A^k_0 + A^j_j A^k_k - A^j_k A^k_j)."""
    a = _arr(A)
    out = 0.0
    for i, j, k in CYCLIC:
        # a[h, l]: h is 0-based target, source column l; source index of e^i is i+1
        out = out + (a[..., j, 0] * a[..., k, i + 1] - a[..., j, i + 1] * a[..., k, 0]
                     + a[..., j, j + 1] * a[..., k, k + 1] - a[..., j, k + 1] * a[..., k, j + 1])
    return out


def _pullback_ones(a):
    # A* f^h as 1-forms on R^4: just the rows of A
    return a


def pullback_eta(A):
    """Coefficients (..., 3, 6) of A* eta_j = A* f^k ^ A* f^l for j = 1, 2, 3."""
    a = _arr(A)
    rows = _pullback_ones(a)
    return np.stack([wedge_coeffs(rows[..., j, :], rows[..., k, :], 1, 1)
                     for _, j, k in CYCLIC], axis=-2)


def pairing(A, triple=None):
    """P[..., i, j] = (omega_i ^ A* eta_j) / e0123 for the given (default standard) triple."""
    om = standard_triple().as_array() if triple is None else np.asarray(triple)
    W = wedge_table(4, 2, 2)[:, :, 0]
    return (om @ W) @ np.swapaxes(pullback_eta(A), -1, -2)


def tau_wedge(A):
    """Wedge-product oracle for tau: trace of the pairing matrix."""
    return np.trace(pairing(A), axis1=-2, axis2=-1)


def gap_half_squares(A):
    """Half the sum of the twelve squared differences whose vanishing is the equality locus."""
    a = _arr(A)

    def e(h, l):
        return a[..., h - 1, l]

    groups = [
        (e(2, 0) - e(3, 1), e(2, 0) + e(1, 3), e(1, 3) + e(3, 1)),
        (e(3, 0) - e(1, 2), e(3, 0) + e(2, 1), e(1, 2) + e(2, 1)),
        (e(1, 0) - e(2, 3), e(1, 0) + e(3, 2), e(2, 3) + e(3, 2)),
        (e(1, 1) - e(2, 2), e(2, 2) - e(3, 3), e(1, 1) - e(3, 3)),
    ]
    return 0.5 * sum(x * x for g in groups for x in g)


def equality_relations(A):
    """Residuals of A11=A22=A33, A20=A31=-A13, A30=A12=-A21, A10=A23=-A32 (stacked last axis)."""
    a = _arr(A)

    def e(h, l):
        return a[..., h - 1, l]

    return np.stack([
        e(1, 1) - e(2, 2), e(2, 2) - e(3, 3),
        e(2, 0) - e(3, 1), e(3, 1) + e(1, 3),
        e(3, 0) - e(1, 2), e(1, 2) + e(2, 1),
        e(1, 0) - e(2, 3), e(2, 3) + e(3, 2),
    ], axis=-1)


def pullback(A, form: KForm) -> KForm:
    """Linear pullback A* of a form on R^3 to R^4."""
    if form.dim != 3:
        raise ValueError("pullback expects a form on R^3")
    return pullback_linear(_arr(A), form)


@dataclass(frozen=True)
class Reconstruction:
    theta: KForm
    d_const: float
    triple: FormTriple
    residual: float
    d_statement: float
    d_proof: float
    matches: str  # "proof", "statement", "both" or "neither"


@dataclass(frozen=True)
class CalibrationReport:
    tau: float
    energy: float
    gap: float
    gap_oracle: float
    calibrated: bool
    theta: Optional[KForm] = None
    d_const: Optional[float] = None
    reconstruction: Optional[Reconstruction] = None


def _cal_params(a):
    B = a[0, 1]
    Al = a[:, 0]
    return B, Al


def reconstruct(A, tol=CAL_TOL, rel=1e-9) -> Reconstruction:
    """Recover theta and D with omega_i = theta^A*f^i + D A*f^j^A*f^k.

    theta = D * alpha with alpha = B e0 - sum A^l e^l.  D is fitted by least squares
    against the reference triple; the two closed-form candidates are compared to it.
    """
    a = _arr(A)
    energy = float(energy_density(a))
    if energy == 0.0:
        raise NotCalibratedError("A = 0: no reconstruction")
    gap = float(gap_half_squares(a))
    if gap > tol * max(1.0, energy):
        raise NotCalibratedError(f"A is not calibrated (gap {gap:.3e})")
    B, Al = _cal_params(a)
    alpha = np.array([B, -Al[0], -Al[1], -Al[2]])
    mu = [KForm4(1, a[i]) for i in range(3)]
    al = KForm4(1, alpha)
    T0 = np.stack([(wedge(al, mu[i]) + wedge(mu[j], mu[k])).coeffs for i, j, k in CYCLIC])
    om = standard_triple().as_array()
    D = float(np.sum(T0 * om) / np.sum(T0 * T0))
    theta = KForm4(1, D * alpha)
    t = FormTriple.from_array(np.stack([
        (wedge(theta, mu[i]) + D * wedge(mu[j], mu[k])).coeffs for i, j, k in CYCLIC]))
    residual = float(np.max(np.abs(t.as_array() - om)))
    d_statement = float(np.sqrt(energy / 3.0))
    d_proof = 3.0 / energy
    ok_s = abs(D - d_statement) <= rel * abs(D)
    ok_p = abs(D - d_proof) <= rel * abs(D)
    matches = {(True, True): "both", (False, True): "proof",
               (True, False): "statement", (False, False): "neither"}[(ok_s, ok_p)]
    return Reconstruction(theta=theta, d_const=D, triple=t, residual=residual,
                          d_statement=d_statement, d_proof=d_proof, matches=matches)


def calibration_report(A, tol=CAL_TOL) -> CalibrationReport:
    a = _arr(A)
    t = float(tau(a))
    en = float(energy_density(a))
    gap = en - t
    oracle = float(gap_half_squares(a))
    calibrated = oracle <= tol
    rec = None
    if calibrated and en > 0:
        rec = reconstruct(a, tol=tol)
    return CalibrationReport(tau=t, energy=en, gap=gap, gap_oracle=oracle, calibrated=calibrated,
                             theta=None if rec is None else rec.theta,
                             d_const=None if rec is None else rec.d_const,
                             reconstruction=rec)


def trace_energy(A, g):
    """tr_g(A* delta) for a metric g on the source: sum_{l,m} g^{lm} <A e_l, A e_m>."""
    a = _arr(A)
    ginv = np.linalg.inv(np.asarray(g.g if hasattr(g, "g") else g, dtype=float))
    return float(np.trace(ginv @ a.T @ a))


def r3_form(degree, coeffs):
    return KForm(degree, coeffs, 3)


def eta(i):
    """eta_i = f^j ^ f^k as a 2-form on R^3 (i = 1, 2, 3)."""
    c = np.zeros(3)
    c[i - 1] = 1.0
    return KForm(2, c, 3)


__all__ = ["LinearMap34", "CalibrationReport", "Reconstruction", "NotCalibratedError",
           "identity_block", "calibrated_map", "energy_density", "tau", "tau_wedge",
           "gap_half_squares", "equality_relations", "pairing", "pullback_eta", "pullback",
           "reconstruct", "calibration_report", "trace_energy", "eta", "r3_form", "BASIS3"]
