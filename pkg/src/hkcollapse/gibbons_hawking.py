"""Pointwise Gibbons-Hawking geometry over the flat torus.

Coframe order is (theta, theta_1, theta_2, theta_3) -> (e0, e1, e2, e3), with
theta the connection form.  In that order

    eta_i = theta_i ^ theta + h theta_j ^ theta_k = -e0^ei + h ej^ek,

which is a definite triple of negative orientation relative to e0123; the
sign recorded by :func:`forms4.gram` carries it through every ratio below.

Collapsing family: the triple eps * eta_H with H = 1/eps + h.  Quantities are
reported as densities per unit volume of the base torus, after integrating
over the circle fibre (length FIBER_LEN) and dividing by the {+-1} quotient
(QUOTIENT_HALF).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import forms4
from .calibration import LinearMap34, energy_density, pairing, pullback_eta
from .forms4 import FormTriple, Metric4
from .torus_green import EwaldParams, PoleConfig, eval_h, eval_h_grad, torus_distance

FIBER_LEN = 2 * math.pi
QUOTIENT_HALF = 0.5


class NotHyperKahlerError(ValueError):
    """h <= 0: the Gibbons-Hawking triple degenerates."""


@dataclass(frozen=True)
class GHPoint:
    x: np.ndarray
    h_val: float
    grad_h: np.ndarray

    def __post_init__(self):
        if not self.h_val > 0:
            raise NotHyperKahlerError(f"GH triple not hyper-Kähler here (h = {self.h_val})")


@dataclass(frozen=True)
class GHFrame:
    h_val: float
    triple: FormTriple           # eta in the coframe (theta, theta_1, theta_2, theta_3)
    metric: Metric4              # diag(1/h, h, h, h)
    moment_diff: LinearMap34     # d(mu) in the g-orthonormal coframe
    triple_orthonormal: FormTriple  # eta in the coframe (h^-1/2 theta, h^1/2 theta_i)

    labels = ("theta", "theta_1", "theta_2", "theta_3")


def _eta_array(h):
    return np.hstack([-np.eye(3), h * np.eye(3)])


def gh_point(x, cfg: PoleConfig, params: EwaldParams | None = None, eps=None):
    """h (or 1/eps + h) and its gradient at x."""
    x = np.asarray(x, dtype=float)
    hv = float(eval_h(x, cfg, params))
    if eps is not None:
        hv += 1.0 / eps
    return GHPoint(x=x, h_val=hv, grad_h=np.asarray(eval_h_grad(x, cfg, params)))


def gh_frame(h_val: float) -> GHFrame:
    if not h_val > 0:
        raise NotHyperKahlerError(f"GH triple not hyper-Kähler here (h = {h_val})")
    a = np.zeros((3, 4))
    a[:, 1:] = np.eye(3) / math.sqrt(h_val)
    return GHFrame(
        h_val=float(h_val),
        triple=FormTriple.from_array(_eta_array(h_val)),
        metric=Metric4(np.diag([1.0 / h_val, h_val, h_val, h_val])),
        moment_diff=LinearMap34(a),
        triple_orthonormal=FormTriple.from_array(_eta_array(1.0)),
    )


def moment_energy_density(h_val: float) -> float:
    """tr_g(mu* g_T) = 3 / h."""
    if not h_val > 0:
        raise NotHyperKahlerError(f"GH triple not hyper-Kähler here (h = {h_val})")
    return 3.0 / h_val


def _oriented_volume(triple):
    # vol_g = mu / 2 as a coefficient on e0123 (signed)
    return 0.5 * forms4.gram(triple).mu


_ON = _eta_array(1.0)
_ON_VOL = None


def _on_vol():
    global _ON_VOL
    if _ON_VOL is None:
        _ON_VOL = _oriented_volume(FormTriple.from_array(_ON))
    return _ON_VOL


def calibrated_pairing(A):
    """(eta_i ^ A* Theta_j) / vol in the orthonormal GH coframe (batched over A)."""
    return pairing(A, _ON) / _on_vol()


def calibration_residual_at(h_val: float, A=None) -> float:
    """|sum_i eta_i ^ A* Theta_i / vol - tr(A*A)| at a point where h = h_val.

    With A defaulting to the moment-map differential this is the calibration
    identity and vanishes; any other A gives the calibration gap.
    """
    frame = gh_frame(h_val)
    a = frame.moment_diff.a if A is None else np.asarray(getattr(A, "a", A), dtype=float)
    eta = frame.triple_orthonormal
    vol = _oriented_volume(eta)
    pb = pullback_eta(a)
    total = 0.0
    for i in range(3):
        total += forms4.wedge(eta[i], forms4.KForm4(2, pb[i])).top
    return abs(total / vol - float(energy_density(a)))


def calibration_residual(x, cfg: PoleConfig, eps=None, params: EwaldParams | None = None,
                         A=None) -> float:
    """Calibration residual at a torus point for h (or 1/eps + h) from the pole configuration."""
    x = np.asarray(x, dtype=float)
    d = torus_distance(cfg.poles, x, cfg.spec).min()
    if d < 1e-10:
        raise ValueError(f"point is within {d:.1e} of a pole")
    hv = float(eval_h(x, cfg, params))
    if eps is not None:
        hv += 1.0 / eps
    return calibration_residual_at(hv, A)


def moment_diff_batch(H):
    """d(mu) in the orthonormal coframe for an array of h values: shape (..., 3, 4)."""
    H = np.asarray(H, dtype=float)
    a = np.zeros(H.shape + (3, 4))
    s = 1.0 / np.sqrt(H)
    for i in range(3):
        a[..., i, i + 1] = s
    return a


def scaled_moment_diff(H, eps):
    """d(mu) for the rescaled metric eps * g_{eta_H}: orthonormal frame shrinks by eps^-1/2."""
    return moment_diff_batch(H) / math.sqrt(eps)


def volume_factor(H, eps):
    """Fibre-integrated, quotient-halved eps^2 vol_{g_eta_H} per unit base volume."""
    return eps ** 2 * np.asarray(H) * FIBER_LEN * QUOTIENT_HALF


def _check_positive(H):
    H = np.asarray(H, dtype=float)
    if np.any(~(H > 0)):
        raise NotHyperKahlerError(
            f"1/eps + h <= 0 at some point (min {np.min(H):.3e}); GH triple not hyper-Kähler")
    return H


def gh_densities_from_h(hv, eps):
    """(e_density, i_density, v_density) for an array of h values."""
    H = _check_positive(1.0 / eps + np.asarray(hv, dtype=float))
    A = scaled_moment_diff(H, eps)
    vf = volume_factor(H, eps)
    e = energy_density(A) * vf
    I = calibrated_pairing(A) * vf[..., None, None]
    return e, I, vf


def gh_densities(x, cfg: PoleConfig, eps, params: EwaldParams | None = None):
    """Energy, invariant-matrix and volume densities at torus point(s) x."""
    hv = eval_h(x, cfg, params)
    e, I, v = gh_densities_from_h(hv, eps)
    if np.ndim(hv) == 0:
        return float(e), I, float(v)
    return e, I, v
