"""Integrals over the torus minus small balls around the poles, and the
energy / invariant / volume sweeps of the collapsing Gibbons-Hawking family.

Region quadrature uses a smooth partition of unity.  Each pole p carries a
radial cutoff psi_p (1 for rho < R1, 0 for rho > R2, R1 = 0.75 delta0,
R2 = 1.95 delta0), and for r < R1

    int_{T \\ B(S, r)} f = int_T f (1 - sum psi_p)               (bulk rule)
                         + sum_p int_{R1 < rho_p < R2} f psi_p   (spherical shells)
                         + sum_p int_{r < rho_p < R1} f          (spherical shells)

The bulk integrand is smooth and periodic, so the midpoint grid converges
fast; the 1/rho behaviour of h is absorbed by the rho^2 Jacobian of the
Gauss-Legendre shells.  For R1 <= r < delta0 the last two terms merge into
one shell r < rho < R2, and the bulk share of R1 < rho < r is subtracted
with its own spherical rule (those nodes sit inside the ball but far from
the pole).  For r < R1 no node lies inside an excised ball.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.stats import qmc

from .calibration import energy_density
from .gibbons_hawking import (_check_positive, calibrated_pairing, gh_densities_from_h,
                              scaled_moment_diff, volume_factor)
from .torus_green import EwaldParams, PoleConfig, TorusSpec, eval_h, eval_h_grid

DEFAULT_EPS = (1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4)
CSV_COLUMNS = ("eps", "E_num", "E_closed", "trI_num", "trI_closed", "vol_num", "vol_leading",
               "ratio_E_trI", "ratio_vol_trI", "offdiag_max", "err_est")
R1_FRAC = 0.75
R2_FRAC = 1.95


class RegionError(ValueError):
    pass


def exclusion_radius(eps):
    return 2.0 * eps ** 0.4


@dataclass(frozen=True)
class QuadratureSpec:
    """scheme: 'tensor-midpoint' or 'quasi-random'.

    resolution is points per axis for the midpoint grid or the sample count for
    quasi-random.  ``radial``/``angular`` size the spherical rules.
    """

    scheme: str = "tensor-midpoint"
    resolution: int = 64
    radial: int = 16
    angular: int = 12
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("tensor-midpoint", "quasi-random"):
            raise ValueError(f"scheme: unknown quadrature scheme {self.scheme!r}")
        if self.resolution < 16:
            raise ValueError("resolution: must be at least 16")

    def coarse(self):
        res = self.resolution // 2 if self.scheme == "tensor-midpoint" else self.resolution // 4
        return QuadratureSpec(self.scheme, max(res, 16), max(self.radial // 2, 4),
                              max(self.angular // 2, 4), self.seed + 1)

    @staticmethod
    def exclusion_radius(eps):
        return exclusion_radius(eps)


def smooth_step(t):
    """C-infinity step: 1 for t <= 0, 0 for t >= 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1 - t, 1.0)), 0.0)
        b = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    return a / (a + b)


def _sphere_rule(n_theta):
    """Gauss-Legendre in cos(theta) x trapezoid in phi: unit vectors and weights (sum 4 pi)."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    n_phi = 2 * n_theta
    phi = 2 * np.pi * np.arange(n_phi) / n_phi
    st = np.sqrt(1 - x ** 2)
    u = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                  np.outer(x, np.ones(n_phi))], axis=-1).reshape(-1, 3)
    wt = np.outer(w, np.full(n_phi, 2 * np.pi / n_phi)).reshape(-1)
    return u, wt


def _radial_rule(a, b, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


class _Level:
    """Nodes, weights and cached h values at one resolution.

    Around each pole, rho * h is analytic in rho on [0, R1] (the nearest other
    pole is at least 4 R1 away), so it is sampled once per direction at
    Chebyshev radii; h at the radius-dependent Gauss nodes of [r, R1] comes
    from that interpolant.
    """

    def __init__(self, cfg: PoleConfig, qspec: QuadratureSpec, params, R1, R2):
        self.cfg, self.qspec, self.params = cfg, qspec, params
        spec = cfg.spec
        poles = cfg.poles
        self.R1, self.R2 = R1, R2
        n = qspec.resolution
        if qspec.scheme == "tensor-midpoint":
            X, H = eval_h_grid(cfg, n)
            X = X.reshape(-1, 3)
            H = H.reshape(-1)
        else:
            sob = qmc.Sobol(3, scramble=True, seed=qspec.seed)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                X = sob.random(n) * spec.L
            H = None
        w = np.full(len(X), spec.volume / len(X))
        psi = np.zeros(len(X))
        for p in poles:
            rho = np.linalg.norm(spec.min_image(X - p), axis=1)
            psi += smooth_step((rho - R1) / (R2 - R1))
        keep = psi < 1.0
        self.bulk_x = X[keep]
        self.bulk_h = H[keep] if H is not None else np.asarray(eval_h(X[keep], cfg, params))
        self.bulk_w = (w * (1.0 - psi))[keep]

        self.dirs, self.dir_w = _sphere_rule(qspec.angular)
        # transition shell [R1, R2], weights include the cutoff
        r_tr, w_tr = _radial_rule(R1, R2, qspec.radial)
        w_tr = w_tr * r_tr ** 2 * smooth_step((r_tr - R1) / (R2 - R1))
        self.shell_x = np.vstack([self._points(p, r_tr) for p in poles])
        self.shell_w = np.tile(np.outer(w_tr, self.dir_w).reshape(-1), len(poles))
        self.shell_h = np.asarray(eval_h(self.shell_x, cfg, params))
        # Chebyshev samples of rho * h on [0, R1]
        nc = qspec.radial
        t = np.cos(np.pi * (np.arange(nc) + 0.5) / nc)
        rc = 0.5 * R1 * (t + 1.0)
        self.cheb = []
        for p in poles:
            hv = np.asarray(eval_h(self._points(p, rc), cfg, params)).reshape(nc, -1)
            self.cheb.append(C.chebfit(t, rc[:, None] * hv, nc - 1))
        self._inner = {}

    def _points(self, p, radii):
        return (p + radii[:, None, None] * self.dirs[None, :, :]).reshape(-1, 3)

    def inner(self, r):
        """Nodes, weights and h on the shells r < rho < R1 around every pole."""
        key = float(r)
        if key not in self._inner:
            radii, rw = _radial_rule(r, self.R1, self.qspec.radial)
            t = 2.0 * radii / self.R1 - 1.0
            X = np.vstack([self._points(p, radii) for p in self.cfg.poles])
            W = np.tile(np.outer(rw * radii ** 2, self.dir_w).reshape(-1), len(self.cfg.poles))
            Hs = np.concatenate([(C.chebval(t, c).T / radii[:, None]).reshape(-1)
                                 for c in self.cheb])
            self._inner = {key: (X, W, Hs)}  # one radius at a time keeps memory flat
        return self._inner[key]

    def wide_shell(self, r):
        """Shells for R1 <= r: cut-off part on r < rho < R2, minus the bulk share on R1 < rho < r."""
        # the cutoff is steep inside these intervals: more radial nodes
        n = 2 * self.qspec.radial
        ra, wa = _radial_rule(r, self.R2, n)
        wa = wa * ra ** 2 * smooth_step((ra - self.R1) / (self.R2 - self.R1))
        rb, wb = _radial_rule(self.R1, r, n)
        wb = -wb * rb ** 2 * (1.0 - smooth_step((rb - self.R1) / (self.R2 - self.R1)))
        radii = np.concatenate([ra, rb])
        rw = np.concatenate([wa, wb])
        X = np.vstack([self._points(p, radii) for p in self.cfg.poles])
        W = np.tile(np.outer(rw, self.dir_w).reshape(-1), len(self.cfg.poles))
        return X, W, np.asarray(eval_h(X, self.cfg, self.params))

    def nodes(self, r):
        if r >= self.R1:
            sx, sw, sh = self.wide_shell(r)
            return (np.vstack([self.bulk_x, sx]), np.concatenate([self.bulk_w, sw]),
                    np.concatenate([self.bulk_h, sh]))
        ix, iw, ih = self.inner(r)
        return (np.vstack([self.bulk_x, self.shell_x, ix]),
                np.concatenate([self.bulk_w, self.shell_w, iw]),
                np.concatenate([self.bulk_h, self.shell_h, ih]))


class RegionQuadrature:
    """Integrals over T minus r-balls around all 2n + 8 poles of a configuration."""

    def __init__(self, cfg: PoleConfig, qspec: QuadratureSpec = QuadratureSpec(),
                 params: EwaldParams | None = None):
        self.cfg = cfg
        self.qspec = qspec
        if params is None:
            params = EwaldParams.default(cfg.spec).scaled(1.5)
        self.params = params
        self.delta0 = cfg.delta0
        self.R1 = R1_FRAC * self.delta0
        self.R2 = R2_FRAC * self.delta0
        self._levels = {}

    def level(self, coarse=False):
        if coarse not in self._levels:
            q = self.qspec.coarse() if coarse else self.qspec
            self._levels[coarse] = _Level(self.cfg, q, self.params, self.R1, self.R2)
        return self._levels[coarse]

    def check_radius(self, r):
        if r < 0:
            raise RegionError("negative exclusion radius")
        if r >= self.delta0:
            what = "overlapping exclusion balls" if r >= 2 * self.delta0 else "exclusion radius too large"
            raise RegionError(f"{what}: r = {r:.4g} must be < delta0 = {self.delta0:.4g}")

    def integrate(self, f: Callable, r: float, with_error=True):
        """Integral of f(x, h) over T \\ B(S, r); f may return arrays of trailing shape.

        Returns (value, err_est) with err_est = |fine - coarse|.
        """
        self.check_radius(r)
        X, W, H = self.level(False).nodes(r)
        val = _weighted_sum(f(X, H), W)
        if not with_error:
            return val, None
        Xc, Wc, Hc = self.level(True).nodes(r)
        valc = _weighted_sum(f(Xc, Hc), Wc)
        return val, np.abs(val - valc)

    def excised_volume(self, r):
        return self.cfg.spec.volume - len(self.cfg.poles) * 4 * math.pi / 3 * r ** 3


def _weighted_sum(vals, W):
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 0:
        vals = np.full(W.shape, float(vals))
    # np.sum uses pairwise summation along contiguous axes: deterministic order
    return np.tensordot(W, vals, axes=(0, 0)) if vals.ndim > 1 else float(np.sum(W * vals))


_ENGINES: OrderedDict = OrderedDict()
_ENGINE_CACHE_SIZE = 4


def engine_for(cfg: PoleConfig, qspec: QuadratureSpec = QuadratureSpec(),
               params: EwaldParams | None = None) -> RegionQuadrature:
    """Cached RegionQuadrature keyed by configuration contents."""
    key = (json.dumps(cfg.to_dict(), sort_keys=True), qspec, params)
    eng = _ENGINES.get(key)
    if eng is None:
        eng = _ENGINES[key] = RegionQuadrature(cfg, qspec, params)
        while len(_ENGINES) > _ENGINE_CACHE_SIZE:
            _ENGINES.popitem(last=False)
    else:
        _ENGINES.move_to_end(key)
    return eng


def quad_region(f: Callable, cfg: PoleConfig, qspec: QuadratureSpec = QuadratureSpec(),
                r: float = 0.0, params: EwaldParams | None = None):
    """(value, err_est) of the integral of f(x, h(x)) over T minus r-balls around the poles."""
    return engine_for(cfg, qspec, params).integrate(f, r)


# --- GH-region quantities ------------------------------------------------------------------

def _e_density(eps):
    return lambda x, h: gh_densities_from_h(h, eps)[0]


def _i_density(eps):
    return lambda x, h: gh_densities_from_h(h, eps)[1]


def _v_density(eps):
    return lambda x, h: gh_densities_from_h(h, eps)[2]


def energy_closed(eps, cfg: PoleConfig):
    r = exclusion_radius(eps)
    vol = cfg.spec.volume - len(cfg.poles) * 4 * math.pi / 3 * r ** 3
    return 3 * math.pi * eps * vol


def energy_gh(eps, cfg: PoleConfig, qspec: QuadratureSpec = QuadratureSpec(), params=None,
              with_error=False):
    eng = engine_for(cfg, qspec, params)
    num, err = eng.integrate(_e_density(eps), exclusion_radius(eps))
    out = (num, energy_closed(eps, cfg))
    return out + (err,) if with_error else out


def invariant_matrix(eps, cfg: PoleConfig, qspec: QuadratureSpec = QuadratureSpec(), params=None,
                     with_error=False):
    eng = engine_for(cfg, qspec, params)
    I, err = eng.integrate(_i_density(eps), exclusion_radius(eps))
    return (I, err) if with_error else I


def volume_gh(eps, cfg: PoleConfig, qspec: QuadratureSpec = QuadratureSpec(), params=None,
              with_error=False):
    eng = engine_for(cfg, qspec, params)
    num, err = eng.integrate(_v_density(eps), exclusion_radius(eps))
    V = cfg.spec.volume
    leading = math.pi * eps * (V + eps * cfg.c0 * V)
    out = (num, leading)
    return out + (err,) if with_error else out


# --- perturbed maps --------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationField:
    """v(x) = sum_t a_t e_{c_t} trig(2 pi <m_t, x / L>) with trig = sin (odd) or cos (even).

    Only sine terms are equivariant, v(-x) = -v(x); cosine terms are accepted
    here so that the rejection can be exercised.
    """

    amplitude: float
    terms: tuple  # of (component, (m1, m2, m3), coefficient, kind)
    box: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        terms = []
        for comp, mode, coef, *kind in self.terms:
            kind = kind[0] if kind else "sin"
            if kind not in ("sin", "cos"):
                raise ValueError(f"unknown term kind {kind!r}")
            mode = tuple(int(v) for v in mode)
            terms.append((int(comp), mode, float(coef), kind))
        object.__setattr__(self, "terms", tuple(terms))
        object.__setattr__(self, "box", tuple(float(b) for b in self.box))

    @classmethod
    def single(cls, amplitude, component, mode, spec: TorusSpec, coef=1.0, kind="sin"):
        return cls(amplitude, ((component, mode, coef, kind),), spec.box)

    @property
    def equivariant(self):
        return all(kind == "sin" for *_, kind in self.terms)

    def lipschitz_bound(self):
        """Upper bound for the operator norm of delta * Dv."""
        L = np.array(self.box)
        return abs(self.amplitude) * sum(
            abs(c) * 2 * np.pi * np.linalg.norm(np.array(m) / L) for _, m, c, _ in self.terms)

    def _phase(self, x, mode):
        return 2 * np.pi * (np.asarray(x) / np.array(self.box)) @ np.array(mode, dtype=float)

    def field(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for comp, mode, coef, kind in self.terms:
            ph = self._phase(x, mode)
            out[..., comp] += coef * (np.sin(ph) if kind == "sin" else np.cos(ph))
        return out

    def jacobian(self, x):
        """J = I + delta Dv at x: shape (..., 3, 3)."""
        x = np.asarray(x, dtype=float)
        J = np.broadcast_to(np.eye(3), x.shape[:-1] + (3, 3)).copy()
        L = np.array(self.box)
        for comp, mode, coef, kind in self.terms:
            ph = self._phase(x, mode)
            dtrig = np.cos(ph) if kind == "sin" else -np.sin(ph)
            grad = 2 * np.pi * np.array(mode) / L
            J[..., comp, :] += self.amplitude * coef * dtrig[..., None] * grad
        return J

    def validate(self):
        if not self.equivariant:
            raise ValueError("perturbation field is not odd: v(-x) != -v(x)")
        if self.lipschitz_bound() >= 1:
            raise ValueError("|delta Dv| >= 1: x + delta v(x) need not be a diffeomorphism")


def perturbed_densities(x, h, eps, pert: PerturbationField):
    """Energy and invariant densities of (x + delta v) composed with the GH moment map."""
    H = _check_positive(1.0 / eps + np.asarray(h, dtype=float))
    A = scaled_moment_diff(H, eps)
    J = pert.jacobian(x)
    if np.any(np.abs(np.linalg.det(J)) < 1e-12):
        raise ValueError("singular Jacobian in the perturbation")
    Ap = J @ A
    vf = volume_factor(H, eps)
    return energy_density(Ap) * vf, calibrated_pairing(Ap) * vf[..., None, None]


def perturbed_energy_and_invariant(eps, cfg: PoleConfig, qspec: QuadratureSpec = QuadratureSpec(),
                                   pert: PerturbationField | None = None, params=None,
                                   region: str = "full", with_error=False):
    """(E, I) for the moment map composed with x -> x + delta v(x).

    region='full' integrates over the whole torus (the closed-manifold setting of
    the homotopy invariance statement); region='gh' uses the excised GH region.
    """
    if pert is None:
        pert = PerturbationField(0.0, ())
    pert.validate()
    if region not in ("full", "gh"):
        raise ValueError(f"region: expected 'full' or 'gh', got {region!r}")
    r = 0.0 if region == "full" else exclusion_radius(eps)
    eng = engine_for(cfg, qspec, params)
    E, eE = eng.integrate(lambda x, h: perturbed_densities(x, h, eps, pert)[0], r)
    I, eI = eng.integrate(lambda x, h: perturbed_densities(x, h, eps, pert)[1], r)
    if with_error:
        return E, I, float(eE), float(np.max(eI))
    return E, I


# --- sweeps and fits ----------------------------------------------------------------------

@dataclass
class SweepRow:
    eps: float
    E_num: float
    E_closed: float
    I_num: np.ndarray
    trI_closed: float
    vol_num: float
    vol_leading: float
    ratio_E_over_trI: float
    ratio_vol_over_trI: float
    offdiag_max: float
    err_est: float

    @property
    def trI_num(self):
        return float(np.trace(self.I_num))

    def csv_values(self):
        return (self.eps, self.E_num, self.E_closed, self.trI_num, self.trI_closed, self.vol_num,
                self.vol_leading, self.ratio_E_over_trI, self.ratio_vol_over_trI,
                self.offdiag_max, self.err_est)


def sweep(eps_list: Sequence[float], cfg: PoleConfig, qspec: QuadratureSpec = QuadratureSpec(),
          params=None):
    eps_list = [float(e) for e in eps_list]
    if any(a <= b for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be sorted in descending order")
    eng = engine_for(cfg, qspec, params)
    for e in eps_list:
        eng.check_radius(exclusion_radius(e))
    rows = []
    for e in eps_list:
        E, Ec, eE = energy_gh(e, cfg, qspec, params, with_error=True)
        I, eI = invariant_matrix(e, cfg, qspec, params, with_error=True)
        v, vl, eV = volume_gh(e, cfg, qspec, params, with_error=True)
        trI = float(np.trace(I))
        off = float(np.max(np.abs(I - np.diag(np.diag(I)))))
        rows.append(SweepRow(eps=e, E_num=float(E), E_closed=Ec, I_num=I, trI_closed=Ec,
                             vol_num=float(v), vol_leading=vl, ratio_E_over_trI=float(E) / trI,
                             ratio_vol_over_trI=float(v) / trI, offdiag_max=off,
                             err_est=float(max(eE, np.max(eI), eV))))
    return rows


def write_csv(rows, path_or_file):
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([f"{v:.17g}" for v in row.csv_values()])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)


def read_csv(path):
    with open(path, newline="") as fh:
        rdr = csv.DictReader(fh)
        return [{k: float(v) for k, v in row.items()} for row in rdr]


def fit_power(xs, ys):
    """Least-squares line in log-log coordinates: ys ~ coefficient * xs**exponent."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.size < 4:
        raise ValueError("need at least 4 (x, y) pairs")
    if np.any(ys <= 0) or np.any(xs <= 0):
        raise ValueError("fit_power needs positive data")
    lx, ly = np.log(xs), np.log(ys)
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    # constant data up to rounding: the fit is exact
    flat = ss_tot <= (1e-12 * max(1.0, np.max(np.abs(ly)))) ** 2 * ly.size
    r2 = 1.0 if flat else 1.0 - np.sum(resid ** 2) / ss_tot
    return float(slope), float(np.exp(icpt)), float(r2)


def fit_linear(xs, ys):
    """(slope, intercept) of the least-squares line."""
    slope, icpt = np.polyfit(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float), 1)
    return float(slope), float(icpt)


def energy_deficit(rows, cfg: PoleConfig, closed=False):
    """3 pi vol(T) - E/eps for each row (numerical or closed-form E)."""
    V = cfg.spec.volume
    return np.array([3 * math.pi * V - (r.E_closed if closed else r.E_num) / r.eps for r in rows])


def summarize(rows, cfg: PoleConfig):
    """Fitted exponents / coefficients of the energy deficit and the volume slope."""
    eps = np.array([r.eps for r in rows])
    out = {"n": cfg.n, "expected_exponent": 1.2,
           "expected_coefficient": 64 * math.pi ** 2 * (cfg.n + 4)}
    if len(rows) >= 4:
        out["closed_exponent"], out["closed_coefficient"], _ = fit_power(
            eps, energy_deficit(rows, cfg, closed=True))
        dnum = energy_deficit(rows, cfg)
        if np.all(dnum > 0):
            out["num_exponent"], out["num_coefficient"], out["num_r2"] = fit_power(eps, dnum)
    ratio = np.array([r.ratio_vol_over_trI for r in rows])
    if len(rows) >= 2:
        out["vol_ratio_slope"], out["vol_ratio_intercept"] = fit_linear(eps, ratio - 1 / 3)
        out["expected_vol_ratio_slope"] = cfg.c0 / 3
    return out
