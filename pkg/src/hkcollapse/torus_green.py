"""Periodic Green's functions on a rectangular flat 3-torus and the
{+-1}-invariant harmonic function with prescribed poles.

Convention: G_p ~ 1/rho_p at p, Laplacian G_p = 4 pi / vol off p (uniform
neutralising background), and G_p has zero mean.  Evaluation is by Ewald
splitting:

    G(d) = sum_n erfc(a|d+n|)/|d+n|
         + (4 pi/V) sum_{k != 0} exp(-k^2/4a^2) cos(k.d) / k^2
         - pi / (a^2 V)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import erfc

# erfc(5.6) ~ 1e-15 and exp(-5.6^2) ~ 2.5e-14
_TAIL = 5.6
POLE_TOL = 1e-14
CHUNK = 4096
# larger splitting parameter for multi-source h: fewer real-space images per point
EVAL_ALPHA_FACTOR = 1.5


class PoleError(ValueError):
    """Evaluation point coincides with a pole."""


class ConfigError(ValueError):
    """Invalid pole configuration; the message names the violated invariant."""


@dataclass(frozen=True)
class TorusSpec:
    box: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        box = tuple(float(b) for b in self.box)
        if len(box) != 3 or min(box) <= 0 or not all(map(math.isfinite, box)):
            raise ConfigError(f"box: need three positive lengths, got {self.box}")
        object.__setattr__(self, "box", box)

    @property
    def L(self):
        return np.array(self.box)

    @property
    def volume(self):
        return float(np.prod(self.box))

    @property
    def injectivity_radius(self):
        return 0.5 * min(self.box)

    def fixed_points(self):
        """The eight points with coordinates 0 or L_i/2, in lexicographic order."""
        L = self.L
        return np.array([[a * L[0] / 2, b * L[1] / 2, c * L[2] / 2]
                         for a, b, c in product((0, 1), repeat=3)])

    def min_image(self, d):
        d = np.asarray(d, dtype=float)
        L = self.L
        return d - L * np.round(d / L)

    def wrap(self, x):
        x = np.asarray(x, dtype=float)
        return np.mod(x, self.L)


def torus_distance(x, y, spec: TorusSpec = TorusSpec()):
    """Distance on the torus; min over the 27 nearest images of y - x."""
    d = spec.min_image(np.asarray(y, dtype=float) - np.asarray(x, dtype=float))
    # rectangular lattice: the minimum image is the nearest of the 27 neighbours
    return np.linalg.norm(d, axis=-1)


@dataclass(frozen=True)
class EwaldParams:
    alpha: float
    r_cut: float
    g_cut: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if erfc(self.alpha * self.r_cut) > 1e-12:
            raise ValueError(f"r_cut {self.r_cut} too small for alpha {self.alpha}")
        if math.exp(-self.g_cut ** 2 / (4 * self.alpha ** 2)) > 1e-12:
            raise ValueError(f"g_cut {self.g_cut} too small for alpha {self.alpha}")

    @classmethod
    def default(cls, spec: TorusSpec = TorusSpec(), alpha=None):
        if alpha is None:
            alpha = math.sqrt(math.pi) / spec.volume ** (1 / 3)
        return cls(alpha=alpha, r_cut=_TAIL / alpha, g_cut=2 * alpha * _TAIL)

    def scaled(self, factor):
        return EwaldParams(self.alpha * factor, self.r_cut / factor, self.g_cut * factor)


class _Lattice:
    """Image vectors and reciprocal vectors for one (spec, params) pair."""

    def __init__(self, spec: TorusSpec, params: EwaldParams):
        L = spec.L
        reach = params.r_cut + 0.5 * np.linalg.norm(L)
        nmax = np.ceil(reach / L).astype(int)
        ranges = [np.arange(-n, n + 1) for n in nmax]
        n = np.array(np.meshgrid(*ranges, indexing="ij")).reshape(3, -1).T * L
        self.images = n[np.linalg.norm(n, axis=1) <= reach]
        self.nonzero = self.images[np.any(self.images != 0, axis=1)]
        mmax = np.ceil(params.g_cut * L / (2 * np.pi)).astype(int)
        ranges = [np.arange(-m, m + 1) for m in mmax]
        m = np.array(np.meshgrid(*ranges, indexing="ij")).reshape(3, -1).T
        # half space: first nonzero component positive
        keep = (m[:, 0] > 0) | ((m[:, 0] == 0) & (m[:, 1] > 0)) | \
               ((m[:, 0] == 0) & (m[:, 1] == 0) & (m[:, 2] > 0))
        k = 2 * np.pi * m[keep] / L
        k2 = np.sum(k * k, axis=1)
        sel = k2 <= params.g_cut ** 2
        self.m = m[keep][sel]
        self.mmax = np.abs(self.m).max(axis=0) if len(self.m) else np.zeros(3, int)
        self.kunit = 2 * np.pi / L
        self.k = k[sel]
        self.k2 = k2[sel]
        V = spec.volume
        # factor 2 for the half space
        self.coef = 2 * (4 * np.pi / V) * np.exp(-self.k2 / (4 * params.alpha ** 2)) / self.k2
        self.alpha = params.alpha
        self.r_cut = params.r_cut
        self.background = -np.pi / (params.alpha ** 2 * V)


_LATTICES: dict = {}


def _lattice(spec, params):
    key = (spec.box, params.alpha, params.r_cut, params.g_cut)
    lat = _LATTICES.get(key)
    if lat is None:
        lat = _LATTICES[key] = _Lattice(spec, params)
    return lat


def _real_space(d, lat, exclude_zero=False):
    # d: (N, 3) min-imaged displacements
    imgs = lat.nonzero if exclude_zero else lat.images
    v = d[:, None, :] + imgs[None, :, :]
    r2 = np.einsum("nkc,nkc->nk", v, v)
    mask = r2 < lat.r_cut ** 2
    r = np.sqrt(r2[mask])
    t = np.zeros(r2.shape)
    t[mask] = erfc(lat.alpha * r) / r
    return t.sum(axis=1)


def _real_space_grad(d, lat):
    v = d[:, None, :] + lat.images[None, :, :]
    r = np.linalg.norm(v, axis=2)
    a = lat.alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        s = -(erfc(a * r) / r ** 3 + 2 * a / math.sqrt(math.pi) * np.exp(-(a * r) ** 2) / r ** 2)
        s = np.where(r < lat.r_cut, s, 0.0)
    return np.einsum("nk,nkc->nc", s, v)


def _recip(d, lat):
    return np.cos(d @ lat.k.T) @ lat.coef


def _recip_grad(d, lat):
    return -(np.sin(d @ lat.k.T) * lat.coef) @ lat.k


def _phase_sum(pts, lat, w):
    """Re sum_k w_k exp(i k.x) using per-axis phase tables."""
    m = lat.m
    out = np.ones((pts.shape[0], len(w)), dtype=complex)
    for ax in range(3):
        mmax = lat.mmax[ax]
        base = np.exp(1j * lat.kunit[ax] * pts[:, ax])
        table = np.empty((pts.shape[0], 2 * mmax + 1), dtype=complex)
        table[:, mmax] = 1.0
        for j in range(1, mmax + 1):
            table[:, mmax + j] = table[:, mmax + j - 1] * base
        table[:, :mmax] = np.conj(table[:, mmax + 1:][:, ::-1])
        out *= table[:, m[:, ax] + mmax]
    return (out @ w).real


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 3), x.shape[:-1]


def _displacements(x, p, spec):
    pts, shape = _as_points(x)
    d = spec.min_image(pts - np.asarray(p, dtype=float))
    if np.any(np.linalg.norm(d, axis=1) < POLE_TOL):
        raise PoleError(f"evaluation point coincides with pole {tuple(np.asarray(p))}")
    return d, shape


def _chunked(fn, d, width=1):
    out = np.empty((d.shape[0],) if width == 1 else (d.shape[0], width))
    for s in range(0, d.shape[0], CHUNK):
        out[s:s + CHUNK] = fn(d[s:s + CHUNK])
    return out


def green(x, p, spec: TorusSpec = TorusSpec(), params: EwaldParams | None = None):
    """Zero-mean periodic Green's function G_p(x) ~ 1/rho_p(x)."""
    params = params or EwaldParams.default(spec)
    lat = _lattice(spec, params)
    d, shape = _displacements(x, p, spec)
    val = _chunked(lambda c: _real_space(c, lat) + _recip(c, lat), d) + lat.background
    return val.reshape(shape) if shape else float(val[0])


def green_grad(x, p, spec: TorusSpec = TorusSpec(), params: EwaldParams | None = None):
    """Gradient of G_p with respect to x."""
    params = params or EwaldParams.default(spec)
    lat = _lattice(spec, params)
    d, shape = _displacements(x, p, spec)
    val = _chunked(lambda c: _real_space_grad(c, lat) + _recip_grad(c, lat), d, width=3)
    return val.reshape(shape + (3,))


def green_self(spec: TorusSpec = TorusSpec(), params: EwaldParams | None = None):
    """lim_{x->p} G_p(x) - 1/rho_p(x)."""
    params = params or EwaldParams.default(spec)
    lat = _lattice(spec, params)
    r = np.linalg.norm(lat.nonzero, axis=1)
    real = np.sum(np.where(r < lat.r_cut, erfc(lat.alpha * r) / r, 0.0))
    return float(real - 2 * lat.alpha / math.sqrt(math.pi) + lat.coef.sum() + lat.background)


# --- independent route: Gaussian-windowed direct lattice sum -----------------------------

@lru_cache(maxsize=16)
def _window_lattice(box, R):
    L = np.array(box)
    nmax = np.ceil(6.2 * R / L).astype(int)
    ranges = [np.arange(-n, n + 1) * l for n, l in zip(nmax, L)]
    n = np.array(np.meshgrid(*ranges, indexing="ij")).reshape(3, -1).T
    w = np.exp(-np.sum(n * n, axis=1) / R ** 2)
    keep = w > 1e-300
    return n[keep], w[keep]


def _windowed_sum(d, spec, R):
    """sum_n w(n)/|n+d| - (1/V) int w(x)/|x+d| dx with w = exp(-|x|^2/R^2).

    Returns the regular part (1/|d| removed) when d = 0.
    """
    n, w = _window_lattice(spec.box, float(R))
    V = spec.volume
    dn = np.linalg.norm(d)
    if dn == 0.0:
        r = np.linalg.norm(n, axis=1)
        nz = r > 0
        return float(np.sum(w[nz] / r[nz]) - 2 * np.pi * R ** 2 / V)
    r = np.sqrt(np.sum((n + d) ** 2, axis=1))
    bg = math.pi ** 1.5 * R ** 3 * math.erf(dn / R) / dn / V
    return float(np.sum(w / r) - bg)


def green_direct(x, p, spec: TorusSpec = TorusSpec(), radii=(2.0, 3.0, 4.0, 5.0, 6.0)):
    """Green's function from Gaussian-windowed real-space lattice sums.

    The window error is a power series in 1/R^2; polynomial extrapolation to
    1/R^2 = 0 over the given window radii (in units of the mean box length).
    Shares no code with the Ewald route.  Pass x == p for the regular value
    at the pole.
    """
    d = spec.min_image(np.asarray(x, dtype=float) - np.asarray(p, dtype=float))
    scale = spec.volume ** (1 / 3)
    Rs = np.asarray(radii, dtype=float) * scale
    vals = np.array([_windowed_sum(d, spec, R) for R in Rs])
    t = 1.0 / Rs ** 2
    # Neville extrapolation to t = 0
    P = vals.copy()
    for m in range(1, len(t)):
        for i in range(len(t) - m):
            P[i] = (t[i + m] * P[i] - t[i] * P[i + 1]) / (t[i + m] - t[i])
    return float(P[0])


# --- pole configurations ------------------------------------------------------------------

@dataclass(frozen=True)
class PoleConfig:
    """Poles +-p_i with weights k_i and fixed points q_j with weights m_j.

    The derived charges are k_i/2 at each of +-p_i and m_j - 2 at q_j, so that
    h ~ charge / rho near every pole.
    """

    p: np.ndarray
    k: tuple
    m: tuple
    c0: float = 0.0
    spec: TorusSpec = field(default_factory=TorusSpec)
    allow_unbalanced: bool = False

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(-1, 3)
        k = tuple(int(v) for v in self.k)
        m = tuple(int(v) for v in self.m)
        if len(k) != len(p):
            raise ConfigError(f"k: {len(k)} weights for {len(p)} points p")
        if len(m) != 8:
            raise ConfigError(f"m: need 8 values for the fixed points, got {len(m)}")
        if any(v < 0 for v in m):
            raise ConfigError("m: values must be nonnegative integers")
        if any(v <= 0 for v in k):
            raise ConfigError("k: values must be positive integers")
        total = sum(m) + sum(k)
        if total != 16 and not self.allow_unbalanced:
            raise ConfigError(f"balancing: Σm+Σk = {total} ≠ 16")
        p = self.spec.wrap(p)
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "c0", float(self.c0))
        poles = self.poles
        if len(poles) > 1:
            d = torus_distance(poles[:, None, :], poles[None, :, :], self.spec)
            d[np.diag_indices(len(poles))] = np.inf
            if d.min() < 1e-9:
                raise ConfigError("distinct: the points +-p_i, q_j must be pairwise distinct "
                                  "(p_i must not be a fixed point of x -> -x)")

    @property
    def n(self):
        return len(self.k)

    @property
    def poles(self):
        """All 2n + 8 pole positions: p_1..p_n, -p_1..-p_n, q_1..q_8."""
        q = self.spec.fixed_points()
        return np.vstack([self.p, self.spec.wrap(-self.p), q]) if self.n else q

    @property
    def charges(self):
        half = [kk / 2 for kk in self.k]
        return np.array(half + half + [mm - 2 for mm in self.m], dtype=float)

    @property
    def balanced(self):
        return sum(self.m) + sum(self.k) == 16

    @property
    def total_charge(self):
        return float(self.charges.sum())

    @property
    def delta0(self):
        poles = self.poles
        d = torus_distance(poles[:, None, :], poles[None, :, :], self.spec)
        d[np.diag_indices(len(poles))] = np.inf
        return 0.25 * min(d.min(), self.spec.injectivity_radius)

    def with_c0(self, c0):
        return PoleConfig(self.p, self.k, self.m, c0, self.spec, self.allow_unbalanced)

    def to_dict(self):
        return {"box": list(self.spec.box), "p": self.p.tolist(), "k": list(self.k),
                "m": list(self.m), "c0": self.c0}

    @classmethod
    def from_dict(cls, data, allow_unbalanced=False):
        if not isinstance(data, dict):
            raise ConfigError("config: expected a mapping")
        for key in ("m",):
            if key not in data:
                raise ConfigError(f"{key}: missing")
        box = data.get("box", [1.0, 1.0, 1.0])
        if "lattice" in data:
            raise ConfigError("lattice: only rectangular tori (a 'box') are supported")
        try:
            spec = TorusSpec(tuple(box))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"box: {exc}") from None
        p = data.get("p", [])
        k = data.get("k", [])
        try:
            p = np.array(p, dtype=float).reshape(-1, 3)
        except ValueError:
            raise ConfigError("p: expected a list of 3-vectors") from None
        try:
            c0 = float(data.get("c0", 0.0))
        except (TypeError, ValueError):
            raise ConfigError("c0: expected a number") from None
        for key, vals in (("k", k), ("m", data["m"])):
            if not isinstance(vals, (list, tuple)) or not all(
                    isinstance(v, int) and not isinstance(v, bool) for v in vals):
                raise ConfigError(f"{key}: expected a list of integers")
        return cls(p=p, k=tuple(k), m=tuple(data["m"]), c0=c0, spec=spec,
                   allow_unbalanced=allow_unbalanced)

    @classmethod
    def load(cls, path, allow_unbalanced=False):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(data.get("poles", data), allow_unbalanced=allow_unbalanced)


def eval_h(x, cfg: PoleConfig, params: EwaldParams | None = None):
    """h(x) = sum_i (k_i/2)(G_{p_i} + G_{-p_i}) + sum_j (m_j - 2) G_{q_j} + c0."""
    spec = cfg.spec
    params = params or EwaldParams.default(spec).scaled(EVAL_ALPHA_FACTOR)
    pts, shape = _as_points(x)
    val = np.full(pts.shape[0], cfg.c0)
    lat = _lattice(spec, params)
    q = cfg.charges
    poles = cfg.poles
    active = q != 0
    if np.any(active):
        disp = [spec.min_image(pts - s) for s in poles]
        for d, s in zip(disp, poles):
            if np.any(np.linalg.norm(d, axis=1) < POLE_TOL):
                raise PoleError(f"evaluation point coincides with pole {tuple(s)}")
        for d, qq in zip(disp, q):
            if qq != 0:
                val += qq * _chunked(lambda c: _real_space(c, lat), d)
        # reciprocal part aggregated over sources
        S = np.exp(-1j * poles[active] @ lat.k.T).T @ q[active]  # (nk,)
        w = S * lat.coef
        for s in range(0, pts.shape[0], CHUNK):
            val[s:s + CHUNK] += _phase_sum(pts[s:s + CHUNK], lat, w)
        val += lat.background * q.sum()
    return val.reshape(shape) if shape else float(val[0])


def eval_h_grad(x, cfg: PoleConfig, params: EwaldParams | None = None):
    spec = cfg.spec
    params = params or EwaldParams.default(spec).scaled(EVAL_ALPHA_FACTOR)
    pts, shape = _as_points(x)
    out = np.zeros((pts.shape[0], 3))
    for s, qq in zip(cfg.poles, cfg.charges):
        if qq != 0:
            out += qq * green_grad(pts, s, spec, params).reshape(-1, 3)
    return out.reshape(shape + (3,))


def eval_h_grid(cfg: PoleConfig, N: int, params: EwaldParams | None = None):
    """h on the N^3 midpoint grid x_j = (j + 1/2) L / N, via FFT for the smooth part.

    A splitting parameter is chosen so that the Gaussian-damped modes fit the
    grid; the result is independent of it up to the Ewald tolerance.
    """
    spec = cfg.spec
    L = spec.L
    if params is None:
        # modes up to |k| = pi N / L_min must carry damping below ~1e-14
        alpha = math.pi * N / (min(L) * 2 * _TAIL)
        params = EwaldParams.default(spec, alpha=alpha)
    lat = _lattice(spec, params)
    axes = [(np.arange(N) + 0.5) * l / N for l in L]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    val = np.full((N, N, N), cfg.c0)
    q = cfg.charges
    if not np.any(q != 0):
        return X, val
    # smooth part: sum_k coef e^{ik.x} with coefficients aggregated over sources
    freqs = [np.fft.fftfreq(N, d=1.0 / N) for _ in range(3)]
    M = np.stack(np.meshgrid(*freqs, indexing="ij"), axis=-1)
    K = 2 * np.pi * M / L
    K2 = np.sum(K * K, axis=-1)
    with np.errstate(divide="ignore"):
        C = (4 * np.pi / spec.volume) * np.exp(-K2 / (4 * params.alpha ** 2)) / K2
    C[0, 0, 0] = 0.0
    S = np.zeros((N, N, N), dtype=complex)
    for s, qq in zip(cfg.poles, q):
        if qq != 0:
            S += qq * np.exp(-1j * (K @ s))
    shift = np.exp(1j * np.pi * (M @ (1.0 / np.full(3, N))))  # midpoint offset (j + 1/2)
    F = C * S * shift * N ** 3
    val += np.fft.ifftn(F).real
    val += lat.background * q.sum()
    # short-range part
    pts = X.reshape(-1, 3)
    flat = val.reshape(-1)
    for s, qq in zip(cfg.poles, q):
        if qq == 0:
            continue
        d = spec.min_image(pts - s)
        # d is the minimum image, so |d| >= r_cut means no image is in range
        idx = np.nonzero(np.linalg.norm(d, axis=1) < lat.r_cut)[0]
        if np.any(np.linalg.norm(d[idx], axis=1) < POLE_TOL):
            raise PoleError("grid point coincides with a pole")
        flat[idx] += qq * _chunked(lambda c: _real_space(c, lat), d[idx])
    return X, flat.reshape(N, N, N)


def laplacian_probe(f: Callable, x, step: float = 1e-3):
    """Seven-point finite-difference Laplacian of a scalar field at x."""
    x = np.asarray(x, dtype=float)
    e = np.eye(3) * step
    pts = np.vstack([x, x + e, x - e])
    v = np.asarray(f(pts), dtype=float).reshape(-1)
    return float((v[1:].sum() - 6 * v[0]) / step ** 2)


def regular_value(pole, cfg: PoleConfig, params: EwaldParams | None = None, tol=1e-9):
    """Value at a pole of h minus its own singular term charge/rho."""
    spec = cfg.spec
    params = params or EwaldParams.default(spec)
    poles = cfg.poles
    dist = torus_distance(poles, np.asarray(pole, dtype=float), spec)
    idx = int(np.argmin(dist))
    if dist[idx] > tol:
        raise ValueError(f"{tuple(pole)} is not a pole of the configuration")
    val = cfg.c0
    q = cfg.charges
    for i, (s, qq) in enumerate(zip(poles, q)):
        if qq == 0:
            continue
        if i == idx:
            val += qq * green_self(spec, params)
        else:
            val += qq * green(poles[idx], s, spec, params)
    return float(val)


def sample_points(rng, spec: TorusSpec, n, avoid=None, min_dist=0.0):
    """Uniform points on the torus, optionally at distance >= min_dist from ``avoid``."""
    out = []
    need = n
    while need > 0:
        x = rng.uniform(0, 1, (max(2 * need, 16), 3)) * spec.L
        if avoid is not None and len(avoid):
            d = torus_distance(x[:, None, :], np.asarray(avoid)[None, :, :], spec).min(axis=1)
            x = x[d >= min_dist]
        out.append(x[:need])
        need -= len(out[-1])
    return np.vstack(out)


def demo_config(name: str) -> PoleConfig:
    """One of the bundled demo configurations: 'a', 'b' or 'c'."""
    from importlib import resources

    files = {"a": "demo_a.json", "b": "demo_b.json", "c": "demo_c.json"}
    if name not in files:
        raise ConfigError(f"demo: unknown demo config {name!r}")
    text = resources.files("hkcollapse.configs").joinpath(files[name]).read_text()
    return PoleConfig.from_dict(json.loads(text)["poles"])
