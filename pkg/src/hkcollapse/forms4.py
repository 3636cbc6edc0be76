"""Linear exterior algebra on R^4 (and R^3): wedge, interior product,
SU(2)-structures, definite triples and the metric they induce.

Coefficients are stored over fixed bases of Lambda^k.  For k = 2 on R^4 the
order is (e01, e02, e03, e23, e31, e12), so that the standard triple
omega_i = e0^ei + ej^ek has coordinates (1,0,0,1,0,0), (0,1,0,0,1,0),
(0,0,1,0,0,1).  Other degrees use lexicographic order.  On R^3 the 2-form
basis is (f23, f31, f12).

All coefficient-level helpers (``wedge_coeffs`` etc.) broadcast over leading
batch axes; the KForm wrappers are for single forms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations, permutations
from math import comb

import numpy as np

BASIS4 = {
    0: [()],
    1: [(0,), (1,), (2,), (3,)],
    2: [(0, 1), (0, 2), (0, 3), (2, 3), (3, 1), (1, 2)],
    3: [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)],
    4: [(0, 1, 2, 3)],
}
BASIS3 = {
    0: [()],
    1: [(0,), (1,), (2,)],
    2: [(1, 2), (2, 0), (0, 1)],
    3: [(0, 1, 2)],
}
_BASES = {3: BASIS3, 4: BASIS4}

SQRT_FLOOR = 1e-12


class NotDefiniteError(ValueError):
    """Raised when a triple of 2-forms is not a definite triple."""


def _perm_sign(seq):
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


@lru_cache(maxsize=None)
def _lookup(dim):
    # sorted index tuple -> (position in basis, sign of basis element relative to sorted)
    table = {}
    for k, elems in _BASES[dim].items():
        for pos, e in enumerate(elems):
            table[tuple(sorted(e))] = (k, pos, _perm_sign(e))
    return table


@lru_cache(maxsize=None)
def wedge_table(dim, k, l):
    """Structure constants W[a, b, c]: basis_k[a] ^ basis_l[b] = sum_c W[a,b,c] basis_{k+l}[c]."""
    if k + l > dim:
        raise ValueError(f"degree overflow: {k} + {l} > {dim}")
    bk, bl = _BASES[dim][k], _BASES[dim][l]
    out = np.zeros((len(bk), len(bl), comb(dim, k + l)))
    look = _lookup(dim)
    for a, ea in enumerate(bk):
        for b, eb in enumerate(bl):
            idx = ea + eb
            if len(set(idx)) < len(idx):
                continue
            _, pos, s = look[tuple(sorted(idx))]
            out[a, b, pos] = _perm_sign(idx) * s
    return out


@lru_cache(maxsize=None)
def interior_table(dim, k):
    """T[i, a, c]: iota_{e_i} basis_k[a] = sum_c T[i,a,c] basis_{k-1}[c]."""
    if k < 1:
        raise ValueError("interior product of a 0-form")
    bk = _BASES[dim][k]
    out = np.zeros((dim, len(bk), comb(dim, k - 1)))
    look = _lookup(dim)
    for a, ea in enumerate(bk):
        for s, i in enumerate(ea):
            rest = ea[:s] + ea[s + 1:]
            if rest:
                _, pos, sg = look[tuple(sorted(rest))]
                out[i, a, pos] += (-1) ** s * _perm_sign(rest) * sg
            else:
                out[i, a, 0] += (-1) ** s
    return out


@lru_cache(maxsize=None)
def _minor_index(dim, k):
    # For the Gram matrix on Lambda^k: sorted index sets with signs of each basis element.
    elems = _BASES[dim][k]
    return [tuple(sorted(e)) for e in elems], np.array([_perm_sign(e) for e in elems])


def wedge_coeffs(a, b, k, l, dim=4):
    """Batched wedge of coefficient arrays of degrees k and l."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if k == 1 and l == 1:
        # every degree-2 basis tuple (i, j) is oriented, so the coefficient is a_i b_j - a_j b_i
        return np.stack([a[..., i] * b[..., j] - a[..., j] * b[..., i]
                         for i, j in _BASES[dim][2]], axis=-1)
    W = wedge_table(dim, k, l)
    # (a W)_bc contracted with b over b
    aw = np.tensordot(a, W, axes=(-1, 0))
    return np.sum(aw * b[..., :, None], axis=-2)


def interior_coeffs(u, a, k, dim=4):
    T = interior_table(dim, k)
    ut = np.tensordot(np.asarray(u, dtype=float), T, axes=(-1, 0))
    return np.sum(ut * np.asarray(a, dtype=float)[..., :, None], axis=-2)


@dataclass(frozen=True)
class KForm:
    """A constant k-form on R^dim, stored in the fixed basis."""

    degree: int
    coeffs: np.ndarray
    dim: int = 4

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if not 0 <= self.degree <= self.dim:
            raise ValueError(f"degree {self.degree} out of range for dim {self.dim}")
        if c.size != comb(self.dim, self.degree):
            raise ValueError(
                f"{c.size} coefficients given, Lambda^{self.degree}(R^{self.dim}) has "
                f"{comb(self.dim, self.degree)}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other):
        _check_same_space(self, other)
        return KForm(self.degree, self.coeffs + other.coeffs, self.dim)

    def __sub__(self, other):
        _check_same_space(self, other)
        return KForm(self.degree, self.coeffs - other.coeffs, self.dim)

    def __neg__(self):
        return KForm(self.degree, -self.coeffs, self.dim)

    def __mul__(self, c):
        return KForm(self.degree, float(c) * self.coeffs, self.dim)

    __rmul__ = __mul__

    def __xor__(self, other):
        return wedge(self, other)

    def allclose(self, other, atol=1e-12):
        _check_same_space(self, other)
        return bool(np.allclose(self.coeffs, other.coeffs, rtol=0, atol=atol))

    @property
    def top(self):
        """Coefficient of a top-degree form on e0123 (or f123)."""
        if self.degree != self.dim:
            raise ValueError("not a top-degree form")
        return float(self.coeffs[0])


def KForm4(degree, coeffs):
    return KForm(degree, coeffs, 4)


def KForm3(degree, coeffs):
    return KForm(degree, coeffs, 3)


def _check_same_space(a, b):
    if a.degree != b.degree or a.dim != b.dim:
        raise ValueError("forms of different degree or dimension")


def basis_form(indices, dim=4):
    """e^{i1} ^ ... ^ e^{ik} as a KForm, for any ordering of distinct indices."""
    k = len(indices)
    if len(set(indices)) < k:
        return KForm(k, np.zeros(comb(dim, k)), dim)
    _, pos, s = _lookup(dim)[tuple(sorted(indices))]
    c = np.zeros(comb(dim, k))
    c[pos] = _perm_sign(indices) * s
    return KForm(k, c, dim)


def wedge(a: KForm, b: KForm) -> KForm:
    if a.dim != b.dim:
        raise ValueError("forms live on different spaces")
    if a.degree + b.degree > a.dim:
        raise ValueError(f"degree overflow: {a.degree} + {b.degree} > {a.dim}")
    return KForm(a.degree + b.degree,
                 wedge_coeffs(a.coeffs, b.coeffs, a.degree, b.degree, a.dim), a.dim)


def interior(u, a: KForm) -> KForm:
    if a.degree < 1:
        raise ValueError("interior product of a 0-form")
    u = np.asarray(u, dtype=float)
    return KForm(a.degree - 1, interior_coeffs(u, a.coeffs, a.degree, a.dim), a.dim)


@dataclass(frozen=True)
class FormTriple:
    omega1: KForm
    omega2: KForm
    omega3: KForm

    def __post_init__(self):
        for w in self:
            if w.degree != 2 or w.dim != 4:
                raise ValueError("a triple consists of 2-forms on R^4")

    def __iter__(self):
        return iter((self.omega1, self.omega2, self.omega3))

    def __getitem__(self, i):
        return (self.omega1, self.omega2, self.omega3)[i]

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float).reshape(3, 6)
        return cls(*(KForm4(2, row) for row in arr))

    def as_array(self):
        return np.stack([w.coeffs for w in self])

    def scaled(self, c):
        return FormTriple.from_array(c * self.as_array())

    def mixed(self, M):
        """The triple (sum_j M[i,j] omega_j)_i."""
        return FormTriple.from_array(np.asarray(M) @ self.as_array())


def standard_triple() -> FormTriple:
    """omega_i = e0^ei + ej^ek."""
    return FormTriple.from_array(np.hstack([np.eye(3), np.eye(3)]))


@dataclass(frozen=True)
class Metric4:
    """Symmetric positive-definite bilinear form on R^4.

    ``sign`` records whether the metric came from S (+1) or -S (-1).
    """

    g: np.ndarray
    sign: int = 1

    def __post_init__(self):
        g = np.array(self.g, dtype=float).reshape(4, 4)
        if not np.allclose(g, g.T, rtol=0, atol=1e-14 * max(1.0, np.abs(g).max())):
            raise ValueError("metric is not symmetric")
        g = 0.5 * (g + g.T)
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    @property
    def is_spd(self):
        return bool(np.linalg.eigvalsh(self.g)[0] > 0)


@dataclass(frozen=True)
class GramData:
    Q: np.ndarray
    mu: float
    sign: int
    eigenvalues: np.ndarray = field(repr=False, default=None)


def pairing_matrix(triple_arr):
    """M[..., i, j] = coefficient of omega_i ^ omega_j on e0123 (batched)."""
    W = wedge_table(4, 2, 2)[:, :, 0]
    t = np.asarray(triple_arr, dtype=float)
    return (t @ W) @ np.swapaxes(t, -1, -2)


def gram(t: FormTriple) -> GramData:
    """Q and mu with omega_i ^ omega_j = Q_ij mu, det Q = 1, Q > 0."""
    M = pairing_matrix(t.as_array())
    if M[0, 0] == 0.0:
        raise NotDefiniteError("omega_1^2 = 0")
    det = np.linalg.det(M)
    if det == 0.0 or not np.isfinite(det):
        raise NotDefiniteError("not a definite triple: degenerate Gram matrix")
    mu = float(np.cbrt(det))
    Q = M / mu
    Q = 0.5 * (Q + Q.T)
    ev = np.linalg.eigvalsh(Q)
    if ev[0] <= SQRT_FLOOR:
        raise NotDefiniteError(f"not a definite triple: Q has eigenvalue {ev[0]:.3e}")
    return GramData(Q=Q, mu=mu, sign=1 if mu > 0 else -1, eigenvalues=ev)


def is_su2(t: FormTriple, tol: float = 1e-10) -> bool:
    M = pairing_matrix(t.as_array())
    scale = abs(M[0, 0])
    if scale == 0.0:
        return False
    off = max(abs(M[0, 1]), abs(M[1, 2]), abs(M[0, 2]))
    diag = max(abs(M[1, 1] - M[0, 0]), abs(M[2, 2] - M[0, 0]))
    return bool(max(off, diag) <= tol * scale)


def sqrtm_spd(Q):
    """Principal square root of a symmetric positive-definite matrix."""
    w, V = np.linalg.eigh(Q)
    if w[0] <= SQRT_FLOOR:
        raise NotDefiniteError(f"eigenvalue {w[0]:.3e} below floor")
    return (V * np.sqrt(w)) @ V.T


def normalize_triple(t: FormTriple) -> FormTriple:
    """P^{-1} t with P = sqrt(Q); an SU(2)-structure spanning the same space."""
    P = sqrtm_spd(gram(t).Q)
    return t.mixed(np.linalg.inv(P))


def s_tensor(t: FormTriple) -> np.ndarray:
    """Matrix of S_t for an SU(2)-structure t."""
    arr = t.as_array()
    vol = float(wedge_coeffs(arr[0], arr[0], 2, 2)[0])
    T = interior_table(4, 2)  # iota_{e_i} on 2-forms
    i1 = np.einsum("iac,a->ic", T, arr[0])  # iota_{e_u} omega1
    i2 = np.einsum("iac,a->ic", T, arr[1])
    W12 = wedge_table(4, 1, 1)
    W23 = wedge_table(4, 2, 2)[:, :, 0]
    two = np.einsum("ua,vb,abc->uvc", i1, i2, W12)
    top = np.einsum("uvc,cd,d->uv", two, W23, arr[2])
    return 2.0 * top / vol


def metric_of(t: FormTriple) -> Metric4:
    gram(t)  # raises if not definite
    S = s_tensor(normalize_triple(t))
    S = 0.5 * (S + S.T)
    sign = 1 if S[0, 0] > 0 else -1
    m = Metric4(sign * S, sign=sign)
    if not m.is_spd:
        raise NotDefiniteError("induced S is not definite")
    return m


def _check_spd(g):
    g = g.g if isinstance(g, Metric4) else np.asarray(g, dtype=float)
    if np.linalg.eigvalsh(g)[0] <= 0:
        raise ValueError("metric is not positive definite")
    return g


@lru_cache(maxsize=None)
def _gram_minor_data(dim, k):
    idx, signs = _minor_index(dim, k)
    return idx, signs


def form_gram(g, k, dim=4):
    """Gram matrix of the inner product on Lambda^k induced by the metric g.

    The dual metric g^{-1} acts on covectors; on decomposables the inner product
    is the determinant of the k x k matrix of pairings.
    """
    g = _check_spd(g)
    ginv = np.linalg.inv(g)
    idx, signs = _gram_minor_data(dim, k)
    n = len(idx)
    G = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            if k == 0:
                G[a, b] = 1.0
            else:
                G[a, b] = signs[a] * signs[b] * np.linalg.det(ginv[np.ix_(idx[a], idx[b])])
    return G


def form_norm(a: KForm, g) -> float:
    G = form_gram(g, a.degree, a.dim)
    return float(np.sqrt(max(a.coeffs @ G @ a.coeffs, 0.0)))


def vector_norm(u, g) -> float:
    g = _check_spd(g)
    u = np.asarray(u, dtype=float)
    return float(np.sqrt(u @ g @ u))


def compare_metrics(g0, g1):
    """Tightest (lmin, lmax) with lmin*g0 <= g1 <= lmax*g0."""
    from scipy.linalg import eigh

    a = _check_spd(g0)
    b = _check_spd(g1)
    w = eigh(b, a, eigvals_only=True)
    return float(w[0]), float(w[-1])


def random_definite_triple(rng, spread=0.3):
    """A random definite triple: a random GL(4) image of a mixed standard triple."""
    while True:
        F = np.eye(4) + spread * rng.standard_normal((4, 4))
        M = np.eye(3) + spread * rng.standard_normal((3, 3))
        if abs(np.linalg.det(F)) < 0.1 or abs(np.linalg.det(M)) < 0.1:
            continue
        t = pullback_triple(F, standard_triple()).mixed(M @ M.T if rng.random() < 0.5 else M)
        try:
            gram(t)
        except NotDefiniteError:
            continue
        return t


def pullback_linear(F, a: KForm) -> KForm:
    """Pullback of a form on R^m under a linear map F: R^n -> R^m (F is m x n)."""
    F = np.asarray(F, dtype=float)
    m, n = F.shape
    if a.dim != m:
        raise ValueError("form does not live on the target space")
    k = a.degree
    if k == 0:
        return KForm(0, a.coeffs, n)
    ones = [KForm(1, F[h], n) for h in range(m)]
    out = np.zeros(comb(n, k))
    for c, e in zip(a.coeffs, _BASES[m][k]):
        if c == 0.0:
            continue
        term = ones[e[0]]
        for h in e[1:]:
            term = wedge(term, ones[h])
        out += c * term.coeffs
    return KForm(k, out, n)


def pullback_triple(F, t: FormTriple) -> FormTriple:
    return FormTriple(*(pullback_linear(F, w) for w in t))
