import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pytest import approx

from hkcollapse import forms4 as f4
from hkcollapse.forms4 import (FormTriple, KForm4, NotDefiniteError, basis_form, compare_metrics,
                               form_norm, gram, interior, is_su2, metric_of, standard_triple,
                               vector_norm, wedge)

floats = st.floats(-3, 3, allow_nan=False)


def test_standard_triple_wedges():
    t = standard_triple()
    assert wedge(t[0], t[1]).top == approx(0.0)
    assert wedge(t[1], t[2]).top == approx(0.0)
    for w in t:
        assert wedge(w, w).top == approx(2.0)


def test_basis_orientation():
    assert wedge(basis_form((0, 1)), basis_form((2, 3))).top == 1.0
    assert wedge(basis_form((0, 2)), basis_form((3, 1))).top == 1.0
    assert basis_form((1, 0)).allclose(-basis_form((0, 1)))
    assert basis_form((1, 1)).allclose(KForm4(2, np.zeros(6)))


def test_wedge_degree_overflow():
    with pytest.raises(ValueError):
        wedge(KForm4(3, np.ones(4)), KForm4(2, np.ones(6)))


def test_interior_of_zero_form():
    with pytest.raises(ValueError):
        interior([1, 0, 0, 0], KForm4(0, [1.0]))


def test_coefficient_count_checked():
    with pytest.raises(ValueError):
        KForm4(2, np.ones(5))


def test_gram_of_standard():
    g = gram(standard_triple())
    assert np.allclose(g.Q, np.eye(3))
    assert g.mu == approx(2.0)
    assert g.sign == 1


def test_gram_rejects_degenerate():
    z = FormTriple.from_array(np.zeros((3, 6)))
    with pytest.raises(NotDefiniteError):
        gram(z)
    a = standard_triple().as_array()
    a[2] = a[1]
    with pytest.raises(NotDefiniteError):
        gram(FormTriple.from_array(a))


def test_metric_of_standard_and_scaled():
    assert np.allclose(metric_of(standard_triple()).g, np.eye(4))
    g3 = metric_of(standard_triple().scaled(3.0))
    assert g3.g[0, 0] == approx(3.0)
    gneg = metric_of(standard_triple().scaled(-1.0))
    assert np.allclose(gneg.g, np.eye(4))


def test_form_norm_of_omega():
    assert form_norm(standard_triple()[0], np.eye(4)) == approx(np.sqrt(2))
    assert vector_norm([1, 0, 0, 0], np.diag([4, 1, 1, 1])) == approx(2.0)


def test_compare_metrics():
    assert compare_metrics(np.eye(4), np.diag([1, 1, 1, 4])) == approx((1.0, 4.0))
    with pytest.raises(ValueError):
        compare_metrics(np.eye(4), -np.eye(4))


def test_contraction_identity():
    # iota_{e0} w1 ^ iota_{e0} w2 ^ w3 on the standard triple
    t = standard_triple()
    e0 = np.array([1.0, 0, 0, 0])
    top = wedge(wedge(interior(e0, t[0]), interior(e0, t[1])), t[2])
    assert top.top == approx(1.0)


def test_random_triples_normalize_to_su2():
    rng = np.random.default_rng(3)
    for _ in range(50):
        t = f4.random_definite_triple(rng)
        assert is_su2(f4.normalize_triple(t), tol=1e-9)
        assert metric_of(t).is_spd


def test_pullback_under_diagonal_map():
    F = np.diag([2.0, 1.0, 1.0, 1.0])
    t = f4.pullback_triple(F, standard_triple())
    assert t[0].coeffs[0] == approx(2.0)  # e01 coefficient doubles
    assert t[0].coeffs[3] == approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(floats, min_size=4, max_size=4), st.lists(floats, min_size=4, max_size=4),
       st.lists(floats, min_size=6, max_size=6))
def test_wedge_graded_commutativity(a, b, c):
    a, b, c = KForm4(1, a), KForm4(1, b), KForm4(2, c)
    assert wedge(a, b).allclose(-wedge(b, a), atol=1e-9)
    assert wedge(a, a).allclose(KForm4(2, np.zeros(6)))
    assert wedge(a, c).allclose(wedge(c, a), atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(floats, min_size=4, max_size=4), st.lists(floats, min_size=4, max_size=4),
       st.lists(floats, min_size=4, max_size=4))
def test_interior_is_antiderivation(u, a, b):
    a, b = KForm4(1, a), KForm4(1, b)
    lhs = interior(u, wedge(a, b))
    rhs = interior(u, a).coeffs[0] * b - interior(u, b).coeffs[0] * a
    assert lhs.allclose(rhs, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_pullback_commutes_with_wedge(seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(4, 4))
    a, b = KForm4(2, rng.normal(size=6)), KForm4(2, rng.normal(size=6))
    lhs = f4.pullback_linear(F, wedge(a, b))
    rhs = wedge(f4.pullback_linear(F, a), f4.pullback_linear(F, b))
    assert lhs.top == approx(rhs.top, rel=1e-9, abs=1e-9)
    assert lhs.top == approx(np.linalg.det(F) * wedge(a, b).top, rel=1e-9, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_metric_is_gl_covariant(seed):
    rng = np.random.default_rng(seed)
    F = np.eye(4) + 0.3 * rng.normal(size=(4, 4))
    if abs(np.linalg.det(F)) < 0.2:
        return
    t = f4.pullback_triple(F, standard_triple())
    g = metric_of(t).g
    assert np.allclose(g, F.T @ F, atol=1e-8)


def test_metric_scales_linearly():
    rng = np.random.default_rng(11)
    for _ in range(50):
        t = f4.random_definite_triple(rng)
        c = rng.uniform(0.1, 10)
        assert np.allclose(metric_of(t.scaled(c)).g / c, metric_of(t).g, rtol=1e-10, atol=0)


def _random_spd(rng):
    B = rng.standard_normal((4, 4))
    return B @ B.T + 0.5 * np.eye(4)


def test_norm_submultiplicative_bound():
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(3000):
        g = _random_spd(rng)
        k, l = rng.integers(1, 3, 2)
        a = KForm4(int(k), rng.standard_normal(6 if k == 2 else 4))
        b = KForm4(int(l), rng.standard_normal(6 if l == 2 else 4))
        u = rng.standard_normal(4)
        worst = max(worst, form_norm(wedge(a, b), g) / (form_norm(a, g) * form_norm(b, g)),
                    form_norm(interior(u, a), g) / (vector_norm(u, g) * form_norm(a, g)))
    assert np.isfinite(worst) and worst <= 8


def test_compare_metrics_linear_rate():
    rng = np.random.default_rng(13)
    t = f4.random_definite_triple(rng)
    g0 = metric_of(t).g
    ratios = []
    for delta in (1e-1, 1e-2, 1e-3):
        worst = 0.0
        for _ in range(20):
            d = rng.standard_normal((3, 6))
            d *= delta / np.linalg.norm(d)
            lmin, lmax = compare_metrics(g0, metric_of(FormTriple.from_array(t.as_array() + d)).g)
            worst = max(worst, lmax - 1, 1 - lmin)
        ratios.append(worst / delta)
    # a single constant serves every delta
    assert max(ratios) / min(ratios) < 3


def test_gram_rotation_invariance():
    from scipy.spatial.transform import Rotation

    t = standard_triple()
    for R in Rotation.random(10, random_state=14).as_matrix():
        rt = t.mixed(R)
        assert np.allclose(gram(rt).Q, np.eye(3), atol=1e-12)
        assert np.allclose(metric_of(rt).g, np.eye(4), atol=1e-12)
