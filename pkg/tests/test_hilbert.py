import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from skewgrad.hilbert import (
    DimensionError,
    EnergyFunctional,
    InnerProduct,
    RankTwoSkew,
    discrete_gradient_avf,
    nonorthogonality,
    sge_skew,
    wedge_apply,
)

N = 12
# two-decimal grid keeps products away from underflow
finite = st.integers(-1000, 1000).map(lambda k: k / 100.0)
vec = arrays(np.float64, (N,), elements=finite)


@settings(max_examples=60, deadline=None)
@given(vec, vec, vec, vec, st.floats(0.1, 5.0))
def test_rank_two_skew_is_skew(a, b, u, v, w):
    ip = InnerProduct((N,), w)
    S = RankTwoSkew(ip, a, b, 1.0)
    lhs = ip(u, S(v))
    rhs = -ip(S(u), v)
    scale = ip.norm(a) * ip.norm(b) * ip.norm(u) * ip.norm(v) + 1e-300
    assert abs(lhs - rhs) <= 1e-12 * scale
    assert abs(ip(u, S(u))) <= 1e-12 * scale


@settings(max_examples=60, deadline=None)
@given(vec, vec, vec)
def test_wedge_identities(a, b, v):
    ip = InnerProduct((N,))
    sa = ip.norm2(a) * ip.norm(b) + 1e-300
    # a ^ a = 0 and a ^ b = -(b ^ a)
    assert np.max(np.abs(wedge_apply(ip, a, a, v))) <= 1e-12 * (ip.norm2(a) * ip.norm(v) + 1e-300)
    np.testing.assert_allclose(wedge_apply(ip, a, b, v), -wedge_apply(ip, b, a, v), atol=1e-12 * sa * (ip.norm(v) + 1))
    # (a ^ b) a = |a|^2 b - (a, b) a
    expect = ip.norm2(a) * b - ip(a, b) * a
    np.testing.assert_allclose(wedge_apply(ip, a, b, a), expect, atol=1e-12 * sa)


def test_sge_skew_recovers_orthogonal_zec():
    rng = np.random.default_rng(1)
    ip = InnerProduct((20,), 0.3)
    g = rng.standard_normal(20)
    J = rng.standard_normal(20)
    J -= ip(J, g) / ip.norm2(g) * g  # orthogonal to g
    S = sge_skew(ip, g, J)
    np.testing.assert_allclose(S(g), J, atol=1e-13)
    assert nonorthogonality(ip, g, J) < 1e-14


def test_sge_skew_projects_nonorthogonal_part():
    rng = np.random.default_rng(2)
    ip = InnerProduct((8,))
    g, J = rng.standard_normal((2, 8))
    S = sge_skew(ip, g, J)
    perp = J - ip(J, g) / ip.norm2(g) * g
    np.testing.assert_allclose(S(g), perp, atol=1e-13)


def test_sge_skew_floor_gives_zero_operator():
    ip = InnerProduct((5,))
    S = sge_skew(ip, np.zeros(5), np.ones(5))
    assert S.is_zero
    np.testing.assert_array_equal(S(np.ones(5)), 0.0)


def test_batched_skew_matches_loop():
    rng = np.random.default_rng(3)
    ip = InnerProduct((6,))
    a, b, v = rng.standard_normal((3, 4, 6))
    scale = np.array([1.0, 2.0, 0.0, 0.5])
    S = RankTwoSkew(ip, a, b, scale)
    out = S(v)
    for i in range(4):
        Si = RankTwoSkew(ip, a[i], b[i], scale[i])
        np.testing.assert_allclose(out[i], Si(v[i]), atol=1e-14)
    np.testing.assert_array_equal(out[2], 0.0)


def test_solve_factors_form():
    rng = np.random.default_rng(4)
    ip = InnerProduct((7,))
    a, b, x = rng.standard_normal((3, 7))
    S = RankTwoSkew(ip, a, b, 2.5)
    ap, bp = S.solve_factors()
    np.testing.assert_allclose(-S(x), ap * ip(bp, x) - bp * ip(ap, x), atol=1e-13)


def test_dimension_mismatch():
    ip = InnerProduct((4,))
    with pytest.raises(DimensionError):
        ip(np.ones(4), np.ones(5))


def _quartic(ip):
    return EnergyFunctional(ip, lambda u: 2.0 * u, density=lambda u: 0.25 * u ** 4 - 0.5 * u ** 2,
                            density_prime=lambda u: u ** 3 - u, degree=4)


@settings(max_examples=50, deadline=None)
@given(vec, vec)
def test_avf_discrete_gradient_identity(p, q):
    ip = InnerProduct((N,), 0.1)
    F = _quartic(ip)
    dg = discrete_gradient_avf(F, p, q)
    lhs = F(q) - F(p)
    rhs = ip(dg, q - p)
    assert abs(lhs - rhs) <= 1e-12 * (abs(F(p)) + abs(F(q)) + 1.0)


def test_avf_consistency():
    ip = InnerProduct((5,))
    F = _quartic(ip)
    p = np.linspace(-1, 1, 5)
    np.testing.assert_allclose(discrete_gradient_avf(F, p, p), F.grad(p), atol=1e-14)


def test_avf_points_exactness():
    ip = InnerProduct((3,))
    F = _quartic(ip)
    assert F.avf_points() == 2
    rough = EnergyFunctional(ip, lambda u: u, np.cosh, np.sinh, polynomial=False)
    assert rough.avf_points() == 4
