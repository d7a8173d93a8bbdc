import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fembem.nonlinearity import (
    CoefficientModel,
    fd_jacobian,
    make_anisotropic,
    make_benchmark_nonlinear,
    make_identity,
)

vec = arrays(np.float64, 2, elements=st.floats(-100, 100, allow_nan=False))
MODELS = [make_identity(), make_anisotropic(0.25), make_anisotropic(0.001), make_benchmark_nonlinear()]


def test_anisotropic_examples():
    assert np.allclose(make_anisotropic(0.25)([1.0, 1.0]), [0.25, 1.0])
    assert np.allclose(make_anisotropic(0.001)([2.0, 0.0]), [0.002, 0.0])
    m = make_anisotropic(0.001)
    assert (m.c_ell, m.c_lip) == (0.001, 1.0)
    assert m.small_ellipticity


@pytest.mark.parametrize("c", [0.0, -1.0])
def test_anisotropic_rejects_nonpositive(c):
    with pytest.raises(ValueError):
        make_anisotropic(c)


def test_anisotropic_one_is_identity():
    y = np.random.default_rng(0).normal(size=(50, 2))
    assert np.array_equal(make_anisotropic(1.0)(y), make_identity()(y))


def test_benchmark_examples():
    A = make_benchmark_nonlinear()
    assert np.allclose(A([1.0, 0.0]), [2.5, 0.0])
    assert np.allclose(A([0.0, 0.0]), [0.0, 0.0])
    # <A(1,0) - A(0,0), (1,0)> = 2.5 >= c_ell * 1 = 2
    assert np.dot(A([1.0, 0.0]) - A([0.0, 0.0]), [1.0, 0.0]) == pytest.approx(2.5)
    assert A.c_ell == 2.0
    assert A.c_lip == pytest.approx(3.0, rel=1e-6)
    assert not A.small_ellipticity


def test_constants_validated():
    with pytest.raises(ValueError):
        CoefficientModel(lambda y: y, c_lip=0.5, c_ell=1.0)


def _fd_check(m, y):
    J = m.jacobian(y)
    h = 1e-5 * max(1.0, np.linalg.norm(y))
    cols = [(m(y + h * e) - m(y - h * e)) / (2 * h) for e in np.eye(2)]
    Jfd = np.stack(cols, axis=-1)
    return np.linalg.norm(J - Jfd) <= 1e-6 * max(1.0, np.linalg.norm(J))


@pytest.mark.parametrize("m", MODELS, ids=lambda m: m.name)
def test_jacobian_matches_finite_differences(m):
    for y in np.random.default_rng(3).normal(scale=5.0, size=(20, 2)):
        assert _fd_check(m, y)


@settings(max_examples=200, deadline=None)
@given(y=vec.filter(lambda v: np.linalg.norm(v) > 1e-2), m=st.sampled_from(MODELS))
def test_jacobian_fd_property(y, m):
    # g(|y|) y has a second-derivative kink at 0, where central differences are only O(h)
    assert _fd_check(m, y)


@settings(max_examples=300, deadline=None)
@given(y=vec, z=vec, m=st.sampled_from(MODELS))
def test_lipschitz_and_monotone(y, z, m):
    d = m(y) - m(z)
    dist = np.linalg.norm(y - z)
    assert np.linalg.norm(d) <= m.c_lip * dist * (1 + 1e-10) + 1e-12
    assert np.dot(d, y - z) >= m.c_ell * dist**2 * (1 - 1e-10) - 1e-12


def test_monotone_on_ten_thousand_pairs():
    rng = np.random.default_rng(7)
    y = rng.uniform(-100, 100, (10000, 2))
    z = rng.uniform(-100, 100, (10000, 2))
    for m in MODELS:
        d = m(y) - m(z)
        dist2 = np.sum((y - z) ** 2, axis=1)
        assert np.all(np.sum(d * (y - z), axis=1) >= m.c_ell * dist2 * (1 - 1e-12))
        assert np.all(np.sum(d * d, axis=1) <= m.c_lip**2 * dist2 * (1 + 1e-12))


def test_vectorized_shapes():
    A = make_benchmark_nonlinear()
    y = np.zeros((3, 4, 2))
    assert A(y).shape == (3, 4, 2)
    assert A.jacobian(y).shape == (3, 4, 2, 2)
    # Jacobian at zero is 3 Id
    assert np.allclose(A.jacobian(np.zeros(2)), 3 * np.eye(2))


def test_fd_jacobian_helper():
    A = make_benchmark_nonlinear()
    y = np.array([0.3, -1.2])
    assert np.allclose(fd_jacobian(A.apply, y), A.jacobian(y), rtol=1e-7)
