import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nkemu.errors import UnsupportedFamilyForGrid, ValidationError
from nkemu.grid import Grid, laplacian
from nkemu.linalg import cholesky_lower
from nkemu.sampling import (KernelSpec, inv_laplacian_kernel, kernel_matrix, periodic_kernel,
                            sample_gp, sample_sum_of_sines, standard_normals, sum_of_sines,
                            uniforms)


@pytest.mark.parametrize("spec", [periodic_kernel(), KernelSpec("gaussian", 0.3, scale=2.0),
                                  KernelSpec("matern52", 0.3, scale=0.5)])
def test_single_point_diagonal(spec):
    K = kernel_matrix(spec, Grid((3,), "dirichlet"))  # one unknown node
    assert K.shape == (1, 1) and K[0, 0] == pytest.approx(spec.scale)


def test_periodic_kernel_period():
    from nkemu.sampling import kernel_gram
    k = periodic_kernel(10.0, 0.5)
    x = np.array([[0.1], [0.6], [1.1]])
    K = kernel_gram(k, x)
    np.testing.assert_allclose(K, np.ones((3, 3)), atol=1e-15)


def test_inv_laplacian_dense_oracle():
    g = Grid((11, 11), "dirichlet")
    K = kernel_matrix(inv_laplacian_kernel(), g)
    M = -laplacian(g) + 0.01 * np.eye(g.n)
    Minv = np.linalg.inv(M)
    np.testing.assert_allclose(K, 5 * Minv @ Minv, rtol=1e-10, atol=0)


def test_periodic_gram_is_circulant():
    g = Grid((16,), "periodic")
    K = kernel_matrix(periodic_kernel(), g)
    for s in range(16):
        d = np.array([K[i, (i + s) % 16] for i in range(16)])
        np.testing.assert_allclose(d, d[0], atol=1e-15)


@pytest.mark.parametrize("spec,grid", [
    (periodic_kernel(), Grid((63,), "periodic")),
    (KernelSpec("matern52", 0.3), Grid((20, 20), "dirichlet")),
    (inv_laplacian_kernel(), Grid((20, 20), "dirichlet")),
    (inv_laplacian_kernel(), Grid((9, 9), "dirichlet")),
    (KernelSpec("gaussian", 0.2), Grid((65,), "dirichlet")),
])
def test_gram_symmetric_and_factorizable(spec, grid):
    K = kernel_matrix(spec, grid)
    assert np.array_equal(K, K.T)
    cholesky_lower(K + 1e-10 * np.max(np.diag(K)) * np.eye(grid.n))


def test_kernel_errors():
    with pytest.raises(ValidationError):
        KernelSpec("cosine")
    with pytest.raises(ValidationError):
        KernelSpec("gaussian", lengthscale=0.0)
    with pytest.raises(UnsupportedFamilyForGrid):
        kernel_matrix(periodic_kernel(), Grid((4, 4)))


def test_degenerate_scale_gives_zero_fields():
    b = sample_gp(KernelSpec("gaussian", 0.2, scale=1e-300), Grid((16,)), 3, 0)
    assert np.max(np.abs(b.fields)) < 1e-140


def test_same_seed_bit_identical_and_streams_independent():
    g = Grid((32,), "periodic")
    a = sample_gp(periodic_kernel(), g, 4, 7)
    b = sample_gp(periodic_kernel(), g, 4, 7)
    assert a.fields.tobytes() == b.fields.tobytes()
    c = sample_gp(periodic_kernel(), g, 2, 7, start=2)
    assert c.fields.tobytes() == a.fields[2:].tobytes()
    assert not np.array_equal(sample_gp(periodic_kernel(), g, 1, 8).fields, a.fields[:1])


def test_normals_are_standard():
    z = standard_normals(3, 0, 200000)
    assert abs(z.mean()) < 4 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 0.02
    u = uniforms(3, 0, 1000)
    assert np.all((u > 0) & (u <= 1))


def test_monte_carlo_mean_and_covariance():
    g = Grid((8,), "periodic")
    spec = KernelSpec("gaussian", 0.25)
    n = 10_000
    X = sample_gp(spec, g, n, 11).fields
    K = kernel_matrix(spec, g)
    for i in range(8):
        assert abs(X[:, i].mean()) <= 4 / np.sqrt(n) * np.sqrt(K[i, i])
    i, j = 0, 2
    prod = X[:, i] * X[:, j]
    se = prod.std() / np.sqrt(n)
    assert abs(prod.mean() - K[i, j]) <= 5 * se


def test_sum_of_sines():
    g = Grid((33,), "dirichlet")
    x = g.axis_coords(0)
    np.testing.assert_array_equal(sum_of_sines(g, [0, 0, 0]), np.zeros(g.n))
    np.testing.assert_allclose(sum_of_sines(g, [1, 0, 0]), np.sin(np.pi * x))
    gp = Grid((32,), "periodic")
    for i in range(20):
        assert sample_sum_of_sines(gp, 5, i)[0] == 0.0
    with pytest.raises(ValidationError):
        sample_sum_of_sines(Grid((4, 4)), 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**40), st.integers(0, 1000))
def test_sum_of_sines_deterministic(seed, idx):
    g = Grid((16,), "periodic")
    assert sample_sum_of_sines(g, seed, idx).tobytes() == sample_sum_of_sines(g, seed, idx).tobytes()
