import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from pdcp_greeks.grid import build_grid
from pdcp_greeks.market import PUT_1D, PUT_ON_AVERAGE_2D, MarketParams2D
from pdcp_greeks.operator import (
    _convection_diffusion_1d,
    assemble_1d,
    assemble_2d,
    derivative_matrices,
    dump_coo,
    fd_weights,
)


def test_fd_weights_uniform():
    w = fd_weights(0.5, 0.5)
    np.testing.assert_allclose(w.first, (-1.0, 0.0, 1.0), atol=1e-15)
    np.testing.assert_allclose(w.second, (4.0, -8.0, 4.0))


def test_fd_weights_nonuniform():
    w = fd_weights(1.0, 2.0)
    np.testing.assert_allclose(w.first, (-2 / 3, 1 / 2, 1 / 6), rtol=1e-15)
    np.testing.assert_allclose(w.second, (2 / 3, -1.0, 1 / 3), rtol=1e-15)


@pytest.mark.parametrize("hl, hr", [(0.0, 1.0), (1.0, -1.0)])
def test_fd_weights_rejects(hl, hr):
    with pytest.raises(ValueError):
        fd_weights(hl, hr)


@settings(max_examples=100, deadline=None)
@given(s=st.floats(0.5, 500), hl=st.floats(1e-3, 10), hr=st.floats(1e-3, 10))
def test_fd_weights_quadratic_exact(s, hl, hr):
    w = fd_weights(hl, hr)
    f = np.array([(s - hl) ** 2, s**2, (s + hr) ** 2])
    scale = (s + hr) ** 2 / min(hl, hr)
    assert abs(np.dot(w.first, f) - 2 * s) <= 1e-10 * scale
    assert abs(np.dot(w.second, f) - 2.0) <= 1e-10 * scale / min(hl, hr)


def test_derivative_matrices_boundary_rows_empty():
    g = build_grid(30, 100.0, 500.0)
    d1, d2 = derivative_matrices(g.points)
    for d in (d1, d2):
        assert d.getrow(0).nnz == 0 and d.getrow(29).nnz == 0


def test_assemble_1d_structure():
    p = assemble_1d(PUT_1D, m=200)
    a = p.a_matrix
    assert a.shape == (200, 200) and p.size == 200
    row0 = a.getrow(0).toarray().ravel()
    assert row0[0] == -PUT_1D.r and np.count_nonzero(row0) == 1
    assert a.getrow(199).nnz == 0 and p.u0[-1] == 0.0 and p.dirichlet_mask[-1]
    assert np.diff(a.indptr).max() <= 3


def test_assemble_1d_constants_and_linear():
    p = assemble_1d(PUT_1D, m=200)
    s = p.grid.points
    interior = slice(1, 199)
    np.testing.assert_allclose((p.a_matrix @ np.ones(200))[interior], -PUT_1D.r, rtol=1e-10)
    np.testing.assert_allclose((p.a_matrix @ s)[interior], 0.0, atol=1e-9 * s.max())


def test_assemble_1d_quadratic_exact():
    p = assemble_1d(PUT_1D, m=100)
    s = p.grid.points
    sig, r = PUT_1D.sigma, PUT_1D.r
    exact = 0.5 * sig**2 * s**2 * 2 + r * s * 2 * s - r * s**2
    np.testing.assert_allclose((p.a_matrix @ s**2)[1:-1], exact[1:-1], rtol=1e-10)


def test_assemble_2d_constants_and_bilinear():
    prm = PUT_ON_AVERAGE_2D
    p = assemble_2d(prm, m=40)
    m = 40
    g = p.grids[0].points
    s1, s2 = np.meshgrid(g, g, indexing="ij")
    live = ~p.dirichlet_mask
    np.testing.assert_allclose((p.a_matrix @ np.ones(m * m))[live], -prm.r, rtol=1e-10)
    interior = np.zeros((m, m), dtype=bool)
    interior[1:-2, 1:-2] = True
    v = (p.a_matrix @ (s1 * s2).ravel()).reshape(m, m)
    expect = (prm.r + prm.rho * prm.sigma1 * prm.sigma2) * s1 * s2
    np.testing.assert_allclose(v[interior], expect[interior], rtol=1e-8)
    assert np.diff(p.a_matrix.indptr).max() <= 9


def test_assemble_2d_edges_and_corner():
    prm = PUT_ON_AVERAGE_2D
    p = assemble_2d(prm, m=30)
    a = p.a_matrix.toarray()
    m = 30
    corner = a[0]
    assert corner[0] == -prm.r and np.count_nonzero(corner) == 1
    mask = p.dirichlet_mask.reshape(m, m)
    assert mask[-1, :].all() and mask[:, -1].all() and not mask[:-1, :-1].any()
    assert not a[p.dirichlet_mask].any() and not p.u0[p.dirichlet_mask].any()
    # edge s1 = 0 couples only along s2
    for j in range(1, m - 1):
        cols = np.nonzero(a[j])[0]
        assert np.all(cols < m)


def test_assemble_2d_rho_zero_kronecker_sum():
    prm = MarketParams2D(0.3, 0.4, 0.0, 0.01, 0.5, 100.0, 500.0)
    p = assemble_2d(prm, m=25)
    g = p.grids[0]
    c1, _ = _convection_diffusion_1d(g.points, prm.sigma1, prm.r)
    c2, _ = _convection_diffusion_1d(g.points, prm.sigma2, prm.r)
    eye = sp.identity(25)
    expect = (sp.kron(c1, eye) + sp.kron(eye, c2) - prm.r * sp.identity(625)).toarray()
    expect[p.dirichlet_mask] = 0.0
    np.testing.assert_allclose(p.a_matrix.toarray(), expect, atol=1e-12)


def test_dump_coo(tmp_path):
    p = assemble_1d(PUT_1D, m=10)
    path = tmp_path / "a.txt"
    dump_coo(p.a_matrix, path)
    rows = np.loadtxt(path, ndmin=2)
    back = sp.coo_matrix((rows[:, 2], (rows[:, 0].astype(int), rows[:, 1].astype(int))), shape=(10, 10))
    np.testing.assert_allclose(back.toarray(), p.a_matrix.toarray())
