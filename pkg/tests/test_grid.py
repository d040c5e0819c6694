import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tfpolymer.grid import (
    BlockADRSolver,
    Grid2D,
    SolverError,
    advect,
    curl2,
    curl_of_scalar,
    derivative,
    divergence,
    gradient,
    laplacian,
    solve_block_adr,
    solve_helmholtz,
    solve_poisson_neumann,
)


def unit(n, bc_x="wall", bc_y="wall", **kw):
    return Grid2D(n, n, (0.0, 1.0), (0.0, 1.0), bc_x, bc_y, **kw)


def slope(hs, errs):
    return np.polyfit(np.log(hs), np.log(errs), 1)[0]


# --- geometry ---------------------------------------------------------------


def test_node_counts_and_weights():
    g = Grid2D(8, 4, (0.0, 2.0), (0.0, 1.0), "periodic", "wall")
    assert g.shape == (8, 5)
    assert g.dx == pytest.approx(0.25) and g.dy == pytest.approx(0.25)
    assert g.integrate(np.ones(g.shape)) == pytest.approx(2.0)
    assert g.wall_nodes[:, 0].all() and g.wall_nodes[:, -1].all() and not g.wall_nodes[:, 2].any()


@pytest.mark.parametrize("kw, match", [
    (dict(nx=3, ny=8), "at least 4"),
    (dict(nx=8, ny=8, bc_x="open"), "boundary type"),
    (dict(nx=8, ny=8, x_extent=(1.0, 0.0)), "increasing"),
])
def test_grid_validation(kw, match):
    with pytest.raises(ValueError, match=match):
        Grid2D(**kw)


def test_mask_validation():
    mask = np.zeros((8, 8), dtype=bool)
    mask[2:4, 0:2] = True
    g = Grid2D(8, 8, bc_x="periodic", bc_y="wall", mask=mask)
    assert g.solid_nodes.sum() == 3 * 3
    floating = np.zeros((8, 8), dtype=bool)
    floating[3:5, 3:5] = True
    with pytest.raises(ValueError, match="touch a wall"):
        Grid2D(8, 8, bc_x="periodic", bc_y="wall", mask=floating)
    ell = np.zeros((8, 8), dtype=bool)
    ell[0:3, 0] = True
    ell[0, 0:3] = True
    with pytest.raises(ValueError, match="rectangular"):
        Grid2D(8, 8, bc_x="wall", bc_y="wall", mask=ell)
    with pytest.raises(ValueError, match="shape"):
        Grid2D(8, 8, bc_x="wall", bc_y="wall", mask=np.zeros((9, 9), dtype=bool))


# --- operators ----------------------------------------------------------------


def test_laplacian_of_quadratic_is_exact():
    g = unit(10)
    X, Y = g.mesh()
    lap = laplacian(g, X**2 + Y**2, bc="dirichlet")
    np.testing.assert_allclose(lap[1:-1, 1:-1], 4.0, rtol=0, atol=1e-10)


@pytest.mark.parametrize("bc_x, bc_y", [("periodic", "periodic"), ("periodic", "wall"), ("wall", "wall")])
@pytest.mark.parametrize("bc", ["dirichlet", "neumann"])
def test_operators_annihilate_constants(bc_x, bc_y, bc):
    g = Grid2D(12, 10, (0.0, 1.0), (0.0, 2.0), bc_x, bc_y)
    c = np.full(g.shape, 2.5)
    assert np.all(gradient(g, c, bc) == 0.0)
    assert np.max(np.abs(laplacian(g, c, bc))) <= 1e-12 * g.size
    v = np.stack([c, -c])
    assert np.max(np.abs(divergence(g, v, bc))) <= 1e-12
    assert np.max(np.abs(curl2(g, v, bc))) <= 1e-12
    assert np.max(np.abs(advect(g, v, c, bc))) <= 1e-12


def test_advect_second_order_on_periodic_grid():
    errs, hs = [], []
    for n in (16, 32, 64):
        g = unit(n, "periodic", "periodic")
        X, _ = g.mesh()
        u = np.stack([np.ones(g.shape), np.zeros(g.shape)])
        errs.append(np.max(np.abs(advect(g, u, np.sin(2 * np.pi * X)) - 2 * np.pi * np.cos(2 * np.pi * X))))
        hs.append(g.dx)
    assert slope(hs, errs) == pytest.approx(2.0, abs=0.15)


def test_upwind_advection_is_first_order():
    errs, hs = [], []
    for n in (32, 64, 128):
        g = unit(n, "periodic", "periodic")
        X, _ = g.mesh()
        u = np.stack([np.ones(g.shape), np.zeros(g.shape)])
        errs.append(np.max(np.abs(advect(g, u, np.sin(2 * np.pi * X), upwind=True) - 2 * np.pi * np.cos(2 * np.pi * X))))
        hs.append(g.dx)
    assert slope(hs, errs) == pytest.approx(1.0, abs=0.15)


def test_laplacian_second_order_with_walls():
    errs, hs = [], []
    for n in (16, 32, 64):
        g = unit(n)
        X, Y = g.mesh()
        f = np.cos(np.pi * X) * np.cos(np.pi * Y)
        errs.append(np.max(np.abs(laplacian(g, f, "neumann") + 2 * np.pi**2 * f)))
        hs.append(g.dx)
    assert slope(hs, errs) == pytest.approx(2.0, abs=0.15)


def test_one_sided_wall_derivative_is_second_order():
    errs, hs = [], []
    for n in (16, 32, 64):
        g = unit(n)
        X, Y = g.mesh()
        errs.append(np.max(np.abs(derivative(g, np.exp(X + 2 * Y), 1) - 2 * np.exp(X + 2 * Y))))
        hs.append(g.dx)
    assert slope(hs, errs) == pytest.approx(2.0, abs=0.15)


def test_neumann_flux_data():
    # f = x^2 has outward normal derivatives 0 at x = 0 and 2 at x = 1
    g = unit(16)
    X, _ = g.mesh()
    gx = np.where(np.isclose(X, 1.0), 2.0, 0.0)
    np.testing.assert_allclose(laplacian(g, X**2, "neumann", flux=(gx, None)), 2.0, atol=1e-9)
    np.testing.assert_allclose(derivative(g, X**2, 0, "neumann", flux=gx), 2 * X, atol=1e-12)


def test_div_grad_is_the_wide_stencil():
    # centered first differences compose into the 2h stencil, not the compact Laplacian
    g = unit(16, "periodic", "periodic")
    rng = np.random.default_rng(0)
    f = rng.standard_normal(g.shape)
    wide = sum((np.roll(f, 2, ax) - 2 * f + np.roll(f, -2, ax)) / (2 * h) ** 2 for ax, h in enumerate(g.spacing))
    np.testing.assert_allclose(divergence(g, gradient(g, f)), wide, atol=1e-10)
    X, Y = g.mesh()
    smooth = np.sin(2 * np.pi * X) * np.cos(2 * np.pi * Y)
    lap = laplacian(g, smooth)
    assert np.max(np.abs(divergence(g, gradient(g, smooth)) - lap)) < 0.15 * np.max(np.abs(lap))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_divergence_adjoint_on_periodic_grids(seed):
    g = Grid2D(12, 9, (0.0, 1.0), (0.0, 0.7), "periodic", "periodic")
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(g.shape)
    v = rng.standard_normal((2, *g.shape))
    lhs = g.integrate(np.sum(gradient(g, f) * v, axis=0))
    rhs = -g.integrate(f * divergence(g, v))
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(lhs)))


def test_curl_curl_identity():
    # curl curl u = grad div u - Lap u; for divergence-free u it is -Lap u
    g = unit(64, "periodic", "periodic")
    X, Y = g.mesh()
    k = 2 * np.pi
    u = np.stack([np.sin(k * X) * np.cos(k * Y), -np.cos(k * X) * np.sin(k * Y)])
    cc = curl_of_scalar(g, curl2(g, u))
    np.testing.assert_allclose(cc, 2 * k**2 * u, atol=0.02 * 2 * k**2)


# --- Poisson ----------------------------------------------------------------


def test_poisson_manufactured_second_order():
    errs, hs = [], []
    for n in (16, 32, 64):
        g = unit(n)
        X, Y = g.mesh()
        exact = np.cos(np.pi * X) * np.cos(np.pi * Y)
        p, rep = solve_poisson_neumann(g, -2 * np.pi**2 * exact)
        assert rep.converged and abs(g.mean(p)) <= 1e-12
        errs.append(np.max(np.abs(p - exact)))
        hs.append(g.dx)
    assert slope(hs, errs) == pytest.approx(2.0, abs=0.1)


def test_poisson_trivial_and_incompatible_data():
    g = unit(16)
    p, rep = solve_poisson_neumann(g, np.zeros(g.shape))
    assert np.all(p == 0) and rep.converged
    p, rep = solve_poisson_neumann(g, np.full(g.shape, 3.0))
    assert np.max(np.abs(p)) <= 1e-10
    assert rep.defect == pytest.approx(3.0)


def test_poisson_with_flux_data():
    # p = x^2 / 2 - 1/6: Lap p = 1, dp/dn = 1 on the x = 1 wall, 0 elsewhere
    g = unit(24)
    X, _ = g.mesh()
    gx = np.where(np.isclose(X, 1.0), 1.0, 0.0)
    p, rep = solve_poisson_neumann(g, np.ones(g.shape), flux=(gx, None))
    exact = X**2 / 2
    exact -= g.mean(exact)
    np.testing.assert_allclose(p, exact, atol=1e-9)


def test_poisson_report_residual_is_independent():
    g = unit(32, "periodic", "wall")
    X, Y = g.mesh()
    rhs = np.sin(2 * np.pi * X) * np.cos(np.pi * Y)
    p, rep = solve_poisson_neumann(g, rhs, tol=1e-10)
    w = g.weights
    res = np.linalg.norm(w * (laplacian(g, p) - rhs)) / np.linalg.norm(w * rhs)
    assert rep.converged and res <= 2e-10


def test_poisson_iteration_cap_reports_failure():
    g = unit(32)
    X, Y = g.mesh()
    _, rep = solve_poisson_neumann(g, np.cos(np.pi * X) * np.cos(3 * np.pi * Y), tol=1e-300, maxiter=1)
    assert not rep.converged
    with pytest.raises(SolverError, match="did not converge"):
        rep.raise_if_failed("pressure")


# --- Helmholtz --------------------------------------------------------------


def test_helmholtz_zero_kappa_is_division():
    g = unit(8, "periodic", "periodic")
    rhs = np.random.default_rng(1).standard_normal(g.shape)
    u, rep = solve_helmholtz(g, 4.0, 0.0, rhs)
    np.testing.assert_array_equal(u, rhs / 4.0)


def test_helmholtz_zero_data():
    g = unit(8)
    u, _ = solve_helmholtz(g, 1.0, 1.0, np.zeros((2, *g.shape)))
    assert np.all(u == 0)


@pytest.mark.parametrize("bc", ["dirichlet", "neumann"])
def test_helmholtz_manufactured_second_order(bc):
    errs, hs = [], []
    for n in (16, 32, 64):
        g = unit(n)
        X, Y = g.mesh()
        if bc == "dirichlet":
            exact = np.sin(2 * np.pi * X) * np.sin(2 * np.pi * Y)
        else:
            exact = np.cos(2 * np.pi * X) * np.cos(2 * np.pi * Y)
        u, rep = solve_helmholtz(g, 1.0, 1.0, (1 + 8 * np.pi**2) * exact, bc=bc)
        assert rep.converged
        errs.append(np.max(np.abs(u - exact)))
        hs.append(g.dx)
    assert slope(hs, errs) == pytest.approx(2.0, abs=0.15)


def test_helmholtz_dirichlet_boundary_values_and_solid_nodes():
    mask = np.zeros((16, 16), dtype=bool)
    mask[4:7, 0:2] = True
    g = Grid2D(16, 16, bc_x="periodic", bc_y="wall", mask=mask)
    u, _ = solve_helmholtz(g, 1.0, 0.1, np.ones(g.shape), boundary=np.full(g.shape, 0.3))
    assert np.all(u[g.solid_nodes] == 0.0)
    free_wall = g.wall_nodes & ~g.solid_nodes
    np.testing.assert_array_equal(u[free_wall], 0.3)


def test_helmholtz_rejects_bad_coefficients():
    with pytest.raises(ValueError):
        solve_helmholtz(unit(8), 0.0, 1.0, np.zeros((9, 9)))


# --- block ADR --------------------------------------------------------------


def test_block_adr_identity_scaled():
    g = unit(8)
    rhs = np.random.default_rng(2).standard_normal((4, *g.shape))
    x, rep = solve_block_adr(g, 2.0, 0.0, 0.0, g.zeros(2), np.zeros((4, 4, *g.shape)), rhs)
    np.testing.assert_allclose(x, rhs / 2.0, rtol=1e-13)
    assert rep.iterations <= 1


def test_block_adr_pure_diffusion_matches_helmholtz():
    g = unit(16)
    X, Y = g.mesh()
    rhs = np.stack([np.cos(np.pi * X), np.cos(np.pi * Y), X * Y, np.ones(g.shape)])
    x, _ = solve_block_adr(g, 1.5, 0.2, 0.5, g.zeros(2), np.zeros((4, 4, *g.shape)), rhs)
    ref, _ = solve_helmholtz(g, 1.5, 0.1, rhs, bc="neumann")
    np.testing.assert_allclose(x, ref, atol=1e-9)


def test_block_adr_reaction_only_matches_dense_nodewise_solve():
    g = unit(8)
    rng = np.random.default_rng(3)
    A = rng.standard_normal((4, 4, *g.shape))
    rhs = rng.standard_normal((4, *g.shape))
    b0, eta = 1.5, 0.1
    x, rep = solve_block_adr(g, b0, eta, 0.0, g.zeros(2), A, rhs, tol=1e-13)
    M = b0 * np.eye(4)[..., None, None] - eta * A
    ref = np.linalg.solve(np.moveaxis(M, (0, 1), (-2, -1)), np.moveaxis(rhs, 0, -1)[..., None])[..., 0]
    np.testing.assert_allclose(x, np.moveaxis(ref, -1, 0), atol=1e-10)


def test_block_adr_full_operator_residual():
    g = unit(16, "periodic", "wall")
    X, Y = g.mesh()
    rng = np.random.default_rng(4)
    u = np.stack([np.sin(np.pi * Y), 0.3 * np.cos(2 * np.pi * X)])
    A = 0.5 * rng.standard_normal((4, 4, *g.shape))
    rhs = rng.standard_normal((4, *g.shape))
    solver = BlockADRSolver(g, 4)
    x, rep = solver.solve(1.5, 0.05, 0.1, u, A, rhs)
    Op = solver.operator(1.5, 0.05, 0.1, u, A)
    assert rep.converged
    assert np.linalg.norm(Op @ x.ravel() - rhs.ravel()) <= 2e-10 * np.linalg.norm(rhs)
