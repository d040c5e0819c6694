"""Uniform node-centered 2D grids, finite-difference operators and linear solvers.

Fields are plain arrays of shape ``(..., Nx, Ny)`` over the grid nodes;
leading axes index components.  A periodic axis with n cells has n nodes
(the node at the far end is identified with node 0); a wall axis has n + 1
nodes including both boundary nodes.

Wall closures come in two flavors, selected by ``bc``:

``"dirichlet"``
    for fields whose wall values are prescribed (velocity); derivatives at
    wall nodes use one-sided second-order stencils.
``"neumann"``
    for fields with prescribed outward normal derivative (pressure, mode
    fields); a mirror ghost f_{-1} = f_1 + 2 h g carries the flux data g.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.ndimage
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Grid2D",
    "LinearSolveReport",
    "SolverError",
    "gradient",
    "divergence",
    "laplacian",
    "advect",
    "curl2",
    "curl_of_scalar",
    "derivative",
    "solve_poisson_neumann",
    "solve_helmholtz",
    "solve_block_adr",
    "BlockADRSolver",
]

log = logging.getLogger(__name__)

_BCS = ("periodic", "wall")
_FIELD_BCS = ("dirichlet", "neumann")


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Uniform structured grid on ``x_extent`` x ``y_extent`` with ``nx`` x ``ny`` cells.

    ``mask`` marks solid cells (shape ``(nx, ny)``); solid cells must form
    axis-aligned blocks attached to a wall.  Velocity vanishes on every node
    touching a solid cell.
    """

    nx: int
    ny: int
    x_extent: tuple[float, float] = (0.0, 1.0)
    y_extent: tuple[float, float] = (0.0, 1.0)
    bc_x: str = "periodic"
    bc_y: str = "periodic"
    mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"need at least 4 cells per direction, got ({self.nx}, {self.ny})")
        for bc in (self.bc_x, self.bc_y):
            if bc not in _BCS:
                raise ValueError(f"boundary type must be one of {_BCS}, got {bc!r}")
        if not (self.x_extent[1] > self.x_extent[0] and self.y_extent[1] > self.y_extent[0]):
            raise ValueError("extents must be increasing intervals")
        if self.mask is not None:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != (self.nx, self.ny):
                raise ValueError(f"mask must have shape ({self.nx}, {self.ny}), got {mask.shape}")
            _check_mask_blocks(mask, self.bc_x, self.bc_y)
            mask.setflags(write=False)
            object.__setattr__(self, "mask", mask)

    # geometry ---------------------------------------------------------------

    @property
    def spacing(self) -> tuple[float, float]:
        return ((self.x_extent[1] - self.x_extent[0]) / self.nx, (self.y_extent[1] - self.y_extent[0]) / self.ny)

    @property
    def dx(self) -> float:
        return self.spacing[0]

    @property
    def dy(self) -> float:
        return self.spacing[1]

    @property
    def shape(self) -> tuple[int, int]:
        """Node counts (Nx, Ny)."""
        return (self.nx + (self.bc_x == "wall"), self.ny + (self.bc_y == "wall"))

    @property
    def size(self) -> int:
        return self.shape[0] * self.shape[1]

    def axis_bc(self, axis: int) -> str:
        return (self.bc_x, self.bc_y)[axis]

    @cached_property
    def x(self) -> np.ndarray:
        return self.x_extent[0] + self.dx * np.arange(self.shape[0])

    @cached_property
    def y(self) -> np.ndarray:
        return self.y_extent[0] + self.dy * np.arange(self.shape[1])

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    def zeros(self, *components: int) -> np.ndarray:
        return np.zeros((*components, *self.shape))

    @cached_property
    def wall_nodes(self) -> np.ndarray:
        """Boolean node array of wall boundary nodes."""
        out = np.zeros(self.shape, dtype=bool)
        if self.bc_x == "wall":
            out[[0, -1], :] = True
        if self.bc_y == "wall":
            out[:, [0, -1]] = True
        return out

    @cached_property
    def solid_nodes(self) -> np.ndarray:
        """Nodes touching a solid cell."""
        out = np.zeros(self.shape, dtype=bool)
        if self.mask is None:
            return out
        Nx, Ny = self.shape
        for i, j in zip(*np.nonzero(self.mask)):
            for di in (0, 1):
                for dj in (0, 1):
                    out[(i + di) % Nx, (j + dj) % Ny] = True
        return out

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights per node."""
        wx = np.full(self.shape[0], self.dx)
        wy = np.full(self.shape[1], self.dy)
        if self.bc_x == "wall":
            wx[[0, -1]] *= 0.5
        if self.bc_y == "wall":
            wy[[0, -1]] *= 0.5
        return np.outer(wx, wy)

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    def integrate(self, f) -> np.ndarray | float:
        out = np.sum(np.asarray(f) * self.weights, axis=(-2, -1))
        return float(out) if np.ndim(out) == 0 else out

    def mean(self, f):
        return self.integrate(f) / self.area

    def l2_norm(self, f) -> float:
        """L2 norm over the domain, summed over any leading component axes."""
        f = np.asarray(f)
        return float(np.sqrt(np.sum(f * f * self.weights)))

    # operator matrices --------------------------------------------------------

    def _d1(self, axis: int, bc: str) -> sp.csr_matrix:
        return self._matrices[("d1", axis, bc)]

    def _d2(self, axis: int, bc: str) -> sp.csr_matrix:
        return self._matrices[("d2", axis, bc)]

    @cached_property
    def _matrices(self) -> dict:
        mats = {}
        Nx, Ny = self.shape
        eye = (sp.identity(Nx, format="csr"), sp.identity(Ny, format="csr"))
        for axis in (0, 1):
            n, h, kind = self.shape[axis], self.spacing[axis], self.axis_bc(axis)
            for bc in _FIELD_BCS:
                d1, d2 = _one_dimensional(n, h, kind, bc)
                if axis == 0:
                    mats[("d1", 0, bc)] = sp.kron(d1, eye[1], format="csr")
                    mats[("d2", 0, bc)] = sp.kron(d2, eye[1], format="csr")
                else:
                    mats[("d1", 1, bc)] = sp.kron(eye[0], d1, format="csr")
                    mats[("d2", 1, bc)] = sp.kron(eye[0], d2, format="csr")
        for bc in _FIELD_BCS:
            mats[("lap", bc)] = (mats[("d2", 0, bc)] + mats[("d2", 1, bc)]).tocsr()
        return mats

    def laplacian_matrix(self, bc: str = "neumann") -> sp.csr_matrix:
        _check_field_bc(bc)
        return self._matrices[("lap", bc)]

    def derivative_matrix(self, axis: int, bc: str = "neumann") -> sp.csr_matrix:
        _check_field_bc(bc)
        return self._d1(axis, bc)


def _check_field_bc(bc: str) -> None:
    if bc not in _FIELD_BCS:
        raise ValueError(f"field boundary condition must be one of {_FIELD_BCS}, got {bc!r}")


def _check_mask_blocks(mask: np.ndarray, bc_x: str, bc_y: str) -> None:
    # every solid block is a rectangle touching a wall
    labels, count = scipy.ndimage.label(mask)
    nx, ny = mask.shape
    for k in range(1, count + 1):
        ii, jj = np.nonzero(labels == k)
        i0, i1, j0, j1 = ii.min(), ii.max(), jj.min(), jj.max()
        if not mask[i0 : i1 + 1, j0 : j1 + 1].all() or len(ii) != (i1 - i0 + 1) * (j1 - j0 + 1):
            raise ValueError("solid cells must form axis-aligned rectangular blocks")
        touches = (bc_x == "wall" and (i0 == 0 or i1 == nx - 1)) or (bc_y == "wall" and (j0 == 0 or j1 == ny - 1))
        if not touches:
            raise ValueError("solid blocks must touch a wall")


def _one_dimensional(n: int, h: float, kind: str, bc: str):
    if kind == "periodic":
        ones = np.ones(n)
        d1 = sp.diags([ones[:-1], -ones[:-1]], [1, -1], shape=(n, n), format="lil")
        d1[0, n - 1] = -1.0
        d1[n - 1, 0] = 1.0
        d2 = sp.diags([ones[:-1], -2 * ones, ones[:-1]], [1, 0, -1], shape=(n, n), format="lil")
        d2[0, n - 1] = 1.0
        d2[n - 1, 0] = 1.0
        return (d1 / (2 * h)).tocsr(), (d2 / h**2).tocsr()
    ones = np.ones(n)
    d1 = sp.diags([ones[:-1], -ones[:-1]], [1, -1], shape=(n, n), format="lil")
    d2 = sp.diags([ones[:-1], -2 * ones, ones[:-1]], [1, 0, -1], shape=(n, n), format="lil")
    for r in (0, n - 1):
        d1[r, :] = 0.0
        d2[r, :] = 0.0
    if bc == "dirichlet":
        d1[0, :3] = [-3.0, 4.0, -1.0]
        d1[n - 1, n - 3 :] = [1.0, -4.0, 3.0]
        d2[0, :4] = [2.0, -5.0, 4.0, -1.0]
        d2[n - 1, n - 4 :] = [-1.0, 4.0, -5.0, 2.0]
    else:
        d2[0, :2] = [-2.0, 2.0]
        d2[n - 1, n - 2 :] = [2.0, -2.0]
    return (d1 / (2 * h)).tocsr(), (d2 / h**2).tocsr()


def _apply(M: sp.spmatrix, f: np.ndarray) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    flat = f.reshape(-1, f.shape[-2] * f.shape[-1])
    return (M @ flat.T).T.reshape(f.shape)


def _flux_terms(grid: Grid2D, axis: int, flux, order: int) -> np.ndarray:
    """Boundary contribution of outward normal derivative data to d/dx_axis or d2/dx_axis2."""
    g = np.asarray(flux, dtype=float)
    out = np.zeros_like(g)
    if grid.axis_bc(axis) != "wall":
        return out
    h = grid.spacing[axis]
    lo = (Ellipsis, 0, slice(None)) if axis == 0 else (Ellipsis, slice(None), 0)
    hi = (Ellipsis, -1, slice(None)) if axis == 0 else (Ellipsis, slice(None), -1)
    if order == 1:
        out[lo] = -g[lo]
        out[hi] = g[hi]
    else:
        out[lo] = 2.0 * g[lo] / h
        out[hi] = 2.0 * g[hi] / h
    return out


# ----------------------------------------------------------------------------
# Operators
# ----------------------------------------------------------------------------


def derivative(grid: Grid2D, f, axis: int, bc: str = "dirichlet", flux=None) -> np.ndarray:
    """First derivative along ``axis``; ``flux`` is the outward normal derivative for ``bc="neumann"``."""
    out = _apply(grid.derivative_matrix(axis, bc), f)
    if bc == "neumann" and flux is not None:
        out = out + _flux_terms(grid, axis, np.broadcast_to(flux, out.shape), 1)
    return out


def gradient(grid: Grid2D, f, bc: str = "dirichlet", flux=None) -> np.ndarray:
    """Gradient of a scalar (or componentwise) field; new axis 0 holds (d/dx, d/dy).

    ``flux`` is a pair (g_x, g_y) of outward normal derivatives on the x- and y-walls.
    """
    gx, gy = (None, None) if flux is None else flux
    return np.stack([derivative(grid, f, 0, bc, gx), derivative(grid, f, 1, bc, gy)])


def divergence(grid: Grid2D, v, bc: str = "dirichlet") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return derivative(grid, v[0], 0, bc) + derivative(grid, v[1], 1, bc)


def laplacian(grid: Grid2D, f, bc: str = "neumann", flux=None) -> np.ndarray:
    """Compact five-point Laplacian; ``flux`` = (g_x, g_y) for ``bc="neumann"``."""
    out = _apply(grid.laplacian_matrix(bc), f)
    if bc == "neumann" and flux is not None:
        for axis, g in enumerate(flux):
            if g is not None:
                out = out + _flux_terms(grid, axis, np.broadcast_to(g, out.shape), 2)
    return out


def advect(grid: Grid2D, u, f, bc: str = "dirichlet", upwind: bool = False) -> np.ndarray:
    """(u . grad) f for scalar or componentwise ``f``; ``upwind`` selects first-order upwinding."""
    u = np.asarray(u, dtype=float)
    f = np.asarray(f, dtype=float)
    if not upwind:
        return u[0] * derivative(grid, f, 0, bc) + u[1] * derivative(grid, f, 1, bc)
    out = np.zeros_like(f)
    for axis in (0, 1):
        h = grid.spacing[axis]
        ax = f.ndim - 2 + axis
        fwd = (np.roll(f, -1, axis=ax) - f) / h
        bwd = (f - np.roll(f, 1, axis=ax)) / h
        if grid.axis_bc(axis) == "wall":
            central = derivative(grid, f, axis, bc)
            edge = [slice(None)] * f.ndim
            for idx in (0, -1):
                edge[ax] = idx
                fwd[tuple(edge)] = central[tuple(edge)]
                bwd[tuple(edge)] = central[tuple(edge)]
        out = out + np.where(u[axis] > 0, u[axis] * bwd, u[axis] * fwd)
    return out


def curl2(grid: Grid2D, u, bc: str = "dirichlet") -> np.ndarray:
    """Scalar curl d u_2/dx - d u_1/dy."""
    u = np.asarray(u, dtype=float)
    return derivative(grid, u[1], 0, bc) - derivative(grid, u[0], 1, bc)


def curl_of_scalar(grid: Grid2D, w, bc: str = "dirichlet") -> np.ndarray:
    """Vector curl (d w/dy, -d w/dx); curl_of_scalar(curl2(u)) is curl curl u."""
    return np.stack([derivative(grid, w, 1, bc), -derivative(grid, w, 0, bc)])


# ----------------------------------------------------------------------------
# Solvers
# ----------------------------------------------------------------------------


class SolverError(RuntimeError):
    """A linear solve missed its tolerance; ``report`` holds the diagnostics."""

    def __init__(self, message: str, report: "LinearSolveReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class LinearSolveReport:
    iterations: int
    final_residual: float
    converged: bool
    residual_history: tuple = field(default=(), repr=False)
    defect: float = 0.0

    def raise_if_failed(self, what: str) -> "LinearSolveReport":
        if not self.converged:
            raise SolverError(f"{what} did not converge: relative residual {self.final_residual:.3e} "
                              f"after {self.iterations} iterations", self)
        return self


def _krylov(A, b, M, tol: float, maxiter: int, method: str, x0=None, project=None) -> tuple[np.ndarray, LinearSolveReport]:
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), LinearSolveReport(0, 0.0, True)
    history: list[float] = []
    count = [0]

    def cb(arg):
        count[0] += 1
        if np.ndim(arg) == 0:
            history.append(float(arg))
        else:
            history.append(float(np.linalg.norm(b - A @ arg) / bnorm))

    rtol = tol
    for _ in range(4):
        # the Krylov stopping test uses the preconditioned residual; retry until the true one meets tol
        if method == "cg":
            x, _ = spla.cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=M, callback=cb)
        else:
            x, _ = spla.gmres(A, b, x0=x0, rtol=rtol, atol=0.0, restart=60, maxiter=maxiter, M=M,
                              callback=cb, callback_type="pr_norm")
        if project is not None:
            x = project(x)
        res = float(np.linalg.norm(b - A @ x) / bnorm)
        if res <= tol or count[0] >= maxiter:
            break
        x0, rtol = x, rtol * 0.1
    return x, LinearSolveReport(count[0], res, bool(res <= tol), tuple(history))


class _PoissonSolver:
    """Neumann/periodic Poisson problem in trapezoid-weighted symmetric form."""

    def __init__(self, grid: Grid2D):
        self.grid = grid
        w = grid.weights.ravel()
        self.w = w
        L = grid.laplacian_matrix("neumann")
        self.A = (-sp.diags(w) @ L).tocsr()
        pinned = self.A.tolil()
        pinned[0, :] = 0.0
        pinned[:, 0] = 0.0
        pinned[0, 0] = 1.0
        self.lu = spla.splu(pinned.tocsc())
        self.M = spla.LinearOperator(self.A.shape, matvec=self._precondition)

    def _precondition(self, r):
        r = np.array(r, dtype=float).ravel()
        r[0] = 0.0
        return self._gauge(self.lu.solve(r))

    def _gauge(self, p):
        return p - np.dot(self.w, p) / self.w.sum()

    def solve(self, rhs, flux, tol: float, maxiter: int):
        g = self.grid
        rhs = np.asarray(rhs, dtype=float)
        bterm = np.zeros(g.shape)
        if flux is not None:
            for axis, gv in enumerate(flux):
                if gv is not None:
                    bterm += _flux_terms(g, axis, np.broadcast_to(gv, g.shape), 2)
        # Delta p = rhs  <=>  -W L0 p = -W (rhs - bterm)
        b = -(self.w * (rhs - bterm).ravel())
        defect = b.sum() / self.w.sum()
        if abs(defect) > 1e-12 * max(1.0, np.abs(b).max() / self.w.max()):
            log.info("Poisson data incompatible with Neumann conditions; removed mean defect %.3e", defect)
        b = b - defect * self.w
        x, rep = _krylov(self.A, b, self.M, tol, maxiter, "cg", project=self._gauge)
        return x.reshape(g.shape), LinearSolveReport(rep.iterations, rep.final_residual, rep.converged,
                                                     rep.residual_history, float(-defect))


class _HelmholtzSolver:
    """sigma u - kappa Lap u = rhs for one boundary flavor."""

    def __init__(self, grid: Grid2D, sigma: float, kappa: float, bc: str):
        self.grid, self.sigma, self.kappa, self.bc = grid, sigma, kappa, bc
        N = grid.size
        L = grid.laplacian_matrix(bc)
        if bc == "dirichlet":
            fixed = (grid.wall_nodes | grid.solid_nodes).ravel()
        else:
            fixed = np.zeros(N, dtype=bool)
        self.free = np.flatnonzero(~fixed)
        self.fixed = np.flatnonzero(fixed)
        H = (sigma * sp.identity(N, format="csr") - kappa * L).tocsr()
        if bc == "neumann":
            w = grid.weights.ravel()
            self.w = w[self.free]
        else:
            self.w = np.ones(len(self.free))
        self.H_ff = (sp.diags(self.w) @ H[self.free][:, self.free]).tocsr()
        self.H_fb = H[self.free][:, self.fixed].tocsr()
        self.lu = spla.splu(self.H_ff.tocsc())
        self.M = spla.LinearOperator(self.H_ff.shape, matvec=self.lu.solve)

    def solve(self, rhs, boundary, flux, tol: float, maxiter: int):
        g = self.grid
        rhs = np.asarray(rhs, dtype=float)
        if self.bc == "neumann" and flux is not None:
            for axis, gv in enumerate(flux):
                if gv is not None:
                    rhs = rhs + self.kappa * _flux_terms(g, axis, np.broadcast_to(gv, g.shape), 2)
        flat = rhs.ravel()
        u = np.zeros(g.size)
        b = flat[self.free]
        if self.fixed.size:
            ub = np.zeros(g.size) if boundary is None else np.asarray(boundary, dtype=float).ravel()
            ub = ub.copy()
            ub[g.solid_nodes.ravel()] = 0.0
            u[self.fixed] = ub[self.fixed]
            b = b - self.H_fb @ u[self.fixed]
        x, rep = _krylov(self.H_ff, self.w * b, self.M, tol, maxiter, "cg")
        u[self.free] = x
        return u.reshape(g.shape), rep


def _cached(grid: Grid2D, key, factory):
    cache = grid.__dict__.setdefault("_solver_cache", {})
    if key not in cache:
        if len(cache) > 32:
            cache.clear()
        cache[key] = factory()
    return cache[key]


def solve_poisson_neumann(grid: Grid2D, rhs, flux=None, tol: float = 1e-10, maxiter: int | None = None):
    """Solve Delta p = rhs with outward normal derivative data ``flux`` = (g_x, g_y).

    Incompatible data are projected onto the compatible subspace by removing
    the weighted mean defect (reported as ``report.defect``).  Returns the
    mean-zero solution and a :class:`LinearSolveReport`.
    """
    solver = _cached(grid, ("poisson",), lambda: _PoissonSolver(grid))
    return solver.solve(rhs, flux, tol, maxiter or 10 * (grid.nx + grid.ny))


def solve_helmholtz(grid: Grid2D, sigma: float, kappa_coeff: float, rhs, bc: str = "dirichlet",
                    boundary=None, flux=None, tol: float = 1e-10, maxiter: int | None = None):
    """Solve sigma u - kappa_coeff Lap u = rhs for a scalar or componentwise field.

    With ``bc="dirichlet"`` wall (and solid) nodes take the values of
    ``boundary`` (zero by default); with ``bc="neumann"`` the outward normal
    derivative is ``flux`` = (g_x, g_y) (zero by default).
    """
    if sigma <= 0 or kappa_coeff < 0:
        raise ValueError("need sigma > 0 and kappa_coeff >= 0")
    _check_field_bc(bc)
    rhs = np.asarray(rhs, dtype=float)
    if kappa_coeff == 0.0:
        out = rhs / sigma
        if bc == "dirichlet":
            fixed = grid.wall_nodes | grid.solid_nodes
            bnd = np.zeros_like(rhs) if boundary is None else np.broadcast_to(boundary, rhs.shape)
            out = np.where(fixed, bnd, out)
            out = np.where(grid.solid_nodes, 0.0, out)
        return out, LinearSolveReport(0, 0.0, True)
    solver = _cached(grid, ("helmholtz", float(sigma), float(kappa_coeff), bc),
                     lambda: _HelmholtzSolver(grid, float(sigma), float(kappa_coeff), bc))
    maxiter = maxiter or 10 * (grid.nx + grid.ny)
    if rhs.ndim == 2:
        return solver.solve(rhs, boundary, flux, tol, maxiter)
    lead = rhs.shape[:-2]
    out = np.empty_like(rhs)
    reports = []
    bnd = None if boundary is None else np.broadcast_to(boundary, rhs.shape)
    for idx in np.ndindex(*lead):
        fl = None if flux is None else tuple(None if gv is None else np.broadcast_to(gv, rhs.shape)[idx] for gv in flux)
        out[idx], rep = solver.solve(rhs[idx], None if bnd is None else bnd[idx], fl, tol, maxiter)
        reports.append(rep)
    worst = max(reports, key=lambda r: r.final_residual)
    return out, LinearSolveReport(sum(r.iterations for r in reports), worst.final_residual,
                                  all(r.converged for r in reports))


class BlockADRSolver:
    """(b0 + eta [(u . grad) - eps Lap - A]) Phi = rhs for a C-component mode field.

    Homogeneous Neumann on every component.  ``reaction`` holds the per-node
    coupling matrix A with shape (C, C, Nx, Ny).  Solved by restarted GMRES,
    preconditioned with the decoupled constant-coefficient operator
    b0 - eta eps Lap - eta diag(relaxation) factorized once per coefficient set.
    """

    def __init__(self, grid: Grid2D, n_components: int):
        self.grid = grid
        self.C = n_components
        self.Dx = grid.derivative_matrix(0, "neumann")
        self.Dy = grid.derivative_matrix(1, "neumann")
        self.L = grid.laplacian_matrix("neumann")
        self._pre: dict = {}

    def operator(self, b0: float, eta: float, eps: float, velocity, reaction) -> sp.csr_matrix:
        g, C, N = self.grid, self.C, self.grid.size
        u = np.asarray(velocity, dtype=float).reshape(2, N)
        R = np.asarray(reaction, dtype=float).reshape(C, C, N)
        scalar = (b0 * sp.identity(N) + eta * (sp.diags(u[0]) @ self.Dx + sp.diags(u[1]) @ self.Dy) - eta * eps * self.L)
        blocks = [[None] * C for _ in range(C)]
        for i in range(C):
            for j in range(C):
                coupling = R[i, j]
                term = sp.diags(-eta * coupling) if np.any(coupling != 0) else None
                if i == j:
                    blocks[i][j] = scalar if term is None else scalar + term
                else:
                    blocks[i][j] = term
        return sp.bmat(blocks, format="csr")

    def _preconditioner(self, b0, eta, eps, relaxation):
        key = (float(b0), float(eta), float(eps), tuple(float(r) for r in relaxation))
        if key not in self._pre:
            if len(self._pre) > 16:
                self._pre.clear()
            N = self.grid.size
            factors = {}
            for r in set(key[3]):
                op = (b0 - eta * r) * sp.identity(N) - eta * eps * self.L
                factors[r] = spla.splu(op.tocsc())
            self._pre[key] = [factors[r] for r in key[3]]
        lus = self._pre[key]
        N = self.grid.size

        def apply(v):
            v = np.asarray(v).reshape(self.C, N)
            return np.concatenate([lu.solve(v[c]) for c, lu in enumerate(lus)])

        return spla.LinearOperator((self.C * N, self.C * N), matvec=apply)

    def solve(self, b0: float, eta: float, eps: float, velocity, reaction, rhs, relaxation=None, x0=None,
              tol: float = 1e-10, maxiter: int | None = None):
        C, N = self.C, self.grid.size
        rhs = np.asarray(rhs, dtype=float)
        if relaxation is None:
            R = np.asarray(reaction, dtype=float)
            relaxation = [float(np.mean(R[c, c])) for c in range(C)]
        A = self.operator(b0, eta, eps, velocity, reaction)
        M = self._preconditioner(b0, eta, eps, relaxation)
        # maxiter counts GMRES restart cycles of 60 inner steps
        x, rep = _krylov(A, rhs.ravel(), M, tol, maxiter or 20, "gmres",
                         x0=None if x0 is None else np.asarray(x0, dtype=float).ravel())
        return x.reshape(rhs.shape), rep


def solve_block_adr(grid: Grid2D, b0: float, eta: float, eps: float, velocity, reaction, rhs,
                    relaxation=None, tol: float = 1e-10):
    """Functional front end of :class:`BlockADRSolver`."""
    C = np.asarray(rhs).shape[0]
    solver = _cached(grid, ("adr", C), lambda: BlockADRSolver(grid, C))
    return solver.solve(b0, eta, eps, velocity, reaction, rhs, relaxation, tol=tol)
