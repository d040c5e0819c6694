"""Macroscopic Fokker-Planck step for the closure modes with memory.

The mode field Phi (3d-2 components) obeys d/dt Phi + L Dt Phi = 0 with
L = (u . grad) - eps Lap - A(grad u) and Dt the compressed Riemann-Liouville
derivative sum_k (-lambda_k Phi_k + w_k Phi).  One BDF step reads

    (b0 + eta L) Phi^{n+1} = -sum_j b_j (Phi^{n+1-j} + sum_k eta_k L Phi_k^{n+1-j}),

after which the fractional modes Phi_k are pushed forward explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bdf import BDFScheme
from .grid import BlockADRSolver, Grid2D, LinearSolveReport, advect, gradient, laplacian
from .hermite import ClosureOperator, extra_stress_from_modes
from .kernel import (
    KernelApproximation,
    approx_fractional_derivative,
    fractional_coefficients,
    mode_push_forward,
    trapezoid_coefficients,
)

__all__ = [
    "PolymerState",
    "velocity_gradient",
    "assemble_coupling",
    "apply_spatial_operator",
    "mfp_step",
    "mfp_trapezoid_start",
    "push_forward",
    "polymer_stress",
]


@dataclass
class PolymerState:
    """Mode field, fractional modes and their newest-first histories."""

    grid: Grid2D
    closure: ClosureOperator
    kernel: KernelApproximation
    epsilon: float
    gamma: float
    phi: np.ndarray
    frac_modes: np.ndarray
    phi_hist: list
    modes_hist: list
    g: int = 2
    t: float = 0.0
    solver: BlockADRSolver = field(default=None, repr=False)
    reports: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.closure.d != 2:
            raise ValueError("the grid solver is two-dimensional; use a d = 2 closure")
        if self.solver is None:
            self.solver = BlockADRSolver(self.grid, self.closure.n_modes)

    @classmethod
    def at_rest(cls, grid: Grid2D, closure: ClosureOperator, kernel: KernelApproximation, epsilon: float,
                gamma: float, g: int = 2) -> "PolymerState":
        """Equilibrium phi = (1, 0, ..., 0) with zero fractional modes and zero-filled histories."""
        phi = grid.zeros(closure.n_modes)
        phi[0] = 1.0
        modes = np.zeros((kernel.m, *phi.shape))
        return cls(grid, closure, kernel, epsilon, gamma, phi, modes,
                   [phi.copy() for _ in range(g)], [modes.copy() for _ in range(g)], g)

    @classmethod
    def from_modes(cls, grid: Grid2D, closure: ClosureOperator, kernel: KernelApproximation, epsilon: float,
                   gamma: float, phi0, g: int = 2) -> "PolymerState":
        """Nontrivial initial data; fractional modes start at zero."""
        phi = np.array(phi0, dtype=float)
        modes = np.zeros((kernel.m, *phi.shape))
        return cls(grid, closure, kernel, epsilon, gamma, phi, modes, [phi.copy()], [modes.copy()], g)

    @property
    def mass_drift(self) -> float:
        return float(np.max(np.abs(self.phi[0] - 1.0)))

    def _push(self, phi, modes) -> None:
        solid = self.grid.solid_nodes
        if solid.any():
            phi[:, solid] = 0.0
            phi[0, solid] = 1.0
        self.phi, self.frac_modes = phi, modes
        self.phi_hist = [phi] + self.phi_hist[: self.g - 1]
        self.modes_hist = [modes] + self.modes_hist[: self.g - 1]


def velocity_gradient(grid: Grid2D, u) -> np.ndarray:
    """kappa_ml = d u_m / d x_l per node, shape (Nx, Ny, 2, 2)."""
    grad = gradient(grid, u)  # grad[l, m] = d_l u_m
    return np.moveaxis(grad, (1, 0), (-2, -1))


def assemble_coupling(grid: Grid2D, u, closure: ClosureOperator) -> np.ndarray:
    """Per-node coupling matrices A(grad u), shape (C, C, Nx, Ny); solid nodes carry A(0)."""
    kappa = velocity_gradient(grid, u)
    solid = grid.solid_nodes
    if solid.any():
        kappa = kappa.copy()
        kappa[solid] = 0.0
    return np.moveaxis(closure.assemble(kappa), (-2, -1), (0, 1))


def apply_spatial_operator(grid: Grid2D, u, coupling, epsilon: float, phi) -> np.ndarray:
    """L phi = (u . grad) phi - eps Lap phi - A phi with homogeneous Neumann walls."""
    return (advect(grid, u, phi, bc="neumann") - epsilon * laplacian(grid, phi, bc="neumann")
            - np.einsum("ij...,j...->i...", coupling, phi))


def push_forward(state: PolymerState, scheme: BDFScheme, dt: float, phi_next) -> np.ndarray:
    """Phi_k^{n+1} from Phi^{n+1} and the mode history, nodewise."""
    return mode_push_forward(state.kernel, scheme, dt, phi_next, state.modes_hist[: scheme.g])


def mfp_step(state: PolymerState, u_next, dt: float, scheme: BDFScheme | None = None,
             tol: float = 1e-10) -> LinearSolveReport:
    """Advance phi and the fractional modes by one BDF step with velocity ``u_next``."""
    if scheme is None:
        scheme = BDFScheme.of_order(min(state.g, len(state.phi_hist)))
    if len(state.phi_hist) < scheme.g:
        raise ValueError(f"BDF{scheme.g} needs {scheme.g} history levels, have {len(state.phi_hist)}")
    grid, K = state.grid, state.kernel
    coupling = assemble_coupling(grid, u_next, state.closure)
    eta, eta_k = fractional_coefficients(K, scheme, dt)
    hist_phi = state.phi_hist[: scheme.g]
    hist_modes = state.modes_hist[: scheme.g]
    weighted = sum(bj * np.tensordot(eta_k, modes, axes=(0, 0)) for bj, modes in zip(scheme.b[1:], hist_modes))
    rhs = -scheme.history_sum(hist_phi) - apply_spatial_operator(grid, u_next, coupling, state.epsilon, weighted)
    phi, report = state.solver.solve(scheme.b0, eta, state.epsilon, u_next, coupling, rhs,
                                     relaxation=np.diag(state.closure.offset), x0=state.phi, tol=tol)
    report.raise_if_failed("mode-field solve")
    modes = push_forward(state, scheme, dt, phi)
    state._push(phi, modes)
    state.t += dt
    state.reports.append(report)
    return report


def mfp_trapezoid_start(state: PolymerState, u, dt: float, tol: float = 1e-10) -> LinearSolveReport:
    """First step by the implicit trapezoid rule for nontrivial initial data (constant velocity ``u``).

    (I + eta_T L) Phi^1 = Phi^0 - (dt/2) L [Dt^0 - sum_k lambda_k (q_k Phi_k^0 + p_k Phi^0)],
    Phi_k^1 = q_k Phi_k^0 + p_k (Phi^0 + Phi^1).
    """
    grid, K = state.grid, state.kernel
    coupling = assemble_coupling(grid, u, state.closure)
    eta_t, q, p = trapezoid_coefficients(K, dt)
    phi0, modes0 = state.phi, state.frac_modes
    shape = (-1,) + (1,) * phi0.ndim
    partial = q.reshape(shape) * modes0 + p.reshape(shape) * phi0
    dt0 = approx_fractional_derivative(K, phi0, modes0)
    inner = dt0 - np.tensordot(K.poles, partial, axes=(0, 0))
    rhs = phi0 - 0.5 * dt * apply_spatial_operator(grid, u, coupling, state.epsilon, inner)
    phi1, report = state.solver.solve(1.0, eta_t, state.epsilon, u, coupling, rhs,
                                      relaxation=np.diag(state.closure.offset), x0=phi0, tol=tol)
    report.raise_if_failed("mode-field trapezoid solve")
    modes1 = partial + p.reshape(shape) * phi1
    state._push(phi1, modes1)
    state.t += dt
    state.reports.append(report)
    return report


def polymer_stress(state: PolymerState) -> np.ndarray:
    """gamma tau(Dt Phi) per node, shape (2, 2, Nx, Ny); zero on solid nodes."""
    dphi = approx_fractional_derivative(state.kernel, state.phi, state.frac_modes)
    tau = extra_stress_from_modes(dphi, state.gamma, state.closure.a, 2)
    solid = state.grid.solid_nodes
    if solid.any():
        tau[:, :, solid] = 0.0
    return tau
