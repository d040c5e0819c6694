"""Velocity-correction projection for incompressible flow with a polymer stress.

One step of order g solves

    Delta p = -div Xi,   dp/dn = -Xi . n - (b0/dt) u_D . n,
    (b0/dt) u - (beta/Re) Lap u = -grad p - sum_j (b_j/dt) u^{n+1-j}
                                  + E(-(u . grad) u + div tau + f),

with Xi = sum_j (b_j/dt) u^{n+1-j} + E((beta/Re) curl curl u + (u . grad) u - div tau - f)
and E the extrapolation matching the BDF order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bdf import BDFScheme, extrapolate
from .grid import (
    Grid2D,
    LinearSolveReport,
    advect,
    curl2,
    curl_of_scalar,
    derivative,
    divergence,
    gradient,
    solve_helmholtz,
    solve_poisson_neumann,
)

__all__ = [
    "BDFScheme",
    "extrapolate",
    "FlowState",
    "StepReport",
    "tensor_divergence",
    "explicit_terms",
    "assemble_xi",
    "pressure_step",
    "velocity_step",
    "ns_step",
    "taylor_green_velocity",
    "kinetic_energy",
]


def tensor_divergence(grid: Grid2D, tau) -> np.ndarray:
    """(div tau)_i = sum_j d tau_ij / dx_j for tau of shape (2, 2, Nx, Ny)."""
    tau = np.asarray(tau, dtype=float)
    return np.stack([derivative(grid, tau[i, 0], 0) + derivative(grid, tau[i, 1], 1) for i in range(2)])


def explicit_terms(grid: Grid2D, u, beta_over_Re: float) -> np.ndarray:
    """(beta/Re) curl curl u + (u . grad) u, the velocity-dependent part of Xi."""
    return beta_over_Re * curl_of_scalar(grid, curl2(grid, u)) + advect(grid, u, u)


@dataclass
class FlowState:
    """Velocity, pressure and newest-first histories of u, its explicit terms, tau and f."""

    grid: Grid2D
    u: np.ndarray
    p: np.ndarray
    beta_over_Re: float
    u_hist: list
    explicit_hist: list
    tau_hist: list
    force_hist: list
    boundary: np.ndarray | None = None
    t: float = 0.0
    g: int = 2

    @classmethod
    def at_rest(cls, grid: Grid2D, beta_over_Re: float, g: int = 2) -> "FlowState":
        zero_u = grid.zeros(2)
        return cls(grid, zero_u, grid.zeros(), beta_over_Re,
                   [zero_u.copy() for _ in range(g)], [zero_u.copy() for _ in range(g)],
                   [grid.zeros(2, 2) for _ in range(g)], [zero_u.copy() for _ in range(g)], g=g)

    @classmethod
    def from_velocity(cls, grid: Grid2D, u0, beta_over_Re: float, g: int = 2, tau0=None, force0=None,
                      t0: float = 0.0) -> "FlowState":
        """Nontrivial initial data; the first g-1 steps run at reduced order."""
        u0 = np.array(u0, dtype=float)
        tau0 = grid.zeros(2, 2) if tau0 is None else np.asarray(tau0, dtype=float)
        force0 = grid.zeros(2) if force0 is None else np.asarray(force0, dtype=float)
        return cls(grid, u0, grid.zeros(), beta_over_Re, [u0], [explicit_terms(grid, u0, beta_over_Re)],
                   [tau0], [force0], t=t0, g=g)

    @property
    def order(self) -> int:
        """BDF order usable now: limited by the filled history."""
        return min(self.g, len(self.u_hist))

    def scheme(self) -> BDFScheme:
        return BDFScheme.of_order(self.order)

    def push_velocity(self, u, p) -> None:
        self.u, self.p = u, p
        self.u_hist = [u] + self.u_hist[: self.g - 1]
        self.explicit_hist = [explicit_terms(self.grid, u, self.beta_over_Re)] + self.explicit_hist[: self.g - 1]

    def push_coupling(self, tau, force) -> None:
        self.tau_hist = [np.asarray(tau, dtype=float)] + self.tau_hist[: self.g - 1]
        self.force_hist = [np.asarray(force, dtype=float)] + self.force_hist[: self.g - 1]


@dataclass(frozen=True)
class StepReport:
    pressure: LinearSolveReport
    velocity: LinearSolveReport
    extra: dict = field(default_factory=dict)


def _extrapolated_coupling(state: FlowState, scheme: BDFScheme) -> np.ndarray:
    """E(div tau + f), the stress and force part shared by Xi and the velocity RHS."""
    g = state.grid
    hist = [tensor_divergence(g, tau) + f for tau, f in zip(state.tau_hist[: scheme.g], state.force_hist[: scheme.g])]
    return extrapolate(hist, scheme)


def assemble_xi(state: FlowState, scheme: BDFScheme, dt: float) -> np.ndarray:
    """Xi = sum_j (b_j/dt) u^{n+1-j} + E((beta/Re) curl curl u + (u . grad) u - div tau - f)."""
    bdf = scheme.history_sum(state.u_hist[: scheme.g]) / dt
    return bdf + extrapolate(state.explicit_hist[: scheme.g], scheme) - _extrapolated_coupling(state, scheme)


def _normal_signs(grid: Grid2D, axis: int) -> np.ndarray:
    s = np.zeros(grid.shape)
    if grid.axis_bc(axis) == "wall":
        if axis == 0:
            s[0, :], s[-1, :] = -1.0, 1.0
        else:
            s[:, 0], s[:, -1] = -1.0, 1.0
    return s


def pressure_step(grid: Grid2D, xi, scheme: BDFScheme, dt: float, boundary=None, tol: float = 1e-10):
    """Mean-zero p with Delta p = -div Xi and dp/dn = -Xi . n - (b0/dt) u_D . n on walls."""
    xi = np.asarray(xi, dtype=float)
    uD = grid.zeros(2) if boundary is None else np.asarray(boundary, dtype=float)
    flux = tuple(-_normal_signs(grid, k) * (xi[k] + scheme.b0 / dt * uD[k]) for k in (0, 1))
    p, report = solve_poisson_neumann(grid, -divergence(grid, xi), flux=flux, tol=tol)
    return p, report


def velocity_step(state: FlowState, p, scheme: BDFScheme, dt: float, tol: float = 1e-10):
    """Helmholtz update for u^{n+1}; the RHS is assembled directly, not from Xi."""
    g = state.grid
    advective = [advect(g, u, u) for u in state.u_hist[: scheme.g]]
    rhs = (-gradient(g, p) - scheme.history_sum(state.u_hist[: scheme.g]) / dt
           - extrapolate(advective, scheme) + _extrapolated_coupling(state, scheme))
    return solve_helmholtz(g, scheme.b0 / dt, state.beta_over_Re, rhs, bc="dirichlet",
                           boundary=state.boundary, tol=tol)


def ns_step(state: FlowState, dt: float, force=None, tau=None, tol: float = 1e-10) -> StepReport:
    """Advance ``state`` by one step: Xi, pressure, velocity, then the coupling histories.

    ``force`` and ``tau`` give f and tau at the new time level; each may be an
    array, ``None`` (zero), or a callable (``force(t)``, ``tau(u_new)``).
    """
    scheme = state.scheme()
    xi = assemble_xi(state, scheme, dt)
    p, prep = pressure_step(state.grid, xi, scheme, dt, state.boundary, tol)
    prep.raise_if_failed("pressure Poisson solve")
    u, vrep = velocity_step(state, p, scheme, dt, tol)
    vrep.raise_if_failed("velocity Helmholtz solve")
    state.t += dt
    state.push_velocity(u, p)
    f_new = force(state.t) if callable(force) else (state.grid.zeros(2) if force is None else force)
    tau_new = tau(u) if callable(tau) else (state.grid.zeros(2, 2) if tau is None else tau)
    state.push_coupling(tau_new, np.broadcast_to(f_new, (2, *state.grid.shape)))
    return StepReport(prep, vrep)


def taylor_green_velocity(grid: Grid2D, nu: float, t: float) -> np.ndarray:
    """(sin x cos y, -cos x sin y) exp(-2 nu t) on a 2 pi periodic box."""
    X, Y = grid.mesh()
    decay = np.exp(-2.0 * nu * t)
    return np.stack([np.sin(X) * np.cos(Y), -np.cos(X) * np.sin(Y)]) * decay


def kinetic_energy(grid: Grid2D, u) -> float:
    return 0.5 * grid.l2_norm(u) ** 2
