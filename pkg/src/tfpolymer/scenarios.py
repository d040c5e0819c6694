"""Experiment drivers, diagnostics and the omega vortex criterion.

Three scenarios share one coupled stepper:

* ``tffp``: the mode equation alone with u = 0 against a Mittag-Leffler solution,
* ``coupled``: ramped channel flow from rest, self-convergence in dt,
* ``channel``: forced periodic channel, optionally with block-roughened walls.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import SimulationConfig
from .grid import Grid2D, divergence
from .hermite import build_closure
from .io import write_rows_csv, write_vtk
from .kernel import (
    KernelApproximation,
    compress_kernel,
    mittag_leffler,
    read_kernel_csv,
    weighted_bochner_norm,
)
from .mfp import PolymerState, mfp_step, mfp_trapezoid_start, polymer_stress, velocity_gradient
from .navier_stokes import FlowState, kinetic_energy, ns_step, tensor_divergence

__all__ = [
    "tffp_config",
    "coupled_config",
    "channel_config",
    "build_kernel",
    "build_grid",
    "roughness_mask",
    "omega_criterion",
    "DiagnosticsRecord",
    "ConvergenceTable",
    "fitted_order",
    "CoupledSimulation",
    "tffp_reference",
    "run_tffp_convergence",
    "ramp_force",
    "run_coupled_convergence",
    "channel_initial_velocity",
    "ChannelResult",
    "run_channel",
]

TFFP_DTS = tuple(1.0 / n for n in (20, 40, 80, 160, 320, 640))
COUPLED_DTS = tuple(1.0 / n for n in (40, 80, 160, 320, 640))
# early and late probe times of the memory comparison
CHANNEL_PROBES = (0.2, 2.0)


def tffp_config(**changes) -> SimulationConfig:
    """Defaults of the decoupled Mittag-Leffler test on the unit square."""
    base = dict(scenario="tffp", nx=64, ny=64, x_extent=(0.0, 1.0), y_extent=(0.0, 1.0), bc_x="wall",
                bc_y="wall", dt=TFFP_DTS[-1], dt_list=TFFP_DTS, T=1.0, alpha=0.5, kernel_tol=1e-8, De=0.5,
                epsilon=1e-2, one_minus_beta_over_Re=0.0, beta_over_Re=1.0)
    base.update(changes)
    return SimulationConfig(**base)


def coupled_config(**changes) -> SimulationConfig:
    """Defaults of the ramped channel self-convergence test."""
    dts = changes.pop("dt_list", COUPLED_DTS)
    base = dict(scenario="coupled", nx=64, ny=64, x_extent=(0.0, 1.0), y_extent=(0.0, 1.0), bc_x="periodic",
                bc_y="wall", dt_list=dts, dt=min(dts) / 4, T=1.0, alpha=1.0, kernel_tol=1e-8, De=0.5,
                epsilon=1.0, beta_over_Re=1.0, one_minus_beta_over_Re=1.0)
    base.update(changes)
    return SimulationConfig(**base)


def channel_config(**changes) -> SimulationConfig:
    """Defaults of the forced periodic channel at desk resolution."""
    base = dict(scenario="channel", nx=128, ny=32, x_extent=(0.0, 2.2), y_extent=(0.0, 0.41), bc_x="periodic",
                bc_y="wall", dt=5e-3, T=2.0, alpha=1.0, kernel_tol=1e-8, De=0.5, epsilon=1e-2,
                beta_over_Re=1e-2, one_minus_beta_over_Re=1e-2, probe_times=CHANNEL_PROBES, snapshot_cadence=100)
    base.update(changes)
    return SimulationConfig(**base)


def build_kernel(cfg: SimulationConfig) -> KernelApproximation:
    """Kernel from ``cfg.kernel_file`` if given, else fitted on ``cfg.s_range``."""
    if cfg.kernel_file is not None:
        return read_kernel_csv(cfg.kernel_file)
    s_min, s_max = cfg.s_range
    return compress_kernel(cfg.alpha, s_min, s_max, cfg.kernel_tol)


def roughness_mask(cfg: SimulationConfig) -> np.ndarray | None:
    """Axis-aligned blocks alternating between bottom and top wall, one per slot.

    Lengths are drawn from U(4.35e-2, 4.45e-2) and heights from U(2.5e-3, 7.5e-3),
    both rounded up to whole cells.
    """
    n = cfg.roughness_blocks
    if not n:
        return None
    rng = np.random.default_rng(cfg.seed)
    dx = (cfg.x_extent[1] - cfg.x_extent[0]) / cfg.nx
    dy = (cfg.y_extent[1] - cfg.y_extent[0]) / cfg.ny
    per_wall = math.ceil(n / 2)
    slot = cfg.nx // per_wall
    mask = np.zeros((cfg.nx, cfg.ny), dtype=bool)
    for b in range(n):
        length = max(1, math.ceil(rng.uniform(4.35e-2, 4.45e-2) / dx))
        height = max(1, math.ceil(rng.uniform(2.5e-3, 7.5e-3) / dy))
        if length >= slot:
            raise ValueError(f"{n} blocks do not fit on {cfg.nx} cells; use fewer blocks or a finer grid")
        start = (b // 2) * slot + int(rng.integers(0, slot - length))
        rows = slice(0, height) if b % 2 == 0 else slice(cfg.ny - height, cfg.ny)
        mask[start : start + length, rows] = True
    return mask


def build_grid(cfg: SimulationConfig) -> Grid2D:
    return Grid2D(cfg.nx, cfg.ny, cfg.x_extent, cfg.y_extent, cfg.bc_x, cfg.bc_y, roughness_mask(cfg))


# ----------------------------------------------------------------------------
# diagnostics
# ----------------------------------------------------------------------------


def omega_criterion(grid: Grid2D, u) -> np.ndarray:
    """omega = b / (a + b + eps) with eps = 1e-3 max(b - a), floored at 1e-14."""
    kappa = velocity_gradient(grid, u)
    sym = kappa + np.swapaxes(kappa, -1, -2)
    anti = kappa - np.swapaxes(kappa, -1, -2)
    a = 0.25 * np.sum(sym**2, axis=(-2, -1))
    b = 0.25 * np.sum(anti**2, axis=(-2, -1))
    eps = max(1e-3 * float(np.max(b - a)), 1e-14)
    return np.clip(b / (a + b + eps), 0.0, 1.0)


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    u_l2: float
    div_u_l2: float
    div_tau_l2: float
    phi0_drift: float
    kinetic_energy: float
    pressure_iterations: int
    velocity_iterations: int
    mfp_iterations: int

    def __post_init__(self):
        vals = [v for k, v in asdict(self).items()]
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"non-finite diagnostics at t={self.t}: {self}")

    @staticmethod
    def header() -> list[str]:
        return list(DiagnosticsRecord.__dataclass_fields__)

    def row(self) -> list:
        return list(asdict(self).values())


@dataclass(frozen=True)
class ConvergenceTable:
    dt: np.ndarray
    error: np.ndarray
    local_order: np.ndarray
    fitted_order: float
    n_fit: int
    extra: dict = field(default_factory=dict, compare=False)

    def rows(self) -> list[list]:
        orders = [float("nan"), *self.local_order]
        return [[float(d), float(e), float(o)] for d, e, o in zip(self.dt, self.error, orders)]

    def write_csv(self, path) -> Path:
        return write_rows_csv(path, ["dt", "error", "observed_order"], self.rows())

    def format(self) -> str:
        lines = [f"{'dt':>12} {'error':>14} {'order':>8}"]
        for d, e, o in self.rows():
            lines.append(f"{d:12.6g} {e:14.6e} {o:8.3f}")
        lines.append(f"fitted order over the first {self.n_fit} points: {self.fitted_order:.3f}")
        return "\n".join(lines)


def fitted_order(dt, error) -> tuple[np.ndarray, float, int]:
    """Local orders and the least-squares order before the plateau.

    The plateau starts where the local order first falls below half of the
    first local order; at least two points are always fitted.
    """
    dt, error = np.asarray(dt, dtype=float), np.asarray(error, dtype=float)
    local = np.log(error[:-1] / error[1:]) / np.log(dt[:-1] / dt[1:])
    n = len(dt)
    for i, o in enumerate(local):
        if i > 0 and o < 0.5 * local[0]:
            n = i + 1
            break
    slope = np.polyfit(np.log(dt[:n]), np.log(error[:n]), 1)[0]
    return local, float(slope), n


# ----------------------------------------------------------------------------
# the coupled stepper
# ----------------------------------------------------------------------------


class CoupledSimulation:
    """Navier-Stokes first with extrapolated stress, then the mode field with u^{n+1}."""

    def __init__(self, cfg: SimulationConfig, grid: Grid2D | None = None, kernel: KernelApproximation | None = None,
                 force: Callable[[float], np.ndarray] | None = None, u0=None):
        self.cfg = cfg
        self.grid = grid if grid is not None else build_grid(cfg)
        self.kernel = kernel if kernel is not None else build_kernel(cfg)
        self.closure = build_closure(2, cfg.De)
        self.force = force if force is not None else (lambda t: np.zeros(2))
        if u0 is None:
            self.flow = FlowState.at_rest(self.grid, cfg.beta_over_Re, cfg.order)
        else:
            u0 = np.array(u0, dtype=float)
            u0[:, self.grid.solid_nodes] = 0.0
            f0 = np.broadcast_to(np.asarray(self.force(0.0), dtype=float)[:, None, None], (2, *self.grid.shape))
            self.flow = FlowState.from_velocity(self.grid, u0, cfg.beta_over_Re, cfg.order, force0=f0)
        self.polymer = PolymerState.at_rest(self.grid, self.closure, self.kernel, cfg.epsilon, cfg.gamma, cfg.order)
        self.tau = self.grid.zeros(2, 2)
        self.steps = 0
        self.last = (0, 0, 0)

    @property
    def t(self) -> float:
        return self.flow.t

    def _force_field(self, t: float) -> np.ndarray:
        f = np.asarray(self.force(t), dtype=float)
        return np.broadcast_to(f.reshape(2, 1, 1) if f.shape == (2,) else f, (2, *self.grid.shape))

    def step(self, dt: float | None = None, tol: float = 1e-10) -> None:
        dt = self.cfg.dt if dt is None else dt
        mfp_iters = []

        def stress(u_new):
            rep = mfp_step(self.polymer, u_new, dt, tol=tol)
            mfp_iters.append(rep.iterations)
            self.tau = polymer_stress(self.polymer)
            return self.tau

        rep = ns_step(self.flow, dt, force=self._force_field, tau=stress, tol=tol)
        self.steps += 1
        self.last = (rep.pressure.iterations, rep.velocity.iterations, sum(mfp_iters))

    def run_until(self, T: float, dt: float | None = None, callback=None) -> None:
        dt = self.cfg.dt if dt is None else dt
        n = int(round(T / dt))
        if abs(n * dt - T) > 1e-9 * T:
            raise ValueError(f"T = {T} is not a multiple of dt = {dt}")
        for _ in range(n):
            self.step(dt)
            if callback is not None:
                callback(self)

    def diagnostics(self) -> DiagnosticsRecord:
        g, u = self.grid, self.flow.u
        return DiagnosticsRecord(
            t=float(self.t),
            u_l2=g.l2_norm(u),
            div_u_l2=g.l2_norm(divergence(g, u)),
            div_tau_l2=g.l2_norm(tensor_divergence(g, self.tau)),
            phi0_drift=self.polymer.mass_drift,
            kinetic_energy=kinetic_energy(g, u),
            pressure_iterations=int(self.last[0]),
            velocity_iterations=int(self.last[1]),
            mfp_iterations=int(self.last[2]),
        )

    def snapshot_fields(self) -> dict[str, np.ndarray]:
        g = self.grid
        div_tau = tensor_divergence(g, self.tau)
        return {"u": self.flow.u, "p": self.flow.p, "omega": omega_criterion(g, self.flow.u),
                "div_tau_magnitude": np.sqrt(np.sum(div_tau**2, axis=0)), "phi": self.polymer.phi}


# ----------------------------------------------------------------------------
# scenarios
# ----------------------------------------------------------------------------


def tffp_reference(grid: Grid2D, alpha: float, De: float, epsilon: float, t: float) -> np.ndarray:
    """Degree-2 profile cos(2 pi x) cos(4 pi y) E_alpha(-c t^alpha).

    ``c`` is the relaxation rate 1/De of the closure plus epsilon times the
    discrete Laplacian eigenvalue of the profile, so spatial error cancels.
    """
    X, Y = grid.mesh()
    hx, hy = grid.spacing
    lam = (2 - 2 * np.cos(2 * np.pi * hx)) / hx**2 + (2 - 2 * np.cos(4 * np.pi * hy)) / hy**2
    c = 1.0 / De + epsilon * lam
    return np.cos(2 * np.pi * X) * np.cos(4 * np.pi * Y) * mittag_leffler(alpha, c * t**alpha)


def _tffp_run(cfg: SimulationConfig, grid: Grid2D, kernel: KernelApproximation, dt: float):
    closure = build_closure(2, cfg.De)
    profile = tffp_reference(grid, cfg.alpha, cfg.De, cfg.epsilon, 0.0)
    phi0 = grid.zeros(closure.n_modes)
    phi0[0] = 1.0
    phi0[1:] = profile
    state = PolymerState.from_modes(grid, closure, kernel, cfg.epsilon, cfg.gamma, phi0, cfg.order)
    u = grid.zeros(2)
    n = int(round(cfg.T / dt))
    times, errs, drift = [0.0], [0.0], 0.0
    for k in range(1, n + 1):
        if k == 1 and cfg.order > 1:
            mfp_trapezoid_start(state, u, dt)
        else:
            mfp_step(state, u, dt)
        exact = tffp_reference(grid, cfg.alpha, cfg.De, cfg.epsilon, k * dt)
        times.append(k * dt)
        errs.append(grid.l2_norm(state.phi[1:] - exact))
        drift = max(drift, state.mass_drift)
    return weighted_bochner_norm(np.array(times), np.array(errs), cfg.alpha), drift


def run_tffp_convergence(cfg: SimulationConfig | None = None) -> ConvergenceTable:
    """Errors of the u = 0 mode equation in the weighted Bochner norm for each dt."""
    cfg = cfg or tffp_config()
    if (cfg.bc_x, cfg.bc_y) != ("wall", "wall"):
        raise ValueError("the decoupled test runs with walls (Neumann modes) on both axes")
    grid, kernel = build_grid(cfg), build_kernel(cfg)
    dts = np.array(sorted(cfg.dt_list or (cfg.dt,), reverse=True))
    results = [_tffp_run(cfg, grid, kernel, dt) for dt in dts]
    errors = np.array([e for e, _ in results])
    local, order, n = fitted_order(dts, errors) if len(dts) > 1 else (np.array([]), float("nan"), 1)
    return ConvergenceTable(dts, errors, local, order, n,
                            {"phi0_drift": max(d for _, d in results), "m": kernel.m})


def ramp_force(t: float) -> np.ndarray:
    """(sin^2(pi/2 min(max(0, 4t - 1), 1)), 0)."""
    s = min(max(0.0, 4.0 * t - 1.0), 1.0)
    return np.array([math.sin(0.5 * math.pi * s) ** 2, 0.0])


def run_coupled_convergence(cfg: SimulationConfig | None = None, callback=None) -> ConvergenceTable:
    """Velocity error at T against a reference run at dt_min / 4, all from rest."""
    cfg = cfg or coupled_config()
    dts = np.array(sorted(cfg.dt_list, reverse=True))
    dt_ref = dts[-1] / 4
    s_min, s_max = cfg.s_min or 1.0 / (10.0 * cfg.T), cfg.s_max or 10.0 / dt_ref
    cfg = cfg.replace(dt=dt_ref, s_min=s_min, s_max=s_max)
    grid, kernel = build_grid(cfg), build_kernel(cfg)

    def final(dt):
        sim = CoupledSimulation(cfg, grid, kernel, force=ramp_force)
        sim.run_until(cfg.T, dt)
        if callback is not None:
            callback(dt, sim)
        return sim.flow.u, sim.polymer.mass_drift

    u_ref, drift = final(dt_ref)
    errors, drifts = [], [drift]
    for dt in dts:
        u, d = final(dt)
        errors.append(grid.l2_norm(u - u_ref))
        drifts.append(d)
    errors = np.array(errors)
    local, order, n = fitted_order(dts, errors) if len(dts) > 1 else (np.array([]), float("nan"), 1)
    return ConvergenceTable(dts, errors, local, order, n, {"phi0_drift": max(drifts), "dt_ref": dt_ref,
                                                          "m": kernel.m})


def channel_initial_velocity(grid: Grid2D) -> np.ndarray:
    """(y^2 (H - y)^2 / (H/2)^2, 0) with H the channel height."""
    X, Y = grid.mesh()
    y = Y - grid.y_extent[0]
    H = grid.y_extent[1] - grid.y_extent[0]
    return np.stack([y**2 * (H - y) ** 2 / (H / 2) ** 2, np.zeros_like(Y)])


@dataclass
class ChannelResult:
    records: list
    probes: dict
    snapshots: list
    output_dir: Path | None = None

    def probe(self, t: float) -> DiagnosticsRecord:
        return self.probes[min(self.probes, key=lambda s: abs(s - t))]


def run_channel(cfg: SimulationConfig | None = None) -> ChannelResult:
    """Forced channel from the prescribed profile with diagnostics at ``cadence`` steps."""
    cfg = cfg or channel_config()
    grid = build_grid(cfg)
    sim = CoupledSimulation(cfg, grid, force=lambda t: np.array([1.0, 0.0]), u0=channel_initial_velocity(grid))
    out = None
    if cfg.output_dir is not None:
        out = Path(cfg.output_dir) / f"{cfg.scenario}-{cfg.digest()}"
        out.mkdir(parents=True, exist_ok=True)
    probe_steps = {int(round(t / cfg.dt)): t for t in cfg.probe_times}
    records, probes, snaps = [sim.diagnostics()], {}, []

    def snapshot():
        if out is not None:
            snaps.append(write_vtk(out / f"snapshot_{sim.steps:06d}.vtk", grid, sim.snapshot_fields(),
                                   f"t = {sim.t:.6g}"))

    if cfg.snapshot_cadence:
        snapshot()
    n = int(round(cfg.T / cfg.dt))
    for _ in range(n):
        sim.step()
        if sim.steps % cfg.cadence == 0 or sim.steps == n or sim.steps in probe_steps:
            rec = sim.diagnostics()
            if sim.steps in probe_steps:
                probes[probe_steps[sim.steps]] = rec
            if sim.steps % cfg.cadence == 0 or sim.steps == n:
                records.append(rec)
        if cfg.snapshot_cadence and sim.steps % cfg.snapshot_cadence == 0:
            snapshot()
    if out is not None:
        write_rows_csv(out / "diagnostics.csv", DiagnosticsRecord.header(), [r.row() for r in records])
    return ChannelResult(records, probes, snaps, out)
