import math

import numpy as np
import pytest
from scipy.ndimage import label
from hypothesis import given, settings
from hypothesis import strategies as st

from tfpolymer.config import ConfigError, SimulationConfig, load_config
from tfpolymer.grid import Grid2D
from tfpolymer.io import write_rows_csv, write_vtk
from tfpolymer.navier_stokes import FlowState, ns_step
from tfpolymer.scenarios import (CHANNEL_PROBES, CoupledSimulation, DiagnosticsRecord, build_grid, channel_config,
                                 channel_initial_velocity, coupled_config, fitted_order, omega_criterion, ramp_force,
                                 roughness_mask, run_channel, run_tffp_convergence, tffp_config, tffp_reference)

# configuration


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


def test_config_file_sections_map_to_fields(tmp_path):
    path = write(tmp_path, """
[grid]
nx = 48
ny = 16
roughness_blocks = 4
seed = 11
[time]
dt = 0.01
T = 0.5
dt_list = [0.1, 0.05]
[fractional]
alpha = 0.6
tol = 1e-6   # kernel tolerance
[polymer]
De = 2.0
one_minus_beta_over_Re = 0.3
[output]
scenario = channel
directory = out
""")
    cfg = load_config(path)
    assert (cfg.nx, cfg.ny, cfg.roughness_blocks, cfg.seed) == (48, 16, 4, 11)
    assert cfg.dt_list == (0.1, 0.05) and cfg.kernel_tol == 1e-6 and cfg.output_dir == "out"
    assert cfg.gamma == pytest.approx(0.15)
    assert cfg.s_range == pytest.approx((1 / 5, 10 / 0.01))


def test_overrides_beat_file(tmp_path):
    path = write(tmp_path, "[fractional]\nalpha = 0.6\n")
    cfg = load_config(path, {"alpha": 0.3, "dt": None})
    assert cfg.alpha == 0.3 and cfg.dt == SimulationConfig().dt


@pytest.mark.parametrize("text, match", [
    ("[solver]\nx = 1\n", "unknown section"),
    ("[grid]\nresolution = 3\n", "unknown key"),
    ("[fractional]\nalpha = 1.5\n", "alpha"),
    ("[time]\ndt = 5\nT = 1\n", "dt"),
    ("[time]\norder = 3\n", "order"),
    ("[grid]\nnx = 2\n", "at least 4"),
    ("[output]\nscenario = cavity\n", "scenario"),
    ("[fractional]\nkernel_file = missing.csv\n", "does not exist"),
    ("[grid]\nbc_y = periodic\nroughness_blocks = 2\n", "roughness"),
    ("[grid\nnx = 3\n", "cannot parse"),
])
def test_config_errors(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write(tmp_path, text))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "nope.cfg")


def test_digest_tracks_parameters():
    a, b = channel_config(), channel_config()
    assert a.digest() == b.digest()
    assert a.digest() != a.replace(alpha=0.5).digest()


def test_coupled_config_reference_below_list():
    cfg = coupled_config()
    assert cfg.dt == min(cfg.dt_list) / 4


# omega criterion


def linear_field(g, kappa):
    X, Y = g.mesh()
    return np.stack([kappa[0][0] * X + kappa[0][1] * Y, kappa[1][0] * X + kappa[1][1] * Y])


@pytest.mark.parametrize("kappa, expected", [
    ([[0, -1], [1, 0]], 1.0),
    ([[1, 0], [0, -1]], 0.0),
    ([[0, 1], [0, 0]], 0.5),
], ids=["rotation", "strain", "shear"])
def test_omega_of_linear_flows(kappa, expected):
    g = Grid2D(8, 8, bc_x="wall", bc_y="wall")
    w = omega_criterion(g, linear_field(g, kappa))
    assert np.allclose(w, expected, atol=2e-3)


def test_omega_of_quiescent_flow_is_zero():
    g = Grid2D(8, 8)
    assert np.all(omega_criterion(g, g.zeros(2)) == 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_omega_in_unit_interval(seed):
    g = Grid2D(8, 6, bc_x="periodic", bc_y="wall")
    w = omega_criterion(g, np.random.default_rng(seed).standard_normal((2, *g.shape)))
    assert np.all((w >= 0) & (w <= 1))


# roughness


def test_roughness_blocks_alternate_walls():
    cfg = channel_config(nx=128, ny=32, roughness_blocks=6, seed=5)
    mask = roughness_mask(cfg)
    labels, count = label(mask)
    assert count == 6
    bottom = sum(np.nonzero(labels == k)[1].min() == 0 for k in range(1, 7))
    assert bottom == 3
    dx = 2.2 / 128
    for k in range(1, 7):
        ii, _ = np.nonzero(labels == k)
        assert ii.max() - ii.min() + 1 == math.ceil(4.4e-2 / dx)
    build_grid(cfg)  # accepted by the grid


def test_roughness_is_seeded():
    a = roughness_mask(channel_config(roughness_blocks=4, seed=1))
    assert np.array_equal(a, roughness_mask(channel_config(roughness_blocks=4, seed=1)))
    assert not np.array_equal(a, roughness_mask(channel_config(roughness_blocks=4, seed=2)))
    assert roughness_mask(channel_config()) is None


def test_too_many_blocks_rejected():
    with pytest.raises(ValueError, match="do not fit"):
        roughness_mask(channel_config(nx=16, roughness_blocks=40))


# output


def test_vtk_layout(tmp_path):
    g = Grid2D(4, 4, bc_x="periodic", bc_y="wall")
    X, Y = g.mesh()
    path = write_vtk(tmp_path / "s.vtk", g, {"p": X + 10 * Y, "u": np.stack([X, Y]), "phi": np.stack([X, X, Y])})
    lines = path.read_text().splitlines()
    assert lines[4] == "DIMENSIONS 4 5 1" and lines[7] == "POINT_DATA 20"
    i = lines.index("SCALARS p double 1")
    assert float(lines[i + 3]) == pytest.approx(g.dx)  # x runs fastest
    assert "VECTORS u double" in lines and "SCALARS phi_2 double 1" in lines
    with pytest.raises(ValueError, match="node field"):
        write_vtk(tmp_path / "bad.vtk", g, {"q": np.zeros((3, 3))})


def test_csv_round_trips_floats(tmp_path):
    v = 0.1 + 0.2
    path = write_rows_csv(tmp_path / "d.csv", ["a", "b"], [[v, 3], [np.float64(1 / 3), 4]])
    rows = [r.split(",") for r in path.read_text().splitlines()]
    assert rows[0] == ["a", "b"] and float(rows[1][0]) == v and float(rows[2][0]) == 1 / 3


def test_diagnostics_reject_non_finite():
    with pytest.raises(FloatingPointError):
        DiagnosticsRecord(0.0, float("nan"), 0, 0, 0, 0, 0, 0, 0)
    assert DiagnosticsRecord.header()[0] == "t" and len(DiagnosticsRecord.header()) == 9


# convergence bookkeeping


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0])
def test_fitted_order_of_power_law(p):
    dt = 0.1 / 2.0 ** np.arange(5)
    local, order, n = fitted_order(dt, 3.0 * dt**p)
    assert np.allclose(local, p) and order == pytest.approx(p) and n == 5


def test_fitted_order_stops_at_plateau():
    dt = 0.1 / 2.0 ** np.arange(6)
    err = dt**2 + 1e-4
    local, order, n = fitted_order(dt, err)
    assert n < 6 and order > 1.5


def test_ramp_force():
    assert ramp_force(0.1)[0] == 0.0 and ramp_force(0.5)[0] == 1.0 and ramp_force(3.0)[0] == 1.0
    assert ramp_force(0.375)[0] == pytest.approx(0.5)
    assert ramp_force(0.3)[1] == 0.0


def test_tffp_reference_initial_profile():
    g = Grid2D(8, 8, bc_x="wall", bc_y="wall")
    X, Y = g.mesh()
    ref = tffp_reference(g, 0.5, 0.5, 1e-2, 0.0)
    assert np.allclose(ref, np.cos(2 * np.pi * X) * np.cos(4 * np.pi * Y))


def test_tffp_needs_walls():
    with pytest.raises(ValueError, match="walls"):
        run_tffp_convergence(tffp_config(bc_x="periodic"))


def test_tffp_small_converges_and_plateaus_with_loose_kernel():
    dts = (1 / 40, 1 / 160, 1 / 640)
    tight = run_tffp_convergence(tffp_config(nx=16, ny=16, T=0.5, dt=dts[-1], dt_list=dts, kernel_tol=1e-8))
    loose = run_tffp_convergence(tffp_config(nx=16, ny=16, T=0.5, dt=dts[-1], dt_list=dts, kernel_tol=1e-2))
    assert np.all(tight.local_order > 1.4)
    assert tight.extra["phi0_drift"] <= 1e-12
    # the kernel error floors the loose run
    assert loose.local_order[-1] < 0.3
    assert loose.error[-1] > 10 * tight.error[-1]


# coupled stepper


def test_zero_gamma_reproduces_newtonian_flow():
    cfg = coupled_config(nx=12, ny=12, dt=0.05, dt_list=(0.1,), T=0.5, alpha=0.5, one_minus_beta_over_Re=0.0)
    sim = CoupledSimulation(cfg, force=ramp_force)
    sim.run_until(0.5)
    g = sim.grid
    flow = FlowState.at_rest(g, cfg.beta_over_Re, 2)
    force = lambda t: np.broadcast_to(ramp_force(t).reshape(2, 1, 1), (2, *g.shape))
    for _ in range(10):
        ns_step(flow, 0.05, force=force, tau=None)
    assert np.max(np.abs(sim.flow.u)) > 1e-3
    assert np.array_equal(sim.flow.u, flow.u)
    assert np.max(np.abs(sim.polymer.phi[1:])) > 0


def test_channel_initial_profile():
    g = build_grid(channel_config(nx=16, ny=8))
    u = channel_initial_velocity(g)
    assert np.all(u[:, :, 0] == 0) and np.allclose(u[:, :, -1], 0, atol=1e-15)
    assert u[0].max() == pytest.approx((0.41 / 2) ** 2, rel=1e-12)  # midline node
    assert np.all(u[1] == 0)


def small_channel(**changes):
    base = dict(nx=32, ny=8, dt=1e-2, T=0.2, alpha=0.5, roughness_blocks=2, seed=3, cadence=5,
                probe_times=(0.1, 0.2), snapshot_cadence=0)
    base.update(changes)
    return channel_config(**base)


def test_channel_regression():
    res = run_channel(small_channel())
    assert sorted(res.probes) == [0.1, 0.2]
    # frozen from this implementation; 32 x 8 grid, alpha 0.5, two blocks, seed 3
    assert res.probe(0.1).u_l2 == pytest.approx(0.0975723730231732, rel=1e-8)
    assert res.probe(0.2).u_l2 == pytest.approx(0.16098817668573898, rel=1e-8)
    assert res.probe(0.2).div_tau_l2 == pytest.approx(0.1732917201261732, rel=1e-8)
    assert all(r.phi0_drift <= 1e-12 for r in res.records)
    assert [r.t for r in res.records] == pytest.approx([0.0, 0.05, 0.1, 0.15, 0.2])


def test_channel_outputs_are_deterministic(tmp_path):
    runs = [run_channel(small_channel(T=0.1, output_dir=str(tmp_path / f"r{k}"), snapshot_cadence=5))
            for k in range(2)]
    a, b = (r.output_dir / "diagnostics.csv" for r in runs)
    assert a.read_bytes() == b.read_bytes()
    assert runs[0].output_dir.name.startswith("channel-")
    assert len(runs[0].snapshots) == 3
    text = runs[0].snapshots[-1].read_text()
    assert "VECTORS u double" in text and "SCALARS omega double 1" in text and "SCALARS phi_3 double 1" in text


def test_channel_probe_defaults():
    assert channel_config().probe_times == CHANNEL_PROBES
