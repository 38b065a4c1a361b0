import numpy as np
import pytest

from tessoc.discretize import discretize
from tessoc.errors import InvalidConfigError, InvalidInputError, StiffnessError
from tessoc.materials import CellRole, GridSpec, specific_enthalpy
from tessoc.network import Sensor, assemble, build_graph, capacitance_vector
from tessoc.simulate import (
    InputSignals,
    MeasurementSpec,
    OdeConfig,
    integrate,
    mass_weighted_mean,
    project_fine_to_coarse,
    projection_matrix,
    rhs,
    rmse_over_cells,
    rmse_over_time,
    synthesize_measurements,
)
from tessoc.timeseries import TimeSeries

from conftest import make_grid


def two_cell_grid():
    return GridSpec(
        nx=1,
        ny=2,
        dx=0.1,
        dy=np.array([0.004, 0.003]),
        dz=0.06,
        mass=np.array([0.024, 0.0486]),
        role=np.array([CellRole.FLUID, CellRole.PLATE], dtype=np.int8),
        kappa=np.array([0.6, 160.0]),
        cp_const=np.array([4182.0, 900.0]),
    )


def total_energy(x, grid, pcm):
    """Energy bookkeeping oracle: sensible for fluid/plate, enthalpy for CPCM."""
    e = 0.0
    for role, cells in (
        (CellRole.FLUID, grid.mask(CellRole.FLUID)),
        (CellRole.PLATE, grid.mask(CellRole.PLATE)),
    ):
        e += float(np.sum(grid.mass[cells] * grid.cp_const[cells] * (x[cells] - pcm.t_pc)))
    cpcm = grid.mask(CellRole.CPCM)
    if np.any(cpcm):
        e += float(np.dot(grid.mass[cpcm], specific_enthalpy(x[cpcm], pcm)))
    return e


class TestRhs:
    def test_uniform_state_is_stationary(self, grid, fluid, pcm):
        x = np.full(grid.n, 291.0)
        out = rhs(x, 0.1, 291.0, grid, fluid, pcm)
        np.testing.assert_allclose(out, 0.0, atol=1e-18)

    def test_insulated_energy_rate_is_zero(self, grid, fluid, pcm, rng):
        x = rng.uniform(282.0, 298.0, grid.n)
        dxdt = rhs(x, 0.0, 290.0, grid, fluid, pcm)
        mc = capacitance_vector(grid, x, pcm)
        # pairwise antisymmetric edge flows: total heating power vanishes
        assert abs(float(mc @ dxdt)) < 1e-9 * float(np.abs(mc * dxdt).sum() + 1.0)

    def test_hot_fluid_heats_cold_plate(self, fluid, pcm):
        grid = two_cell_grid()
        x = np.array([300.0, 280.0])
        out = rhs(x, 0.0, 300.0, grid, fluid, pcm)
        assert out[0] < 0.0  # fluid cools
        assert out[1] > 0.0  # plate warms

    def test_matches_assembled_system(self, grid, fluid, pcm, rng):
        x = rng.uniform(283.0, 297.0, grid.n)
        u, t_in = 0.12, 295.0
        A, B = assemble(grid, fluid, pcm, x, t_in)
        np.testing.assert_allclose(
            rhs(x, u, t_in, grid, fluid, pcm), A @ x + B * u, rtol=1e-10, atol=1e-12
        )

    def test_prebuilt_graph_shortcut_matches(self, grid, fluid, pcm, rng):
        x = rng.uniform(283.0, 297.0, grid.n)
        g = build_graph(grid, fluid, x, pcm)
        np.testing.assert_array_equal(
            rhs(x, 0.05, 290.0, grid, fluid, pcm, graph=g),
            rhs(x, 0.05, 290.0, grid, fluid, pcm),
        )


class TestIntegrate:
    def test_two_compartment_analytic_solution(self, fluid, pcm):
        grid = two_cell_grid()
        x0 = np.array([300.0, 280.0])
        A, _ = assemble(grid, fluid, pcm, x0, 290.0)
        # closed form via 2x2 eigendecomposition, independent of the stepper
        lam, V = np.linalg.eig(A)
        c = np.linalg.solve(V, x0)
        cfg = OdeConfig(rel_tol=1e-9, abs_tol=1e-9, max_dt=5.0)
        res = integrate(
            x0,
            InputSignals.constant(0.0, 290.0),
            cfg,
            (0.0, 40.0),
            grid,
            fluid,
            pcm,
            dt_out=0.5,
        )
        exact = np.real(np.array([V @ (c * np.exp(lam * t)) for t in res.t]))
        assert np.max(np.abs(res.states - exact)) < 10.0 * cfg.rel_tol * 300.0

    def test_insulated_energy_drift(self, grid, fluid, pcm):
        x0 = np.linspace(283.0, 296.0, grid.n)
        cfg = OdeConfig(rel_tol=1e-10, abs_tol=1e-10, max_dt=2.0)
        res = integrate(
            x0, InputSignals.constant(0.0, 290.0), cfg, (0.0, 50.0), grid, fluid, pcm, dt_out=1.0
        )
        e0 = total_energy(x0, grid, pcm)
        scale = float(np.dot(grid.mass, np.abs(x0 - pcm.t_pc)) * 2000.0)
        drift = max(abs(total_energy(row, grid, pcm) - e0) for row in res.states)
        assert drift < 1e-6 * scale

    def test_halving_tolerance_reduces_error(self, grid, fluid, pcm):
        x0 = np.linspace(284.0, 294.0, grid.n)
        signals = InputSignals.constant(0.1, 296.0)
        reference = integrate(
            x0,
            signals,
            OdeConfig(rel_tol=1e-12, abs_tol=1e-12),
            (0.0, 10.0),
            grid,
            fluid,
            pcm,
            dt_out=1.0,
        )
        errors = []
        for tol in (1e-4, 1e-6, 1e-8):
            res = integrate(
                x0,
                signals,
                OdeConfig(rel_tol=tol, abs_tol=tol),
                (0.0, 10.0),
                grid,
                fluid,
                pcm,
                dt_out=1.0,
            )
            errors.append(np.max(np.abs(res.states - reference.states)))
        assert errors[0] > errors[1] > errors[2]

    def test_boundary_flux_bookkeeping(self, grid, fluid, pcm):
        x0 = np.full(grid.n, 284.0)
        cfg = OdeConfig(rel_tol=1e-10, abs_tol=1e-10)
        res = integrate(
            x0,
            InputSignals.constant(0.12, 296.0),
            cfg,
            (0.0, 30.0),
            grid,
            fluid,
            pcm,
            dt_out=0.5,
            track_boundary_energy=True,
        )
        delta_e = total_energy(res.states[-1], grid, pcm) - total_energy(x0, grid, pcm)
        influx = float(res.boundary_energy[-1])
        assert influx > 0.0
        # global error of a one-step method accumulates ~ steps * local tolerance
        bound = 10.0 * cfg.rel_tol * res.n_accepted * influx
        assert abs(delta_e - influx) < bound

    def test_input_steps_respected_exactly(self, grid, fluid, pcm):
        # flow switches off halfway; totals must reflect only the first half
        t_series = TimeSeries(
            t=np.array([0.0, 10.0]),
            channels={"mdot_kg_s": np.array([0.1, 0.0]), "t_in_K": np.array([296.0, 296.0])},
        )
        signals = InputSignals.from_timeseries(t_series)
        assert signals.breakpoints.tolist() == [10.0]
        x0 = np.full(grid.n, 290.0)
        res = integrate(
            x0,
            signals,
            OdeConfig(rel_tol=1e-8, abs_tol=1e-8),
            (0.0, 20.0),
            grid,
            fluid,
            pcm,
            dt_out=0.5,
            track_boundary_energy=True,
        )
        # after shutoff the boundary term must freeze
        idx_on = np.searchsorted(res.t, 10.0)
        later = res.boundary_energy[idx_on + 1 :]
        assert np.max(np.abs(np.diff(later))) < 1e-9 * max(abs(res.boundary_energy[-1]), 1.0)

    def test_step_collapse_raises_stiffness_error(self, grid, fluid, pcm):
        cfg = OdeConfig(rel_tol=1e-13, abs_tol=1e-15, max_dt=1.0, min_dt=0.05)
        with pytest.raises(StiffnessError, match="step size collapsed"):
            integrate(
                np.full(grid.n, 284.0),
                InputSignals.constant(0.18, 300.0),
                cfg,
                (0.0, 5.0),
                grid,
                fluid,
                pcm,
                dt_out=0.5,
            )

    def test_monotone_outlet_approach_after_step(self, grid, fluid, pcm):
        x0 = np.full(grid.n, 284.0)
        res = integrate(
            x0,
            InputSignals.constant(0.1, 296.0),
            OdeConfig(rel_tol=1e-8, abs_tol=1e-8),
            (0.0, 120.0),
            grid,
            fluid,
            pcm,
            dt_out=0.25,
        )
        outlet = res.states[:, grid.nx - 1]
        tail = outlet[res.t >= 5.0]
        assert np.all(np.diff(tail) >= -1e-9)
        assert tail[-1] < 296.0

    def test_frozen_step_chain_matches_ode(self, grid, fluid, pcm):
        # chained exact frozen-in-time steps vs direct nonlinear integration
        dt = 0.0125
        horizon = 100.0
        u = 0.08

        def t_in(t):
            return 288.0 + 0.05 * t  # slow ramp through the latent band

        n_steps = int(round(horizon / dt))
        x = np.full(grid.n, 288.0)
        chain = [x.copy()]
        for k in range(n_steps):
            A, B = assemble(grid, fluid, pcm, x, t_in(k * dt))
            step = discretize(A, B, dt)
            x = step.phi @ x + step.gamma * u
            chain.append(x.copy())
        chain = np.asarray(chain)

        res = integrate(
            np.full(grid.n, 288.0),
            InputSignals(mdot=lambda t: u, t_in=t_in),
            OdeConfig(rel_tol=1e-11, abs_tol=1e-11),
            (0.0, horizon),
            grid,
            fluid,
            pcm,
            dt_out=dt,
        )
        assert np.max(np.abs(chain - res.states)) < 1e-3


class TestProjection:
    def test_uniform_field_preserved(self, pcm):
        fine = make_grid(21, 22)
        coarse = make_grid(3, 7)
        x = np.full(fine.n, 300.0)
        np.testing.assert_allclose(
            project_fine_to_coarse(x, fine, coarse), np.full(coarse.n, 300.0), rtol=1e-14
        )

    def test_mass_weighted_mean_arithmetic(self):
        assert mass_weighted_mean(np.array([280.0, 300.0]), np.array([1.0, 3.0])) == 295.0

    def test_projection_rows_are_mass_weights(self):
        fine = make_grid(21, 22)
        coarse = make_grid(3, 7)
        P = projection_matrix(fine, coarse)
        np.testing.assert_allclose(P.sum(axis=1), np.ones(coarse.n), rtol=1e-12)
        # role preservation: coarse fluid rows draw only from fine fluid cells
        fine_fluid = fine.mask(CellRole.FLUID)
        for row in range(coarse.nx):
            assert np.all(P[row, ~fine_fluid] == 0.0)
            np.testing.assert_allclose(
                P[row, P[row] > 0], fine.mass[P[row] > 0] / fine.mass[P[row] > 0].sum()
            )

    def test_total_cpcm_mass_preserved_through_weights(self, pcm):
        fine = make_grid(21, 22)
        coarse = make_grid(3, 7)
        P = projection_matrix(fine, coarse)
        # projecting then summing with coarse masses equals fine mass-weighted sum
        x = np.linspace(280.0, 300.0, fine.n)
        lhs = float(coarse.mass @ (P @ x))
        rhs_ = float(fine.mass @ x)
        assert lhs == pytest.approx(rhs_, rel=1e-12)

    def test_affine_equivariance(self, rng):
        fine = make_grid(21, 22)
        coarse = make_grid(3, 7)
        x = rng.uniform(280.0, 300.0, fine.n)
        shifted = project_fine_to_coarse(x + 5.0, fine, coarse)
        np.testing.assert_allclose(shifted, project_fine_to_coarse(x, fine, coarse) + 5.0, rtol=1e-13)

    def test_trajectory_projection(self, rng):
        fine = make_grid(21, 22)
        coarse = make_grid(3, 7)
        X = rng.uniform(280.0, 300.0, (7, fine.n))
        out = project_fine_to_coarse(X, fine, coarse)
        assert out.shape == (7, coarse.n)
        np.testing.assert_allclose(out[3], project_fine_to_coarse(X[3], fine, coarse))

    def test_non_partitioning_grids_rejected(self):
        fine = make_grid(20, 22)  # 20 columns do not split into 3
        coarse = make_grid(3, 7)
        with pytest.raises(InvalidConfigError):
            projection_matrix(fine, coarse)

    def test_mismatched_geometry_rejected(self):
        fine = make_grid(21, 22, length=0.24)
        coarse = make_grid(3, 7)
        with pytest.raises(InvalidConfigError, match="length"):
            projection_matrix(fine, coarse)


def coarse_traj_constant(grid, value=290.0, n=10001, dt=0.0125):
    t = dt * np.arange(n)
    states = np.full((n, grid.n), value)
    return TimeSeries(t=t, channels={f"cv{j+1}_K": states[:, j] for j in range(grid.n)})


class TestSynthesizeMeasurements:
    def sensors(self):
        return (
            Sensor("tc1", column=3, layer=1, averaged=False),
            Sensor("tc2", column=1, layer=3, averaged=True),
        )

    def test_zero_noise_reproduces_truth(self, grid):
        traj = coarse_traj_constant(grid, 291.5, n=801)
        spec = MeasurementSpec(sensors=self.sensors(), sample_rate_hz=10.0, seed=1, sigma2=0.0)
        out = synthesize_measurements(traj, spec, grid)
        np.testing.assert_array_equal(out.channel("tc1_K"), 291.5)
        assert out.t[0] == 0.0
        assert out.t[1] == pytest.approx(0.1)

    def test_seeded_reproducibility(self, grid):
        traj = coarse_traj_constant(grid)
        spec = MeasurementSpec(sensors=self.sensors(), sample_rate_hz=80.0, seed=77)
        a = synthesize_measurements(traj, spec, grid)
        b = synthesize_measurements(traj, spec, grid)
        np.testing.assert_array_equal(a.channel("tc1_K"), b.channel("tc1_K"))
        c = synthesize_measurements(
            traj, MeasurementSpec(sensors=self.sensors(), sample_rate_hz=80.0, seed=78), grid
        )
        assert np.any(c.channel("tc1_K") != a.channel("tc1_K"))

    def test_noise_variance_calibration(self, grid):
        traj = coarse_traj_constant(grid, n=10001)
        spec = MeasurementSpec(sensors=self.sensors(), sample_rate_hz=80.0, seed=5)
        out = synthesize_measurements(traj, spec, grid)
        single = out.channel("tc1_K") - 290.0
        paired = out.channel("tc2_K") - 290.0
        assert np.var(single) == pytest.approx(0.007, rel=0.10)
        assert np.var(paired) == pytest.approx(0.0035, rel=0.10)

    def test_trajectory_must_cover_samples(self, grid):
        traj = coarse_traj_constant(grid, n=11)
        spec = MeasurementSpec(
            sensors=self.sensors(), sample_rate_hz=10.0, seed=1, t_start=-1.0
        )
        with pytest.raises(InvalidInputError):
            synthesize_measurements(traj, spec, grid)


class TestRmse:
    def test_zero_error(self):
        x = np.zeros((5, 3))
        np.testing.assert_array_equal(rmse_over_cells(x, x), np.zeros(5))
        assert rmse_over_time(np.zeros(5), np.zeros(5)) == 0.0

    def test_constant_error(self):
        a = np.full((4, 6), 2.5)
        b = np.zeros((4, 6))
        np.testing.assert_allclose(rmse_over_cells(a, b), 2.5)
        assert rmse_over_time(a[:, 0], b[:, 0]) == pytest.approx(2.5)

    def test_two_cell_arithmetic(self):
        x_hat = np.array([[3.0, 4.0]])
        truth = np.zeros((1, 2))
        assert rmse_over_cells(x_hat, truth)[0] == pytest.approx(np.sqrt(12.5))

    def test_misaligned_shapes_rejected(self):
        with pytest.raises(InvalidInputError):
            rmse_over_cells(np.zeros((3, 2)), np.zeros((4, 2)))
        with pytest.raises(InvalidInputError):
            rmse_over_time(np.zeros(3), np.zeros(4))
