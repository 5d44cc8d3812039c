import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alveolus import fem, transport
from alveolus.linalg import SolverError
from alveolus.mesh import Mesh, Pipe, PipeRole, box_mesh, unit_cube_mesh
from alveolus.transport import (
    AdvectionOperators,
    GasParams,
    GasSource,
    PhaseParams,
    WaterParams,
)


@pytest.fixture(scope="module")
def V():
    return fem.P1Space(unit_cube_mesh(3, side=15.0))


class TestPhaseLaws:
    def test_rankine_values(self):
        assert transport.vapor_pressure_rankine(308.0) == pytest.approx(133.322 * np.exp(20.386 - 5132 / 308))
        assert transport.vapor_pressure_rankine(308.0) == pytest.approx(5.52e3, rel=2e-3)
        assert transport.vapor_pressure_rankine(373.0) == pytest.approx(1.007e5, rel=2e-3)

    def test_rankine_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            transport.vapor_pressure_rankine(np.array([300.0, 0.0]))

    @settings(max_examples=30)
    @given(st.floats(100.0, 1000.0), st.floats(1e-3, 100.0))
    def test_rankine_monotone(self, T, dT):
        assert transport.vapor_pressure_rankine(T + dT) > transport.vapor_pressure_rankine(T)

    def test_linear_values(self):
        assert transport.vapor_pressure_linear(288.0) == pytest.approx(1.712e3, rel=1e-3)
        assert transport.vapor_pressure_linear(328.0) == pytest.approx(1.5228e4, rel=1e-4)

    def test_threshold(self):
        assert transport.saturation_threshold(1.0, 308.0, 1.013e5) == pytest.approx(0.08362, rel=1e-4)
        assert transport.saturation_threshold(0.0, 308.0, 1.013e5) == 0.0
        a = transport.saturation_threshold(np.array([0.7]), 300.0, 1.013e5)
        assert transport.saturation_threshold(np.array([1.4]), 300.0, 1.013e5) == pytest.approx(2 * a)
        with pytest.raises(ValueError):
            transport.saturation_threshold(1.0, 300.0, 0.0)

    def test_condensation_and_evaporation(self):
        assert transport.condensation_rate(2.0, 1.0, 0.1) == pytest.approx(0.1)
        assert transport.condensation_rate(0.5, 1.0, 0.1) == 0.0
        assert transport.condensation_rate(3.0, 1.0, 0.1) == pytest.approx(0.2)
        assert transport.evaporation_rate(0.5, 1.0, 10.0) == 0.0
        assert transport.evaporation_rate(0.5, 1.0, 0.0, c_wh=1.0) == 0.0
        assert transport.evaporation_rate(2.0, 1.0, 10.0, c_wh=1.0) == 0.0
        assert transport.evaporation_rate(0.5, 1.0, 10.0, c_wh=0.2) == pytest.approx(1.0)

    def test_total_concentration(self):
        state = {k: np.full(3, v) for k, v in zip(("Cdx", "M", "O", "N", "h"), (1, 2, 3, 4, 5.0))}
        assert np.all(transport.total_concentration(state) == 15.0)

    def test_params_validated(self):
        with pytest.raises(ValueError):
            PhaseParams(P0=0.0)
        with pytest.raises(ValueError):
            PhaseParams(c_hw=-1.0)
        with pytest.raises(ValueError):
            GasParams(c_M=-1.0)
        with pytest.raises(ValueError):
            WaterParams(k_w=0.0)


class TestTau:
    def test_formula(self):
        mesh = Mesh.from_arrays([[0, 0, 0], [5, 0, 0], [2.5, 1, 0], [2.5, 0, 1.0]], [[0, 1, 2, 3]])
        assert transport.supg_tau(mesh, np.array([1.0, 0, 0])) == pytest.approx(2.5)
        assert transport.supg_tau(mesh, np.zeros(3)) == 0.0

    @settings(max_examples=20)
    @given(st.floats(1e-6, 1e3))
    def test_homogeneity(self, s):
        mesh = unit_cube_mesh(1)
        u = np.array([0.3, -0.4, 1.2]) * s
        assert transport.supg_tau(mesh, 2 * u) == pytest.approx(transport.supg_tau(mesh, u) / 2)

    def test_quadrature_input_matches_uniform(self):
        mesh = unit_cube_mesh(2)
        u = np.array([0.0, 3.0, 4.0])
        uq = np.broadcast_to(u, (mesh.n_tets, 4, 3))
        assert transport.supg_tau(mesh, uq) == pytest.approx(transport.supg_tau(mesh, u))


class TestGasStep:
    def test_identity_at_rest(self, V):
        rng = np.random.default_rng(0)
        G = rng.random(V.ndofs)
        ops = AdvectionOperators(V, np.zeros(3), 365.0, direct=False)
        assert np.abs(transport.step_gas(ops, G) - G).max() < 1e-10

    def test_carbon_source_at_rest(self, V):
        rng = np.random.default_rng(1)
        G = rng.random(V.ndofs)
        dC = -0.1 * rng.random(V.ndofs)
        ops = AdvectionOperators(V, np.zeros(3), 365.0)
        G1 = transport.step_gas(ops, G, GasSource.carbon(1.8e7, dC))
        assert np.allclose(G1, G - 1.8e7 / 0.3 * dC, rtol=1e-12)

    def test_production_ratio(self, V):
        rng = np.random.default_rng(2)
        dC = -0.1 * rng.random(V.ndofs)
        dC[::3] = 0.0
        ops = AdvectionOperators(V, np.zeros(3), 365.0)
        prm = GasParams()
        M = transport.step_gas(ops, np.ones(V.ndofs), GasSource.carbon(prm.c_M, dC)) - 1.0
        C = transport.step_gas(ops, np.ones(V.ndofs), GasSource.carbon(prm.c_C, dC)) - 1.0
        changed = dC != 0
        assert np.allclose(M[changed] / C[changed], prm.c_M / prm.c_C, rtol=1e-10)

    def test_zero_is_fixed_point(self, V):
        u = np.array([0.1, 0.0, -0.2])
        ops = AdvectionOperators(V, u, 365.0)
        assert np.all(transport.step_gas(ops, np.zeros(V.ndofs)) == 0.0)

    def test_symmetric_at_rest_and_supg_difference(self, V):
        rest = AdvectionOperators(V, np.zeros(3), 10.0)
        assert rest.tau == 0.0 and rest.system.symmetric
        u = np.array([0.2, 0.1, -0.3])
        plain = AdvectionOperators(V, u, 10.0, tau=0.0)
        supg = AdvectionOperators(V, u, 10.0)
        diff = (supg.system.csr - plain.system.csr).toarray()
        S = fem.assemble_streamline_mass(V, u).toarray()
        Vs = fem.assemble_streamline_diffusion(V, u).toarray()
        assert np.allclose(diff, supg.tau * (0.3 * S + 10.0 * Vs), atol=1e-12 * np.abs(diff).max())

    def test_direct_and_iterative_agree(self, V):
        u = np.array([1e-3, 0.0, -2e-3])
        G = np.random.default_rng(3).random(V.ndofs)
        a = transport.step_gas(AdvectionOperators(V, u, 1.0), G)
        b = transport.step_gas(AdvectionOperators(V, u, 1.0, direct=False, tol=1e-12), G)
        assert np.allclose(a, b, atol=1e-9)

    def test_singular_system_reported(self, V):
        ops = AdvectionOperators(V, np.zeros(3), 1.0, phi=0.0)
        with pytest.raises(SolverError):
            transport.step_gas(ops, np.ones(V.ndofs))

    def test_validation(self, V):
        with pytest.raises(ValueError):
            AdvectionOperators(V, np.zeros(3), 0.0)


class TestWaterAndPhase:
    def test_still_uniform_water_is_steady(self, V):
        ops = transport.water_operators(V, 365.0, WaterParams(u_w=0.0))
        w = np.full(V.ndofs, 50.0)
        assert np.allclose(transport.step_water(ops, w), w, rtol=1e-12)

    def test_uniform_drift_keeps_uniform_field(self, V):
        ops = transport.water_operators(V, 365.0)
        w = np.full(V.ndofs, 50.0)
        assert np.allclose(transport.step_water(ops, w), w, rtol=1e-12)

    def test_injection_mass_growth(self):
        mesh = box_mesh((8, 4, 4), (40.0, 20.0, 20.0))
        V = fem.P1Space(mesh)
        pipes = [Pipe(np.array([[7.5, y, 10.0], [32.5, y, 10.0]]), PipeRole.INJECTOR) for y in (5.0, 15.0)]
        dt, phi = 10.0, 0.3
        ops = transport.water_operators(V, dt, WaterParams(u_w=0.0), phi)
        load = transport.injector_load(V, pipes, 258.0, radius=5.0)
        w0 = np.full(V.ndofs, 50.0)
        w1 = transport.step_water(ops, w0, injection=load)
        gained = fem.integrate_field(V, w1 - w0)
        assert gained == pytest.approx(dt * len(pipes) * 258.0 / phi, rel=1e-10)

    @pytest.mark.parametrize("implicit", [True, False])
    def test_condensation_conserves_water(self, V, implicit):
        rng = np.random.default_rng(4)
        dt, phi = 30.0, 0.3
        gas = AdvectionOperators(V, np.zeros(3), dt, phi)
        water = transport.water_operators(V, dt, WaterParams(u_w=0.0), phi)
        h0 = 0.05 + 0.1 * rng.random(V.ndofs)
        w0 = np.full(V.ndofs, 40.0)
        thr = np.full(V.ndofs, 0.08)
        dC = np.zeros(V.ndofs)
        if implicit:
            h1, F = transport.step_vapor_implicit(gas, h0, 0.0, dC, thr, 0.1)
        else:
            F = transport.condensation_rate(h0, thr, 0.1)
            h1 = transport.step_gas(gas, h0, GasSource.vapor(0.0, dC, F))
        w1 = transport.step_water(water, w0, condensation=F)
        dh = fem.integrate_field(V, h1 - h0)
        dw = fem.integrate_field(V, w1 - w0)
        assert dh < 0
        assert phi * (dh + dw) == pytest.approx(0.0, abs=1e-8 * phi * abs(dw))

    def test_implicit_condensation_stops_at_threshold(self, V):
        gas = AdvectionOperators(V, np.zeros(3), 1e4)
        h0 = np.full(V.ndofs, 0.5)
        h1, F = transport.step_vapor_implicit(gas, h0, 0.0, np.zeros(V.ndofs), 0.08, 0.1)
        assert np.all(h1 >= 0.08 - 1e-12) and np.all(F >= 0)

    @staticmethod
    def water_mms_orders(make_ops):
        phi, prm = 0.3, WaterParams(u_w=1.0, k_w=0.1)
        u = prm.velocity

        def exact(p, t):
            return np.cos(np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1]) * np.cos(np.pi * p[:, 2]) * (1 + t)

        def forcing(p, t):
            # linear in time, so backward Euler is exact in time
            g = exact(p, 0.0)
            dgz = -np.pi * np.cos(np.pi * p[:, 0]) * np.cos(np.pi * p[:, 1]) * np.sin(np.pi * p[:, 2])
            return phi * g + (1 + t) * (u[2] * dgz + 3 * np.pi**2 * prm.k_w * g)

        errs = []
        dt, steps = 0.05, 4
        for n in (4, 8, 16):
            V = fem.P1Space(unit_cube_mesh(n))
            ops = make_ops(V, dt, prm, phi)
            w = fem.interpolate(V, lambda p: exact(p, 0.0))
            for k in range(steps):
                t1 = (k + 1) * dt
                w = transport.step_water(ops, w, condensation=fem.interpolate(V, lambda p: forcing(p, t1)))
            errs.append(fem.l2_norm(V, w - fem.interpolate(V, lambda p: exact(p, steps * dt))))
        return np.log2(np.array(errs[:-1]) / np.array(errs[1:]))

    def test_water_manufactured_convergence_galerkin(self):
        orders = self.water_mms_orders(
            lambda V, dt, prm, phi: AdvectionOperators(V, prm.velocity, dt, phi, tau=0.0, diffusion=prm.k_w))
        assert np.all(orders >= 1.5), orders

    @pytest.mark.xfail(strict=True, reason="the global tau with the P1 Laplacian dropped from the SUPG "
                                           "residual leaves an O(tau k) consistency error")
    def test_water_manufactured_convergence_supg(self):
        orders = self.water_mms_orders(transport.water_operators)
        assert np.all(orders >= 1.5), orders
