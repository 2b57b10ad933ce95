import pytest

import numpy as np

from metapatch import geometry, mechanics
from metapatch.errors import DegenerateCell, SingularElement


def straight_beam(n_elements, length, t=1.0, t_e=1.0):
    x = np.linspace(0., length, n_elements + 1)
    nodes = np.column_stack([x, np.zeros_like(x)])
    elements = np.column_stack([np.arange(n_elements), np.arange(1, n_elements + 1)])
    return geometry.Mesh(nodes=nodes, elements=elements, thickness=np.full(n_elements, t), t_e=t_e,
                         left_edge=np.array([0]), right_edge=np.array([n_elements]),
                         center_cell_nodes=np.arange(n_elements + 1))


@pytest.fixture
def small_patch():
    v = geometry.validate_design([10., 0.5, 1.5])
    return geometry.build_patch(v, max_segment=10. / 8, nx=3, ny=3)


class TestMaterial:

    def test_linear(self):
        m = mechanics.Material.linear(1000.)
        assert m.E0 == pytest.approx(1000.)
        assert m.is_linear
        assert m.stress_at(0.02) == pytest.approx(20.)
        assert m.stress_at(-2.) == pytest.approx(-2000.)

    def test_piecewise(self):
        m = mechanics.Material([-0.1, 0., 0.1, 0.2], [-100., 0., 100., 150.])
        assert m.E0 == pytest.approx(1000.)
        assert not m.is_linear
        assert m.stress_at(0.15) == pytest.approx(125.)
        assert m.tangent_at(0.15) == pytest.approx(500.)
        # extrapolation of the last segment
        assert m.stress_at(0.3) == pytest.approx(200.)

    def test_from_csv(self, tmp_path):
        filename = tmp_path / 'material.csv'
        filename.write_text("strain,stress_kPa\n-0.5,-400\n0,0\n0.5,400\n")
        m = mechanics.Material.from_csv(filename)
        assert m.E0 == pytest.approx(800.)

    @pytest.mark.parametrize('strain, stress', [([0., 0.1], [1., 2.]),
                                                ([0., 0.1, 0.05], [0., 1., 2.]),
                                                ([0., 0.1, 0.2], [0., 1., 0.5]),
                                                ([0.], [0.])])
    def test_invalid_curves(self, strain, stress):
        with pytest.raises(ValueError):
            mechanics.Material(strain, stress)


class TestConfig:

    def test_default_grid(self):
        grid = mechanics.default_strain_grid()
        assert len(grid) == 30
        assert grid[0] == pytest.approx(0.005)
        assert grid[-1] == pytest.approx(0.15)

    def test_wrong_grid(self):
        with pytest.raises(ValueError):
            mechanics.MechanicsConfig(strain_grid=np.linspace(0.01, 0.3, 30))

    def test_from_setup(self):
        config = mechanics.MechanicsConfig.from_setup({'nx': 3, 'newton_tol': 1e-8, 'material': None})
        assert config.nx == 3
        assert config.ny == 5
        assert config.newton_tol == 1e-8


class TestElement:

    def test_rigid_translation(self, small_patch):
        material = mechanics.Material.linear()
        state = np.zeros(3 * small_patch.n_nodes)
        state[0::3] = 1.7
        state[1::3] = -0.4
        f = mechanics.internal_force(small_patch, material, state)
        np.testing.assert_allclose(f, 0., atol=1e-12)

    def test_rigid_rotation(self, small_patch):
        material = mechanics.Material.linear()
        angle = np.radians(30.)
        c, s = np.cos(angle), np.sin(angle)
        X = small_patch.nodes
        state = np.zeros((small_patch.n_nodes, 3))
        state[:, 0] = c * X[:, 0] - s * X[:, 1] - X[:, 0]
        state[:, 1] = s * X[:, 0] + c * X[:, 1] - X[:, 1]
        state[:, 2] = angle
        f = mechanics.internal_force(small_patch, material, state.ravel())
        np.testing.assert_allclose(f, 0., atol=1e-9)

    def test_tangent_is_symmetric(self, small_patch):
        material = mechanics.Material.linear()
        rng = np.random.default_rng(0)
        state = 1e-2 * rng.standard_normal(3 * small_patch.n_nodes)
        K, _ = mechanics.assemble_tangent(small_patch, material, state)
        assert abs(K - K.T).max() < 1e-12

    def test_tangent_matches_finite_differences(self):
        mesh = straight_beam(3, 3.)
        material = mechanics.Material.linear(1000.)
        rng = np.random.default_rng(1)
        state = 1e-2 * rng.standard_normal(12)
        K, _ = mechanics.assemble_tangent(mesh, material, state)
        h = 1e-7
        numeric = np.zeros((12, 12))
        for j in range(12):
            dp, dm = state.copy(), state.copy()
            dp[j] += h
            dm[j] -= h
            numeric[:, j] = (mechanics.internal_force(mesh, material, dp) -
                             mechanics.internal_force(mesh, material, dm)) / (2 * h)
        np.testing.assert_allclose(K.toarray(), 0.5 * (numeric + numeric.T), rtol=1e-4, atol=1e-6)

    def test_zero_length_element(self):
        mesh = straight_beam(2, 2.)
        nodes = mesh.nodes.copy()
        nodes[1] = nodes[0]
        bad = geometry.Mesh(nodes=nodes, elements=mesh.elements, thickness=mesh.thickness, t_e=1.,
                            left_edge=mesh.left_edge, right_edge=mesh.right_edge,
                            center_cell_nodes=mesh.center_cell_nodes)
        with pytest.raises(SingularElement):
            mechanics.internal_force(bad, mechanics.Material.linear(), np.zeros(9))


class TestEquilibrium:

    def test_cantilever_tip_deflection(self):
        L, P = 10., 1e-7
        mesh = straight_beam(16, L)
        material = mechanics.Material.linear(1000.)
        n = 3 * mesh.n_nodes
        loads = np.zeros(n)
        loads[3 * 16 + 1] = P
        config = mechanics.MechanicsConfig(newton_tol=1e-10)
        state, info = mechanics.solve_equilibrium(mesh, material, [0, 1, 2], [0., 0., 0.], np.zeros(n),
                                                  loads=loads, config=config)
        EI = 1. * 1. ** 3 / 12.
        expected = P * L ** 3 / (3 * EI)
        assert state[3 * 16 + 1] == pytest.approx(expected, rel=5e-3)

    def test_axial_bar(self):
        L, delta = 4., 0.01
        mesh = straight_beam(4, L, t=2.)
        material = mechanics.Material.linear(1000.)
        n = 3 * mesh.n_nodes
        fixed = [0] + [3 * i + 1 for i in range(5)] + [3 * i + 2 for i in range(5)] + [12]
        values = np.zeros(len(fixed))
        values[-1] = delta
        state, info = mechanics.solve_equilibrium(mesh, material, fixed, values, np.zeros(n))
        EA = 1. * 2. * 1.
        np.testing.assert_allclose(info['reactions'][12], EA * delta / L, rtol=1e-10)
        np.testing.assert_allclose(info['reactions'][0], -EA * delta / L, rtol=1e-10)
        np.testing.assert_allclose(state[0:13:3], np.linspace(0., delta, 5), atol=1e-14)

    def test_patch_reactions_balance(self, small_patch):
        material = mechanics.Material.linear()
        config = mechanics.MechanicsConfig(newton_tol=1e-10, nx=3, ny=3)
        u_right = 0.005 * small_patch.width
        state, info = mechanics.solve_increment(small_patch, material, u_right,
                                                np.zeros(3 * small_patch.n_nodes), config=config)
        left, right, _ = mechanics.tension_constraints(small_patch)
        F_left = np.sum(info['reactions'][left])
        F_right = np.sum(info['reactions'][right])
        assert F_right > 0
        assert abs(F_left + F_right) <= 1e-8 * abs(F_right)

    def test_small_strain_matches_linear_solve(self, small_patch):
        material = mechanics.Material.linear()
        config = mechanics.MechanicsConfig(newton_tol=1e-10, nx=3, ny=3)
        u_right = 1e-6 * small_patch.width
        _, info = mechanics.solve_increment(small_patch, material, u_right,
                                            np.zeros(3 * small_patch.n_nodes), config=config)
        _, right, _ = mechanics.tension_constraints(small_patch)
        linear = mechanics.linear_reactions(small_patch, material, u_right)
        assert np.sum(info['reactions'][right]) == pytest.approx(linear, rel=1e-3)

    def test_re_entrant_patch_expands(self, small_patch):
        material = mechanics.Material.linear()
        config = mechanics.MechanicsConfig(nx=3, ny=3)
        u_right = 0.005 * small_patch.width
        state, _ = mechanics.solve_increment(small_patch, material, u_right,
                                             np.zeros(3 * small_patch.n_nodes), config=config)
        eps_x, eps_y = mechanics.measure_cell(small_patch, state)
        assert eps_x > 0
        assert mechanics.poisson_ratio(eps_x, eps_y) < 0


class TestMeasurements:

    def test_affine_state(self, small_patch):
        state = np.zeros((small_patch.n_nodes, 3))
        state[:, 0] = 0.02 * small_patch.nodes[:, 0]
        state[:, 1] = -0.01 * small_patch.nodes[:, 1]
        eps_x, eps_y = mechanics.measure_cell(small_patch, state.ravel())
        assert eps_x == pytest.approx(0.02)
        assert eps_y == pytest.approx(-0.01)
        assert mechanics.poisson_ratio(eps_x, eps_y) == pytest.approx(0.5)

    def test_empty_cell(self):
        mesh = straight_beam(2, 2.)
        empty = geometry.Mesh(nodes=mesh.nodes, elements=mesh.elements, thickness=mesh.thickness, t_e=1.,
                              left_edge=mesh.left_edge, right_edge=mesh.right_edge,
                              center_cell_nodes=np.array([], dtype=int))
        with pytest.raises(DegenerateCell):
            mechanics.measure_cell(empty, np.zeros(9))

    def test_flat_cell(self):
        with pytest.raises(DegenerateCell):
            mechanics.measure_cell(straight_beam(2, 2.), np.zeros(9))

    def test_nominal_stress(self):
        # 1 N over 5 cells of 10 mm and 1 mm depth: 0.02 N/mm^2
        assert mechanics.nominal_stress(1., 10., 1.) == pytest.approx(20.)
        assert mechanics.nominal_stress(1., 10., 2., n_cells=1) == pytest.approx(50.)

    def test_nominal_stress_invalid(self):
        with pytest.raises(ValueError):
            mechanics.nominal_stress(1., 0., 1.)


@pytest.mark.slow
class TestTensionTest:

    def test_curves(self):
        v = geometry.validate_design([10., 0.5, 1.5])
        config = mechanics.MechanicsConfig(nx=3, ny=3, segments_per_wavelength=8)
        curves, trace = mechanics.run_tension_test(v, config=config)
        assert len(curves.nu) == 30
        assert np.all(np.isfinite(curves.nu))
        assert np.all(curves.sigma > 0)
        assert curves.nu[0] < 0
        np.testing.assert_allclose(trace.applied_strain, config.strain_grid)

    def test_scale_invariance(self):
        config = mechanics.MechanicsConfig(nx=3, ny=3, segments_per_wavelength=8, newton_tol=1e-9)
        small, _ = mechanics.run_tension_test(geometry.validate_design([5., 0.25, 0.75]), config=config)
        large, _ = mechanics.run_tension_test(geometry.validate_design([10., 0.5, 1.5]), config=config)
        np.testing.assert_allclose(small.nu, large.nu, rtol=1e-3, atol=1e-6)
        np.testing.assert_allclose(small.sigma, large.sigma, rtol=1e-3)

    def test_reference_design_is_auxetic(self):
        # 5 x 5 patch at lam / 32 resolution
        v = geometry.validate_design([9., 1.10, 0.50])
        curves, trace = mechanics.run_tension_test(v)
        at_5_percent = int(np.argmin(np.abs(curves.strain_grid - 0.05)))
        assert curves.strain_grid[at_5_percent] == pytest.approx(0.05)
        assert curves.nu[at_5_percent] < 0
        assert np.all(curves.sigma > 0)
        assert max(trace.residual) < 1e-6

    def test_mesh_refinement_converges(self):
        v = geometry.validate_design([10., 0.5, 1.5])
        nu = []
        for segments in (8, 16, 32):
            config = mechanics.MechanicsConfig(nx=3, ny=3, segments_per_wavelength=segments, newton_tol=1e-9)
            curves, _ = mechanics.run_tension_test(v, config=config)
            nu.append(curves.nu)

        coarse = np.max(np.abs(nu[1] - nu[0]))
        fine = np.max(np.abs(nu[2] - nu[1]))
        assert fine < coarse
        assert fine < 0.05 * np.max(np.abs(nu[2]))
