"""
Tests for trap-centre trajectories, equilibria, in-plane oscillation and sweeps
"""

import math

import numpy as np
import pytest
from core_model import coulomb_constant, frequency_scales, with_overrides
from errors import ConfigValidationError
from models import SeparationMode
from transport import (
    integrate_classical_motion,
    realize_ratios,
    separation,
    separation_profile,
    solve_equilibrium,
    sweep_equilibrium,
    sweep_oscillation,
    trap_centers,
)


def fixed_point_displacement(coulomb_ratio: float) -> float:
    """delta/d at closest approach from delta = kappa / (1 + 2 delta)^2"""
    kappa = coulomb_ratio**2
    delta = kappa
    for _ in range(200):
        delta = kappa / (1.0 + 2.0 * delta) ** 2
    return delta


@pytest.mark.unit
class TestTrapCenters:
    """Closed-form trap trajectories"""

    def test_positions(self, reference_config):
        q1, q2 = trap_centers(reference_config, 5e-6)
        np.testing.assert_array_equal(q1, np.zeros(3))
        np.testing.assert_allclose(q2, [1e-5, 1e-6, 0.0])

    def test_trap_center_separation(self, reference_config):
        t = np.array([-25e-6, 0.0, 12e-6])
        R = separation(reference_config, t, SeparationMode.TRAP_CENTER)
        np.testing.assert_allclose(R, np.hypot(1e-5, 0.2 * t), rtol=1e-15)

    def test_scalar_time_gives_float(self, reference_config):
        assert isinstance(separation(reference_config, 0.0), float)


@pytest.mark.unit
class TestEquilibrium:
    """Coulomb-shifted equilibria"""

    def test_closest_approach_matches_fixed_point(self, reference_config):
        state = solve_equilibrium(reference_config, 0.0)
        expected = fixed_point_displacement(frequency_scales(reference_config).coulomb_ratio)
        assert expected == pytest.approx(3.25e-3, rel=1e-2)
        assert state.max_displacement / reference_config.d == pytest.approx(
            expected, rel=1e-9
        )
        assert state.R == pytest.approx(reference_config.d * (1.0 + 2.0 * expected), rel=1e-9)

    def test_displacements_are_opposite(self, reference_config):
        state = solve_equilibrium(reference_config, 7e-6)
        np.testing.assert_allclose(
            state.delta1, -state.delta2, atol=1e-12 * reference_config.d
        )
        # ions are pushed apart
        assert state.delta1[0] < 0 < state.delta2[0]

    def test_force_balance(self, reference_config):
        config = reference_config
        state = solve_equilibrium(config, -4e-6)
        stiffness = config.ion_mass * np.array(
            [config.omega_x, config.omega_y, config.omega_z]
        ) ** 2
        r = state.q1_0 - state.q2_0
        repulsion = coulomb_constant(config) * r / np.linalg.norm(r) ** 3
        net1 = -stiffness * state.delta1 + repulsion
        net2 = -stiffness * state.delta2 - repulsion
        assert np.linalg.norm(net1) <= 1e-15
        assert np.linalg.norm(net2) <= 1e-15

    def test_equilibrium_separation_even_in_time(self, reference_config):
        t = np.array([-20e-6, -3e-6])
        early = separation(reference_config, t)
        late = separation(reference_config, -t)
        np.testing.assert_allclose(early, late, rtol=1e-12)

    def test_profile_matches_direct_solve(self, reference_config):
        profile = separation_profile(reference_config, -25e-6, 25e-6)
        t = np.array([-17.3e-6, 0.41e-6, 22.2e-6])
        np.testing.assert_allclose(profile(t), separation(reference_config, t), rtol=1e-10)

    def test_trap_center_profile_is_closed_form(self, reference_config):
        profile = separation_profile(
            reference_config, -25e-6, 25e-6, SeparationMode.TRAP_CENTER
        )
        assert profile(3e-6) == pytest.approx(math.hypot(1e-5, 0.6e-6), rel=1e-15)


@pytest.mark.integration
class TestClassicalMotion:
    """In-plane oscillation about the moving equilibria"""

    def test_antisymmetric_motion(self, reference_config):
        config = with_overrides(reference_config, {"v": 20.0})
        record = integrate_classical_motion(config, t_span=(-2e-6, 2e-6))
        assert record.antisymmetry_error <= 1e-12 * config.d
        assert np.max(record.xi_max) > 0

    def test_vanishing_charge_gives_no_motion(self, reference_config):
        config = with_overrides(reference_config, {"ion_charge": 1e-30})
        record = integrate_classical_motion(config, t_span=(-1e-6, 1e-6))
        assert np.max(record.xi_max) / config.d < 1e-18
        assert record.adiabatic

    def test_record_covers_window(self, reference_config):
        config = with_overrides(reference_config, {"v": 20.0})
        record = integrate_classical_motion(config, lead=3.0)
        assert record.covers(-0.5 * config.w / config.v, 0.5 * config.w / config.v)
        assert record.t[0] == pytest.approx(-3.0 * config.d / config.v, rel=1e-12)


@pytest.mark.unit
class TestRatioRealization:
    """Mapping dimensionless ratios back to d and v"""

    def test_realize_ratios(self, reference_config):
        cell = realize_ratios(reference_config, f1_ratio=0.01, f2_ratio=0.03)
        scales = frequency_scales(cell)
        assert scales.shuttling_ratio == pytest.approx(0.01, rel=1e-12)
        assert scales.coulomb_ratio == pytest.approx(0.03, rel=1e-12)
        assert cell.w / cell.d == pytest.approx(reference_config.w / reference_config.d)

    @pytest.mark.parametrize("grid", [[], [0.02, 0.01], [-0.01, 0.02], [0.01, float("nan")]])
    def test_bad_grids_rejected(self, reference_config, grid):
        with pytest.raises(ConfigValidationError):
            sweep_equilibrium(reference_config, grid)


@pytest.mark.integration
class TestEquilibriumSweep:
    """Maximum equilibrium displacement against f2/f3"""

    def test_reference_value(self, reference_config):
        ratio = frequency_scales(reference_config).coulomb_ratio
        sweep = sweep_equilibrium(reference_config, [ratio], samples=21)
        record = sweep.records[0]
        assert record.converged
        assert record.value == pytest.approx(fixed_point_displacement(ratio), rel=1e-6)
        assert record.t_at_max == pytest.approx(0.0, abs=1e-15)

    def test_quadratic_small_coupling(self, reference_config):
        sweep = sweep_equilibrium(reference_config, [0.005, 0.01], samples=21)
        small, large = (r.value for r in sweep.records)
        assert math.log(large / small) / math.log(2.0) == pytest.approx(2.0, abs=0.01)

    def test_failed_cell_recorded(self, reference_config):
        """An unstable zigzag cell is reported, not raised"""
        sweep = sweep_equilibrium(reference_config, [0.01, 2.0], samples=11)
        assert sweep.records[0].converged
        assert not sweep.records[1].converged
        assert sweep.records[1].value is None
        assert sweep.records[1].message


@pytest.mark.slow
class TestOscillationSweep:
    """Oscillation amplitude across the constraint plane"""

    def test_grows_with_coulomb_ratio(self, reference_config):
        sweep = sweep_oscillation(reference_config, [0.05], [0.001, 0.02, 0.04], lead=10.0)
        values = [r.value for r in sweep.records]
        assert all(r.converged for r in sweep.records)
        assert values[0] < values[1] < values[2]
        assert values[0] < 1e-2 * values[2]
        assert sweep.axes == {"f1_ratio": [0.05], "f2_ratio": [0.001, 0.02, 0.04]}

    def test_reference_point_is_adiabatic(self, reference_config):
        record = integrate_classical_motion(reference_config)
        assert record.adiabatic
        xi = np.max(record.window_max(-25e-6, 25e-6)[:2])
        assert (math.pi / 2.0) * (xi / reference_config.w) ** 4 < 1e-10


@pytest.mark.slow
class TestClassicalMotionAccuracy:
    """Time-reversal symmetry and tolerance convergence of the in-plane motion"""

    def test_time_reversal_symmetry(self, reference_config):
        """Far from non-adiabatic, the lag along d is even in t and along v odd"""
        config = with_overrides(reference_config, {"v": 5.0})
        record = integrate_classical_motion(config, lead=100.0, tol=1e-12)
        np.testing.assert_allclose(record.t, -record.t[::-1], rtol=0, atol=1e-12 * record.t[-1])
        xi = record.xi1
        along_d, along_v = xi[:, 0], xi[:, 1]
        assert np.max(np.abs(along_d - along_d[::-1])) <= 1e-3 * np.max(np.abs(along_d))
        assert np.max(np.abs(along_v + along_v[::-1])) <= 1e-3 * np.max(np.abs(along_v))

    def test_converges_on_halving_tolerance(self, reference_config):
        config = with_overrides(reference_config, {"v": 20.0})
        coarse = integrate_classical_motion(config, t_span=(-2e-6, 2e-6), tol=1e-10)
        fine = integrate_classical_motion(config, t_span=(-2e-6, 2e-6), tol=5e-11)
        assert np.max(fine.xi_max[:2]) > 0
        np.testing.assert_allclose(coarse.xi_max[:2], fine.xi_max[:2], rtol=1e-4)
