"""
Tests for the driven mode responses, geometric phase and fidelity
"""

import math

import numpy as np
import pytest
from constants import HBAR, TARGET_PHASE
from core_model import gate_window, with_overrides
from errors import GridMismatchError
from gate import (
    TRAJECTORY_COLUMNS,
    carrier_frequency,
    envelope,
    error_budget,
    evaluate_gate,
    fidelity,
    fidelity_breakdown,
    force,
    geometric_phase,
    integrate_mode_response,
    lamb_dicke_estimate,
    trajectory_table,
)
from models import (
    ClosureResiduals,
    DetuningConvention,
    PulseShape,
    SeparationMode,
)
from transport import OscillationRecord

OMEGA_Z = 2.0 * math.pi * 5e6


def loop_ratio(trajectory, omega_z):
    """Final phase-space radius over the peak radius of one mode"""
    radius = np.hypot(trajectory.u, trajectory.u_dot / omega_z)
    return radius[-1] / radius.max()


@pytest.mark.unit
class TestDrive:
    """Carrier, envelope and force"""

    def test_relative_carrier(self, reference_config):
        assert carrier_frequency(reference_config, -0.06 * OMEGA_Z) == pytest.approx(
            0.94 * OMEGA_Z
        )

    def test_absolute_carrier(self, reference_config):
        config = with_overrides(
            reference_config, {"detuning_convention": DetuningConvention.ABSOLUTE}
        )
        assert carrier_frequency(config, 0.94 * OMEGA_Z) == pytest.approx(0.94 * OMEGA_Z)

    def test_envelope_segments(self, reference_config):
        pulse = PulseShape(segments=(1.0, 2.0, 3.0, 4.0, 5.0), mu=0.0)
        window = gate_window(reference_config)
        t = np.array([-30e-6, -24e-6, -14e-6, 1e-6, 6e-6, 24e-6, 30e-6])
        np.testing.assert_array_equal(
            envelope(pulse, window, t), [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 0.0]
        )
        assert envelope(pulse, window, window.t_end) == 5.0

    def test_force_zero_outside_window(self, reference_config, small_pulse):
        assert force(reference_config, small_pulse, 30e-6) == 0.0
        inside = force(reference_config, small_pulse, 1e-6)
        expected = (
            -HBAR
            * reference_config.k_eff
            * small_pulse.segments[2]
            * math.sin(0.94 * OMEGA_Z * 1e-6)
        )
        assert inside == pytest.approx(expected, rel=1e-9)


@pytest.mark.integration
class TestModeResponse:
    """Driven responses of the two modes"""

    def test_com_matches_closed_form(self, reference_config):
        """Constant-frequency COM response equals the forced-oscillator solution"""
        chi = 0.3 * OMEGA_Z
        pulse = PulseShape.uniform(chi, -0.06 * OMEGA_Z, 5)
        trajectory = integrate_mode_response(reference_config, pulse, 1, tol=1e-12)
        omega_d = 0.94 * OMEGA_Z
        t0 = gate_window(reference_config).t0
        a = -HBAR * reference_config.k_eff * chi / reference_config.ion_mass
        scale = a / (OMEGA_Z**2 - omega_d**2)
        t = trajectory.t
        expected = (
            scale * np.sin(omega_d * t)
            - scale * math.sin(omega_d * t0) * np.cos(OMEGA_Z * (t - t0))
            - scale * omega_d / OMEGA_Z * math.cos(omega_d * t0) * np.sin(OMEGA_Z * (t - t0))
        )
        error = np.max(np.abs(trajectory.u - expected))
        assert error <= 1e-8 * np.max(np.abs(expected))

    def test_starts_from_rest(self, reference_config, small_pulse):
        trajectory = integrate_mode_response(reference_config, small_pulse, 2)
        assert trajectory.u[0] == 0.0
        assert trajectory.u_dot[0] == 0.0
        assert trajectory.t[0] == pytest.approx(-25e-6, rel=1e-12)
        assert trajectory.t[-1] == pytest.approx(25e-6, rel=1e-12)

    def test_superposition(self, reference_config):
        mu = -0.06 * OMEGA_Z
        first = PulseShape(segments=(0.1, -0.2, 0.05, 0.3, -0.1), mu=mu).scaled(OMEGA_Z)
        second = PulseShape(segments=(-0.05, 0.1, 0.2, 0.0, 0.15), mu=mu).scaled(OMEGA_Z)
        combined = first.with_segments(first.amplitudes + second.amplitudes)
        responses = [
            integrate_mode_response(reference_config, p, 2, tol=1e-12)
            for p in (first, second, combined)
        ]
        total = responses[0].u + responses[1].u
        error = np.max(np.abs(responses[2].u - total))
        assert error <= 1e-8 * np.max(np.abs(responses[2].u))

    def test_invalid_mode(self, reference_config, small_pulse):
        with pytest.raises(ValueError):
            integrate_mode_response(reference_config, small_pulse, 3)


@pytest.mark.integration
class TestGeometricPhase:
    """Accumulated phase and loop closure"""

    def test_single_segment_com_closes_at_integer_loops(self, reference_config):
        """mu = -0.06 omega_z winds exactly 15 loops over the window"""
        closed = PulseShape.uniform(0.1 * OMEGA_Z, -0.06 * OMEGA_Z, 1)
        open_ = PulseShape.uniform(0.1 * OMEGA_Z, -0.062 * OMEGA_Z, 1)
        assert loop_ratio(integrate_mode_response(reference_config, closed, 1), OMEGA_Z) < 0.05
        assert loop_ratio(integrate_mode_response(reference_config, open_, 1), OMEGA_Z) > 0.5

    def test_red_detuning_gives_negative_phase(self, reference_config, small_pulse):
        result = evaluate_gate(reference_config, small_pulse).result
        assert result.phi < 0
        assert result.delta_phi == pytest.approx(result.phi - TARGET_PHASE)

    def test_quadratic_in_amplitude(self, reference_config, small_pulse):
        base = evaluate_gate(reference_config, small_pulse).result.phi
        doubled = evaluate_gate(reference_config, small_pulse.scaled(2.0)).result.phi
        assert doubled == pytest.approx(4.0 * base, rel=1e-9)

    def test_zero_pulse(self, reference_config, zero_pulse):
        result = evaluate_gate(reference_config, zero_pulse).result
        assert result.phi == 0.0
        assert result.delta_u == (0.0, 0.0)
        assert result.phase_infidelity == pytest.approx((math.pi / 4) ** 2)
        assert result.fidelity == pytest.approx(1.0 - (math.pi / 4) ** 2)

    def test_grid_mismatch(self, reference_config, small_pulse):
        com = integrate_mode_response(reference_config, small_pulse, 1)
        other = integrate_mode_response(reference_config, small_pulse, 2)
        other.t = other.t[:-1]
        with pytest.raises(GridMismatchError):
            geometric_phase([com, other])

    def test_phase_sums_weighted_modes(self, reference_config, small_pulse):
        evaluation = evaluate_gate(reference_config, small_pulse)
        com, zigzag = evaluation.trajectories
        expected = com.phi_partial[-1] - zigzag.phi_partial[-1]
        assert evaluation.result.phi == pytest.approx(expected, rel=1e-12)

    def test_trajectory_table(self, reference_config, small_pulse):
        evaluation = evaluate_gate(reference_config, small_pulse)
        table = trajectory_table(evaluation, reference_config)
        assert table.shape[1] == len(TRAJECTORY_COLUMNS)
        # interaction-picture loops start at the origin
        np.testing.assert_array_equal(table[0, 6:], 0.0)

    def test_trap_center_mode_recorded(self, reference_config, small_pulse):
        result = evaluate_gate(
            reference_config, small_pulse, SeparationMode.TRAP_CENTER
        ).result
        assert result.separation_mode == "trap-center"


@pytest.mark.unit
class TestFidelity:
    """Leading-order fidelity from closure residuals"""

    def test_perfect_closure(self, reference_config):
        residuals = ClosureResiduals(
            delta_u=(0.0, 0.0), delta_u_dot=(0.0, 0.0), delta_phi=0.0
        )
        assert fidelity(residuals, reference_config) == 1.0

    def test_thermal_weighting(self, reference_config):
        """Residual displacement cost is |alpha|^2 (2 nbar + 1)"""
        width = math.sqrt(HBAR / (2 * reference_config.ion_mass * reference_config.omega_z))
        residuals = ClosureResiduals(
            delta_u=(1e-3 * width, 0.0), delta_u_dot=(0.0, 0.0), delta_phi=0.0
        )
        breakdown = fidelity_breakdown(residuals, reference_config)
        assert breakdown.motional == pytest.approx(0.25 * 1e-6 * 5.0, rel=1e-12)
        assert not breakdown.clamped

    def test_clamped(self, reference_config):
        residuals = ClosureResiduals(
            delta_u=(1e-6, 1e-6), delta_u_dot=(0.0, 0.0), delta_phi=3.0
        )
        breakdown = fidelity_breakdown(residuals, reference_config)
        assert breakdown.clamped
        assert breakdown.fidelity == 0.0
        assert breakdown.raw < 0.0


@pytest.mark.unit
class TestErrorBudget:
    """Infidelity channels"""

    def test_lamb_dicke_reference(self, reference_config):
        assert lamb_dicke_estimate(reference_config) == pytest.approx(1e-4, rel=1e-9)

    def test_in_plane_term(self, reference_config):
        t = np.linspace(-30e-6, 30e-6, 7)
        xi = np.zeros((t.size, 3))
        xi[:, 0] = 1e-7
        record = OscillationRecord(t=t, xi1=xi, xi2=-xi, d=reference_config.d)
        residuals = ClosureResiduals(
            delta_u=(0.0, 0.0), delta_u_dot=(0.0, 0.0), delta_phi=0.0
        )
        budget = error_budget(reference_config, residuals, record)
        assert budget.dF1 == 0.0
        assert budget.xi_max == pytest.approx(1e-7)
        assert budget.dF2 == pytest.approx(math.pi / 2 * 1e-8, rel=1e-12)

    def test_record_must_cover_window(self, reference_config):
        t = np.linspace(-1e-6, 1e-6, 3)
        record = OscillationRecord(
            t=t, xi1=np.zeros((3, 3)), xi2=np.zeros((3, 3)), d=reference_config.d
        )
        residuals = ClosureResiduals(
            delta_u=(0.0, 0.0), delta_u_dot=(0.0, 0.0), delta_phi=0.0
        )
        with pytest.raises(ValueError):
            error_budget(reference_config, residuals, record)
