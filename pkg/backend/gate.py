"""
Spin-dependent drive, driven mode responses, geometric phase and gate figures of merit.

Mode responses are integrated in scaled units: time tau = omega_z t, displacement
in units of hbar k / (m omega_z) and amplitudes chi / omega_z. The accumulated
phase integrand is carried as an extra ODE component so the phase shares the
integrator's error control.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from config import config as runtime
from constants import (
    DEFAULT_K_EFF,
    DEFAULT_SPECIES,
    HBAR,
    REFERENCE_LAMB_DICKE_INFIDELITY,
    REFERENCE_NBAR,
    REFERENCE_OMEGA_Z,
    TARGET_PHASE,
    species_defaults,
)
from core_model import coulomb_constant, gate_window, ground_state_width
from errors import GridMismatchError, ImaginaryFrequencyError, IntegrationError
from models import (
    ClosureResiduals,
    DetuningConvention,
    ErrorBudget,
    FidelityBreakdown,
    GateResult,
    GateWindow,
    ModeBasis,
    PhysicalConfig,
    PulseShape,
    SeparationMode,
)
from modes import participation_matrix
from scipy.integrate import cumulative_trapezoid, solve_ivp
from transport import OscillationRecord, SeparationProfile, integrate_classical_motion

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = [
    "t",
    "u1",
    "u1_dot",
    "u2",
    "u2_dot",
    "phi",
    "Z1_tilde",
    "P1_tilde",
    "Z2_tilde",
    "P2_tilde",
]


@dataclass
class ModeTrajectory:
    """Sampled response of one dynamical mode, starting from rest at t0"""

    n: int
    t: np.ndarray  # s
    u: np.ndarray  # m
    u_dot: np.ndarray  # m/s
    phi_partial: np.ndarray  # (1/2hbar) int f u dt, rad
    omega: np.ndarray  # instantaneous mode frequency, rad/s


@dataclass
class GateEvaluation:
    """Trajectories and figures of merit of one pulse"""

    trajectories: Tuple[ModeTrajectory, ModeTrajectory]
    phi: np.ndarray  # accumulated phase on the common grid, rad
    result: GateResult


def carrier_frequency(config: PhysicalConfig, mu: float) -> float:
    """Drive angular frequency for detuning mu under the configured convention"""
    if config.detuning_convention is DetuningConvention.RELATIVE:
        return config.omega_z + mu
    return mu


def envelope(pulse: PulseShape, window: GateWindow, t):
    """Piecewise-constant chi(t); zero outside [t0, t0 + T]"""
    t = np.asarray(t, dtype=float)
    count = pulse.segment_count
    index = np.floor((t - window.t0) / (window.T / count)).astype(int)
    index = np.clip(index, 0, count - 1)
    inside = (t >= window.t0) & (t <= window.t_end)
    chi = np.where(inside, pulse.amplitudes[index], 0.0)
    return float(chi) if chi.ndim == 0 else chi


def force(config: PhysicalConfig, pulse: PulseShape, t):
    """f(t) = -hbar k chi(t) sin(omega_d t), in newtons"""
    window = gate_window(config)
    omega_d = carrier_frequency(config, pulse.mu)
    return -HBAR * config.k_eff * envelope(pulse, window, t) * np.sin(omega_d * t)


class DriveSchedule:
    """Scaled segment boundaries, amplitudes and output grids of a pulse"""

    def __init__(
        self,
        config: PhysicalConfig,
        pulse: PulseShape,
        samples_per_cycle: Optional[int] = None,
    ):
        samples_per_cycle = samples_per_cycle or runtime.SAMPLES_PER_CYCLE
        self.window = gate_window(config)
        self.omega_z = config.omega_z
        self.carrier = carrier_frequency(config, pulse.mu) / config.omega_z
        self.chi = pulse.amplitudes / config.omega_z
        count = pulse.segment_count
        self.bounds = config.omega_z * (
            self.window.t0 + self.window.T * np.arange(count + 1) / count
        )
        fastest = max(abs(self.carrier), 1.0)
        cycles = (self.bounds[1] - self.bounds[0]) * fastest / (2.0 * math.pi)
        points = max(int(math.ceil(cycles * samples_per_cycle)), 2) + 1
        self.grids = [
            np.linspace(self.bounds[k], self.bounds[k + 1], points) for k in range(count)
        ]

    @property
    def tau(self) -> np.ndarray:
        """Common output grid, segment boundaries included once"""
        return np.concatenate([self.grids[0]] + [g[1:] for g in self.grids[1:]])

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.chi)))


def scaled_frequency_squared(
    config: PhysicalConfig, n: int, profile: Optional[SeparationProfile] = None
):
    """(Omega_n / omega_z)^2 as a function of scaled time"""
    if n == 1:
        return lambda tau: 1.0
    if profile is None:
        raise ValueError("Zigzag mode needs a separation profile")
    coupling = 2.0 * coulomb_constant(config) / (config.ion_mass * config.omega_z**2)
    return lambda tau: 1.0 - coupling / profile(tau / config.omega_z) ** 3


def make_profile(
    config: PhysicalConfig, separation_mode: SeparationMode
) -> SeparationProfile:
    window = gate_window(config)
    return SeparationProfile(config, window.t0, window.t_end, separation_mode)


def _integrate_modes(
    config: PhysicalConfig,
    pulse: PulseShape,
    modes: Sequence[int],
    tol: float,
    separation_mode: SeparationMode,
    samples_per_cycle: Optional[int],
) -> List[ModeTrajectory]:
    schedule = DriveSchedule(config, pulse, samples_per_cycle)
    profile = make_profile(config, separation_mode) if 2 in modes else None
    frequencies = [scaled_frequency_squared(config, n, profile) for n in modes]
    count = len(modes)
    scale = schedule.peak or 1.0
    atol = np.tile([tol * scale, tol * scale, tol * scale**2], count)
    omega_d = schedule.carrier

    state = np.zeros(3 * count)
    pieces = []
    for k, grid in enumerate(schedule.grids):
        chi = schedule.chi[k]

        def rhs(tau, y, chi=chi):
            drive = -chi * math.sin(omega_d * tau)
            out = np.empty_like(y)
            for i, omega2 in enumerate(frequencies):
                u, v = y[3 * i], y[3 * i + 1]
                out[3 * i] = v
                out[3 * i + 1] = -omega2(tau) * u + drive
                out[3 * i + 2] = drive * u
            return out

        sol = solve_ivp(
            rhs,
            (grid[0], grid[-1]),
            state,
            method="DOP853",
            t_eval=grid,
            rtol=tol,
            atol=atol,
        )
        if sol.status != 0:
            raise IntegrationError(f"Mode integration failed in segment {k}: {sol.message}")
        state = sol.y[:, -1]
        pieces.append(sol.y if k == 0 else sol.y[:, 1:])
    y = np.concatenate(pieces, axis=1)

    tau = schedule.tau
    length = HBAR * config.k_eff / (config.ion_mass * config.omega_z)
    eta2 = HBAR * config.k_eff**2 / (2.0 * config.ion_mass * config.omega_z)
    trajectories = []
    for i, n in enumerate(modes):
        omega2 = np.broadcast_to(np.asarray(frequencies[i](tau), dtype=float), tau.shape)
        if np.any(omega2 <= 0):
            raise ImaginaryFrequencyError(f"Mode {n} frequency became imaginary")
        trajectories.append(
            ModeTrajectory(
                n=n,
                t=tau / config.omega_z,
                u=length * y[3 * i],
                u_dot=length * config.omega_z * y[3 * i + 1],
                phi_partial=eta2 * y[3 * i + 2],
                omega=config.omega_z * np.sqrt(omega2),
            )
        )
    return trajectories


def integrate_mode_response(
    config: PhysicalConfig,
    pulse: PulseShape,
    n: int,
    tol: Optional[float] = None,
    separation_mode: SeparationMode = SeparationMode.EQUILIBRIUM,
    samples_per_cycle: Optional[int] = None,
) -> ModeTrajectory:
    """
    Solve u'' + Omega_n(t)^2 u = f(t)/m from rest at t0 across the window.

    Args:
        config: Validated configuration
        pulse: Drive pulse
        n: Mode index, 1 = centre-of-mass, 2 = zigzag
        tol: Relative integration tolerance
        separation_mode: Source of R(t) for the zigzag frequency
        samples_per_cycle: Output samples per carrier period

    Returns:
        ModeTrajectory sampled on the pulse's output grid
    """
    if n not in (1, 2):
        raise ValueError(f"Mode index must be 1 or 2, got {n}")
    tol = tol or runtime.GATE_RTOL
    return _integrate_modes(
        config, pulse, [n], tol, SeparationMode(separation_mode), samples_per_cycle
    )[0]


def geometric_phase(
    trajectories: Sequence[ModeTrajectory], basis: Optional[ModeBasis] = None
) -> np.ndarray:
    """
    Accumulated phase phi(t) = sum_n w_n phi_partial_n(t), with w_n the pair weight
    of mode n. The gate phase is the final sample.
    """
    basis = basis or participation_matrix()
    grid = trajectories[0].t
    for trajectory in trajectories[1:]:
        if trajectory.t.shape != grid.shape or not np.array_equal(trajectory.t, grid):
            raise GridMismatchError("Mode trajectories are not on a common time grid")
    phi = np.zeros_like(grid)
    for trajectory in trajectories:
        phi = phi + basis.pair_weight(trajectory.n) * trajectory.phi_partial
    return phi


def closure_residuals(
    trajectories: Sequence[ModeTrajectory], phi: float
) -> ClosureResiduals:
    """Final displacements per mode and the phase mismatch phi + pi/4"""
    ordered = sorted(trajectories, key=lambda trajectory: trajectory.n)
    return ClosureResiduals(
        delta_u=tuple(float(tr.u[-1]) for tr in ordered),
        delta_u_dot=tuple(float(tr.u_dot[-1]) for tr in ordered),
        delta_phi=float(phi - TARGET_PHASE),
    )


def fidelity_breakdown(
    residuals: ClosureResiduals, config: PhysicalConfig
) -> FidelityBreakdown:
    """Leading-order gate fidelity with thermal motional and phase infidelities"""
    delta_u = np.asarray(residuals.delta_u)
    delta_u_dot = np.asarray(residuals.delta_u_dot)
    thermal = 2.0 * np.asarray(config.nbar) + 1.0
    energy = delta_u_dot**2 / config.omega_z + config.omega_z * delta_u**2
    motional = float(config.ion_mass / (2.0 * HBAR) * np.sum(energy * thermal))
    phase = float(residuals.delta_phi**2)
    raw = 1.0 - motional - phase
    clamped = not 0.0 <= raw <= 1.0
    if clamped:
        logger.warning("Fidelity %.6e outside [0, 1]; clamping", raw)
    return FidelityBreakdown(
        motional=motional,
        phase=phase,
        raw=raw,
        fidelity=min(max(raw, 0.0), 1.0),
        clamped=clamped,
    )


def fidelity(residuals: ClosureResiduals, config: PhysicalConfig) -> float:
    return fidelity_breakdown(residuals, config).fidelity


def lamb_dicke_estimate(config: PhysicalConfig) -> float:
    """Reference Lamb-Dicke infidelity scaled by eta^2 (2 nbar + 1)"""
    reference_mass = species_defaults(DEFAULT_SPECIES)["ion_mass"]
    eta0_sq = HBAR * DEFAULT_K_EFF**2 / (2.0 * reference_mass * REFERENCE_OMEGA_Z)
    eta_sq = HBAR * config.k_eff**2 / (2.0 * config.ion_mass * config.omega_z)
    nbar = float(np.mean(config.nbar))
    return REFERENCE_LAMB_DICKE_INFIDELITY * (
        eta_sq * (2.0 * nbar + 1.0) / (eta0_sq * (2.0 * REFERENCE_NBAR + 1.0))
    )


def error_budget(
    config: PhysicalConfig,
    residuals: ClosureResiduals,
    oscillation: OscillationRecord,
) -> ErrorBudget:
    """
    Infidelity channels of the gate.

    Args:
        config: Validated configuration
        residuals: Closure residuals of the pulse
        oscillation: Classical in-plane motion covering the gate window

    Returns:
        ErrorBudget with residual closure, in-plane motion and Lamb-Dicke terms
    """
    window = gate_window(config)
    if not oscillation.covers(window.t0, window.t_end):
        raise ValueError("Oscillation record does not cover the gate window")
    breakdown = fidelity_breakdown(residuals, config)
    xi_max = float(np.max(oscillation.window_max(window.t0, window.t_end)[:2]))
    return ErrorBudget(
        dF1=breakdown.motional + breakdown.phase,
        dF2=(math.pi / 2.0) * (xi_max / config.w) ** 4,
        dF3=lamb_dicke_estimate(config),
        xi_max=xi_max,
    )


def interaction_picture(
    trajectory: ModeTrajectory, config: PhysicalConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rotate (u, u_dot/Omega) at the instantaneous mode frequency.

    Returns:
        (Z_tilde, P_tilde) in ground-state widths; both start at the origin
    """
    theta = cumulative_trapezoid(trajectory.omega, trajectory.t, initial=0.0)
    velocity = trajectory.u_dot / trajectory.omega
    width = ground_state_width(config)
    z = (trajectory.u * np.cos(theta) - velocity * np.sin(theta)) / width
    p = (trajectory.u * np.sin(theta) + velocity * np.cos(theta)) / width
    return z, p


def evaluate_gate(
    config: PhysicalConfig,
    pulse: PulseShape,
    separation_mode: SeparationMode = SeparationMode.EQUILIBRIUM,
    tol: Optional[float] = None,
    oscillation: Optional[OscillationRecord] = None,
    include_error_budget: bool = False,
    samples_per_cycle: Optional[int] = None,
) -> GateEvaluation:
    """
    Integrate both modes and assemble the complete GateResult of a pulse.

    Args:
        config: Validated configuration
        pulse: Drive pulse
        separation_mode: Source of R(t) for the zigzag mode
        tol: Relative integration tolerance
        oscillation: Precomputed classical motion for the error budget
        include_error_budget: Attach dF1-dF3 (integrates classical motion if needed)
        samples_per_cycle: Output samples per carrier period

    Returns:
        GateEvaluation with both trajectories, phi(t) and the GateResult
    """
    tol = tol or runtime.GATE_RTOL
    separation_mode = SeparationMode(separation_mode)
    trajectories = _integrate_modes(
        config, pulse, [1, 2], tol, separation_mode, samples_per_cycle
    )
    phi = geometric_phase(trajectories)
    residuals = closure_residuals(trajectories, float(phi[-1]))
    breakdown = fidelity_breakdown(residuals, config)

    width = ground_state_width(config)
    excursion = max(
        float(np.max(np.hypot(tr.u, tr.u_dot / config.omega_z))) for tr in trajectories
    )
    budget = None
    if include_error_budget:
        if oscillation is None:
            oscillation = integrate_classical_motion(config)
        budget = error_budget(config, residuals, oscillation)

    result = GateResult(
        delta_u=residuals.delta_u,
        delta_u_dot=residuals.delta_u_dot,
        delta_phi=residuals.delta_phi,
        phi=float(phi[-1]),
        fidelity=breakdown.fidelity,
        raw_fidelity=breakdown.raw,
        fidelity_clamped=breakdown.clamped,
        motional_infidelity=breakdown.motional,
        phase_infidelity=breakdown.phase,
        normalized_delta_u=tuple(du / width for du in residuals.delta_u),
        normalized_delta_u_dot=tuple(
            dv / config.omega_z / width for dv in residuals.delta_u_dot
        ),
        peak_excursion=excursion / width,
        separation_mode=separation_mode.value,
        error_budget=budget,
    )
    logger.debug(
        "Gate evaluation: phi=%.10f, infidelity=%.3e", result.phi, result.infidelity
    )
    return GateEvaluation(trajectories=tuple(trajectories), phi=phi, result=result)


def trajectory_table(evaluation: GateEvaluation, config: PhysicalConfig) -> np.ndarray:
    """Rows matching TRAJECTORY_COLUMNS, for phase-space loop plots"""
    com, zigzag = evaluation.trajectories
    z1, p1 = interaction_picture(com, config)
    z2, p2 = interaction_picture(zigzag, config)
    return np.column_stack(
        [com.t, com.u, com.u_dot, zigzag.u, zigzag.u_dot, evaluation.phi, z1, p1, z2, p2]
    )


def phase_space_summary(evaluation: GateEvaluation, config: PhysicalConfig) -> Dict:
    """Start, end and peak distance from the origin of each interaction-picture loop"""
    summary = {}
    for trajectory in evaluation.trajectories:
        z, p = interaction_picture(trajectory, config)
        radius = np.hypot(z, p)
        summary[f"mode{trajectory.n}"] = {
            "start": float(radius[0]),
            "end": float(radius[-1]),
            "peak": float(radius.max()),
        }
    return summary
