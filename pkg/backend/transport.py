"""
Trap-centre trajectories, Coulomb-shifted equilibria, in-plane oscillation and
the constraint-regime sweeps built on them.

Internally lengths are measured in units of d and time in units of 1/f3, so the
only couplings left are the trap stiffness ratios (omega_i/f3)^2, the Coulomb
ratio (f2/f3)^2 and the transport ratio f1/f3.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from config import config as runtime
from core_model import (
    config_hash,
    coulomb_constant,
    frequency_scales,
    gate_window,
    with_overrides,
)
from errors import (
    ConfigValidationError,
    ConvergenceError,
    DriveThroughError,
    IntegrationError,
)
from models import PhysicalConfig, SeparationMode, SweepRecord, SweepResult
from parallel import run_parallel
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

logger = logging.getLogger(__name__)

FORCE_TOLERANCE = 1e-15  # N
STEP_TOLERANCE = 1e-13  # relative Newton step at convergence
MAX_NEWTON_ITERATIONS = 60
NEWTON_CHUNK = 20000
DEFAULT_LEAD = 20.0  # start of classical motion, in units of d before closest approach
ADIABATIC_LIMIT = 1e-2


@dataclass
class EquilibriumState:
    """Instantaneous equilibrium of both ions at time t"""

    t: float
    q1_0: np.ndarray  # m
    q2_0: np.ndarray  # m
    R: float  # m
    delta1: np.ndarray  # q1_0 - Q1, m
    delta2: np.ndarray  # q2_0 - Q2, m

    @property
    def max_displacement(self) -> float:
        """Larger ion displacement magnitude from its trap centre"""
        return float(max(np.linalg.norm(self.delta1), np.linalg.norm(self.delta2)))


@dataclass
class OscillationRecord:
    """In-plane motion about the instantaneous equilibria"""

    t: np.ndarray  # s
    xi1: np.ndarray  # (N, 3) m
    xi2: np.ndarray  # (N, 3) m
    d: float  # m

    @property
    def xi_max(self) -> np.ndarray:
        return self.window_max()

    @property
    def adiabatic(self) -> bool:
        return bool(np.max(self.xi_max[:2]) / self.d < ADIABATIC_LIMIT)

    @property
    def antisymmetry_error(self) -> float:
        """Largest component of xi1 + xi2 over the record"""
        return float(np.max(np.abs(self.xi1 + self.xi2)))

    def window_max(
        self, t_start: Optional[float] = None, t_end: Optional[float] = None
    ) -> np.ndarray:
        """Per-axis maximum of both ions' displacements inside [t_start, t_end]"""
        mask = np.ones_like(self.t, dtype=bool)
        if t_start is not None:
            mask &= self.t >= t_start
        if t_end is not None:
            mask &= self.t <= t_end
        if not mask.any():
            return np.zeros(3)
        both = np.maximum(np.abs(self.xi1[mask]), np.abs(self.xi2[mask]))
        return both.max(axis=0)

    def covers(self, t_start: float, t_end: float) -> bool:
        return bool(self.t[0] <= t_start and self.t[-1] >= t_end)


class _Scaled:
    """Nondimensional couplings of a configuration"""

    def __init__(self, config: PhysicalConfig):
        scales = frequency_scales(config)
        self.d = config.d
        self.f3 = scales.f3
        self.stiffness = (
            np.array([config.omega_x, config.omega_y, config.omega_z]) / scales.f3
        ) ** 2
        self.coulomb = scales.coulomb_ratio**2
        self.transport = scales.shuttling_ratio
        self.force_unit = config.ion_mass * scales.f3**2 * config.d  # N

    def offset(self, tau: np.ndarray) -> np.ndarray:
        """(Q1 - Q2)/d at scaled times tau, shape (N, 3)"""
        tau = np.atleast_1d(tau)
        out = np.zeros((tau.size, 3))
        out[:, 0] = -1.0
        out[:, 1] = -self.transport * tau
        return out

    def forces(self, delta1, delta2, offset):
        r = offset + delta1 - delta2
        dist = np.linalg.norm(r, axis=-1, keepdims=True)
        coulomb = self.coulomb * r / dist**3
        f1 = -self.stiffness * delta1 + coulomb
        f2 = -self.stiffness * delta2 - coulomb
        return f1, f2, r, dist


def trap_centers(config: PhysicalConfig, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Q1 = (0, 0, 0) and Q2 = (d, v t, 0)"""
    return np.zeros(3), np.array([config.d, config.v * t, 0.0])


def _solve_displacements(
    scaled: _Scaled,
    tau: np.ndarray,
    force_tolerance: float = FORCE_TOLERANCE,
    max_iterations: int = MAX_NEWTON_ITERATIONS,
) -> Tuple[np.ndarray, np.ndarray]:
    """Damped Newton on the force balance for a batch of scaled times"""
    offset = scaled.offset(tau)
    n = offset.shape[0]
    x = np.zeros((n, 6))
    identity = np.eye(3)

    def residual(state):
        f1, f2, r, dist = scaled.forces(state[:, :3], state[:, 3:], offset)
        return np.concatenate([f1, f2], axis=1), r, dist

    force, r, dist = residual(x)
    for iteration in range(max_iterations):
        rr = r[:, :, None] * r[:, None, :]
        coupling = scaled.coulomb * (
            identity / dist[:, :, None] ** 3 - 3.0 * rr / dist[:, :, None] ** 5
        )
        stiff = np.diag(scaled.stiffness)
        jac = np.empty((n, 6, 6))
        jac[:, :3, :3] = -stiff + coupling
        jac[:, :3, 3:] = -coupling
        jac[:, 3:, :3] = -coupling
        jac[:, 3:, 3:] = -stiff + coupling
        step = np.linalg.solve(jac, -force[:, :, None])[:, :, 0]

        norm = np.linalg.norm(force, axis=1)
        damping = np.ones(n)
        for _ in range(30):
            trial = x + damping[:, None] * step
            trial_force, trial_r, trial_dist = residual(trial)
            trial_norm = np.linalg.norm(trial_force, axis=1)
            bad = ~np.isfinite(trial_norm) | (trial_norm > 2.0 * norm + 1e-300)
            if not bad.any():
                break
            damping[bad] *= 0.5

        applied = np.abs(damping[:, None] * step).max(axis=1)
        x, force, r, dist = trial, trial_force, trial_r, trial_dist
        small_step = applied <= STEP_TOLERANCE * np.abs(x).max(axis=1)
        balanced = (
            np.linalg.norm(force, axis=1) * scaled.force_unit <= force_tolerance
        )
        if np.all(small_step & balanced):
            logger.debug("Equilibrium converged after %d iterations", iteration + 1)
            return x[:, :3], x[:, 3:]

    worst = float(np.max(np.linalg.norm(force, axis=1)) * scaled.force_unit)
    raise ConvergenceError(
        f"Equilibrium solver did not converge in {max_iterations} iterations "
        f"(residual force {worst:.3e} N)"
    )


def equilibrium_displacements(
    config: PhysicalConfig, t: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Equilibrium displacements from the trap centres for an array of times.

    Returns:
        (delta1, delta2), each of shape (N, 3) in metres
    """
    scaled = _Scaled(config)
    tau = np.atleast_1d(np.asarray(t, dtype=float)) * scaled.f3
    parts1, parts2 = [], []
    for start in range(0, tau.size, NEWTON_CHUNK):
        d1, d2 = _solve_displacements(scaled, tau[start : start + NEWTON_CHUNK])
        parts1.append(d1)
        parts2.append(d2)
    return np.concatenate(parts1) * config.d, np.concatenate(parts2) * config.d


def solve_equilibrium(config: PhysicalConfig, t: float) -> EquilibriumState:
    """
    Instantaneous equilibrium positions under trap confinement and Coulomb repulsion.

    Args:
        config: Validated configuration
        t: Time relative to closest approach (s)

    Returns:
        EquilibriumState with positions, separation and per-ion displacements
    """
    scaled = _Scaled(config)
    d1, d2 = _solve_displacements(scaled, np.array([t * scaled.f3]))
    q1, q2 = trap_centers(config, t)
    offset = scaled.offset(np.array([t * scaled.f3]))[0]
    R = config.d * float(np.linalg.norm(offset + d1[0] - d2[0]))
    delta1, delta2 = d1[0] * config.d, d2[0] * config.d
    return EquilibriumState(
        t=t, q1_0=q1 + delta1, q2_0=q2 + delta2, R=R, delta1=delta1, delta2=delta2
    )


def _trap_center_separation(config: PhysicalConfig, t):
    return np.hypot(config.d, config.v * np.asarray(t, dtype=float))


def separation(config: PhysicalConfig, t, mode: SeparationMode = SeparationMode.EQUILIBRIUM):
    """Ion separation R(t) from the shifted equilibria or the trap centres"""
    mode = SeparationMode(mode)
    if mode is SeparationMode.TRAP_CENTER:
        R = _trap_center_separation(config, t)
    else:
        scaled = _Scaled(config)
        tau = np.atleast_1d(np.asarray(t, dtype=float)) * scaled.f3
        d1, d2 = _solve_displacements(scaled, tau)
        R = config.d * np.linalg.norm(scaled.offset(tau) + d1 - d2, axis=1)
    R = np.asarray(R)
    if np.ndim(t) == 0:
        return float(R.reshape(-1)[0])
    return R.reshape(np.shape(t))


class SeparationProfile:
    """
    Tabulated R(t) for fast repeated evaluation inside integrators.

    The equilibrium profile splines only the Coulomb excess over the closed-form
    trap-centre separation, in the scaled time v t / d.
    """

    def __init__(
        self,
        config: PhysicalConfig,
        t_start: float,
        t_end: float,
        mode: SeparationMode = SeparationMode.EQUILIBRIUM,
        samples: int = 401,
    ):
        self.config = config
        self.mode = SeparationMode(mode)
        self.t_start = t_start
        self.t_end = t_end
        self._rate = config.v / config.d
        self._excess = None
        if self.mode is SeparationMode.EQUILIBRIUM:
            grid = np.linspace(t_start, t_end, samples)
            excess = separation(config, grid, SeparationMode.EQUILIBRIUM)
            excess = excess - _trap_center_separation(config, grid)
            self._excess = CubicSpline(grid * self._rate, excess)

    def __call__(self, t):
        R = _trap_center_separation(self.config, t)
        if self._excess is not None:
            R = R + self._excess(np.asarray(t) * self._rate)
        return R


def separation_profile(
    config: PhysicalConfig,
    t_start: float,
    t_end: float,
    mode: SeparationMode = SeparationMode.EQUILIBRIUM,
    samples: int = 401,
) -> SeparationProfile:
    return SeparationProfile(config, t_start, t_end, mode, samples)


def integrate_classical_motion(
    config: PhysicalConfig,
    t_span: Optional[Tuple[float, float]] = None,
    tol: Optional[float] = None,
    lead: float = DEFAULT_LEAD,
    samples_per_cycle: Optional[int] = None,
) -> OscillationRecord:
    """
    Integrate both ions' in-plane motion through the interaction region.

    The ions start at rest at their equilibria, lead*d before closest approach by
    default; the record spans the same distance after it.

    Args:
        config: Validated configuration
        t_span: Optional (t_start, t_end) in seconds
        tol: Relative integration tolerance
        lead: Default start distance before closest approach in units of d
        samples_per_cycle: Output samples per in-plane trap period

    Returns:
        OscillationRecord of xi_i(t) about the instantaneous equilibria
    """
    tol = tol or runtime.ODE_RTOL
    samples_per_cycle = samples_per_cycle or runtime.SAMPLES_PER_CYCLE
    if t_span is None:
        window = gate_window(config)
        reach = max(lead * config.d, config.w) / config.v
        t_span = (min(-reach, window.t0), max(reach, window.t_end))
    scaled = _Scaled(config)
    tau_span = (t_span[0] * scaled.f3, t_span[1] * scaled.f3)

    fastest = math.sqrt(max(scaled.stiffness[:2]))
    cycles = (tau_span[1] - tau_span[0]) * fastest / (2.0 * math.pi)
    tau = np.linspace(*tau_span, int(math.ceil(cycles * samples_per_cycle)) + 1)

    d1, d2 = _solve_displacements(scaled, tau[:1])
    y0 = np.concatenate([d1[0], d2[0], np.zeros(6)])

    def rhs(t, y):
        f1, f2, _, _ = scaled.forces(y[0:3], y[3:6], scaled.offset(t)[0])
        return np.concatenate([y[6:9], y[9:12], f1, f2])

    logger.info(
        "Integrating classical motion over %.3e s (%d samples)",
        t_span[1] - t_span[0],
        tau.size,
    )
    sol = solve_ivp(
        rhs,
        tau_span,
        y0,
        method="DOP853",
        t_eval=tau,
        rtol=tol,
        atol=tol * max(scaled.coulomb, 1e-300),
    )
    if sol.status != 0:
        raise IntegrationError(f"Classical motion integration failed: {sol.message}")

    eq1, eq2 = [], []
    for start in range(0, tau.size, NEWTON_CHUNK):
        e1, e2 = _solve_displacements(scaled, tau[start : start + NEWTON_CHUNK])
        eq1.append(e1)
        eq2.append(e2)
    xi1 = (sol.y[0:3].T - np.concatenate(eq1)) * config.d
    xi2 = (sol.y[3:6].T - np.concatenate(eq2)) * config.d
    record = OscillationRecord(t=tau / scaled.f3, xi1=xi1, xi2=xi2, d=config.d)
    logger.info("Classical motion done: xi_max/d = %s", record.xi_max / config.d)
    return record


def realize_ratios(
    config: PhysicalConfig,
    f1_ratio: Optional[float] = None,
    f2_ratio: Optional[float] = None,
) -> PhysicalConfig:
    """
    Realize target f1/f3 and f2/f3 at fixed in-plane trap frequencies.

    f2/f3 fixes d, then f1/f3 fixes v; w/d is held constant. A missing f1/f3 keeps
    the current transport ratio.
    """
    d, v = _realized_geometry(config, f1_ratio, f2_ratio)
    return with_overrides(config, {"d": d, "v": v, "w": config.w * d / config.d})


def _realized_geometry(config, f1_ratio, f2_ratio) -> Tuple[float, float]:
    scales = frequency_scales(config)
    if f2_ratio is None:
        d = config.d
    else:
        K = coulomb_constant(config)
        d = (K / (config.ion_mass * (f2_ratio * scales.f3) ** 2)) ** (1.0 / 3.0)
    ratio = scales.shuttling_ratio if f1_ratio is None else f1_ratio
    return d, ratio * scales.f3 * d


def _check_grid(values: Sequence[float], name: str) -> List[float]:
    grid = np.asarray(values, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ConfigValidationError(f"{name} grid must be a non-empty list")
    if np.any(grid <= 0) or not np.all(np.isfinite(grid)):
        raise ConfigValidationError(f"{name} grid must be positive and finite")
    if np.any(np.diff(grid) <= 0):
        raise ConfigValidationError(f"{name} grid must be strictly increasing")
    return grid.tolist()


def _oscillation_cell(config, f1_ratio, f2_ratio, tol, lead, samples_per_cycle):
    d, v = _realized_geometry(config, f1_ratio, f2_ratio)
    try:
        cell = realize_ratios(config, f1_ratio, f2_ratio)
        record = integrate_classical_motion(
            cell, tol=tol, lead=lead, samples_per_cycle=samples_per_cycle
        )
        both = np.maximum(np.abs(record.xi1[:, 0]), np.abs(record.xi2[:, 0]))
        index = int(np.argmax(both))
        return SweepRecord(
            f1_ratio=f1_ratio,
            f2_ratio=f2_ratio,
            d=d,
            v=v,
            value=float(both[index] / cell.d),
            t_at_max=float(record.t[index]),
            converged=True,
        )
    except DriveThroughError as e:
        logger.warning(
            "Oscillation cell (%.4g, %.4g) failed: %s", f1_ratio, f2_ratio, e
        )
        return SweepRecord(
            f1_ratio=f1_ratio, f2_ratio=f2_ratio, d=d, v=v, converged=False, message=str(e)
        )


def sweep_oscillation(
    config: PhysicalConfig,
    f1_ratios: Sequence[float],
    f2_ratios: Sequence[float],
    tol: Optional[float] = None,
    lead: float = DEFAULT_LEAD,
    samples_per_cycle: Optional[int] = None,
    n_jobs: int = 1,
) -> SweepResult:
    """
    Normalized in-plane oscillation amplitude over an f1/f3 x f2/f3 grid.

    Records are ordered row-major with f1/f3 as the outer axis.
    """
    f1_grid = _check_grid(f1_ratios, "f1/f3")
    f2_grid = _check_grid(f2_ratios, "f2/f3")
    tol = tol or runtime.ODE_RTOL
    tasks = [
        (config, f1, f2, tol, lead, samples_per_cycle) for f1 in f1_grid for f2 in f2_grid
    ]
    logger.info("Oscillation sweep over %d cells", len(tasks))
    records = run_parallel(_oscillation_cell, tasks, n_jobs=n_jobs)
    return SweepResult(
        kind="oscillation",
        axes={"f1_ratio": f1_grid, "f2_ratio": f2_grid},
        records=records,
        metadata={
            "config_hash": config_hash(config),
            "value": "xi_x_max/d",
            "realization": "d from f2/f3, then v from f1/f3; omega_x, omega_y and w/d fixed",
            "rtol": tol,
            "lead_distances": lead,
        },
    )


def _equilibrium_cell(config, f1_ratio, f2_ratio, samples):
    d, v = _realized_geometry(config, f1_ratio, f2_ratio)
    try:
        cell = realize_ratios(config, f1_ratio, f2_ratio)
        window = gate_window(cell)
        t = np.linspace(window.t0, window.t_end, samples)
        delta1, delta2 = equilibrium_displacements(cell, t)
        shift = np.maximum(
            np.linalg.norm(delta1, axis=1), np.linalg.norm(delta2, axis=1)
        )
        index = int(np.argmax(shift))
        return SweepRecord(
            f1_ratio=f1_ratio,
            f2_ratio=f2_ratio,
            d=d,
            v=v,
            value=float(shift[index] / cell.d),
            t_at_max=float(t[index]),
            converged=True,
        )
    except DriveThroughError as e:
        logger.warning("Equilibrium cell %.4g failed: %s", f2_ratio, e)
        return SweepRecord(
            f1_ratio=f1_ratio, f2_ratio=f2_ratio, d=d, v=v, converged=False, message=str(e)
        )


def sweep_equilibrium(
    config: PhysicalConfig,
    f2_ratios: Sequence[float],
    samples: int = 201,
    n_jobs: int = 1,
) -> SweepResult:
    """
    Maximum equilibrium displacement over the gate window against f2/f3.

    Each ratio is realized by varying d with f1/f3 and w/d held fixed; an odd
    sample count keeps t = 0 on the window grid.
    """
    f2_grid = _check_grid(f2_ratios, "f2/f3")
    if samples % 2 == 0:
        samples += 1
    f1_ratio = frequency_scales(config).shuttling_ratio
    tasks = [(config, f1_ratio, f2, samples) for f2 in f2_grid]
    logger.info("Equilibrium sweep over %d cells", len(tasks))
    records = run_parallel(_equilibrium_cell, tasks, n_jobs=n_jobs)
    return SweepResult(
        kind="equilibrium",
        axes={"f2_ratio": f2_grid},
        records=records,
        metadata={
            "config_hash": config_hash(config),
            "value": "q_max/d",
            "realization": "d from f2/f3; f1/f3, omega_x, omega_y and w/d fixed",
            "window_samples": samples,
            "force_tolerance_N": FORCE_TOLERANCE,
        },
    )
