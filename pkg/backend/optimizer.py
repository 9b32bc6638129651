"""
Pulse search for the controlled-phase-flip gate.

The mode equations are linear in the segment amplitudes and the phase is
quadratic in them, so the search runs in stages: close both phase-space loops
for a pulse shape and detuning, rescale the shape to reach the target phase,
then polish amplitudes and detuning jointly on the true infidelity.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from config import config as runtime
from constants import TARGET_PHASE
from core_model import gate_window
from errors import (
    OptimizationError,
    PhaseSignError,
    PhysicsError,
    ZeroPhaseError,
)
from gate import carrier_frequency, evaluate_gate, make_profile, scaled_frequency_squared
from models import (
    CandidateSummary,
    DetuningConvention,
    OptimizationOptions,
    OptimizedPulse,
    PhysicalConfig,
    PulseShape,
    SeparationMode,
)
from parallel import run_parallel
from scipy.integrate import solve_ivp
from scipy.optimize import minimize

logger = logging.getLogger(__name__)

RELATIVE_MU_BOUNDS = (-0.15, -0.005)  # units of omega_z
ABSOLUTE_MU_BOUNDS = (0.85, 0.995)
DEFAULT_RELATIVE_MU = -0.06
ZERO_PHASE_RATIO = 1e-10
STARTING_AMPLITUDE = 0.1  # units of omega_z


def detuning_bounds(config: PhysicalConfig, options: OptimizationOptions) -> Tuple[float, float]:
    """Detuning search interval in units of omega_z"""
    if options.mu_bounds is not None:
        return options.mu_bounds
    if config.detuning_convention is DetuningConvention.RELATIVE:
        return RELATIVE_MU_BOUNDS
    return ABSOLUTE_MU_BOUNDS


class ClosureModel:
    """
    Final phase-space displacement of both modes as a linear map of the segment
    amplitudes, at a given detuning.

    Each mode's homogeneous fundamental solutions are computed once (closed form for
    the centre-of-mass mode, one ODE solve for the zigzag mode); the response to a
    unit amplitude on each segment then follows from variation of parameters with
    composite Gauss-Legendre quadrature, with sub-intervals no longer than half a
    carrier period.
    """

    def __init__(
        self,
        config: PhysicalConfig,
        separation_mode: SeparationMode = SeparationMode.TRAP_CENTER,
        segment_count: int = 5,
        tol: Optional[float] = None,
        nodes: int = 12,
        carrier_limit: float = 2.0,
    ):
        self.config = config
        self.separation_mode = SeparationMode(separation_mode)
        self.segment_count = segment_count
        tol = tol or runtime.GATE_RTOL

        window = gate_window(config)
        start = config.omega_z * window.t0
        span = config.omega_z * window.T
        per_segment = max(int(math.ceil(span / segment_count * carrier_limit / math.pi)), 1)
        edges = start + span * np.arange(segment_count * per_segment + 1) / (
            segment_count * per_segment
        )
        x, w = np.polynomial.legendre.leggauss(nodes)
        half = 0.5 * np.diff(edges)[:, None]
        middle = 0.5 * (edges[1:] + edges[:-1])[:, None]
        self.nodes = middle + half * x  # (J, q)
        self.weights = half * w
        self.ends = edges[1:]
        self.segment_of = np.repeat(np.arange(segment_count), per_segment)
        self._onehot = (self.segment_of[:, None] == np.arange(segment_count)).astype(float)

        self._solutions = [self._closed_form(start), self._zigzag(start, span, tol)]
        logger.debug(
            "Closure model ready: %d sub-intervals x %d nodes (%s)",
            len(self.ends),
            nodes,
            self.separation_mode.value,
        )

    def _closed_form(self, start):
        phase_nodes = self.nodes - start
        phase_ends = self.ends - start
        return {
            "y1": np.cos(phase_nodes),
            "y2": np.sin(phase_nodes),
            "y1_end": np.cos(phase_ends),
            "y1d_end": -np.sin(phase_ends),
            "y2_end": np.sin(phase_ends),
            "y2d_end": np.cos(phase_ends),
        }

    def _zigzag(self, start, span, tol):
        omega2 = scaled_frequency_squared(
            self.config, 2, make_profile(self.config, self.separation_mode)
        )

        def rhs(tau, y):
            w2 = omega2(tau)
            return [y[1], -w2 * y[0], y[3], -w2 * y[2]]

        sol = solve_ivp(
            rhs,
            (start, start + span),
            [1.0, 0.0, 0.0, 1.0],
            method="DOP853",
            dense_output=True,
            rtol=tol,
            atol=tol * 1e-3,
        )
        if sol.status != 0:
            raise PhysicsError(f"Zigzag fundamental solutions failed: {sol.message}")
        at_nodes = sol.sol(self.nodes.ravel()).reshape(4, *self.nodes.shape)
        at_ends = sol.sol(self.ends)
        return {
            "y1": at_nodes[0],
            "y2": at_nodes[2],
            "y1_end": at_ends[0],
            "y1d_end": at_ends[1],
            "y2_end": at_ends[2],
            "y2d_end": at_ends[3],
        }

    def _carrier(self, mu: float) -> float:
        return carrier_frequency(self.config, mu) / self.config.omega_z

    def responses(self, mu: float) -> List[Tuple[np.ndarray, np.ndarray]]:
        """
        Per mode, (U, V) of shape (sub-intervals, segments): scaled displacement and
        velocity at every sub-interval end for unit scaled amplitude on each segment.
        """
        drive = -np.sin(self._carrier(mu) * self.nodes)
        out = []
        for sol in self._solutions:
            c1 = np.sum(self.weights * sol["y1"] * drive, axis=1)
            c2 = np.sum(self.weights * sol["y2"] * drive, axis=1)
            A = np.cumsum(c1[:, None] * self._onehot, axis=0)
            B = np.cumsum(c2[:, None] * self._onehot, axis=0)
            U = A * sol["y2_end"][:, None] - B * sol["y1_end"][:, None]
            V = A * sol["y2d_end"][:, None] - B * sol["y1d_end"][:, None]
            out.append((U, V))
        return out

    def closure_matrix(self, mu: float) -> np.ndarray:
        """Rows (u1, u1', u2, u2') at the window end, one column per segment"""
        rows = []
        for U, V in self.responses(mu):
            rows.extend([U[-1], V[-1]])
        return np.array(rows)

    def _final_and_peak(self, mu: float, segments) -> Tuple[float, float]:
        chi = np.asarray(segments, dtype=float)
        final = 0.0
        peak = 0.0
        for U, V in self.responses(mu):
            u, v = U @ chi, V @ chi
            radius = np.hypot(u, v)
            peak = max(peak, float(radius.max()))
            final += float(u[-1] ** 2 + v[-1] ** 2)
        return math.sqrt(final), peak

    def excursion(self, mu: float, segments) -> float:
        return self._final_and_peak(mu, segments)[1]

    def closure_residual(self, mu: float, segments) -> float:
        """Final displacement over peak excursion; scale invariant, 1 for no drive"""
        final, peak = self._final_and_peak(mu, segments)
        if peak == 0.0:
            return 1.0
        return final / peak

    def least_residual_direction(self, mu: float, near=None) -> np.ndarray:
        """
        Unit segment vector with the smallest closure residual at this detuning.

        With more than four segments the closure matrix has a null space; the
        direction returned is the projection of `near` onto it.
        """
        M = self.closure_matrix(mu)
        _, singular, vt = np.linalg.svd(M, full_matrices=True)
        rank = int(np.sum(singular > singular[0] * 1e-13)) if singular.size else 0
        null = vt[rank:].T
        if null.shape[1] == 0:
            null = vt[-1:].T
        if near is None:
            direction = null[:, 0]
        else:
            near = np.asarray(near, dtype=float)
            direction = null @ (null.T @ near)
            if np.linalg.norm(direction) < 1e-12 * max(np.linalg.norm(near), 1e-300):
                direction = null[:, 0]
        direction = direction / np.linalg.norm(direction)
        reference = near if near is not None else np.ones_like(direction)
        if float(np.dot(direction, reference)) < 0:
            direction = -direction
        return direction


@dataclass
class ClosureSearch:
    """Outcome of the closure stage for one starting pulse"""

    pulse: PulseShape
    residual: float
    evaluations: int
    converged: bool


def objective(
    config: PhysicalConfig,
    pulse: PulseShape,
    separation_mode: SeparationMode = SeparationMode.EQUILIBRIUM,
    tol: Optional[float] = None,
) -> float:
    """Gate infidelity 1 - F; integration failures score +inf"""
    try:
        return evaluate_gate(config, pulse, separation_mode, tol).result.infidelity
    except PhysicsError as e:
        logger.debug("Objective evaluation failed: %s", e)
        return math.inf


def optimize_closure(
    config: PhysicalConfig,
    guess: PulseShape,
    options: Optional[OptimizationOptions] = None,
    model: Optional[ClosureModel] = None,
) -> ClosureSearch:
    """
    Search segment ratios and detuning for closed phase-space loops of both modes.

    Nelder-Mead runs on the scale-invariant closure residual with the overall
    amplitude fixed, then the least-residual direction at the found detuning
    replaces the shape when it closes better.

    Args:
        config: Validated configuration
        guess: Starting pulse with at least two segments
        options: Search budget and bounds
        model: Prebuilt closure model with matching segment count

    Returns:
        ClosureSearch with the best pulse, its residual and the convergence flag
    """
    options = options or OptimizationOptions()
    count = guess.segment_count
    if count < 2:
        raise ValueError("Closure needs at least two segments")
    if model is None or model.segment_count != count:
        model = ClosureModel(config, SeparationMode.TRAP_CENTER, count)

    omega_z = config.omega_z
    low, high = detuning_bounds(config, options)
    scale = guess.peak_amplitude or STARTING_AMPLITUDE * omega_z
    bound = options.amplitude_bound
    x0 = np.concatenate(
        [np.clip(guess.amplitudes / scale, -bound, bound), [np.clip(guess.mu / omega_z, low, high)]]
    )

    def closure(x):
        return model.closure_residual(x[-1] * omega_z, x[:-1])

    found = minimize(
        closure,
        x0,
        method="Nelder-Mead",
        bounds=[(-bound, bound)] * count + [(low, high)],
        options={
            "maxfev": options.max_evaluations,
            "xatol": 1e-10,
            "fatol": options.closure_tolerance * 1e-3,
        },
    )
    mu = float(found.x[-1]) * omega_z
    shape = np.asarray(found.x[:-1], dtype=float)
    residual = float(found.fun)

    refined = model.least_residual_direction(mu, near=shape)
    refined_residual = model.closure_residual(mu, refined)
    if refined_residual < residual:
        shape, residual = refined, refined_residual
    peak = float(np.max(np.abs(shape))) or 1.0
    pulse = PulseShape(segments=tuple(scale * shape / peak), mu=mu)
    logger.debug(
        "Closure search: mu/omega_z=%.6f residual=%.3e after %d evaluations",
        mu / omega_z,
        residual,
        found.nfev,
    )
    return ClosureSearch(
        pulse=pulse,
        residual=residual,
        evaluations=int(found.nfev) + 1,
        converged=residual <= options.closure_tolerance,
    )


def calibrate_phase(
    config: PhysicalConfig,
    pulse: PulseShape,
    separation_mode: SeparationMode = SeparationMode.EQUILIBRIUM,
    tol: Optional[float] = None,
) -> PulseShape:
    """
    Rescale a closed pulse so the accumulated phase equals -pi/4.

    Raises:
        ZeroPhaseError: The pulse accumulates no differential phase
        PhaseSignError: The phase has the wrong sign for this detuning side
    """
    evaluation = evaluate_gate(config, pulse, separation_mode, tol)
    phi = evaluation.result.phi
    magnitude = sum(abs(float(tr.phi_partial[-1])) for tr in evaluation.trajectories)
    if magnitude == 0.0 or abs(phi) <= ZERO_PHASE_RATIO * magnitude:
        raise ZeroPhaseError("Pulse accumulates no differential phase")
    if phi * TARGET_PHASE < 0:
        raise PhaseSignError(
            f"Accumulated phase {phi:.6e} rad has the wrong sign; "
            "move the detuning to the other side of the modes"
        )
    alpha = math.sqrt(abs(TARGET_PHASE) / abs(phi))
    logger.info("Phase calibration: phi=%.6e rad, alpha=%.9f", phi, alpha)
    return pulse.scaled(alpha)


def _polish(
    config: PhysicalConfig,
    pulse: PulseShape,
    options: OptimizationOptions,
    separation_mode: SeparationMode,
) -> Tuple[PulseShape, float, int]:
    """Joint Nelder-Mead on amplitudes and detuning; never returns a worse pulse"""
    omega_z = config.omega_z
    scale = pulse.peak_amplitude
    low, high = detuning_bounds(config, options)
    best = {"pulse": pulse, "value": objective(config, pulse, separation_mode)}
    evaluations = 1
    if options.polish_evaluations == 0 or not math.isfinite(best["value"]):
        return best["pulse"], best["value"], evaluations

    def unpack(x):
        return PulseShape(segments=tuple(x[:-1] * scale), mu=float(x[-1]) * omega_z)

    def infidelity(x):
        candidate = unpack(x)
        value = objective(config, candidate, separation_mode)
        if value < best["value"]:
            best["pulse"], best["value"] = candidate, value
        return value

    x0 = np.concatenate([pulse.amplitudes / scale, [pulse.mu / omega_z]])
    simplex = np.tile(x0, (x0.size + 1, 1))
    for i in range(x0.size):
        simplex[i + 1, i] += 1e-7 if i == x0.size - 1 else 1e-6
    limit = options.chi_max / scale
    found = minimize(
        infidelity,
        x0,
        method="Nelder-Mead",
        bounds=[(-limit, limit)] * (x0.size - 1) + [(low, high)],
        options={
            "maxfev": options.polish_evaluations,
            "initial_simplex": simplex,
            "fatol": options.tolerance * 1e-3,
        },
    )
    evaluations += int(found.nfev)
    return best["pulse"], best["value"], evaluations


def _starting_pulses(
    config: PhysicalConfig, options: OptimizationOptions, guess: Optional[PulseShape]
) -> List[PulseShape]:
    low, high = detuning_bounds(config, options)
    count = options.segment_count
    amplitude = STARTING_AMPLITUDE * config.omega_z
    if guess is not None:
        first = guess
    else:
        if config.detuning_convention is DetuningConvention.RELATIVE:
            mu = min(max(DEFAULT_RELATIVE_MU, low), high)
        else:
            mu = min(max(1.0 + DEFAULT_RELATIVE_MU, low), high)
        first = PulseShape.uniform(amplitude, mu * config.omega_z, count)
    starts = [first]
    rng = np.random.default_rng(options.seed)
    for _ in range(options.multistart - 1):
        mu = rng.uniform(low, high) * config.omega_z
        segments = rng.uniform(-1.0, 1.0, first.segment_count) * amplitude
        starts.append(PulseShape(segments=tuple(segments), mu=mu))
    return starts


def _run_start(
    config: PhysicalConfig,
    options: OptimizationOptions,
    start: PulseShape,
    index: int,
    fast_model: ClosureModel,
    final_model: ClosureModel,
    separation_mode: SeparationMode,
):
    evaluations = 0
    summary = dict(start_index=index, mu=start.mu, segments=start.segments)
    try:
        search = optimize_closure(config, start, options, model=fast_model)
        evaluations += search.evaluations
        direction = final_model.least_residual_direction(
            search.pulse.mu, near=search.pulse.amplitudes
        )
        closed = search.pulse.with_segments(direction * search.pulse.peak_amplitude)
        calibrated = calibrate_phase(config, closed, separation_mode)
        evaluations += 1
        if calibrated.peak_amplitude > options.chi_max:
            return (
                CandidateSummary(
                    **{**summary, "mu": calibrated.mu, "segments": calibrated.segments},
                    closure_residual=search.residual,
                    status="out-of-bounds",
                    message=f"peak amplitude {calibrated.peak_amplitude:.6e} rad/s "
                    f"exceeds chi_max",
                ),
                None,
                None,
                evaluations,
            )
        polished, value, used = _polish(config, calibrated, options, separation_mode)
        evaluations += used
        result = evaluate_gate(config, polished, separation_mode).result
        evaluations += 1
        status = "ok" if math.isfinite(value) else "failed"
        return (
            CandidateSummary(
                start_index=index,
                mu=polished.mu,
                segments=polished.segments,
                closure_residual=result.closure_residual,
                infidelity=result.infidelity,
                status=status,
            ),
            polished,
            result,
            evaluations,
        )
    except PhaseSignError as e:
        logger.warning("Start %d discarded: %s", index, e)
        status, message = "wrong-sign", str(e)
    except PhysicsError as e:
        logger.warning("Start %d failed: %s", index, e)
        status, message = "failed", str(e)
    return (
        CandidateSummary(
            **summary, status=status, message=message
        ),
        None,
        None,
        evaluations,
    )


def optimize(
    config: PhysicalConfig,
    options: Optional[OptimizationOptions] = None,
    guess: Optional[PulseShape] = None,
    separation_mode: SeparationMode = SeparationMode.EQUILIBRIUM,
    oscillation=None,
) -> OptimizedPulse:
    """
    Full pulse design: multistart closure search on the trap-centre model,
    re-closure on the final separation model, phase calibration and polish.

    Args:
        config: Validated configuration
        options: Budget, starts, seed and bounds
        guess: Optional first starting pulse
        separation_mode: Separation used for the final evaluation
        oscillation: Precomputed classical motion for the error budget

    Returns:
        OptimizedPulse holding the lowest-infidelity candidate

    Raises:
        OptimizationError: Every start failed
    """
    options = options or OptimizationOptions()
    separation_mode = SeparationMode(separation_mode)
    starts = _starting_pulses(config, options, guess)
    count = starts[0].segment_count
    low, high = detuning_bounds(config, options)
    limit = max(abs(carrier_frequency(config, m * config.omega_z)) for m in (low, high))
    carrier_limit = max(limit / config.omega_z, 1.0) * 1.05
    fast_model = ClosureModel(config, SeparationMode.TRAP_CENTER, count, carrier_limit=carrier_limit)
    if separation_mode is SeparationMode.TRAP_CENTER:
        final_model = fast_model
    else:
        final_model = ClosureModel(config, separation_mode, count, carrier_limit=carrier_limit)

    logger.info("Optimizing with %d starts (seed %d)", len(starts), options.seed)
    tasks = [
        (config, options, start, index, fast_model, final_model, separation_mode)
        for index, start in enumerate(starts)
    ]
    outcomes = run_parallel(_run_start, tasks, n_jobs=options.n_jobs)

    candidates = [outcome[0] for outcome in outcomes]
    evaluations = sum(outcome[3] for outcome in outcomes)
    eligible = [o for o in outcomes if o[0].status == "ok"]
    if not eligible:
        details = "; ".join(
            f"start {c.start_index}: {c.status} ({c.message})" for c in candidates
        )
        raise OptimizationError(f"All optimizer starts failed: {details}")

    winner = min(eligible, key=lambda o: (o[0].infidelity, o[0].start_index))
    summary, pulse, result, _ = winner
    if options.include_error_budget:
        result = evaluate_gate(
            config,
            pulse,
            separation_mode,
            oscillation=oscillation,
            include_error_budget=True,
        ).result
    converged = result.infidelity <= options.tolerance
    logger.info(
        "Best start %d: mu/omega_z=%.6f, infidelity=%.3e, converged=%s",
        summary.start_index,
        pulse.mu / config.omega_z,
        result.infidelity,
        converged,
    )
    return OptimizedPulse(
        pulse=pulse,
        result=result,
        evaluations=evaluations,
        converged=converged,
        start_index=summary.start_index,
        candidates=candidates,
    )
