"""
Independent check of the analytic gate: Schrodinger propagation of each mode in a
truncated number basis, one spin branch at a time.

Each branch sees H = P^2/2m + m Omega_n(t)^2 Z^2/2 + f(t) c_n Z with c_n the
branch's drive weight. States are propagated in the frame rotating at omega_z
(scaled time tau = omega_z t) and reported in the Schrodinger picture. Nothing
here uses the displacement-frame factorization of the analytic construction.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from config import config as runtime
from constants import TARGET_PHASE
from core_model import ground_state_width, lamb_dicke_parameter
from errors import (
    IllConditionedPhaseError,
    IntegrationError,
    LeakageError,
    ThermalTruncationError,
)
from gate import DriveSchedule, evaluate_gate, make_profile, scaled_frequency_squared
from models import (
    BranchDisplacement,
    ConvergenceRow,
    ModeBasis,
    PhysicalConfig,
    PulseShape,
    SeparationMode,
    VerificationReport,
)
from modes import participation_matrix
from parallel import run_parallel
from scipy.integrate import solve_ivp

logger = logging.getLogger(__name__)

SPIN_BRANCHES = ((1, 1), (1, -1), (-1, 1), (-1, -1))
THERMAL_SAMPLES_PER_CYCLE = 4


@dataclass(frozen=True)
class BranchSpec:
    """Spin configuration and the resulting per-mode drive weights"""

    spins: Tuple[int, int]
    weights: Tuple[float, float]  # c_n = sum_j b_j^n s_j

    @classmethod
    def from_spins(
        cls, s1: int, s2: int, basis: Optional[ModeBasis] = None
    ) -> "BranchSpec":
        if s1 not in (1, -1) or s2 not in (1, -1):
            raise ValueError("Spin values must be +1 or -1")
        basis = basis or participation_matrix()
        weights = basis.matrix @ np.array([s1, s2], dtype=float)
        return cls(spins=(s1, s2), weights=(float(weights[0]), float(weights[1])))

    @property
    def label(self) -> str:
        return "".join("+" if s > 0 else "-" for s in self.spins)


@dataclass
class BranchState:
    """Final motional state of one mode in one branch, Schrodinger picture"""

    mode: int
    n_max: int
    weight: float
    initial: int
    amplitudes: np.ndarray  # complex, length n_max
    norm_deviation: float
    leakage: float  # largest population in the top two levels over the window

    def lowering_expectation(self) -> complex:
        psi = self.amplitudes
        return complex(np.vdot(psi[:-1], np.sqrt(np.arange(1, self.n_max)) * psi[1:]))

    def centre(self, config: PhysicalConfig) -> Tuple[float, float]:
        """Coherent centre (<Z> in m, <P> in kg m/s)"""
        alpha = self.lowering_expectation()
        width = ground_state_width(config)
        return (
            2.0 * width * alpha.real,
            2.0 * config.ion_mass * config.omega_z * width * alpha.imag,
        )


@dataclass
class _Propagation:
    """Ground-state history and thermal finals for one (mode, weight) pair"""

    mode: int
    weight: float
    ground: np.ndarray  # (n_max, samples) interaction-frame history
    thermal: Optional[np.ndarray]  # (n_max, k_max + 1) interaction-frame finals
    leakage: float
    thermal_leakage: float
    norm_deviation: float


@dataclass
class OracleRun:
    """Everything extracted from one truncation"""

    n_max: int
    phases: Dict[Tuple[int, float], float]  # (mode, weight) -> unwrapped phase
    states: Dict[Tuple[int, float], BranchState]  # ground-state finals
    overlaps: Dict[int, Dict[Tuple[float, float], complex]] = field(default_factory=dict)
    thermal_cutoff: Tuple[int, int] = (0, 0)
    max_leakage: float = 0.0
    max_norm_deviation: float = 0.0

    def branch_phase(self, branch: BranchSpec) -> float:
        return sum(self.phases[_key(n, branch.weights[n - 1])] for n in (1, 2))

    @property
    def entangling_phase(self) -> float:
        theta = {
            label: self.branch_phase(BranchSpec.from_spins(*spins))
            for spins, label in zip(SPIN_BRANCHES, ("++", "+-", "-+", "--"))
        }
        return (theta["++"] + theta["--"] - theta["+-"] - theta["-+"]) / 4.0


def thermal_distribution(nbar: float, weight: Optional[float] = None) -> np.ndarray:
    """Thermal number-state populations cut at cumulative weight, renormalized"""
    weight = weight or runtime.THERMAL_WEIGHT
    if nbar == 0:
        return np.array([1.0])
    ratio = nbar / (nbar + 1.0)
    count = int(math.ceil(math.log(1.0 - weight) / math.log(ratio)))
    p = (1.0 - ratio) * ratio ** np.arange(max(count, 1))
    return p / p.sum()


def suggest_truncation(config: PhysicalConfig, peak_excursion: float) -> int:
    """
    Number-basis size that holds the thermal cut plus the largest branch
    displacement; peak_excursion is in ground-state widths.
    """
    alpha = peak_excursion / math.sqrt(2.0)  # |c| <= sqrt(2)
    top = max(thermal_distribution(nbar).size - 1 for nbar in config.nbar)
    spread = 4.0 * alpha**2 + 6.0 * math.sqrt(2 * top + 1) * alpha
    return max(runtime.FOCK_N_MAX, int(math.ceil(top + spread)) + 10)


def _ladder(psi: np.ndarray, sqrt_n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(a psi, a^dagger psi) in the truncated basis; psi has shape (n_max, k)"""
    lower = np.zeros_like(psi)
    raise_ = np.zeros_like(psi)
    lower[:-1] = sqrt_n[1:, None] * psi[1:]
    raise_[1:] = sqrt_n[1:, None] * psi[:-1]
    return lower, raise_


def _solve(
    config: PhysicalConfig,
    schedule: DriveSchedule,
    n: int,
    weight: float,
    n_max: int,
    initial: Sequence[int],
    tol: float,
    profile,
    stride: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """Propagate number states in the rotating frame; returns (tau, states)"""
    omega2 = scaled_frequency_squared(config, n, profile)
    eta = lamb_dicke_parameter(config)
    sqrt_n = np.sqrt(np.arange(n_max, dtype=float))
    number = np.arange(n_max, dtype=float)[:, None]
    start = schedule.bounds[0]
    columns = len(initial)

    psi = np.zeros((n_max, columns), dtype=complex)
    psi[list(initial), np.arange(columns)] = 1.0
    state = psi.ravel()
    taus, pieces = [], []
    for k, grid in enumerate(schedule.grids):
        coupling = -eta * weight * schedule.chi[k]
        sample = grid[::stride]
        if sample[-1] != grid[-1]:
            sample = np.append(sample, grid[-1])

        def rhs(tau, y, coupling=coupling):
            psi = y.reshape(n_max, columns)
            theta = tau - start
            rot = np.exp(-1j * theta)
            lower, raise_ = _ladder(psi, sqrt_n)
            g = coupling * math.sin(schedule.carrier * tau)
            out = g * (rot * lower + np.conj(rot) * raise_)
            eps = 0.25 * (omega2(tau) - 1.0)
            if eps != 0.0:
                lower2, _ = _ladder(lower, sqrt_n)
                _, raise2 = _ladder(raise_, sqrt_n)
                out = out + eps * (
                    rot**2 * lower2 + np.conj(rot) ** 2 * raise2 + (2.0 * number + 1.0) * psi
                )
            return (-1j * out).ravel()

        sol = solve_ivp(
            rhs,
            (grid[0], grid[-1]),
            state,
            method="DOP853",
            t_eval=sample,
            rtol=tol,
            atol=tol * 1e-3,
        )
        if sol.status != 0:
            raise IntegrationError(f"Fock propagation failed in segment {k}: {sol.message}")
        state = sol.y[:, -1]
        taus.append(sol.t if k == 0 else sol.t[1:])
        pieces.append(sol.y if k == 0 else sol.y[:, 1:])
    tau = np.concatenate(taus)
    states = np.concatenate(pieces, axis=1).reshape(n_max, columns, tau.size)
    return tau, states


def _to_schrodinger(psi: np.ndarray, elapsed: float) -> np.ndarray:
    n = np.arange(psi.shape[0], dtype=float)
    return np.exp(-1j * (n + 0.5) * elapsed) * psi


def _top_population(states: np.ndarray) -> np.ndarray:
    """Population of the top two levels, per column and sample"""
    return np.sum(np.abs(states[-2:]) ** 2, axis=0)


def _propagate_pair(config, pulse, n, weight, n_max, populations, tol, separation_mode):
    schedule = DriveSchedule(config, pulse)
    profile = make_profile(config, separation_mode) if n == 2 else None
    _, ground = _solve(config, schedule, n, weight, n_max, [0], tol, profile)
    ground = ground[:, 0, :]
    leakage = float(np.max(_top_population(ground[:, None, :])))
    norm_deviation = float(abs(np.sum(np.abs(ground[:, -1]) ** 2) - 1.0))

    thermal = None
    thermal_leakage = 0.0
    if populations is not None:
        stride = max(1, runtime.SAMPLES_PER_CYCLE // THERMAL_SAMPLES_PER_CYCLE)
        _, history = _solve(
            config,
            schedule,
            n,
            weight,
            n_max,
            list(range(populations.size)),
            tol,
            profile,
            stride=stride,
        )
        thermal = history[:, :, -1]
        per_state = _top_population(history).max(axis=1)
        thermal_leakage = float(np.dot(populations, per_state))
        norms = np.sum(np.abs(thermal) ** 2, axis=0)
        norm_deviation = max(norm_deviation, float(np.max(np.abs(norms - 1.0))))
    return _Propagation(
        mode=n,
        weight=weight,
        ground=ground,
        thermal=thermal,
        leakage=leakage,
        thermal_leakage=thermal_leakage,
        norm_deviation=norm_deviation,
    )


def _unwrapped_phase(reference: np.ndarray, driven: np.ndarray) -> float:
    """Final phase of <reference(t)|driven(t)>, unwrapped along the window"""
    overlap = np.sum(np.conj(reference) * driven, axis=0)
    final = abs(overlap[-1])
    if final < runtime.OVERLAP_THRESHOLD:
        raise IllConditionedPhaseError(
            f"Branch overlap {final:.3e} below {runtime.OVERLAP_THRESHOLD}; "
            "phase-space loops did not close"
        )
    phase = np.unwrap(np.angle(overlap))
    if phase.size > 1 and np.max(np.abs(np.diff(phase))) > math.pi / 2:
        raise IllConditionedPhaseError("Branch phase changes too fast to unwrap")
    return float(phase[-1])


def _branch_weights(basis: ModeBasis) -> Dict[int, List[float]]:
    """Distinct drive weights per mode, the undriven reference first"""
    weights = {1: [0.0], 2: [0.0]}
    for spins in SPIN_BRANCHES:
        branch = BranchSpec.from_spins(*spins, basis)
        for n in (1, 2):
            c = branch.weights[n - 1]
            if all(abs(c - known) > 1e-12 for known in weights[n]):
                weights[n].append(c)
    return weights


def _key(n: int, c: float) -> Tuple[int, float]:
    return (n, round(c, 12))


def run_oracle(
    config: PhysicalConfig,
    pulse: PulseShape,
    n_max: int,
    tol: Optional[float] = None,
    thermal: bool = True,
    separation_mode: SeparationMode = SeparationMode.EQUILIBRIUM,
    n_jobs: int = 1,
) -> OracleRun:
    """
    Propagate every distinct (mode, drive weight) pair at one truncation.

    Raises:
        ThermalTruncationError: The thermal cut does not fit below n_max
        LeakageError: Population reached the top two levels
        IllConditionedPhaseError: A branch overlap is too small to carry a phase
    """
    tol = tol or runtime.ORACLE_RTOL
    separation_mode = SeparationMode(separation_mode)
    basis = participation_matrix()
    populations = {n: None for n in (1, 2)}
    cutoff = (0, 0)
    if thermal:
        populations = {n: thermal_distribution(config.nbar[n - 1]) for n in (1, 2)}
        cutoff = tuple(populations[n].size - 1 for n in (1, 2))
        if max(cutoff) > n_max - 10:
            raise ThermalTruncationError(
                f"Thermal cut at n={max(cutoff)} does not fit in n_max={n_max}"
            )

    weights = _branch_weights(basis)
    tasks = [
        (config, pulse, n, c, n_max, populations[n], tol, separation_mode)
        for n in (1, 2)
        for c in weights[n]
    ]
    logger.info("Fock oracle: %d propagations at n_max=%d", len(tasks), n_max)
    results = run_parallel(_propagate_pair, tasks, n_jobs=n_jobs)
    by_key = {_key(r.mode, r.weight): r for r in results}

    max_leakage = max(max(r.leakage, r.thermal_leakage) for r in results)
    if max_leakage > runtime.LEAKAGE_THRESHOLD:
        raise LeakageError(
            f"Top-level population {max_leakage:.3e} exceeds "
            f"{runtime.LEAKAGE_THRESHOLD:.1e}; increase n_max beyond {n_max}"
        )

    schedule = DriveSchedule(config, pulse)
    elapsed = schedule.bounds[-1] - schedule.bounds[0]
    phases, states = {}, {}
    for n in (1, 2):
        reference = by_key[_key(n, 0.0)]
        for c in weights[n]:
            run = by_key[_key(n, c)]
            phases[_key(n, c)] = _unwrapped_phase(reference.ground, run.ground)
            states[_key(n, c)] = BranchState(
                mode=n,
                n_max=n_max,
                weight=c,
                initial=0,
                amplitudes=_to_schrodinger(run.ground[:, -1], elapsed),
                norm_deviation=run.norm_deviation,
                leakage=run.leakage,
            )

    overlaps = {}
    if thermal:
        for n in (1, 2):
            p = populations[n]
            table = {}
            for c in weights[n]:
                for c_other in weights[n]:
                    bra = by_key[_key(n, c_other)].thermal
                    ket = by_key[_key(n, c)].thermal
                    table[(round(c, 12), round(c_other, 12))] = complex(
                        np.sum(p * np.sum(np.conj(bra) * ket, axis=0))
                    )
            overlaps[n] = table

    return OracleRun(
        n_max=n_max,
        phases=phases,
        states=states,
        overlaps=overlaps,
        thermal_cutoff=cutoff,
        max_leakage=max_leakage,
        max_norm_deviation=max(r.norm_deviation for r in results),
    )


def propagate_branch(
    config: PhysicalConfig,
    pulse: PulseShape,
    branch: BranchSpec,
    n: int,
    n_max: Optional[int] = None,
    tol: Optional[float] = None,
    initial: int = 0,
    separation_mode: SeparationMode = SeparationMode.EQUILIBRIUM,
) -> BranchState:
    """
    Propagate one mode of one spin branch from a number state across the window.

    Args:
        config: Validated configuration
        pulse: Drive pulse
        branch: Spin branch supplying the drive weight c_n
        n: Mode index, 1 = centre-of-mass, 2 = zigzag
        n_max: Number-basis size
        tol: Relative integration tolerance
        initial: Initial number state
        separation_mode: Source of R(t) for the zigzag frequency

    Returns:
        BranchState in the Schrodinger picture with the global phase retained

    Raises:
        LeakageError: Population in the top two levels exceeded the threshold
    """
    n_max = n_max or runtime.FOCK_N_MAX
    tol = tol or runtime.ORACLE_RTOL
    if not 0 <= initial < n_max:
        raise ValueError(f"Initial level {initial} outside basis of size {n_max}")
    schedule = DriveSchedule(config, pulse)
    profile = make_profile(config, SeparationMode(separation_mode)) if n == 2 else None
    weight = branch.weights[n - 1]
    _, history = _solve(config, schedule, n, weight, n_max, [initial], tol, profile)
    history = history[:, 0, :]
    leakage = float(np.max(_top_population(history[:, None, :])))
    if leakage > runtime.LEAKAGE_THRESHOLD:
        raise LeakageError(
            f"Top-level population {leakage:.3e} exceeds threshold at n_max={n_max}"
        )
    final = history[:, -1]
    elapsed = schedule.bounds[-1] - schedule.bounds[0]
    return BranchState(
        mode=n,
        n_max=n_max,
        weight=weight,
        initial=initial,
        amplitudes=_to_schrodinger(final, elapsed),
        norm_deviation=float(abs(np.sum(np.abs(final) ** 2) - 1.0)),
        leakage=leakage,
    )


def entangling_phase_from_oracle(
    config: PhysicalConfig,
    pulse: PulseShape,
    n_max: Optional[int] = None,
    tol: Optional[float] = None,
    separation_mode: SeparationMode = SeparationMode.EQUILIBRIUM,
    n_jobs: int = 1,
) -> float:
    """Phi_ent = (theta_++ + theta_-- - theta_+- - theta_-+)/4 from ground-state branches"""
    n_max = n_max or runtime.FOCK_N_MAX
    run = run_oracle(
        config, pulse, n_max, tol, thermal=False, separation_mode=separation_mode, n_jobs=n_jobs
    )
    return run.entangling_phase


def _spin_product(spins: Tuple[int, int]) -> int:
    return spins[0] * spins[1]


def fidelity_from_run(run: OracleRun) -> float:
    """
    Thermal-averaged fidelity of the spin state reached from |++> against the ideal
    controlled-phase-flip output, common phases compensated.
    """
    branches = [BranchSpec.from_spins(*spins) for spins in SPIN_BRANCHES]
    total = 0.0 + 0.0j
    for ket in branches:
        for bra in branches:
            term = np.exp(-1j * TARGET_PHASE * _spin_product(ket.spins))
            term *= np.exp(1j * TARGET_PHASE * _spin_product(bra.spins))
            for n in (1, 2):
                c = round(ket.weights[n - 1], 12)
                c_other = round(bra.weights[n - 1], 12)
                term *= run.overlaps[n][(c, c_other)]
            total += term
    return float(min(max((total / 16.0).real, 0.0), 1.0))


def oracle_gate_fidelity(
    config: PhysicalConfig,
    pulse: PulseShape,
    n_max: Optional[int] = None,
    tol: Optional[float] = None,
    separation_mode: SeparationMode = SeparationMode.EQUILIBRIUM,
    n_jobs: int = 1,
) -> float:
    """Thermal-averaged oracle fidelity for the |++> input"""
    n_max = n_max or runtime.FOCK_N_MAX
    run = run_oracle(
        config, pulse, n_max, tol, thermal=True, separation_mode=separation_mode, n_jobs=n_jobs
    )
    return fidelity_from_run(run)


def _branch_displacements(
    run: OracleRun, config: PhysicalConfig, delta_u, delta_u_dot
) -> List[BranchDisplacement]:
    width = ground_state_width(config)
    rows = []
    for spins in SPIN_BRANCHES:
        branch = BranchSpec.from_spins(*spins)
        for n in (1, 2):
            c = branch.weights[n - 1]
            z, p = run.states[_key(n, c)].centre(config)
            z_analytic = -c * delta_u[n - 1]
            p_analytic = -c * config.ion_mass * delta_u_dot[n - 1]
            mismatch = math.hypot(
                z - z_analytic, (p - p_analytic) / (config.ion_mass * config.omega_z)
            )
            rows.append(
                BranchDisplacement(
                    spins=spins,
                    mode=n,
                    weight=c,
                    z_oracle=z,
                    p_oracle=p,
                    z_analytic=z_analytic,
                    p_analytic=p_analytic,
                    mismatch_widths=mismatch / width,
                )
            )
    return rows


def verify_gate(
    config: PhysicalConfig,
    pulse: PulseShape,
    n_max: Optional[int] = None,
    tol: Optional[float] = None,
    separation_mode: SeparationMode = SeparationMode.EQUILIBRIUM,
    convergence_step: int = 10,
    n_jobs: int = 1,
) -> VerificationReport:
    """
    Compare the oracle against the analytic construction for one pulse.

    Args:
        config: Validated configuration
        pulse: Drive pulse
        n_max: Number-basis size; suggested from the classical excursion if omitted
        tol: Relative integration tolerance
        separation_mode: Source of R(t), shared by oracle and analytic evaluation
        convergence_step: Basis increase for the convergence row
        n_jobs: joblib workers for the branch propagations

    Returns:
        VerificationReport with phases, displacements, fidelities and convergence
    """
    evaluation = evaluate_gate(config, pulse, separation_mode)
    analytic = evaluation.result
    if n_max is None:
        n_max = suggest_truncation(config, analytic.peak_excursion)
        logger.info("Suggested truncation n_max=%d", n_max)

    runs = [
        run_oracle(config, pulse, size, tol, True, separation_mode, n_jobs)
        for size in (n_max, n_max + convergence_step)
    ]
    run = runs[0]
    phi_ent = run.entangling_phase
    oracle_fidelity = fidelity_from_run(run)
    branch_phases = {
        BranchSpec.from_spins(*spins).label: run.branch_phase(BranchSpec.from_spins(*spins))
        for spins in SPIN_BRANCHES
    }
    report = VerificationReport(
        phi_ent=phi_ent,
        analytic_phi=analytic.phi,
        phase_delta=phi_ent - analytic.phi,
        branch_phases=branch_phases,
        branch_displacements=_branch_displacements(
            run, config, analytic.delta_u, analytic.delta_u_dot
        ),
        oracle_fidelity=oracle_fidelity,
        analytic_fidelity=analytic.fidelity,
        fidelity_delta=oracle_fidelity - analytic.fidelity,
        n_max=n_max,
        thermal_cutoff=run.thermal_cutoff,
        max_leakage=run.max_leakage,
        max_norm_deviation=run.max_norm_deviation,
        convergence=[
            ConvergenceRow(
                n_max=r.n_max,
                phi_ent=r.entangling_phase,
                oracle_fidelity=fidelity_from_run(r),
            )
            for r in runs
        ],
    )
    logger.info(
        "Verification: phase delta %.3e rad, fidelity delta %.3e",
        report.phase_delta,
        report.fidelity_delta,
    )
    return report
