from enum import Enum
from typing import Annotated, Any, Dict, List, Optional, Tuple

import numpy as np
from constants import (
    DEFAULT_K_EFF,
    DEFAULT_NBAR,
    DEFAULT_SPECIES,
    coulomb_constant_for,
    species_defaults,
)
from pydantic import BaseModel, ConfigDict, Field, model_validator

NonNegative = Annotated[float, Field(ge=0)]


class DetuningConvention(str, Enum):
    """How the pulse detuning mu maps onto the drive angular frequency"""

    RELATIVE = "relative-to-omega_z"  # drive at omega_z + mu
    ABSOLUTE = "absolute"  # drive at mu


class SeparationMode(str, Enum):
    """Source of the ion separation R(t) entering the zigzag frequency"""

    EQUILIBRIUM = "equilibrium"
    TRAP_CENTER = "trap-center"


class PhysicalConfig(BaseModel):
    """Physical description of the two-ion system (SI units, rad/s)"""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    species: str = DEFAULT_SPECIES
    ion_mass: float = Field(gt=0)  # kg
    ion_charge: float = Field(gt=0)  # C
    omega_x: float = Field(gt=0)  # in-plane trap frequency, rad/s
    omega_y: float = Field(gt=0)
    omega_z: float = Field(gt=0)  # transverse (gate) trap frequency
    d: float = Field(gt=0)  # closest trap distance, m
    v: float = Field(gt=0)  # shuttling speed, m/s
    w: float = Field(gt=0)  # operation-region width, m
    k_eff: float = Field(default=DEFAULT_K_EFF, gt=0)  # 1/m
    nbar: Tuple[NonNegative, NonNegative] = DEFAULT_NBAR  # per mode occupation
    detuning_convention: DetuningConvention = DetuningConvention.RELATIVE

    @model_validator(mode="before")
    @classmethod
    def _fill_species(cls, data):
        """Fill mass and charge from the species table when omitted"""
        if not isinstance(data, dict):
            return data
        if "ion_mass" in data and "ion_charge" in data:
            return data
        species = data.get("species", DEFAULT_SPECIES)
        try:
            defaults = species_defaults(species)
        except KeyError as e:
            raise ValueError(str(e.args[0])) from e
        return {**defaults, **data}

    @model_validator(mode="after")
    def _check_zigzag_stability(self):
        """Omega_2 must stay real at the closest approach"""
        coupling = (
            2.0 * coulomb_constant_for(self.ion_charge) / (self.ion_mass * self.d**3)
        )
        if self.omega_z**2 <= coupling:
            raise ValueError(
                "omega_z^2 must exceed 2K/(m d^3) "
                f"({self.omega_z**2:.6e} <= {coupling:.6e}); zigzag mode unstable"
            )
        return self


class FrequencyScales(BaseModel):
    """Shuttling, Coulomb and trapping frequency scales"""

    model_config = ConfigDict(frozen=True)

    f1: float  # v/d, 1/s
    f2: float  # sqrt(K/(m d^3)), 1/s
    f3: float  # in-plane trap frequency, rad/s

    @property
    def shuttling_ratio(self) -> float:
        return self.f1 / self.f3

    @property
    def coulomb_ratio(self) -> float:
        return self.f2 / self.f3


class GateWindow(BaseModel):
    """Interval during which the drive is on, symmetric about closest approach"""

    model_config = ConfigDict(frozen=True)

    t0: float  # s
    T: float  # s

    @property
    def t_end(self) -> float:
        return self.t0 + self.T


class PulseShape(BaseModel):
    """Piecewise-constant Rabi envelope on equal segments plus detuning"""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    segments: Tuple[float, ...] = Field(min_length=1)  # chi_k, rad/s
    mu: float  # rad/s, interpreted per the detuning convention
    segment_count: int = Field(default=0, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _fill_segment_count(cls, data):
        if isinstance(data, dict) and not data.get("segment_count"):
            data = {**data, "segment_count": len(data.get("segments") or ())}
        return data

    @model_validator(mode="after")
    def _check_segment_count(self):
        if self.segment_count != len(self.segments):
            raise ValueError(
                f"segment_count={self.segment_count} but "
                f"{len(self.segments)} segments given"
            )
        return self

    @classmethod
    def uniform(cls, chi: float, mu: float, segment_count: int = 5) -> "PulseShape":
        return cls(segments=(chi,) * segment_count, mu=mu)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.asarray(self.segments, dtype=float)

    @property
    def peak_amplitude(self) -> float:
        return float(np.max(np.abs(self.amplitudes)))

    def scaled(self, alpha: float) -> "PulseShape":
        """Return the pulse with every segment amplitude multiplied by alpha"""
        return PulseShape(segments=tuple(alpha * self.amplitudes), mu=self.mu)

    def with_segments(self, segments) -> "PulseShape":
        return PulseShape(segments=tuple(float(s) for s in segments), mu=self.mu)


class ModeBasis(BaseModel):
    """Participation of each ion in each transverse mode (rows = modes)"""

    model_config = ConfigDict(frozen=True)

    b: Tuple[Tuple[float, float], Tuple[float, float]]
    labels: Tuple[str, str] = ("center-of-mass", "zigzag")

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.b, dtype=float)

    def pair_weight(self, n: int) -> float:
        """Sum over j != l of b_j^n b_l^n for mode index n (1-based)"""
        row = self.matrix[n - 1]
        return float(np.sum(row) ** 2 - np.sum(row**2))


class ModeFrequencies(BaseModel):
    """Instantaneous transverse mode frequencies"""

    model_config = ConfigDict(frozen=True)

    t: float  # s
    Omega1: float  # rad/s
    Omega2: float  # rad/s


class ClosureResiduals(BaseModel):
    """Final phase-space displacement per mode and phase mismatch"""

    model_config = ConfigDict(frozen=True)

    delta_u: Tuple[float, float]  # m
    delta_u_dot: Tuple[float, float]  # m/s
    delta_phi: float  # rad


class FidelityBreakdown(BaseModel):
    """Leading-order fidelity and its two infidelity contributions"""

    model_config = ConfigDict(frozen=True)

    motional: float
    phase: float
    raw: float  # 1 - motional - phase, before clamping
    fidelity: float
    clamped: bool


class ErrorBudget(BaseModel):
    """Infidelity channels: residual closure, in-plane motion, Lamb-Dicke terms"""

    model_config = ConfigDict(frozen=True)

    dF1: float
    dF2: float
    dF3: float
    xi_max: float  # m, larger in-plane oscillation maximum
    dF3_is_estimate: bool = True


class GateResult(BaseModel):
    """Closure residuals, fidelity and error budget of one pulse"""

    model_config = ConfigDict(frozen=True)

    delta_u: Tuple[float, float]  # m
    delta_u_dot: Tuple[float, float]  # m/s
    delta_phi: float  # rad
    phi: float  # accumulated phase at the window end, rad
    fidelity: float
    raw_fidelity: float
    fidelity_clamped: bool = False
    motional_infidelity: float
    phase_infidelity: float
    normalized_delta_u: Tuple[float, float]  # in ground-state widths
    normalized_delta_u_dot: Tuple[float, float]  # (u_dot / omega_z) in widths
    peak_excursion: float  # in ground-state widths
    separation_mode: str
    error_budget: Optional[ErrorBudget] = None

    @property
    def infidelity(self) -> float:
        return 1.0 - self.fidelity

    @property
    def closure_residual(self) -> float:
        """Final phase-space displacement relative to the peak excursion"""
        if self.peak_excursion == 0:
            return 0.0
        final = np.hypot(self.normalized_delta_u, self.normalized_delta_u_dot)
        return float(np.linalg.norm(final) / self.peak_excursion)

    @property
    def residuals(self) -> ClosureResiduals:
        return ClosureResiduals(
            delta_u=self.delta_u,
            delta_u_dot=self.delta_u_dot,
            delta_phi=self.delta_phi,
        )


class OptimizationOptions(BaseModel):
    """Budget, starts and bounds for the pulse search"""

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    max_evaluations: int = Field(default=4000, gt=0)  # closure search, per start
    polish_evaluations: int = Field(default=20, ge=0)  # true-objective polish
    tolerance: float = Field(default=1e-6, gt=0)  # target infidelity
    closure_tolerance: float = Field(default=1e-6, gt=0)  # residual / excursion
    multistart: int = Field(default=4, ge=1)
    seed: int = 0
    segment_count: int = Field(default=5, ge=2)
    amplitude_bound: float = Field(default=1.0, gt=0)  # closure search box
    chi_max: float = Field(default=2 * np.pi * 50e6, gt=0)  # |chi_k| bound, rad/s
    mu_bounds: Optional[Tuple[float, float]] = None  # units of omega_z
    n_jobs: int = Field(default=1, ge=1)
    include_error_budget: bool = True

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.mu_bounds is not None and not self.mu_bounds[0] < self.mu_bounds[1]:
            raise ValueError("mu_bounds must be an increasing pair")
        return self


class CandidateSummary(BaseModel):
    """One multistart candidate as retained by the optimizer"""

    start_index: int
    mu: float
    segments: Tuple[float, ...]
    closure_residual: Optional[float] = None
    infidelity: Optional[float] = None
    status: str  # "ok", "out-of-bounds", "wrong-sign", "failed"
    message: Optional[str] = None


class OptimizedPulse(BaseModel):
    """Best pulse found by the optimizer with its full evaluation"""

    pulse: PulseShape
    result: GateResult
    evaluations: int
    converged: bool
    start_index: int
    candidates: List[CandidateSummary] = []


class SweepRecord(BaseModel):
    """One grid cell of a constraint-regime sweep"""

    f1_ratio: Optional[float] = None
    f2_ratio: float
    d: float
    v: float
    value: Optional[float] = None  # normalized amplitude or displacement
    t_at_max: Optional[float] = None
    converged: bool
    message: Optional[str] = None


class SweepResult(BaseModel):
    """Gridded scan output with the axis realization recorded"""

    kind: str  # "oscillation" or "equilibrium"
    axes: Dict[str, List[float]]
    records: List[SweepRecord]
    metadata: Dict[str, Any] = {}


class BranchDisplacement(BaseModel):
    """Oracle coherent centre against the analytic prediction for one branch/mode"""

    spins: Tuple[int, int]
    mode: int
    weight: float
    z_oracle: float  # m
    p_oracle: float  # kg m/s
    z_analytic: float
    p_analytic: float
    mismatch_widths: float  # in ground-state widths


class ConvergenceRow(BaseModel):
    n_max: int
    phi_ent: float
    oracle_fidelity: float


class VerificationReport(BaseModel):
    """Fock-space oracle against the analytic construction"""

    phi_ent: float
    analytic_phi: float
    phase_delta: float
    branch_phases: Dict[str, float]
    branch_displacements: List[BranchDisplacement]
    oracle_fidelity: float
    analytic_fidelity: float
    fidelity_delta: float
    n_max: int
    thermal_cutoff: Tuple[int, int]
    max_leakage: float
    max_norm_deviation: float
    convergence: List[ConvergenceRow]


class RunManifest(BaseModel):
    """Provenance of one CLI run; data files reference its hash"""

    config_hash: str
    subcommand: str
    overrides: Dict[str, Any] = {}
    outputs: List[str] = []
    tool_version: str
    wall_clock: Optional[str] = None
    manifest_hash: str = ""
