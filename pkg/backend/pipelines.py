from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from core_model import (
    frequency_scales,
    gate_window,
    ground_state_width,
    lamb_dicke_parameter,
)
from errors import ConfigValidationError
from fock_oracle import verify_gate
from gate import TRAJECTORY_COLUMNS, evaluate_gate, phase_space_summary, trajectory_table
from models import (
    OptimizationOptions,
    PhysicalConfig,
    PulseShape,
    SeparationMode,
)
from modes import mode_frequency_table
from optimizer import optimize
from transport import solve_equilibrium, sweep_equilibrium, sweep_oscillation


@dataclass
class Table:
    """Header plus rows, written as one CSV file"""

    header: List[str]
    rows: List[List[Any]]


@dataclass
class PipelineOutput:
    """Result of one pipeline run: a primary document and/or table plus sidecars"""

    summary: str
    document: Optional[Any] = None
    table: Optional[Table] = None
    sidecars: Dict[str, Any] = field(default_factory=dict)
    converged: bool = True


class Pipeline(ABC):
    """Abstract base class for all pipelines"""

    @abstractmethod
    def get_pipeline_definition(self) -> Dict[str, Any]:
        """Return name, description and argument schema"""
        pass

    @abstractmethod
    def execute(self, config: PhysicalConfig, **kwargs) -> PipelineOutput:
        """Run the pipeline on a validated configuration"""
        pass


def _separation(value: Optional[str]) -> SeparationMode:
    try:
        return SeparationMode(value or SeparationMode.EQUILIBRIUM.value)
    except ValueError as e:
        raise ConfigValidationError(f"Unknown separation mode '{value}'") from e


def _require_pulse(pulse: Optional[PulseShape], name: str) -> PulseShape:
    if pulse is None:
        raise ConfigValidationError(f"{name} needs a pulse document")
    return pulse


_SEPARATION_ARGUMENT = {
    "type": "string",
    "enum": [mode.value for mode in SeparationMode],
    "description": "Source of R(t): solved equilibrium or trap-centre distance",
}


class ModesPipeline(Pipeline):
    """Mode frequencies across the gate window"""

    def get_pipeline_definition(self) -> Dict[str, Any]:
        return {
            "name": "modes",
            "description": "Tabulate Omega1/2pi and Omega2/2pi over the gate window",
            "arguments": {
                "type": "object",
                "properties": {
                    "samples": {"type": "integer", "description": "Number of time samples"},
                    "separation_mode": _SEPARATION_ARGUMENT,
                },
                "required": [],
            },
        }

    def execute(
        self,
        config: PhysicalConfig,
        samples: int = 201,
        separation_mode: Optional[str] = None,
        **_,
    ) -> PipelineOutput:
        table = mode_frequency_table(config, samples, _separation(separation_mode))
        lowest = float(table[:, 2].min() * 2.0 * np.pi / config.omega_z)
        return PipelineOutput(
            summary=f"modes: {table.shape[0]} samples, min Omega2/omega_z = {lowest:.8f}",
            table=Table(
                header=["t_s", "Omega1_over_2pi_Hz", "Omega2_over_2pi_Hz"],
                rows=table.tolist(),
            ),
        )


def _sweep_rows(sweep, with_f1: bool) -> List[List[Any]]:
    rows = []
    for record in sweep.records:
        row = [record.f1_ratio] if with_f1 else []
        row += [
            record.f2_ratio,
            record.d,
            record.v,
            record.value,
            record.t_at_max,
            record.converged,
        ]
        rows.append(row)
    return rows


class TransportSweepPipeline(Pipeline):
    """Classical oscillation amplitude over the f1/f3 x f2/f3 plane"""

    def get_pipeline_definition(self) -> Dict[str, Any]:
        return {
            "name": "transport-sweep",
            "description": "Sweep xi_x_max/d over shuttling and Coulomb frequency ratios",
            "arguments": {
                "type": "object",
                "properties": {
                    "f1_ratios": {"type": "array", "items": {"type": "number"}},
                    "f2_ratios": {"type": "array", "items": {"type": "number"}},
                    "tol": {"type": "number", "description": "Relative tolerance"},
                    "n_jobs": {"type": "integer"},
                },
                "required": ["f1_ratios", "f2_ratios"],
            },
        }

    def execute(
        self,
        config: PhysicalConfig,
        f1_ratios: Optional[Sequence[float]] = None,
        f2_ratios: Optional[Sequence[float]] = None,
        tol: Optional[float] = None,
        n_jobs: int = 1,
        **_,
    ) -> PipelineOutput:
        if not f1_ratios or not f2_ratios:
            raise ConfigValidationError("transport-sweep needs f1_ratios and f2_ratios")
        sweep = sweep_oscillation(config, f1_ratios, f2_ratios, tol=tol, n_jobs=n_jobs)
        failed = sum(not r.converged for r in sweep.records)
        return PipelineOutput(
            summary=f"transport-sweep: {len(sweep.records)} cells, {failed} failed",
            table=Table(
                header=[
                    "f1_ratio",
                    "f2_ratio",
                    "d_m",
                    "v_m_per_s",
                    "xi_x_max_over_d",
                    "t_at_max_s",
                    "converged",
                ],
                rows=_sweep_rows(sweep, with_f1=True),
            ),
            sidecars={"meta": sweep.metadata | {"axes": sweep.axes}},
            converged=failed == 0,
        )


class EquilibriumSweepPipeline(Pipeline):
    """Maximum equilibrium displacement against f2/f3"""

    def get_pipeline_definition(self) -> Dict[str, Any]:
        return {
            "name": "equilibrium-sweep",
            "description": "Sweep q_max/d over the gate window against f2/f3",
            "arguments": {
                "type": "object",
                "properties": {
                    "f2_ratios": {"type": "array", "items": {"type": "number"}},
                    "samples": {"type": "integer"},
                    "n_jobs": {"type": "integer"},
                },
                "required": ["f2_ratios"],
            },
        }

    def execute(
        self,
        config: PhysicalConfig,
        f2_ratios: Optional[Sequence[float]] = None,
        samples: int = 201,
        n_jobs: int = 1,
        **_,
    ) -> PipelineOutput:
        if not f2_ratios:
            raise ConfigValidationError("equilibrium-sweep needs f2_ratios")
        sweep = sweep_equilibrium(config, f2_ratios, samples=samples, n_jobs=n_jobs)
        failed = sum(not r.converged for r in sweep.records)
        return PipelineOutput(
            summary=f"equilibrium-sweep: {len(sweep.records)} cells, {failed} failed",
            table=Table(
                header=[
                    "f2_ratio",
                    "d_m",
                    "v_m_per_s",
                    "q_max_over_d",
                    "t_at_max_s",
                    "converged",
                ],
                rows=_sweep_rows(sweep, with_f1=False),
            ),
            sidecars={"meta": sweep.metadata | {"axes": sweep.axes}},
            converged=failed == 0,
        )


class GateEvalPipeline(Pipeline):
    """Closure residuals, phase and fidelity of a given pulse"""

    def get_pipeline_definition(self) -> Dict[str, Any]:
        return {
            "name": "gate-eval",
            "description": "Evaluate closure, geometric phase and fidelity of a pulse",
            "arguments": {
                "type": "object",
                "properties": {
                    "pulse": {"type": "object", "description": "Pulse document"},
                    "separation_mode": _SEPARATION_ARGUMENT,
                    "include_error_budget": {"type": "boolean"},
                    "tol": {"type": "number"},
                },
                "required": ["pulse"],
            },
        }

    def execute(
        self,
        config: PhysicalConfig,
        pulse: Optional[PulseShape] = None,
        separation_mode: Optional[str] = None,
        include_error_budget: bool = False,
        tol: Optional[float] = None,
        **_,
    ) -> PipelineOutput:
        pulse = _require_pulse(pulse, "gate-eval")
        evaluation = evaluate_gate(
            config,
            pulse,
            _separation(separation_mode),
            tol=tol,
            include_error_budget=include_error_budget,
        )
        result = evaluation.result
        return PipelineOutput(
            summary=(
                f"gate-eval: phi={result.phi:.10f} rad, "
                f"infidelity={result.infidelity:.3e}"
            ),
            document=result,
            table=Table(
                header=list(TRAJECTORY_COLUMNS),
                rows=trajectory_table(evaluation, config).tolist(),
            ),
            sidecars={"loops": phase_space_summary(evaluation, config)},
        )


class OptimizePipeline(Pipeline):
    """Multistart pulse design"""

    def get_pipeline_definition(self) -> Dict[str, Any]:
        return {
            "name": "optimize",
            "description": "Design a closed, calibrated pulse with maximal fidelity",
            "arguments": {
                "type": "object",
                "properties": {
                    "options": {"type": "object", "description": "Optimization options"},
                    "pulse": {"type": "object", "description": "Optional starting pulse"},
                    "separation_mode": _SEPARATION_ARGUMENT,
                },
                "required": [],
            },
        }

    def execute(
        self,
        config: PhysicalConfig,
        options: Optional[OptimizationOptions] = None,
        pulse: Optional[PulseShape] = None,
        separation_mode: Optional[str] = None,
        **_,
    ) -> PipelineOutput:
        optimized = optimize(config, options, guess=pulse, separation_mode=_separation(separation_mode))
        result = optimized.result
        return PipelineOutput(
            summary=(
                f"optimize: mu/omega_z={optimized.pulse.mu / config.omega_z:.6f}, "
                f"infidelity={result.infidelity:.3e}, converged={optimized.converged}"
            ),
            document=optimized,
            converged=optimized.converged,
        )


class VerifyPipeline(Pipeline):
    """Fock-space cross-check of a pulse"""

    def get_pipeline_definition(self) -> Dict[str, Any]:
        return {
            "name": "verify",
            "description": "Cross-check phase, displacements and fidelity in a number basis",
            "arguments": {
                "type": "object",
                "properties": {
                    "pulse": {"type": "object", "description": "Pulse document"},
                    "n_max": {"type": "integer", "description": "Number-basis size"},
                    "tol": {"type": "number"},
                    "separation_mode": _SEPARATION_ARGUMENT,
                    "n_jobs": {"type": "integer"},
                },
                "required": ["pulse"],
            },
        }

    def execute(
        self,
        config: PhysicalConfig,
        pulse: Optional[PulseShape] = None,
        n_max: Optional[int] = None,
        tol: Optional[float] = None,
        separation_mode: Optional[str] = None,
        n_jobs: int = 1,
        **_,
    ) -> PipelineOutput:
        pulse = _require_pulse(pulse, "verify")
        report = verify_gate(
            config,
            pulse,
            n_max=n_max,
            tol=tol,
            separation_mode=_separation(separation_mode),
            n_jobs=n_jobs,
        )
        return PipelineOutput(
            summary=(
                f"verify: phi_ent={report.phi_ent:.8f} rad "
                f"(delta {report.phase_delta:.2e}), "
                f"fidelity delta {report.fidelity_delta:.2e}, n_max={report.n_max}"
            ),
            document=report,
            table=Table(
                header=["n_max", "phi_ent", "oracle_fidelity"],
                rows=[[r.n_max, r.phi_ent, r.oracle_fidelity] for r in report.convergence],
            ),
        )


class DescribePipeline(Pipeline):
    """Derived scales of a configuration"""

    def get_pipeline_definition(self) -> Dict[str, Any]:
        return {
            "name": "describe",
            "description": "Report frequency scales, window, Lamb-Dicke parameter and mode softening",
            "arguments": {"type": "object", "properties": {}, "required": []},
        }

    def execute(self, config: PhysicalConfig, **_) -> PipelineOutput:
        scales = frequency_scales(config)
        window = gate_window(config)
        closest = solve_equilibrium(config, 0.0)
        frequencies = mode_frequency_table(config, samples=3)
        lowest = float(frequencies[1, 2] * 2.0 * np.pi / config.omega_z)
        description = {
            "frequency_scales": scales.model_dump(),
            "shuttling_ratio": scales.shuttling_ratio,
            "coulomb_ratio": scales.coulomb_ratio,
            "window": {"t0": window.t0, "T": window.T, "t_end": window.t_end},
            "carrier_cycles": window.T * config.omega_z / (2.0 * np.pi),
            "ground_state_width": ground_state_width(config),
            "lamb_dicke_parameter": lamb_dicke_parameter(config),
            "separation_at_closest": closest.R,
            "displacement_at_closest_over_d": closest.max_displacement / config.d,
            "omega2_at_closest_over_omega_z": lowest,
        }
        return PipelineOutput(
            summary=(
                f"describe: f1/f3={scales.shuttling_ratio:.4g}, "
                f"f2/f3={scales.coulomb_ratio:.4g}, Omega2(0)/omega_z={lowest:.8f}"
            ),
            document=description,
        )


class PipelineManager:
    """Registry of available pipelines"""

    def __init__(self):
        self.pipelines = {}

    def register_pipeline(self, pipeline: Pipeline):
        """Register any pipeline that implements the Pipeline interface"""
        definition = pipeline.get_pipeline_definition()
        name = definition.get("name")
        if not name:
            raise ValueError("Pipeline must have a 'name' in its definition")
        self.pipelines[name] = pipeline

    def get_pipeline_definitions(self) -> list:
        return [p.get_pipeline_definition() for p in self.pipelines.values()]

    def names(self) -> List[str]:
        return list(self.pipelines)

    def execute_pipeline(
        self, name: str, config: PhysicalConfig, **kwargs
    ) -> PipelineOutput:
        """Run a pipeline by name; KeyError if it is not registered"""
        if name not in self.pipelines:
            raise KeyError(f"Pipeline '{name}' not found")
        return self.pipelines[name].execute(config, **kwargs)
