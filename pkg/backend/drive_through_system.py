import logging
import os
from typing import Any, Dict, List, Mapping, Optional, Tuple

from core_model import load_config, load_options, load_pulse, with_overrides
from errors import ConfigError
from models import OptimizationOptions, PhysicalConfig, PulseShape, RunManifest
from pipelines import (
    DescribePipeline,
    EquilibriumSweepPipeline,
    GateEvalPipeline,
    ModesPipeline,
    OptimizePipeline,
    PipelineManager,
    PipelineOutput,
    Table,
    TransportSweepPipeline,
    VerifyPipeline,
)
from reporting import (
    build_manifest,
    manifest_path,
    sidecar_path,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)


def _read(path: str, what: str) -> str:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read {what} file '{path}': {e}") from e


class DriveThroughSystem:
    """Main orchestrator: document loading, pipeline dispatch and output writing"""

    def __init__(self, config):
        self.config = config

        self.pipeline_manager = PipelineManager()
        for pipeline in (
            ModesPipeline(),
            TransportSweepPipeline(),
            EquilibriumSweepPipeline(),
            GateEvalPipeline(),
            OptimizePipeline(),
            VerifyPipeline(),
            DescribePipeline(),
        ):
            self.pipeline_manager.register_pipeline(pipeline)

    def load_physical_config(
        self,
        path: Optional[str] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> PhysicalConfig:
        """
        Read a configuration file and apply scalar overrides.

        Args:
            path: JSON document; the runtime default path if omitted
            overrides: Field replacements, validated together with the document

        Returns:
            Validated PhysicalConfig
        """
        path = path or self.config.DEFAULT_CONFIG_PATH
        physical = load_config(_read(path, "config"))
        if overrides:
            physical = with_overrides(physical, overrides)
        return physical

    def load_pulse(self, path: Optional[str]) -> Optional[PulseShape]:
        return load_pulse(_read(path, "pulse")) if path else None

    def load_options(self, path: Optional[str]) -> Optional[OptimizationOptions]:
        return load_options(_read(path, "options")) if path else None

    def run(self, name: str, physical: PhysicalConfig, **kwargs) -> PipelineOutput:
        """Dispatch one pipeline by name"""
        logger.info("Running pipeline '%s'", name)
        output = self.pipeline_manager.execute_pipeline(name, physical, **kwargs)
        logger.info("Pipeline '%s' finished: %s", name, output.summary)
        return output

    def default_output(self, name: str, output: PipelineOutput) -> str:
        extension = ".json" if output.document is not None else ".csv"
        return os.path.join(self.config.OUTPUT_DIR, f"{name}{extension}")

    def write_outputs(
        self,
        name: str,
        output: PipelineOutput,
        physical: PhysicalConfig,
        overrides: Optional[Mapping[str, Any]] = None,
        out: Optional[str] = None,
        table_out: Optional[str] = None,
        wall_clock: Optional[str] = None,
    ) -> Tuple[RunManifest, List[str]]:
        """
        Write the primary output, the optional table and sidecars, then the manifest.

        A ".csv" primary path selects the table when the pipeline has both.
        """
        out = out or self.default_output(name, output)
        as_table = output.document is None or out.lower().endswith(".csv")
        if as_table and output.table is None:
            raise ConfigError(f"Pipeline '{name}' has no tabular output for '{out}'")

        plan: Dict[str, Any] = {out: output.table if as_table else output.document}
        if table_out and not as_table and output.table is not None:
            plan[table_out] = output.table
        for key, sidecar in sorted(output.sidecars.items()):
            plan[sidecar_path(out, key)] = sidecar

        manifest = build_manifest(
            physical, name, overrides, outputs=list(plan), wall_clock=wall_clock
        )
        written = []
        for path, payload in plan.items():
            if isinstance(payload, Table):
                written.append(
                    write_csv(path, payload.header, payload.rows, manifest.manifest_hash)
                )
            else:
                written.append(write_json(path, payload, manifest.manifest_hash))
        written.append(write_json(manifest_path(out), manifest))
        return manifest, written

    def get_pipeline_definitions(self) -> List[Dict[str, Any]]:
        return self.pipeline_manager.get_pipeline_definitions()
