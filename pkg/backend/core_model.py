"""
Configuration ingestion and the quantities derived directly from it.

Every physics module takes a validated PhysicalConfig; nothing reads physics
from the environment.
"""

import hashlib
import json
import logging
import math
from typing import Any, Dict, Mapping

from constants import HBAR, coulomb_constant_for
from errors import ConfigParseError, ConfigValidationError
from models import (
    FrequencyScales,
    GateWindow,
    OptimizationOptions,
    PhysicalConfig,
    PulseShape,
)
from pydantic import BaseModel, ValidationError

logger = logging.getLogger(__name__)


def _parse_document(text: str, what: str) -> Dict[str, Any]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigParseError(f"Malformed {what} document: {e}") from e
    if not isinstance(data, dict):
        raise ConfigParseError(f"{what} document must be a JSON object")
    # written outputs carry their manifest hash alongside the payload
    data.pop("manifest_hash", None)
    return data


def _validate(model: type, data: Mapping[str, Any], what: str):
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigValidationError(f"Invalid {what}: {e}") from e


def load_config(text: str) -> PhysicalConfig:
    """
    Parse and validate a physical configuration document.

    Args:
        text: JSON document, SI units, angular frequencies in rad/s

    Returns:
        Validated PhysicalConfig with defaults applied
    """
    config = _validate(PhysicalConfig, _parse_document(text, "config"), "config")
    logger.debug("Loaded config %s", config_hash(config)[:12])
    return config


def dump_config(config: PhysicalConfig) -> str:
    """Canonical JSON form: sorted keys, full float precision"""
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, indent=2)


def config_hash(config: PhysicalConfig) -> str:
    return hashlib.sha256(dump_config(config).encode("utf-8")).hexdigest()


def with_overrides(config: PhysicalConfig, overrides: Mapping[str, Any]) -> PhysicalConfig:
    """Return a validated copy with the given fields replaced"""
    unknown = set(overrides) - set(PhysicalConfig.model_fields)
    if unknown:
        raise ConfigValidationError(f"Unknown config fields: {sorted(unknown)}")
    data = {**config.model_dump(), **overrides}
    return _validate(PhysicalConfig, data, "config override")


def load_pulse(text: str) -> PulseShape:
    """Read a pulse document, or the pulse inside an optimizer result"""
    data = _parse_document(text, "pulse")
    if isinstance(data.get("pulse"), dict) and "segments" not in data:
        data = data["pulse"]
    return _validate(PulseShape, data, "pulse")


def load_options(text: str) -> OptimizationOptions:
    return _validate(
        OptimizationOptions, _parse_document(text, "options"), "optimization options"
    )


def dump_document(model: BaseModel) -> str:
    return json.dumps(model.model_dump(mode="json"), sort_keys=True, indent=2)


# document name -> model, shipped as docs/<name>.schema.json
SCHEMA_DOCUMENTS = {
    "config": PhysicalConfig,
    "pulse": PulseShape,
    "options": OptimizationOptions,
}


def document_schemas() -> Dict[str, Dict[str, Any]]:
    """JSON Schemas of the input documents"""
    schemas = {}
    for name, model in SCHEMA_DOCUMENTS.items():
        schema = model.model_json_schema()
        if model is PhysicalConfig:
            # filled from the species table when omitted
            schema["required"] = [
                field
                for field in schema["required"]
                if field not in ("ion_mass", "ion_charge")
            ]
        schemas[name] = schema
    return schemas


def coulomb_constant(config: PhysicalConfig) -> float:
    """K = e^2 / (4 pi eps0) for the configured ion charge"""
    return coulomb_constant_for(config.ion_charge)


def ground_state_width(config: PhysicalConfig) -> float:
    """sqrt(hbar / 2 m omega_z), the length unit for residual reporting"""
    return math.sqrt(HBAR / (2.0 * config.ion_mass * config.omega_z))


def lamb_dicke_parameter(config: PhysicalConfig) -> float:
    return config.k_eff * ground_state_width(config)


def frequency_scales(config: PhysicalConfig) -> FrequencyScales:
    """Shuttling (v/d), Coulomb (sqrt(K/m d^3)) and trapping frequency scales"""
    f1 = config.v / config.d
    f2 = math.sqrt(coulomb_constant(config) / (config.ion_mass * config.d**3))
    f3 = math.sqrt(config.omega_x * config.omega_y)
    return FrequencyScales(f1=f1, f2=f2, f3=f3)


def gate_window(config: PhysicalConfig) -> GateWindow:
    """t0 = -w/(2v), T = w/v"""
    return GateWindow(t0=-config.w / (2.0 * config.v), T=config.w / config.v)
