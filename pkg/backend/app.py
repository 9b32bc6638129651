import json
import logging
from typing import Any, Dict, List, Optional

from config import config, configure_logging
from core_model import load_config, with_overrides
from drive_through_system import DriveThroughSystem
from errors import ConfigError, ConfigValidationError, PhysicsError
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.middleware.trustedhost import TrustedHostMiddleware
from models import OptimizationOptions, PhysicalConfig, PulseShape
from pydantic import BaseModel, ValidationError
from reporting import to_jsonable

configure_logging(config.LOG_LEVEL)
logger = logging.getLogger(__name__)

# Initialize FastAPI app
app = FastAPI(title="Drive-Through Gate Designer", root_path="")

# Add trusted host middleware for proxy
app.add_middleware(TrustedHostMiddleware, allowed_hosts=["*"])

# Enable CORS with proper settings for proxy
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
    expose_headers=["*"],
)

system = DriveThroughSystem(config)


# Pydantic models for request/response
class RunRequest(BaseModel):
    """Request model for a pipeline run"""

    config: Optional[Dict[str, Any]] = None  # default config file if omitted
    pulse: Optional[Dict[str, Any]] = None
    options: Optional[Dict[str, Any]] = None
    overrides: Dict[str, Any] = {}
    arguments: Dict[str, Any] = {}


class TableModel(BaseModel):
    header: List[str]
    rows: List[List[Any]]


class RunResponse(BaseModel):
    """Response model for a pipeline run"""

    pipeline: str
    summary: str
    converged: bool
    document: Optional[Any] = None
    table: Optional[TableModel] = None
    sidecars: Dict[str, Any] = {}


class ValidationResponse(BaseModel):
    valid: bool
    config: Optional[Dict[str, Any]] = None
    error: Optional[str] = None


def _physical_config(request: RunRequest) -> PhysicalConfig:
    if request.config is None:
        return system.load_physical_config(overrides=request.overrides)
    try:
        physical = PhysicalConfig.model_validate(request.config)
    except ValidationError as e:
        raise ConfigValidationError(f"Invalid config: {e}") from e
    return with_overrides(physical, request.overrides) if request.overrides else physical


def _document(model: type, data: Optional[Dict[str, Any]], what: str):
    if data is None:
        return None
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigValidationError(f"Invalid {what}: {e}") from e


def _run(name: str, request: RunRequest) -> RunResponse:
    if name not in system.pipeline_manager.names():
        raise HTTPException(status_code=404, detail=f"Pipeline '{name}' not found")
    try:
        physical = _physical_config(request)
        kwargs = dict(request.arguments)
        pulse = _document(PulseShape, request.pulse, "pulse")
        if pulse is not None:
            kwargs["pulse"] = pulse
        options = _document(OptimizationOptions, request.options, "options")
        if options is not None:
            kwargs["options"] = options
        output = system.run(name, physical, **kwargs)
    except ConfigError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except PhysicsError as e:
        raise HTTPException(status_code=409, detail=str(e))
    except Exception as e:
        logger.exception("Pipeline '%s' failed", name)
        raise HTTPException(status_code=500, detail=str(e))

    table = None
    if output.table is not None:
        table = TableModel(header=output.table.header, rows=to_jsonable(output.table.rows))
    return RunResponse(
        pipeline=name,
        summary=output.summary,
        converged=output.converged,
        document=to_jsonable(output.document),
        table=table,
        sidecars=to_jsonable(output.sidecars),
    )


# API Endpoints


@app.get("/api/pipelines")
async def list_pipelines():
    """Definitions of every registered pipeline"""
    return system.get_pipeline_definitions()


@app.post("/api/run/{name}", response_model=RunResponse)
def run_pipeline(name: str, request: RunRequest):
    """Run one pipeline and return its documents and tables"""
    return _run(name, request)


@app.post("/api/describe", response_model=RunResponse)
def describe(request: RunRequest):
    """Derived scales of a configuration"""
    return _run("describe", request)


@app.post("/api/config/validate", response_model=ValidationResponse)
async def validate_config(document: Dict[str, Any]):
    """Validate a configuration document without running anything"""
    try:
        physical = load_config(json.dumps(document))
    except ConfigError as e:
        return ValidationResponse(valid=False, error=str(e))
    return ValidationResponse(valid=True, config=physical.model_dump(mode="json"))
