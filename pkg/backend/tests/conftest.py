"""
Shared fixtures for the drive-through gate tests
"""

import json
import math
import os
import sys

import pytest

# Add backend to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import Config
from core_model import load_config, with_overrides
from drive_through_system import DriveThroughSystem
from models import OptimizationOptions, PulseShape
from optimizer import optimize

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
REFERENCE_CONFIG_PATH = os.path.join(REPO_ROOT, "docs", "yb171_reference.json")

OMEGA_Z = 2.0 * math.pi * 5e6


@pytest.fixture
def reference_document():
    """Reference configuration as a plain dict"""
    with open(REFERENCE_CONFIG_PATH, encoding="utf-8") as f:
        return json.load(f)


@pytest.fixture
def reference_config(reference_document):
    """Validated reference configuration (171Yb+, d = w = 10 um, v = 0.2 m/s)"""
    return load_config(json.dumps(reference_document))


@pytest.fixture
def small_pulse():
    """Weak uniform five-segment pulse, red detuned by 0.06 omega_z"""
    return PulseShape.uniform(0.05 * OMEGA_Z, -0.06 * OMEGA_Z, 5)


@pytest.fixture
def zero_pulse():
    return PulseShape.uniform(0.0, -0.06 * OMEGA_Z, 5)


@pytest.fixture(scope="session")
def optimized_design():
    """Optimized pulse per shuttling speed at the reference point, computed once per session"""
    designs = {}

    def design(v):
        if v not in designs:
            with open(REFERENCE_CONFIG_PATH, encoding="utf-8") as f:
                config = with_overrides(load_config(f.read()), {"v": v})
            designs[v] = (config, optimize(config, OptimizationOptions()))
        return designs[v]

    return design


@pytest.fixture
def runtime_config(tmp_path):
    """Runtime settings writing into a temporary output directory"""
    config = Config()
    config.OUTPUT_DIR = str(tmp_path / "results")
    config.DEFAULT_CONFIG_PATH = REFERENCE_CONFIG_PATH
    return config


@pytest.fixture
def system(runtime_config):
    return DriveThroughSystem(runtime_config)


@pytest.fixture
def config_file(tmp_path, reference_document):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(reference_document), encoding="utf-8")
    return str(path)


@pytest.fixture
def pulse_file(tmp_path, small_pulse):
    path = tmp_path / "pulse.json"
    path.write_text(small_pulse.model_dump_json(), encoding="utf-8")
    return str(path)


@pytest.fixture
def test_client():
    """FastAPI test client for the API"""
    from app import app
    from fastapi.testclient import TestClient

    return TestClient(app)
