import logging
import os
from dataclasses import dataclass
from typing import Optional

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

_REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@dataclass
class Config:
    """Runtime settings for the gate design engine (physics lives in the JSON config)"""

    # Logging and parallelism
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    N_JOBS: int = int(os.getenv("N_JOBS", "1"))  # joblib workers, 1 = serial

    # Integrator tolerances (relative)
    ODE_RTOL: float = float(os.getenv("ODE_RTOL", "1e-10"))  # classical transport
    GATE_RTOL: float = float(os.getenv("GATE_RTOL", "1e-11"))  # mode responses
    ORACLE_RTOL: float = float(os.getenv("ORACLE_RTOL", "1e-11"))  # Fock propagation
    SAMPLES_PER_CYCLE: int = int(os.getenv("SAMPLES_PER_CYCLE", "50"))

    # Fock oracle settings
    FOCK_N_MAX: int = int(os.getenv("FOCK_N_MAX", "40"))
    LEAKAGE_THRESHOLD: float = float(os.getenv("LEAKAGE_THRESHOLD", "1e-8"))
    OVERLAP_THRESHOLD: float = float(os.getenv("OVERLAP_THRESHOLD", "0.5"))
    THERMAL_WEIGHT: float = float(os.getenv("THERMAL_WEIGHT", "0.999"))

    # Paths
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "./results")
    DEFAULT_CONFIG_PATH: str = os.getenv(
        "DEFAULT_CONFIG_PATH", os.path.join(_REPO_ROOT, "docs", "yb171_reference.json")
    )


config = Config()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    """Root logging for the CLI and the HTTP app, at LOG_LEVEL unless given"""
    logging.basicConfig(
        level=(level or config.LOG_LEVEL).upper(), format=LOG_FORMAT, force=True
    )
