"""
Transverse (z) normal modes of the two-ion system at a given separation.
"""

import logging
import math
from typing import Tuple

import numpy as np
from core_model import coulomb_constant, gate_window
from errors import ImaginaryFrequencyError
from models import ModeBasis, ModeFrequencies, PhysicalConfig, SeparationMode
from transport import separation

logger = logging.getLogger(__name__)

_SQRT_HALF = 1.0 / math.sqrt(2.0)


def stiffness_matrix(config: PhysicalConfig, R: float) -> np.ndarray:
    """G_ij = m omega_z^2 delta_ij - (K/R^3)(-1)^(i+j), in N/m"""
    if R <= 0:
        raise ValueError("Separation must be positive")
    coupling = coulomb_constant(config) / R**3
    trap = config.ion_mass * config.omega_z**2
    return np.array(
        [[trap - coupling, coupling], [coupling, trap - coupling]], dtype=float
    )


def participation_matrix() -> ModeBasis:
    """Centre-of-mass row (1, 1)/sqrt2 and zigzag row (1, -1)/sqrt2"""
    return ModeBasis(b=((_SQRT_HALF, _SQRT_HALF), (_SQRT_HALF, -_SQRT_HALF)))


def zigzag_frequency_squared(config: PhysicalConfig, R):
    """Omega_2^2 = omega_z^2 - 2K/(m R^3), array-friendly"""
    R = np.asarray(R, dtype=float)
    return config.omega_z**2 - 2.0 * coulomb_constant(config) / (
        config.ion_mass * R**3
    )


def zigzag_frequency(config: PhysicalConfig, R):
    squared = zigzag_frequency_squared(config, R)
    if np.any(squared <= 0):
        raise ImaginaryFrequencyError(
            f"Zigzag mode unstable: Omega_2^2 = {float(np.min(squared)):.6e} rad^2/s^2"
        )
    return np.sqrt(squared)


def mode_frequencies(
    config: PhysicalConfig,
    t: float,
    separation_mode: SeparationMode = SeparationMode.EQUILIBRIUM,
) -> ModeFrequencies:
    """
    Instantaneous centre-of-mass and zigzag frequencies.

    Args:
        config: Validated configuration
        t: Time relative to closest approach (s)
        separation_mode: Source of R(t)

    Returns:
        ModeFrequencies with Omega1 = omega_z and Omega2 from R(t)
    """
    R = separation(config, t, separation_mode)
    return ModeFrequencies(
        t=t, Omega1=config.omega_z, Omega2=float(zigzag_frequency(config, R))
    )


def normal_modes(config: PhysicalConfig, R: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Diagonalize G/m at separation R.

    Returns:
        (frequencies, vectors) ordered centre-of-mass first; vectors are rows
    """
    values, vectors = np.linalg.eigh(stiffness_matrix(config, R) / config.ion_mass)
    if np.any(values <= 0):
        raise ImaginaryFrequencyError(f"Non-positive mode eigenvalue at R={R:.6e} m")
    # eigh sorts ascending and the softened zigzag mode is the lower one
    order = [1, 0]
    return np.sqrt(values[order]), vectors[:, order].T


def mode_frequency_table(
    config: PhysicalConfig,
    samples: int = 201,
    separation_mode: SeparationMode = SeparationMode.EQUILIBRIUM,
) -> np.ndarray:
    """
    Mode frequencies across the gate window.

    Returns:
        Array of rows (t [s], Omega1/2pi [Hz], Omega2/2pi [Hz])
    """
    if samples < 2:
        raise ValueError("Need at least two samples")
    window = gate_window(config)
    t = np.linspace(window.t0, window.t_end, samples)
    R = separation(config, t, separation_mode)
    omega2 = zigzag_frequency(config, R)
    logger.info("Zigzag minimum Omega2/omega_z = %.8f", omega2.min() / config.omega_z)
    two_pi = 2.0 * math.pi
    return np.column_stack(
        [t, np.full_like(t, config.omega_z / two_pi), omega2 / two_pi]
    )
