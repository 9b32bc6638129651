"""
Physical constants (CODATA values via scipy.constants) and the ion species table.
"""

import math

from scipy import constants as codata

HBAR = codata.hbar  # J s
ELEMENTARY_CHARGE = codata.e  # C
EPSILON_0 = codata.epsilon_0  # F/m
ATOMIC_MASS = codata.atomic_mass  # kg

# Counter-propagating Raman pair at 355 nm
DEFAULT_K_EFF = 4.0 * math.pi / 355e-9  # 1/m
DEFAULT_NBAR = (2.0, 2.0)

# Species name -> (mass in u, charge in units of e)
SPECIES = {
    "171Yb+": (170.936, 1),
}

DEFAULT_SPECIES = "171Yb+"


def species_defaults(name: str) -> dict:
    """Return ion_mass (kg) and ion_charge (C) for a species in the table"""
    if name not in SPECIES:
        known = ", ".join(sorted(SPECIES))
        raise KeyError(f"Unknown species '{name}' (known: {known})")
    mass_u, charge_number = SPECIES[name]
    return {
        "ion_mass": mass_u * ATOMIC_MASS,
        "ion_charge": charge_number * ELEMENTARY_CHARGE,
    }


def coulomb_constant_for(charge: float) -> float:
    """K = q^2 / (4 pi eps0) in J m"""
    return charge**2 / (4.0 * math.pi * EPSILON_0)


# Target entangling phase of the controlled-phase-flip gate
TARGET_PHASE = -math.pi / 4.0

# Reference operating point for scaling the Lamb-Dicke infidelity estimate
REFERENCE_OMEGA_Z = 2.0 * math.pi * 5e6  # rad/s
REFERENCE_NBAR = 2.0
REFERENCE_LAMB_DICKE_INFIDELITY = 1e-4
