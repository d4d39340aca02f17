"""Unit conventions.

Energies (and rates quoted as energies, hbar*gamma) are in meV, times in fs.
Dipole moments are in Debye and field amplitudes in V/m; the two only meet
inside :func:`dipole_energy_mev`.
"""

from scipy import constants as _c

#: Reduced Planck constant in meV*fs.
HBAR_MEV_FS = 658.2119569

#: One Debye in C*m.
DEBYE_CM = 1e-21 / _c.c

#: One meV in J.
MEV_J = 1e-3 * _c.e

SPEED_OF_LIGHT = _c.c
EPSILON_0 = _c.epsilon_0

#: Fluence conversion, nJ/cm^2 -> J/m^2.
NJ_PER_CM2 = 1e-9 / 1e-4

#: Time conversion, fs -> s.
FS = 1e-15


def dipole_energy_mev(dipole_debye, field_v_per_m):
    """Interaction energy ``d * E`` in meV."""
    return dipole_debye * DEBYE_CM * field_v_per_m / MEV_J


def rate(energy_mev):
    """Convert an energy-quoted rate (hbar*gamma, meV) to 1/fs."""
    return energy_mev / HBAR_MEV_FS
