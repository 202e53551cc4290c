"""Pinned physical constants and energy-unit conversion.

Every energy inside the package is stored in meV.  A "THz" value always means
the cyclic frequency nu = omega / 2pi, so ``E[meV] = h * nu[THz]``.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PhysConstants:
    h: float = 4.135667696  # meV / THz
    k_B: float = 0.08617333  # meV / K
    mu_B: float = 0.05788382  # meV / T
    c: float = 2.99792458e8  # m / s

    def __post_init__(self):
        for name in ("h", "k_B", "mu_B", "c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


CONST = PhysConstants()

#: free-electron g-factor used in the spin equations of motion
G_FREE_ELECTRON = 2.0023

ENERGY_UNITS = ("meV", "THz", "K", "T")


def _scale(unit, landé_g=None):
    # meV per one unit of ``unit``
    if unit == "meV":
        return 1.0
    if unit == "THz":
        return CONST.h
    if unit == "K":
        return CONST.k_B
    if unit == "T":
        if landé_g is None or not landé_g > 0:
            raise ValueError("conversion to/from tesla needs a positive g-factor")
        return landé_g * CONST.mu_B
    raise ValueError(f"unknown energy unit {unit!r}; expected one of {ENERGY_UNITS}")


def convert_energy(value, from_unit, to_unit, g=None):
    """Convert an energy-like quantity between meV, THz, K and T.

    Parameters
    ----------
    value : float or array_like
        Quantity expressed in ``from_unit``.
    from_unit, to_unit : {"meV", "THz", "K", "T"}
        "THz" is h*nu, "K" is k_B*T and "T" is g*mu_B*B.
    g : float, optional
        Landé factor, required whenever "T" is one of the units.

    Returns
    -------
    float or ndarray
    """
    src = _scale(from_unit, g if from_unit == "T" else None)
    dst = _scale(to_unit, g if to_unit == "T" else None)
    if isinstance(value, (int, float)):
        return value * src / dst
    return np.asarray(value, dtype=float) * src / dst
