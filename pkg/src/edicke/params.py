"""Parameter containers shared by every solver.

All containers are frozen dataclasses; energies are in meV, fields in tesla and
temperatures in kelvin.
"""

from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .constants import CONST


class ParameterError(ValueError):
    """Raised when a parameter violates its documented invariant.

    The ``key`` attribute names the offending parameter.
    """

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


def _finite(key, value):
    if not np.isfinite(value):
        raise ParameterError(key, "must be finite")


def _default_dropped():
    h = CONST.h
    return {
        "g_x": h * 0.051,
        "g_y": h * 0.041,
        "g_y_prime": h * 3.1e-5,
        "g_z_prime": h * -0.040,
    }


@dataclass(frozen=True)
class ReducedParams:
    """Couplings of the reduced extended Dicke Hamiltonian.

    ``omega_pi`` and ``omega_er`` are the energies hbar*omega in meV.  The
    Er Landé factor along z has no published value; ``g_lande_z=None`` means
    "calibrate before use" (see :func:`edicke.atlas.calibrate_gz`).
    ``dropped_couplings`` is bookkeeping only and never enters a Hamiltonian.
    """

    omega_pi: float = CONST.h * 0.896
    omega_er: float = CONST.h * 0.023
    g: float = 0.48
    J: float = 0.037
    g_lande_z: Optional[float] = None
    z_er: int = 6
    n0: Optional[int] = None
    dropped_couplings: dict = field(default_factory=_default_dropped, compare=False)

    def __post_init__(self):
        for f in ("omega_pi", "omega_er", "g", "J"):
            _finite(f, getattr(self, f))
        if not self.omega_pi > 0:
            raise ParameterError("omega_pi", "must be positive")
        if self.omega_er < 0:
            raise ParameterError("omega_er", "must be non-negative")
        if self.J < 0:
            raise ParameterError("j", "must be non-negative")
        if self.g_lande_z is not None:
            _finite("g_lande_z", self.g_lande_z)
            if self.g_lande_z < 0:
                raise ParameterError("g_lande_z", "must be non-negative")
        if int(self.z_er) != self.z_er or self.z_er <= 0:
            raise ParameterError("z_er", "must be a positive integer")
        if self.n0 is not None and (int(self.n0) != self.n0 or self.n0 <= 0):
            raise ParameterError("n0", "must be a positive integer")

    def with_(self, **changes):
        return replace(self, **changes)

    def zeeman(self, b_field):
        """Zeeman energy hbar*omega_z = |g_z mu_B B| in meV."""
        if self.g_lande_z is None:
            raise ParameterError("g_lande_z", "not set; run calibrate_gz first")
        return abs(self.g_lande_z * CONST.mu_B * b_field)


@dataclass(frozen=True)
class MicroParams:
    """Microscopic two-sublattice Fe/Er spin-model constants (meV).

    No defaults are provided for the material constants; they must come from a
    configuration file.  ``g_fe`` and ``g_er`` are the diagonals of the g
    tensors.
    """

    j_fe: float
    d_fe_y: float
    a_x: float
    a_z: float
    a_xz: float
    j_er: float
    j_cross: float
    d_x: float
    d_y: float
    g_fe: tuple
    g_er: tuple
    s_fe: float = 2.5
    z_fe: int = 6
    z_er: int = 6

    def __post_init__(self):
        for f in ("j_fe", "d_fe_y", "a_x", "a_z", "a_xz", "j_er", "j_cross", "d_x", "d_y"):
            _finite(f, getattr(self, f))
        for key in ("g_fe", "g_er"):
            val = tuple(float(v) for v in getattr(self, key))
            if len(val) != 3:
                raise ParameterError(key, "must have exactly 3 diagonal entries")
            for v in val:
                _finite(key, v)
                if v < 0:
                    raise ParameterError(key, "entries must be non-negative")
            object.__setattr__(self, key, val)
        two_s = 2 * self.s_fe
        if not self.s_fe > 0 or abs(two_s - round(two_s)) > 1e-12:
            raise ParameterError("s_fe", "must be a positive half-integer")
        for key in ("z_fe", "z_er"):
            v = getattr(self, key)
            if int(v) != v or v <= 0:
                raise ParameterError(key, "must be a positive integer")

    def with_(self, **changes):
        return replace(self, **changes)

    def decoupled(self):
        """Copy with every Fe-Er coupling (isotropic and DM) set to zero."""
        return replace(self, j_cross=0.0, d_x=0.0, d_y=0.0)


_AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


@dataclass(frozen=True)
class ExternalConditions:
    """Temperature (K) and applied field mu0*H (T) along a crystal axis."""

    temperature: float
    b_field: float = 0.0
    axis: str = "z"

    def __post_init__(self):
        if not np.isfinite(self.temperature) or not self.temperature > 0:
            raise ParameterError("temperature", "temperature must be positive")
        if not np.isfinite(self.b_field):
            raise ParameterError("b_field", "must be finite")
        if self.axis not in _AXES:
            raise ParameterError("axis", f"must be one of {sorted(_AXES)}")

    @property
    def field_vector(self):
        return self.b_field * np.array(_AXES[self.axis])

    @property
    def kT(self):
        return CONST.k_B * self.temperature


@dataclass(frozen=True)
class SolverSettings:
    """Fixed-point iteration and phase-classification settings."""

    tol: float = 1e-10
    max_iter: int = 10_000
    mixing: float = 0.5
    min_mixing: float = 1.0 / 64
    oscillation_window: int = 50
    free_energy_prescription: str = "variational"
    eps: float = 1e-3
    jump: float = 0.1
    workers: Optional[int] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ParameterError("tol", "must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ParameterError("max_iter", "must be a positive integer")
        if not 0 < self.mixing <= 1:
            raise ParameterError("mixing", "must lie in (0, 1]")
        if not 0 < self.min_mixing <= self.mixing:
            raise ParameterError("min_mixing", "must lie in (0, mixing]")
        if self.oscillation_window < 2:
            raise ParameterError("oscillation_window", "must be at least 2")
        if self.free_energy_prescription not in ("variational", "paper"):
            raise ParameterError("free_energy_prescription", "must be 'variational' or 'paper'")
        if not 0 < self.eps < 0.5:
            raise ParameterError("eps", "must lie in (0, 0.5)")
        if not self.jump > 0:
            raise ParameterError("jump", "must be positive")
        if self.workers is not None and self.workers < 1:
            raise ParameterError("workers", "must be at least 1")

    def with_(self, **changes):
        return replace(self, **changes)


def asdict_shallow(obj):
    """Field dict of a parameter dataclass (used for metadata echoes)."""
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out
