"""TOML configuration ingestion.

Sections: ``[reduced]``, ``[micro]``, ``[conditions]``, ``[solver]``,
``[sweep]``, ``[thz]``, ``[mce]`` and ``[ed]``.  Energies are in meV; a key
ending in ``_thz`` is a frequency nu in THz and is stored as ``h * nu`` under
the key without the suffix.  Every other value is passed through untouched.
"""

import math
import os
from dataclasses import dataclass, field, fields
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .constants import CONST
from .params import (ExternalConditions, MicroParams, ParameterError, ReducedParams,
                     SolverSettings, asdict_shallow)


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SweepSpec:
    t_min: float = 0.5
    t_max: float = 6.0
    n_t: int = 60
    h_min: float = 0.0
    h_max: float = 1.5
    n_h: int = 60
    solver: str = "reduced"
    refine: bool = True


@dataclass(frozen=True)
class ThzSpec:
    thickness: Optional[float] = None
    snr_floor: float = 1e-3
    window: str = "rect"
    tukey_alpha: float = 0.25
    echo_window: bool = False
    n: float = 3.0
    kappa: float = 0.0
    echoes: int = 0
    noise_db: Optional[float] = None
    seed: int = 0
    n_samples: int = 1024
    dt: float = 0.05
    center: float = 5.0
    width: float = 0.25


@dataclass(frozen=True)
class MceSpec:
    t0: tuple = (1.8, 3.2)
    h_start: float = 0.0
    h_stop: float = 1.5
    dh: float = 5e-3


@dataclass(frozen=True)
class EdSpec:
    n_spins: int = 8
    n_max: int = 20
    max_dim: int = 200_000
    temperature: Optional[float] = None


@dataclass
class Config:
    """Validated configuration.  ``micro`` is None unless ``[micro]`` was given."""

    reduced: ReducedParams = field(default_factory=ReducedParams)
    micro: Optional[MicroParams] = None
    conditions: ExternalConditions = field(default_factory=lambda: ExternalConditions(1.0))
    solver: SolverSettings = field(default_factory=SolverSettings)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    thz: ThzSpec = field(default_factory=ThzSpec)
    mce: MceSpec = field(default_factory=MceSpec)
    ed: EdSpec = field(default_factory=EdSpec)

    def resolved(self):
        """Plain nested dict of every value in effect (for metadata headers)."""
        out = {}
        for name in ("reduced", "micro", "conditions", "solver", "sweep", "thz", "mce", "ed"):
            obj = getattr(self, name)
            if obj is not None:
                out[name] = asdict_shallow(obj)
        out["reduced"].pop("dropped_couplings", None)
        return out


# key -> accepted python types, per section
_NUM = (int, float)
_INT = (int,)
_SCHEMA = {
    "reduced": {"omega_pi": _NUM, "omega_er": _NUM, "g": _NUM, "j": _NUM,
                "g_lande_z": _NUM, "z_er": _INT, "n0": _INT},
    "micro": {"j_fe": _NUM, "d_fe_y": _NUM, "a_x": _NUM, "a_z": _NUM, "a_xz": _NUM,
              "j_er": _NUM, "j_cross": _NUM, "d_x": _NUM, "d_y": _NUM,
              "g_fe": (list,), "g_er": (list,), "s_fe": _NUM, "z_fe": _INT, "z_er": _INT},
    "conditions": {"temperature": _NUM, "b_field": _NUM, "axis": (str,)},
    "solver": {"tol": _NUM, "max_iter": _INT, "mixing": _NUM, "min_mixing": _NUM,
               "oscillation_window": _INT, "free_energy_prescription": (str,),
               "eps": _NUM, "jump": _NUM, "workers": _INT},
    "sweep": {f.name: None for f in fields(SweepSpec)},
    "thz": {f.name: None for f in fields(ThzSpec)},
    "mce": {f.name: None for f in fields(MceSpec)},
    "ed": {f.name: None for f in fields(EdSpec)},
}
_THZ_KEYS = {"reduced": {"omega_pi", "omega_er", "g", "j"},
             "micro": {"j_fe", "d_fe_y", "a_x", "a_z", "a_xz", "j_er", "j_cross", "d_x", "d_y"}}
_MICRO_REQUIRED = ("j_fe", "d_fe_y", "a_x", "a_z", "a_xz", "j_er", "j_cross", "d_x", "d_y",
                   "g_fe", "g_er")


def _is_type(value, types):
    if isinstance(value, bool):
        return bool in types
    if types is _NUM:
        return isinstance(value, (int, float))
    return isinstance(value, types)


def _section(doc, name):
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a table")
    schema = _SCHEMA[name]
    out = {}
    for key, value in sec.items():
        base = key[:-4] if key.endswith("_thz") else key
        path = f"{name}.{key}"
        if key.endswith("_thz"):
            if base not in _THZ_KEYS.get(name, ()):
                raise ConfigError(path, "unknown key")
            if base in sec:
                raise ConfigError(path, f"given together with {name}.{base}")
            if not _is_type(value, _NUM):
                raise ConfigError(path, "must be a number")
            out[base] = CONST.h * value
            continue
        if key not in schema:
            raise ConfigError(path, "unknown key")
        types = schema[key]
        if types is not None and not _is_type(value, types):
            raise ConfigError(path, f"must be of type {'/'.join(t.__name__ for t in types)}")
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(path, "must be finite")
        out[key] = value
    return out


def _build(name, cls, kw, rename=None):
    rename = rename or {}
    try:
        return cls(**{rename.get(k, k): v for k, v in kw.items()})
    except ParameterError as exc:
        inv = {v: k for k, v in rename.items()}
        raise ConfigError(f"{name}.{inv.get(exc.key, exc.key)}", str(exc).split(": ", 1)[-1])
    except TypeError as exc:
        raise ConfigError(name, str(exc))


def _spec(name, cls, kw):
    defaults = {f.name: f.default for f in fields(cls)}
    for key, value in kw.items():
        d = defaults[key]
        path = f"{name}.{key}"
        if isinstance(d, bool):
            if not isinstance(value, bool):
                raise ConfigError(path, "must be true or false")
        elif isinstance(d, int) and not isinstance(d, bool):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(path, "must be an integer")
        elif isinstance(d, tuple):
            value = value if isinstance(value, list) else [value]
            if not all(_is_type(v, _NUM) for v in value):
                raise ConfigError(path, "must be a number or list of numbers")
            kw[key] = tuple(value)
        elif isinstance(d, str):
            if not isinstance(value, str):
                raise ConfigError(path, "must be a string")
        elif not _is_type(value, _NUM):
            raise ConfigError(path, "must be a number")
    spec = cls(**kw)
    _validate_spec(name, spec)
    return spec


def _validate_spec(name, spec):
    def bad(key, msg):
        raise ConfigError(f"{name}.{key}", msg)

    if isinstance(spec, SweepSpec):
        if not 0 < spec.t_min < spec.t_max:
            bad("t_min", "temperature must be positive and t_min < t_max")
        if not spec.h_min < spec.h_max:
            bad("h_min", "must be below h_max")
        for k in ("n_t", "n_h"):
            if getattr(spec, k) < 2:
                bad(k, "needs at least 2 points")
        if spec.solver not in ("reduced", "micro"):
            bad("solver", "must be 'reduced' or 'micro'")
    elif isinstance(spec, ThzSpec):
        if spec.thickness is not None and not spec.thickness > 0:
            bad("thickness", "must be positive")
        if spec.window not in ("rect", "tukey"):
            bad("window", "must be 'rect' or 'tukey'")
        if not spec.snr_floor >= 0:
            bad("snr_floor", "must be non-negative")
        if spec.n < 1:
            bad("n", "must be at least 1")
        if spec.kappa < 0:
            bad("kappa", "must be non-negative")
        if spec.echoes < 0:
            bad("echoes", "must be non-negative")
        if spec.n_samples < 2:
            bad("n_samples", "needs at least 2 samples")
        if not spec.dt > 0:
            bad("dt", "must be positive")
    elif isinstance(spec, MceSpec):
        if not spec.t0 or any(not t > 0 for t in spec.t0):
            bad("t0", "temperature must be positive")
        if not spec.dh > 0:
            bad("dh", "must be positive")
        if not spec.h_stop > spec.h_start:
            bad("h_stop", "must exceed h_start")
    elif isinstance(spec, EdSpec):
        if spec.n_spins < 2 or spec.n_spins % 2:
            bad("n_spins", "must be an even integer >= 2")
        if spec.n_max < 1:
            bad("n_max", "must be a positive integer")
        if spec.temperature is not None and not spec.temperature > 0:
            bad("temperature", "temperature must be positive")


def load_config(text=None, overrides=None):
    """Parse and validate a configuration document.

    Parameters
    ----------
    text : str, optional
        TOML document; None or empty means all defaults.
    overrides : dict, optional
        ``{"section.key": value}`` applied after parsing (used for CLI flags).

    Returns
    -------
    Config

    Raises
    ------
    ConfigError
        Naming the offending ``section.key``.
    """
    try:
        doc = tomllib.loads(text or "")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("document", f"not valid TOML: {exc}")
    unknown = set(doc) - set(_SCHEMA)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        sec, key = dotted.split(".", 1)
        doc.setdefault(sec, {})[key] = value

    red = _section(doc, "reduced")
    cfg = Config()
    cfg.reduced = _build("reduced", ReducedParams, red, rename={"j": "J"})
    if "micro" in doc:
        mic = _section(doc, "micro")
        for key in _MICRO_REQUIRED:
            if key not in mic:
                raise ConfigError(f"micro.{key}", "missing required key")
        cfg.micro = _build("micro", MicroParams, mic)
    cfg.conditions = _build("conditions", ExternalConditions,
                            {"temperature": 1.0, **_section(doc, "conditions")})
    cfg.solver = _build("solver", SolverSettings,
                        {"workers": os.cpu_count() or 1, **_section(doc, "solver")})
    cfg.sweep = _spec("sweep", SweepSpec, _section(doc, "sweep"))
    cfg.thz = _spec("thz", ThzSpec, _section(doc, "thz"))
    cfg.mce = _spec("mce", MceSpec, _section(doc, "mce"))
    cfg.ed = _spec("ed", EdSpec, _section(doc, "ed"))
    if cfg.sweep.solver == "micro" and cfg.micro is None:
        raise ConfigError("micro", "sweep.solver = 'micro' needs a [micro] section")
    return cfg


def load_config_file(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read configuration file: {exc.strerror}")
    return load_config(text)
