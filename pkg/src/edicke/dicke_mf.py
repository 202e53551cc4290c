"""Thermal mean-field solver for the reduced extended Dicke (g-J) Hamiltonian.

Per unit cell, with per-spin Pauli expectations ``m_a``, ``m_b`` and the
qAFM coherent amplitude ``alpha`` (normalized by sqrt(N0)) the mean-field
energy is::

    E = omega_pi |alpha|^2 + sqrt(2) g Im(alpha) (m_az - m_bz)
        + omega_er (m_ax + m_bx) / 2 + omega_z (m_az + m_bz) / 2
        + z_er J (m_ax m_bx + m_az m_bz)

Minimizing over ``alpha`` gives ``alpha = -i g (m_az - m_bz) / (sqrt(2) omega_pi)``
and leaves an energy quadratic in the spins, which is what the batch kernel
iterates.  Reported free energies are per Er spin (half the per-cell value).
"""

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .constants import CONST
from .mfcore import (QuadraticModel, SolverError, energy_cell, residual,
                     residual_history, solve_batch)
from .params import ExternalConditions, ParameterError, ReducedParams, SolverSettings

SQRT2 = np.sqrt(2.0)

SEED_ORDER = ("N", "S+", "S-", "A+", "A-")


def default_seeds():
    """The five standard initializers in priority order (id -> (m_a, m_b))."""
    return {
        "N": ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
        "S+": ((0.0, 0.0, 0.9), (0.0, 0.0, -0.9)),
        "S-": ((0.0, 0.0, -0.9), (0.0, 0.0, 0.9)),
        "A+": ((0.9, 0.0, 0.1), (-0.9, 0.0, 0.1)),
        "A-": ((-0.9, 0.0, 0.1), (0.9, 0.0, 0.1)),
    }


@dataclass
class ReducedState:
    """Converged (or trial) mean-field state of the reduced model."""

    m_a: np.ndarray
    m_b: np.ndarray
    alpha: complex = 0j
    free_energy: float = float("nan")
    residual: float = float("nan")
    converged: bool = False
    seed_id: str = ""
    iterations: int = 0

    def __post_init__(self):
        self.m_a = np.asarray(self.m_a, dtype=float)
        self.m_b = np.asarray(self.m_b, dtype=float)

    @property
    def x(self):
        return np.concatenate([self.m_a, self.m_b])

    def swapped(self):
        """Sublattice exchange A <-> B together with alpha -> -alpha."""
        return replace(self, m_a=self.m_b.copy(), m_b=self.m_a.copy(), alpha=-self.alpha)


def _check_axis(cond):
    if cond.axis != "z":
        raise ParameterError("axis", "the reduced model only has a Zeeman term along z")


def reduced_model(params):
    """Quadratic-form representation with the boson eliminated."""
    zJ = params.z_er * params.J
    K = params.g ** 2 / params.omega_pi
    Q = np.zeros((6, 6))
    Q[0, 3] = Q[3, 0] = zJ
    Q[2, 5] = Q[5, 2] = zJ + K
    Q[2, 2] = Q[5, 5] = -K

    def linear(cond):
        _check_axis(cond)
        wz = params.zeeman(cond.b_field) if cond.b_field != 0 else 0.0
        return np.array([params.omega_er, 0, wz, params.omega_er, 0, wz]) / 2.0

    return QuadraticModel(Q=Q, fac=np.array([2.0, 2.0]), spin=np.array([0.5, 0.5]),
                          kind=np.array([kernels.PAULI, kernels.PAULI]), linear=linear)


def boson_displacement(m_a, m_b, params):
    """Coherent amplitude of the qAFM mode that minimizes the energy at fixed spins.

    Returns a purely imaginary complex number (normalized by sqrt(N0)).
    """
    dz = float(m_a[2] - m_b[2])
    return complex(0.0, -params.g * dz / (SQRT2 * params.omega_pi))


def coherent_energy(m_a, m_b, alpha, params, cond):
    """Mean-field energy per unit cell (meV) at explicit spins and boson amplitude."""
    _check_axis(cond)
    m_a = np.asarray(m_a, float)
    m_b = np.asarray(m_b, float)
    wz = params.zeeman(cond.b_field) if cond.b_field != 0 else 0.0
    zJ = params.z_er * params.J
    return (params.omega_pi * abs(alpha) ** 2
            + SQRT2 * params.g * alpha.imag * (m_a[2] - m_b[2])
            + 0.5 * params.omega_er * (m_a[0] + m_b[0])
            + 0.5 * wz * (m_a[2] + m_b[2])
            + zJ * (m_a[0] * m_b[0] + m_a[2] * m_b[2]))


def effective_fields(state, params, cond):
    """Fields ``h = 2 dE/dm`` acting on each sublattice (meV), at the state's alpha.

    The single-spin Hamiltonian is ``h . sigma / 2``.
    """
    _check_axis(cond)
    wz = params.zeeman(cond.b_field) if cond.b_field != 0 else 0.0
    zJ = params.z_er * params.J
    boson = 2.0 * SQRT2 * params.g * state.alpha.imag
    ma, mb = state.m_a, state.m_b
    h_a = np.array([params.omega_er + 2 * zJ * mb[0], 0.0, wz + 2 * zJ * mb[2] + boson])
    h_b = np.array([params.omega_er + 2 * zJ * ma[0], 0.0, wz + 2 * zJ * ma[2] - boson])
    return h_a, h_b


def _pauli_response(h, kT):
    hn = np.linalg.norm(h)
    if not np.isfinite(hn):
        raise FloatingPointError("non-finite effective field")
    if hn < kernels.DEGENERATE_FIELD:
        return np.zeros(3)
    return -np.tanh(hn / (2.0 * kT)) * h / hn


def sc_update(state, params, cond, mixing=0.5):
    """One damped self-consistency step followed by re-minimizing the boson."""
    h_a, h_b = effective_fields(state, params, cond)
    kT = cond.kT
    new_a = (1 - mixing) * state.m_a + mixing * _pauli_response(h_a, kT)
    new_b = (1 - mixing) * state.m_b + mixing * _pauli_response(h_b, kT)
    alpha = boson_displacement(new_a, new_b, params)
    return replace(state, m_a=new_a, m_b=new_b, alpha=alpha,
                   free_energy=float("nan"), converged=False)


def state_residual(state, params, cond):
    """Max-norm of ``m - update(m)`` with the boson at its optimum."""
    model = reduced_model(params)
    return float(residual(model, state.x, model.b(cond), cond.kT)[0])


def free_energy(state, params, cond, prescription="variational"):
    """Mean-field free energy per Er spin (meV).

    ``variational``: the Bogoliubov bound ``[E(m, alpha) - kT sum_s s(|m_s|)] / 2``
    with ``s`` the two-level entropy at polarization ``|m_s|``.  It bounds the
    exact free energy for any trial state and is stationary at self-consistency.
    ``paper``: the bare single-site sum ``sum_s -kT ln 2cosh(y_s) / 2``.
    """
    if not cond.temperature > 0:
        raise ParameterError("temperature", "temperature must be positive")
    kT = cond.kT
    if prescription == "paper":
        single = 0.0
        for h in effective_fields(state, params, cond):
            single -= kT * float(kernels.log_2cosh(np.linalg.norm(h) / (2 * kT)))
        return 0.5 * single
    if prescription != "variational":
        raise ValueError(f"unknown free-energy prescription {prescription!r}")
    e = coherent_energy(state.m_a, state.m_b, state.alpha, params, cond)
    ent = sum(float(kernels.entropy_pauli(np.linalg.norm(m))) for m in (state.m_a, state.m_b))
    return 0.5 * (e - kT * ent)


def internal_energy(state, params, cond):
    """Mean-field internal energy per Er spin (meV)."""
    return 0.5 * coherent_energy(state.m_a, state.m_b, state.alpha, params, cond)


def entropy_of_state(state, params, cond):
    """Mean-field entropy per Er spin (meV/K) from the two-level occupations."""
    kT = cond.kT
    s = 0.0
    for h in effective_fields(state, params, cond):
        y = np.linalg.norm(h) / (2 * kT)
        s += float(kernels.log_2cosh(y)) - y * np.tanh(y)
    return 0.5 * CONST.k_B * s


def _seed_array(seeds):
    ids = list(seeds)
    arr = np.array([np.concatenate([np.asarray(a, float), np.asarray(b, float)])
                    for a, b in seeds.values()])
    return ids, arr


def _states_from_batch(result, p, ids, params):
    out = []
    for s, sid in enumerate(ids):
        x = result.x[p, s]
        st = ReducedState(m_a=x[:3].copy(), m_b=x[3:].copy(),
                          alpha=boson_displacement(x[:3], x[3:], params),
                          free_energy=float(result.free_energy[p, s]),
                          residual=float(result.residual[p, s]),
                          converged=bool(result.converged[p, s]), seed_id=sid,
                          iterations=int(result.iterations[p, s]))
        out.append(st)
    return out


def solve_point(params, cond, seeds=None, settings=None):
    """Converge every seed and return the lowest-free-energy state.

    Parameters
    ----------
    params : ReducedParams
    cond : ExternalConditions
    seeds : dict, optional
        ``seed_id -> (m_a, m_b)`` in priority order; defaults to
        :func:`default_seeds`.  Equal free energies are resolved in favour of
        the earlier seed.
    settings : SolverSettings, optional

    Returns
    -------
    best : ReducedState
    candidates : list of ReducedState
        One entry per seed, in seed order.

    Raises
    ------
    SolverError
        If no seed converges; ``histories`` holds each seed's residuals.
    """
    settings = settings or SolverSettings()
    seeds = seeds if seeds is not None else default_seeds()
    if not seeds:
        raise ValueError("at least one seed is required")
    model = reduced_model(params)
    ids, arr = _seed_array(seeds)
    res = solve_batch(model, model.b(cond)[None, :], np.array([cond.kT]), arr, settings)
    cands = _states_from_batch(res, 0, ids, params)
    k = res.best[0]
    if k < 0:
        hist = {sid: residual_history(model, arr[i], model.b(cond), cond.kT, settings)
                for i, sid in enumerate(ids)}
        raise SolverError(
            f"no seed converged at T={cond.temperature} K, B={cond.b_field} T", hist)
    return cands[k], cands


def solve_grid(params, temperatures, fields, seeds=None, settings=None, warm=None):
    """Solve a list of (T, B) points in one kernel call.

    ``warm`` optionally supplies one extra seed per point (shape (P, 6)),
    appended after the standard seeds.
    Returns the :class:`edicke.mfcore.BatchResult` and the seed ids.
    """
    settings = settings or SolverSettings()
    seeds = seeds if seeds is not None else default_seeds()
    model = reduced_model(params)
    ids, arr = _seed_array(seeds)
    temperatures = np.asarray(temperatures, float)
    fields = np.asarray(fields, float)
    bs = np.array([model.b(ExternalConditions(t, f)) for t, f in zip(temperatures, fields)])
    kTs = CONST.k_B * temperatures
    seed_block = np.broadcast_to(arr, (len(bs),) + arr.shape)
    if warm is not None:
        seed_block = np.concatenate([seed_block, np.asarray(warm, float)[:, None, :]], axis=1)
        ids = ids + ["warm"]
    return solve_batch(model, bs, kTs, seed_block, settings), ids


def order_parameters(state):
    """(ez, ex, condensate, mz_total) of a reduced state."""
    ma, mb = state.m_a, state.m_b
    return (abs(ma[2] - mb[2]) / 2, abs(ma[0] - mb[0]) / 2, abs(state.alpha.imag),
            (ma[2] + mb[2]) / 2)


def mean_field_energy_cell(params, cond, x):
    """Per-cell energy with the boson eliminated, for a batch of stacked spins."""
    model = reduced_model(params)
    return energy_cell(model, x, model.b(cond))
