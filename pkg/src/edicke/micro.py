"""Two-sublattice mean-field model of coupled Fe (S = 5/2) and Er (spin-1/2) spins.

The state vector is ``x = [sigma_A, sigma_B, S_A, S_B]`` (12 components).  Under
the uniform two-sublattice ansatz the classical energy per unit cell is a
quadratic form ``E = x.Q x / 2 + b.x`` which is assembled term by term from the
Fe, Er and Fe-Er Hamiltonians.  Er spins feel ``h = 2 dE/dsigma`` and Fe spins
``h = dE/dS``; each moment points against its field with tanh or Brillouin
magnitude.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .constants import CONST, G_FREE_ELECTRON
from .mfcore import (QuadraticModel, SolverError, energy_cell, residual,
                     residual_history, solve_batch)
from .params import ParameterError, SolverSettings

SIG_A, SIG_B, FE_A, FE_B = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12))

LABEL_ER, LABEL_QAFM, LABEL_QFM, LABEL_MIXED = "Er-like", "qAFM", "qFM", "mixed"


def _levi_civita():
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return eps


_EPS = _levi_civita()


def dm_matrix(d):
    """Matrix ``M`` with ``D.(u x v) = u.M v``."""
    return np.einsum("k,kij->ij", np.asarray(d, float), _EPS)


def dm_vectors(params):
    """The four Fe-Er DM vectors keyed by (Er sublattice, Fe sublattice)."""
    dx, dy = params.d_x, params.d_y
    return {("A", "A"): (dx, dy, 0.0), ("A", "B"): (-dx, -dy, 0.0),
            ("B", "A"): (-dx, dy, 0.0), ("B", "B"): (dx, -dy, 0.0)}


@dataclass
class MicroState:
    """Er (``sigma_*``, Pauli units) and Fe (``s_*``, units of hbar) expectations."""

    sigma_a: np.ndarray
    sigma_b: np.ndarray
    s_a: np.ndarray
    s_b: np.ndarray
    free_energy: float = float("nan")
    residual: float = float("nan")
    converged: bool = False
    seed_id: str = ""
    iterations: int = 0

    def __post_init__(self):
        for f in ("sigma_a", "sigma_b", "s_a", "s_b"):
            setattr(self, f, np.asarray(getattr(self, f), dtype=float))

    @property
    def x(self):
        return np.concatenate([self.sigma_a, self.sigma_b, self.s_a, self.s_b])

    @classmethod
    def from_vector(cls, x, **kw):
        x = np.asarray(x, float)
        return cls(x[SIG_A].copy(), x[SIG_B].copy(), x[FE_A].copy(), x[FE_B].copy(), **kw)

    def swapped(self):
        """Exchange the A and B labels on both species."""
        return replace(self, sigma_a=self.sigma_b.copy(), sigma_b=self.sigma_a.copy(),
                       s_a=self.s_b.copy(), s_b=self.s_a.copy())


@dataclass
class MeanFields:
    """Mean fields in tesla, ``g_free mu_B B = 2 dE/dsigma`` (Er) and ``dE/dS`` (Fe)."""

    b_er_a: np.ndarray
    b_er_b: np.ndarray
    b_fe_a: np.ndarray
    b_fe_b: np.ndarray


@dataclass
class ModeSpectrum:
    """Positive eigenfrequencies (THz, ascending) of the linearized torque equations."""

    frequencies: np.ndarray
    labels: list
    participation: np.ndarray  # (modes, 12) normalized weights
    stable: bool = True
    defective: bool = False
    growth_rates: np.ndarray = None  # real parts (THz) paired with ``frequencies``


def interaction_matrix(params):
    """Symmetric 12x12 matrix ``Q`` of the per-cell quadratic energy."""
    p = params
    Q = np.zeros((12, 12))

    def add_bilinear(i, j, M):
        # energy u_i . M . v_j
        Q[i, j] += M
        Q[j, i] += M.T

    # Fe isotropic exchange and DM along y, z_fe neighbours per site
    add_bilinear(FE_A, FE_B, p.z_fe * p.j_fe * np.eye(3))
    dm_fe = np.zeros((3, 3))
    dm_fe[2, 0] = -p.d_fe_y * p.z_fe  # -D S_Az S_Bx
    dm_fe[0, 2] = p.d_fe_y * p.z_fe  # +D S_Bz S_Ax
    add_bilinear(FE_A, FE_B, dm_fe)
    # single-ion anisotropy, opposite A_xz sign on B
    for blk, sgn in ((FE_A, 1.0), (FE_B, -1.0)):
        an = np.array([[-2 * p.a_x, 0, -sgn * p.a_xz],
                       [0, 0, 0],
                       [-sgn * p.a_xz, 0, -2 * p.a_z]])
        Q[blk, blk] += an
    # Er-Er exchange
    add_bilinear(SIG_A, SIG_B, p.z_er * p.j_er * np.eye(3))
    # Fe-Er exchange and DM within the unit cell
    er = {"A": SIG_A, "B": SIG_B}
    fe = {"A": FE_A, "B": FE_B}
    for (s, sp), d in dm_vectors(p).items():
        add_bilinear(er[s], fe[sp], p.j_cross * np.eye(3) + dm_matrix(d))
    return Q


def zeeman_vector(params, field_vector):
    """Linear coefficients ``b`` (meV per unit of spin) from the applied field (T)."""
    B = np.asarray(field_vector, float)
    er = 0.5 * CONST.mu_B * np.asarray(params.g_er) * B
    fe = CONST.mu_B * np.asarray(params.g_fe) * B
    return np.concatenate([er, er, fe, fe])


def micro_model(params):
    if params is None:
        raise ParameterError("micro", "microscopic parameters are required")
    return QuadraticModel(
        Q=interaction_matrix(params), fac=np.array([2.0, 2.0, 1.0, 1.0]),
        spin=np.array([0.5, 0.5, params.s_fe, params.s_fe]),
        kind=np.array([kernels.PAULI, kernels.PAULI, kernels.SPIN_S, kernels.SPIN_S]),
        linear=lambda cond: zeeman_vector(params, cond.field_vector))


def micro_energy(state, params, cond):
    """Classical expectation of the spin Hamiltonian per unit cell (meV)."""
    model = micro_model(params)
    return float(energy_cell(model, state.x, model.b(cond))[0])


def _gradient(state, params, cond):
    model = micro_model(params)
    return model.gradient(state.x, model.b(cond))[0]


def micro_mean_fields(state, params, cond):
    """Mean fields (T) on the four sublattices."""
    grad = _gradient(state, params, cond)
    unit = G_FREE_ELECTRON * CONST.mu_B
    return MeanFields(2 * grad[SIG_A] / unit, 2 * grad[SIG_B] / unit,
                      grad[FE_A] / unit, grad[FE_B] / unit)


def magnetization(state, params):
    """Moment along x, y, z in meV/T, normalized like the free energy (half a cell).

    Equal to ``-dF/dB`` at a self-consistent state.
    """
    er = 0.5 * CONST.mu_B * np.asarray(params.g_er) * (state.sigma_a + state.sigma_b)
    fe = CONST.mu_B * np.asarray(params.g_fe) * (state.s_a + state.s_b)
    return -0.5 * (er + fe)


def default_micro_seeds(s_fe=2.5):
    """Seeds for the Gamma_2 family (Fe l along z) and its Er-ordered variants."""
    s = 0.95 * s_fe
    c = 0.05 * s_fe
    seeds = {}
    seeds["G2"] = np.r_[0, 0, 0, 0, 0, 0, c, 0, s, c, 0, -s]
    seeds["G2-"] = np.r_[0, 0, 0, 0, 0, 0, -c, 0, -s, -c, 0, s]
    for sign, tag in ((1, "+"), (-1, "-")):
        y = 0.3 * s_fe * sign
        seeds["G12" + tag] = np.r_[-0.3, 0, 0.9 * sign, -0.3, 0, -0.9 * sign,
                                   c, y, s, c, -y, -s]
    seeds["G4"] = np.r_[0, 0, 0, 0, 0, 0, s, 0, c, -s, 0, c]
    return seeds


def micro_solve_point(params, cond, seeds=None, settings=None):
    """Self-consistent equilibrium with the lowest free energy.

    Returns ``(best, candidates)`` like :func:`edicke.dicke_mf.solve_point`.
    Free energies follow the per-half-cell sum ``sum_s (F_Er + F_Fe) / 2``.
    """
    settings = settings or SolverSettings()
    model = micro_model(params)
    seeds = seeds if seeds is not None else default_micro_seeds(params.s_fe)
    if not seeds:
        raise ValueError("at least one seed is required")
    ids = list(seeds)
    arr = np.array([np.asarray(v, float) for v in seeds.values()])
    b = model.b(cond)
    res = solve_batch(model, b[None, :], np.array([cond.kT]), arr, settings)
    cands = [MicroState.from_vector(res.x[0, k], free_energy=float(res.free_energy[0, k]),
                                    residual=float(res.residual[0, k]),
                                    converged=bool(res.converged[0, k]), seed_id=sid,
                                    iterations=int(res.iterations[0, k]))
             for k, sid in enumerate(ids)]
    k = res.best[0]
    if k < 0:
        hist = {sid: residual_history(model, arr[i], b, cond.kT, settings)
                for i, sid in enumerate(ids)}
        raise SolverError(f"no seed converged at T={cond.temperature} K, "
                          f"B={cond.b_field} T", hist)
    return cands[k], cands


def micro_free_energy(state, params, cond, prescription="variational"):
    model = micro_model(params)
    return 0.5 * float(model.free_energy_cell(state.x, model.b(cond), cond.kT,
                                              prescription)[0])


def micro_residual(state, params, cond):
    model = micro_model(params)
    return float(residual(model, state.x, model.b(cond), cond.kT)[0])


def _cross(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def dynamical_matrix(state, params, cond):
    """Jacobian of ``dx/dt = h x x`` (hbar = 1, meV) at ``state``; 12x12."""
    model = micro_model(params)
    x = state.x
    h = model.fac.repeat(3) * model.gradient(x, model.b(cond))[0]
    jac = np.zeros((12, 12))
    for k in range(4):
        blk = slice(3 * k, 3 * k + 3)
        # d/dt x_k = h_k x x_k = -x_k x h_k
        jac[blk, blk] += _cross(h[blk])
        jac[blk, :] -= _cross(x[blk]) @ (model.fac[k] * model.Q[blk, :])
    return jac


def torque(state, params, cond):
    """Right-hand side ``h x x`` of the equations of motion (meV, hbar = 1)."""
    model = micro_model(params)
    x = state.x
    h = model.fac.repeat(3) * model.gradient(x, model.b(cond))[0]
    return np.concatenate([np.cross(h[3 * k:3 * k + 3], x[3 * k:3 * k + 3])
                           for k in range(4)])


def _transverse_basis(state, tiny=1e-12):
    x = state.x
    cols = []
    for k in range(4):
        v = x[3 * k:3 * k + 3]
        nv = np.linalg.norm(v)
        if nv < tiny:
            continue
        u = v / nv
        # two unit vectors orthogonal to u
        trial = np.eye(3)[np.argmin(np.abs(u))]
        e1 = np.cross(u, trial)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(u, e1)
        for e in (e1, e2):
            col = np.zeros(12)
            col[3 * k:3 * k + 3] = e
            cols.append(col)
    return np.array(cols).T


def _block_norms(state):
    x = state.x
    return np.array([max(np.linalg.norm(x[3 * k:3 * k + 3]), 1e-300) for k in range(4)])


def _label_mode(vec, state, er_share=0.6, afm_share=0.6, fm_share=0.4):
    """Classify one eigenvector (12 complex components, relative deviations)."""
    w = np.abs(vec) ** 2
    total = w.sum()
    if total == 0:
        return LABEL_MIXED, np.zeros(12)
    weights = w / total
    if weights[:6].sum() >= er_share:
        return LABEL_ER, weights
    da, db = vec[FE_A], vec[FE_B]
    dl, dm = 0.5 * (da - db), 0.5 * (da + db)
    l_bar = 0.5 * (state.s_a - state.s_b)
    m_bar = 0.5 * (state.s_a + state.s_b)
    n = np.cross(m_bar, l_bar)
    if np.linalg.norm(n) < 1e-9 * max(np.linalg.norm(l_bar), 1e-300) ** 2:
        n = np.array([0.0, 1.0, 0.0])
    n = n / np.linalg.norm(n)
    fe_total = np.sum(np.abs(dl) ** 2) + np.sum(np.abs(dm) ** 2)
    if fe_total == 0:
        return LABEL_MIXED, weights
    frac = abs(np.vdot(n, dl)) ** 2 / fe_total
    if frac >= afm_share:
        return LABEL_QAFM, weights
    if frac <= fm_share:
        return LABEL_QFM, weights
    return LABEL_MIXED, weights


def linearized_spectrum(state, params, cond, tol=1e-8):
    """Small-oscillation eigenmodes around a converged equilibrium.

    The torque equations are linearized analytically and restricted to the
    transverse subspace of every nonzero moment (longitudinal deviations are
    conserved).  Eigenvalues come in pairs ``+-i omega``; each pair is reported
    once as ``nu = |lambda| / h``.

    Raises
    ------
    ValueError
        If ``state`` is not converged.
    """
    if not state.converged:
        raise ValueError("linearized_spectrum needs a converged equilibrium")
    jac = dynamical_matrix(state, params, cond)
    P = _transverse_basis(state)
    if P.size == 0:
        return ModeSpectrum(np.zeros(0), [], np.zeros((0, 12)), True, False, np.zeros(0))
    red = P.T @ jac @ P
    lam, vecs = np.linalg.eig(red)
    scale = max(np.max(np.abs(lam)), 1e-300)
    # defective: near-parallel eigenvectors for (near-)degenerate eigenvalues
    try:
        cond_v = np.linalg.cond(vecs)
    except np.linalg.LinAlgError:
        cond_v = np.inf
    defective = not np.isfinite(cond_v) or cond_v > 1e8
    stable = bool(np.all(lam.real <= tol * scale + 1e-12))
    # one representative per pair: positive imaginary part, or positive real part
    # for purely real pairs, or the zero modes themselves
    order = np.argsort(np.abs(lam), kind="stable")
    used = np.zeros(len(lam), bool)
    picks = []
    for i in order:
        if used[i]:
            continue
        used[i] = True
        # partner is the closest unused eigenvalue to -lambda
        cand = [j for j in range(len(lam)) if not used[j]]
        if cand:
            j = min(cand, key=lambda j: abs(lam[j] + lam[i]))
            used[j] = True
            i = i if (lam[i].imag > lam[j].imag or
                      (lam[i].imag == lam[j].imag and lam[i].real >= lam[j].real)) else j
        picks.append(i)
    norms = _block_norms(state).repeat(3)
    freqs, labels, parts, growth = [], [], [], []
    for i in picks:
        vec = (P @ vecs[:, i]) / norms
        label, weights = _label_mode(vec, state)
        freqs.append(abs(lam[i].imag) / CONST.h if abs(lam[i].imag) > abs(lam[i].real)
                     else abs(lam[i]) / CONST.h)
        growth.append(lam[i].real / CONST.h)
        labels.append(label)
        parts.append(weights)
    idx = np.argsort(freqs, kind="stable")
    return ModeSpectrum(np.asarray(freqs)[idx], [labels[i] for i in idx],
                        np.asarray(parts)[idx], stable, defective,
                        np.asarray(growth)[idx])


def mode_frequency(spectrum, label):
    """Frequency (THz) of the first mode carrying ``label``; NaN if absent."""
    for f, lab in zip(spectrum.frequencies, spectrum.labels):
        if lab == label:
            return float(f)
    return float("nan")


def tune_anisotropy(params, cond, target_thz, key="a_x", bracket=(1e-6, 1.0),
                    label=LABEL_QAFM, settings=None):
    """Adjust one Fe anisotropy constant so a labelled mode sits at ``target_thz``.

    The Fe-Er couplings are switched off while tuning.  Returns the updated
    (still decoupled) parameters.
    """
    base = params.decoupled()

    def mismatch(value):
        p = base.with_(**{key: value})
        best, _ = micro_solve_point(p, cond, settings=settings)
        f = mode_frequency(linearized_spectrum(best, p, cond), label)
        if not np.isfinite(f):
            raise ValueError(f"no {label} mode at {key}={value}")
        return f - target_thz

    lo, hi = bracket
    value = brentq(mismatch, lo, hi, xtol=1e-14, rtol=1e-12)
    return base.with_(**{key: value})


def order_parameters(state, s_fe):
    """(ez, ex, condensate, mz_total) with condensate ``|<S_y>| / S`` (staggered)."""
    sa, sb = state.sigma_a, state.sigma_b
    cond = abs(state.s_a[1] - state.s_b[1]) / (2 * s_fe)
    return (abs(sa[2] - sb[2]) / 2, abs(sa[0] - sb[0]) / 2, cond, (sa[2] + sb[2]) / 2)
