"""Exact diagonalization of the reduced extended Dicke Hamiltonian at small N.

Each Er sublattice of ``N/2`` spin-1/2 moments is represented by its
permutation-symmetric collective spin ``j = N/4``; the qAFM boson is truncated
at ``n_max`` quanta.  The basis is ``|n> (x) |j, M_A> (x) |j, M_B>`` with
``M`` descending from ``j`` to ``-j``.

The coupling ``i(a^dag - a)`` is made real by the gauge ``a = i b``, which maps
it to ``b + b^dag``; observables are evaluated in that gauge.  The
Hamiltonian commutes with the parity ``P = (A <-> B swap) (x) (-1)^n``, and
the ground state is computed separately in each parity sector.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from .constants import CONST
from .params import ExternalConditions, ParameterError, ReducedParams

log = logging.getLogger(__name__)

DENSE_LIMIT = 4000


class TruncationError(RuntimeError):
    """Ground energy still changes when the boson cutoff is raised."""


@dataclass(frozen=True)
class EdProblem:
    """Size, truncation and couplings of one diagonalization."""

    n_spins: int
    n_max: int = 20
    params: ReducedParams = field(default_factory=ReducedParams)
    cond: ExternalConditions = field(default_factory=lambda: ExternalConditions(1.0))
    max_dim: int = 200_000

    def __post_init__(self):
        if int(self.n_spins) != self.n_spins or self.n_spins < 2 or self.n_spins % 2:
            raise ParameterError("n_spins", "must be an even integer >= 2")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ParameterError("n_max", "must be a positive integer")
        if self.cond.axis != "z":
            raise ParameterError("axis", "the reduced model only has a Zeeman term along z")
        if self.dim > self.max_dim:
            raise ParameterError("n_spins", f"Hilbert dimension {self.dim} exceeds the "
                                 f"budget {self.max_dim}")

    @property
    def j(self):
        return self.n_spins / 4

    @property
    def n0(self):
        return self.n_spins // 2

    @property
    def spin_dim(self):
        return self.n_spins // 2 + 1

    @property
    def dim(self):
        return (self.n_max + 1) * self.spin_dim ** 2

    def with_(self, **kw):
        from dataclasses import replace
        return replace(self, **kw)


@dataclass
class EdResult:
    """Observables of the ground state or of the Gibbs state.

    ``staggered_sq`` and ``x_staggered_sq`` are normalized by ``(N/2)^2`` so a
    fully staggered configuration gives 1.
    """

    ground_energy: float
    gap: float
    photon_number: float
    staggered_sq: float
    x_staggered_sq: float
    correlator: float
    parity_expectation: float
    temperature: float = 0.0
    n_spins: int = 0
    n_max: int = 0

    def as_dict(self):
        return dict(self.__dict__)


def spin_matrices(j):
    """Sparse (jx, jy, jz) for spin ``j`` in the descending-M basis (jy complex)."""
    m = np.arange(j, -j - 1, -1)
    d = len(m)
    # <m+1| J+ |m>
    up = np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1))
    jp = sp.diags(up, 1, shape=(d, d), format="csr")
    jm = jp.T.tocsr()
    jx = ((jp + jm) * 0.5).tocsr()
    jy = ((jp - jm) * (-0.5j)).tocsr()
    jz = sp.diags(m, 0, format="csr")
    return jx, jy, jz


def boson_matrices(n_max):
    """Truncated annihilation operator ``b`` and number operator."""
    b = sp.diags(np.sqrt(np.arange(1, n_max + 1)), 1, shape=(n_max + 1,) * 2, format="csr")
    num = sp.diags(np.arange(n_max + 1, dtype=float), 0, format="csr")
    return b, num


def _kron3(a, b, c):
    return sp.kron(sp.kron(a, b, format="csr"), c, format="csr")


def build_operators(problem):
    """Operators on the full tensor basis.

    Returns a dict with ``a`` (the physical boson, ``a = i b``), ``b`` (the
    real gauge boson), ``n``, ``sxA``... ``szB``, and the collective
    combinations ``sx+``, ``sx-``, ``sy+``, ``sy-``, ``sz+``, ``sz-``.
    """
    bo, num = boson_matrices(problem.n_max)
    jx, jy, jz = spin_matrices(problem.j)
    ib = sp.identity(problem.n_max + 1, format="csr")
    isp = sp.identity(problem.spin_dim, format="csr")
    ops = {"b": _kron3(bo, isp, isp), "n": _kron3(num, isp, isp)}
    ops["a"] = (1j * ops["b"]).tocsr()
    for name, mat in (("x", jx), ("y", jy), ("z", jz)):
        ops[f"s{name}A"] = _kron3(ib, mat, isp)
        ops[f"s{name}B"] = _kron3(ib, isp, mat)
        ops[f"s{name}+"] = (ops[f"s{name}A"] + ops[f"s{name}B"]).tocsr()
        ops[f"s{name}-"] = (ops[f"s{name}A"] - ops[f"s{name}B"]).tocsr()
    return ops


def parity_operator(problem):
    """Sparse ``P = (-1)^n (x) swap(A, B)``."""
    d = problem.spin_dim
    idx = np.arange(d * d)
    ma, mb = np.divmod(idx, d)
    swap = sp.csr_matrix((np.ones(d * d), (mb * d + ma, idx)), shape=(d * d, d * d))
    sign = sp.diags((-1.0) ** np.arange(problem.n_max + 1), 0, format="csr")
    return sp.kron(sign, swap, format="csr")


def build_hamiltonian(problem, ops=None):
    """Real symmetric Hamiltonian (meV) in the ``a = i b`` gauge."""
    p, cond = problem.params, problem.cond
    ops = ops or build_operators(problem)
    n0 = problem.n0
    wz = p.zeeman(cond.b_field) if cond.b_field != 0 else 0.0
    bq = ops["b"] + ops["b"].T
    h = (p.omega_pi * ops["n"] + p.omega_er * ops["sx+"] + wz * ops["sz+"]
         + p.g * np.sqrt(2.0 / n0) * (bq @ ops["sz-"])
         + (4 * p.z_er * p.J / n0) * (ops["sxA"] @ ops["sxB"] + ops["szA"] @ ops["szB"]))
    return h.real.tocsr() if np.iscomplexobj(h.data) else h.tocsr()


def _sector_bases(problem):
    """Orthonormal sparse bases (columns) of the P = +1 and P = -1 sectors."""
    d = problem.spin_dim
    nb = problem.n_max + 1
    cols = {1: [], -1: []}
    for n in range(nb):
        pn = 1 if n % 2 == 0 else -1
        off = n * d * d
        for ma in range(d):
            for mb in range(ma, d):
                a = off + ma * d + mb
                if ma == mb:
                    cols[pn].append(((a,), (1.0,)))
                    continue
                b = off + mb * d + ma
                r = 1 / np.sqrt(2)
                for s in (1, -1):
                    cols[pn * s].append(((a, b), (r, s * r)))
    out = {}
    for key, entries in cols.items():
        rows, cidx, vals = [], [], []
        for c, (idx, v) in enumerate(entries):
            rows.extend(idx)
            cidx.extend([c] * len(idx))
            vals.extend(v)
        out[key] = sp.csr_matrix((vals, (rows, cidx)), shape=(problem.dim, len(entries)))
    return out


def _lowest(hs, k):
    dim = hs.shape[0]
    if dim <= 600:
        vals, vecs = np.linalg.eigh(hs.toarray())
        return vals[:k], vecs[:, :k]
    vals, vecs = eigsh(hs, k=k, which="SA", tol=1e-13)
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def _expect(ops, psi):
    def ev(mat):
        return float(np.real(np.vdot(psi, mat @ psi)))
    return ev


def _observables(problem, ops, psi, parity):
    ev = _expect(ops, psi)
    norm = (problem.n_spins / 2) ** 2
    bq = ops["b"] + ops["b"].T
    return dict(photon_number=ev(ops["n"]),
                staggered_sq=ev(ops["sz-"] @ ops["sz-"]) / norm,
                x_staggered_sq=ev(ops["sx-"] @ ops["sx-"]) / norm,
                correlator=ev(bq @ ops["sz-"]), parity_expectation=parity)


def _ground(problem):
    ops = build_operators(problem)
    h = build_hamiltonian(problem, ops)
    bases = _sector_bases(problem)
    best = None
    levels = []
    for par, v in bases.items():
        if v.shape[1] == 0:
            continue
        hs = (v.T @ h @ v).tocsr()
        k = min(2, hs.shape[0])
        vals, vecs = _lowest(hs, k)
        levels.extend(vals)
        if best is None or vals[0] < best[0] - 1e-12:
            best = (vals[0], v @ vecs[:, 0], par)
    levels = np.sort(levels)
    e0, psi, par = best
    psi = psi / np.linalg.norm(psi)
    pexp = float(np.vdot(psi, parity_operator(problem) @ psi).real)
    obs = _observables(problem, ops, psi, pexp)
    return EdResult(ground_energy=float(e0), gap=float(levels[1] - levels[0]),
                    n_spins=problem.n_spins, n_max=problem.n_max, **obs)


def ground_state(problem, check_truncation=True, tol=1e-8):
    """Lowest eigenstate (a parity eigenstate) and its observables.

    Raises
    ------
    TruncationError
        If raising ``n_max`` by 5 moves the ground energy by ``tol`` meV or more.
    """
    res = _ground(problem)
    if check_truncation:
        bigger = _ground(problem.with_(n_max=problem.n_max + 5,
                                       max_dim=max(problem.max_dim, problem.dim * 2)))
        if abs(bigger.ground_energy - res.ground_energy) >= tol:
            raise TruncationError(
                f"ground energy changes by {abs(bigger.ground_energy - res.ground_energy):.3g}"
                f" meV from n_max={problem.n_max} to {problem.n_max + 5}; increase n_max")
    return res


def thermal_observables(problem, temperature):
    """Gibbs-state expectations from the full spectrum (dense)."""
    if problem.dim > DENSE_LIMIT:
        raise ParameterError("n_spins", f"dimension {problem.dim} exceeds the dense "
                             f"limit {DENSE_LIMIT}")
    if not temperature > 0:
        raise ParameterError("temperature", "temperature must be positive")
    ops = build_operators(problem)
    h = build_hamiltonian(problem, ops).toarray()
    e, v = np.linalg.eigh(h)
    w = np.exp(-(e - e[0]) / (CONST.k_B * temperature))
    w /= w.sum()
    bq = (ops["b"] + ops["b"].T)

    def ev(mat):
        mv = mat @ v
        return float(np.real(np.einsum("i,ki,ki->", w, v.conj(), mv)))

    norm = (problem.n_spins / 2) ** 2
    par = parity_operator(problem)
    return EdResult(ground_energy=float(e[0]), gap=float(e[1] - e[0]),
                    photon_number=ev(ops["n"]),
                    staggered_sq=ev(ops["sz-"] @ ops["sz-"]) / norm,
                    x_staggered_sq=ev(ops["sx-"] @ ops["sx-"]) / norm,
                    correlator=ev(bq @ ops["sz-"]), parity_expectation=ev(par),
                    temperature=float(temperature), n_spins=problem.n_spins,
                    n_max=problem.n_max)


def partition_function(problem, temperature):
    """``Z = sum exp(-(E - E0)/kT)`` over the truncated spectrum.

    Energies are measured from the ground state, so ``Z`` counts thermally
    accessible states: 1 at ``T -> 0``, the Hilbert dimension at ``T -> inf``.
    """
    if not temperature > 0:
        raise ParameterError("temperature", "temperature must be positive")
    h = build_hamiltonian(problem).toarray()
    e = np.linalg.eigvalsh(h)
    return float(np.exp(-(e - e[0]) / (CONST.k_B * temperature)).sum())


def maximally_mixed_staggered_sq(n_spins):
    """Infinite-temperature ``<(Sigma_z^-)^2> / (N/2)^2`` in the collective space.

    Each sublattice has ``<M^2> = j(j+1)/3`` and the cross term vanishes.
    """
    j = n_spins / 4
    return 2 * j * (j + 1) / 3 / (n_spins / 2) ** 2
