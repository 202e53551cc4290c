"""Model-agnostic pieces of the mean-field solvers.

A :class:`QuadraticModel` bundles the quadratic energy form and block layout of
one of the two spin models; :func:`solve_batch` runs every (point, seed) pair
through the fixed-point kernel in one call and selects the lowest free energy
per point.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .constants import CONST
from .params import SolverSettings


class SolverError(RuntimeError):
    """No seed converged.  ``histories`` maps seed id to residual history."""

    def __init__(self, message, histories=None):
        super().__init__(message)
        self.histories = histories or {}


@dataclass(frozen=True)
class QuadraticModel:
    Q: np.ndarray
    fac: np.ndarray
    spin: np.ndarray
    kind: np.ndarray
    linear: callable  # cond -> b vector

    @property
    def size(self):
        return self.Q.shape[0]

    def b(self, cond):
        return self.linear(cond)

    def gradient(self, x, b):
        return np.atleast_2d(x) @ self.Q.T + b

    def update(self, x, b, kT):
        return kernels.update_target(x, self.Q, b, kT, self.fac, self.spin, self.kind)

    def free_energy_cell(self, x, b, kT, prescription="variational"):
        return kernels.block_free_energy(x, self.Q, b, kT, self.fac, self.spin,
                                         self.kind, prescription)


def energy_cell(model, x, b):
    """Per-unit-cell mean-field energy ``b.x + x.Q x / 2`` for a batch."""
    x = np.atleast_2d(x)
    b = np.broadcast_to(b, x.shape)
    return np.einsum("ki,ki->k", x, b) + 0.5 * np.einsum("ki,ij,kj->k", x, model.Q, x)


def residual(model, x, b, kT):
    u, finite = model.update(x, b, kT)
    r = np.max(np.abs(np.atleast_2d(x) - u), axis=1)
    return np.where(finite, r, np.inf)


def newton_polish(model, x, b, kT, tol, max_steps=40):
    """Newton iteration on ``x - update(x) = 0`` from a nearly converged state.

    Used when damped iteration stalls near a continuous transition, where the
    linear convergence rate of the damped map goes to zero.  Returns
    ``(x, residual)``; the input is returned unchanged if Newton does not help.
    """
    x = np.array(x, dtype=float)
    n = x.size
    best_x, best_r = x.copy(), residual(model, x, b, kT)[0]
    eye = np.eye(n)
    stall = 0
    for _ in range(max_steps):
        u, finite = model.update(x, b, kT)
        if not finite[0]:
            break
        fx = x - u[0]
        jac = eye - kernels.update_jacobian(x, model.Q, b, kT, model.fac, model.spin,
                                            model.kind)
        dx = np.linalg.lstsq(jac, -fx, rcond=None)[0]
        x = x + dx
        r = residual(model, x, b, kT)[0]
        if r < best_r:
            best_x, best_r, stall = x.copy(), r, 0
        else:
            stall += 1
            if stall >= 3:
                break
        if best_r < tol:
            break
    # finish on the image of the update map so every moment obeys its length bound
    u, finite = model.update(best_x, b, kT)
    if finite[0]:
        r_u = residual(model, u[0], b, kT)[0]
        if r_u <= max(best_r, tol):
            best_x, best_r = u[0].copy(), r_u
    return best_x, best_r


@dataclass
class BatchResult:
    x: np.ndarray  # (P, S, n) converged states per point and seed
    residual: np.ndarray  # (P, S)
    iterations: np.ndarray
    converged: np.ndarray
    free_energy: np.ndarray  # (P, S) per-spin, nan where not converged
    best: np.ndarray  # (P,) index of the selected seed, -1 if none converged


def free_energy_per_spin(model, x, b, kT, prescription):
    # the /2 reproduces F = sum_s (...)/2 of the two-sublattice ansatz
    return 0.5 * model.free_energy_cell(x, b, kT, prescription)


def select_minimum(free_energy, converged):
    """Index of the lowest free energy per row; ties go to the lowest index."""
    npts, nseed = free_energy.shape
    best = np.full(npts, -1, dtype=np.int64)
    for p in range(npts):
        fmin = None
        for s in range(nseed):
            if not converged[p, s]:
                continue
            f = free_energy[p, s]
            if fmin is None or f < fmin - (1e-12 + 1e-12 * abs(fmin)):
                fmin, best[p] = f, s
    return best


FIRST_STAGE = 500


def _polish(model, x, res, status, b_rep, kT_rep, tol, idx=None):
    cand = np.flatnonzero((status == kernels.STATUS_MAXITER) & (res >= tol) & (res < 1e-3))
    if idx is not None:
        cand = np.intersect1d(cand, idx)
    for k in cand:
        xk, rk = newton_polish(model, x[k], b_rep[k], kT_rep[k], tol)
        if rk < res[k]:
            x[k], res[k] = xk, rk


def solve_batch(model, bs, kTs, seeds, settings=None, polish=True, use_numba=None):
    """Converge every seed at every point.

    Parameters
    ----------
    model : QuadraticModel
    bs : ndarray, shape (P, n)
        Linear coefficients per point.
    kTs : ndarray, shape (P,)
    seeds : ndarray, shape (P, S, n) or (S, n)
        Starting states; a 2-D array is shared by every point.
    """
    settings = settings or SolverSettings()
    bs = np.atleast_2d(bs)
    npts, n = bs.shape
    kTs = np.broadcast_to(np.asarray(kTs, dtype=float), (npts,))
    seeds = np.asarray(seeds, dtype=float)
    if seeds.ndim == 2:
        seeds = np.broadcast_to(seeds, (npts,) + seeds.shape)
    nseed = seeds.shape[1]
    x0 = seeds.reshape(npts * nseed, n)
    b_rep = np.repeat(bs, nseed, axis=0)
    kT_rep = np.repeat(kTs, nseed)

    def run(idx, start, budget):
        return kernels.iterate_fixed_point(
            start, model.Q, b_rep[idx], kT_rep[idx], model.fac, model.spin, model.kind,
            tol=settings.tol, max_iter=budget, mixing=settings.mixing,
            min_mixing=settings.min_mixing, window=settings.oscillation_window,
            use_numba=use_numba)

    # stalled points (critical slowing down) go to Newton early; whatever is
    # left continues damped iteration for the rest of the budget
    first = min(settings.max_iter, FIRST_STAGE) if polish else settings.max_iter
    idx = np.arange(len(x0))
    x, res, iters, status = run(idx, x0, first)
    if polish:
        _polish(model, x, res, status, b_rep, kT_rep, settings.tol)
        rest = settings.max_iter - first
        todo = np.flatnonzero((status == kernels.STATUS_MAXITER) & (res >= settings.tol))
        if rest > 0 and todo.size:
            x2, r2, i2, s2 = run(todo, x[todo], rest)
            x[todo], res[todo], status[todo] = x2, r2, s2
            iters[todo] += i2
            _polish(model, x, res, status, b_rep, kT_rep, settings.tol, todo)
    conv = res < settings.tol
    fe = np.full(npts * nseed, np.nan)
    if conv.any():
        fe[conv] = free_energy_per_spin(model, x[conv], b_rep[conv], kT_rep[conv],
                                        settings.free_energy_prescription)
    conv = conv.reshape(npts, nseed)
    fe = fe.reshape(npts, nseed)
    best = select_minimum(fe, conv)
    return BatchResult(x.reshape(npts, nseed, n), res.reshape(npts, nseed),
                       iters.reshape(npts, nseed), conv, fe, best)


def residual_history(model, x0, b, kT, settings):
    """Residuals of the damped loop from one seed (diagnostics only)."""
    x = np.array(x0, dtype=float)
    lam, best, since = settings.mixing, np.inf, 0
    hist = []
    for _ in range(settings.max_iter):
        u, finite = model.update(x, b, kT)
        if not finite[0]:
            hist.append(np.inf)
            break
        r = float(np.max(np.abs(x - u[0])))
        hist.append(r)
        if r < settings.tol:
            break
        if r < best:
            best, since = r, 0
        else:
            since += 1
            if since >= settings.oscillation_window:
                lam, since, best = max(lam / 2, settings.min_mixing), 0, r
        x = (1 - lam) * x + lam * u[0]
    return hist


def kT_of(temperature):
    return CONST.k_B * np.asarray(temperature, dtype=float)
