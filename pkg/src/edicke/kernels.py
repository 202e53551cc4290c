"""Hot numeric kernels: Brillouin statistics and the damped mean-field loop.

Both mean-field models reduce to a per-unit-cell energy that is quadratic in
the stacked spin expectations ``x`` (blocks of three components)::

    E(x) = b . x + x . Q x / 2

Block ``k`` is either a Pauli spin (``kind=0``; equilibrium ``-tanh(|h|/2kT)``
along its field ``h = 2 dE/dx_k``) or a spin-S moment (``kind=1``;
``-S B_S(S |h|/kT)`` along ``h = dE/dx_k``).

:func:`iterate_fixed_point` runs the damped fixed-point loop for a batch of
starting points.  The numba and numpy code paths share the same algorithm and
are selected by :func:`edicke._jit.numba_enabled`.
"""

import math

import numpy as np
from scipy.special import xlogy

from ._jit import maybe_njit, numba_enabled

PAULI = 0
SPIN_S = 1

#: fields below this norm (meV) leave the moment undefined; it is set to zero
DEGENERATE_FIELD = 1e-14

STATUS_CONVERGED = 0
STATUS_MAXITER = 1
STATUS_NONFINITE = 2


# --------------------------------------------------------------------------
# Brillouin function and partition functions
# --------------------------------------------------------------------------


@maybe_njit
def _langevin_scalar(u):
    # coth(u) - 1/u, series below |u| = 0.1 to dodge cancellation
    au = abs(u)
    if au < 0.1:
        u2 = u * u
        return u * (1.0 / 3.0 - u2 * (1.0 / 45.0 - u2 * (2.0 / 945.0 - u2 / 4725.0)))
    if au > 40.0:
        return math.copysign(1.0, u) - 1.0 / u
    return 1.0 / math.tanh(u) - 1.0 / u


@maybe_njit
def brillouin_scalar(j, z):
    a = (2.0 * j + 1.0) / (2.0 * j)
    b = 1.0 / (2.0 * j)
    # a*coth(a z) - b*coth(b z) with the 1/z poles cancelled analytically;
    # rounding near saturation can overshoot 1 by an ulp
    v = a * _langevin_scalar(a * z) - b * _langevin_scalar(b * z)
    return min(max(v, -1.0), 1.0)


def _langevin(u):
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    au = np.abs(u)
    small = au < 0.1
    us = u[small]
    u2 = us * us
    out[small] = us * (1.0 / 3.0 - u2 * (1.0 / 45.0 - u2 * (2.0 / 945.0 - u2 / 4725.0)))
    big = ~small
    ub = u[big]
    with np.errstate(over="ignore"):
        out[big] = 1.0 / np.tanh(ub) - 1.0 / ub
    return out


def brillouin(j, z):
    """Brillouin function B_J(z).

    Parameters
    ----------
    j : float
        Spin magnitude (positive half-integer).
    z : float or array_like

    Returns
    -------
    float or ndarray
        Odd in ``z``, monotone, saturating at +/-1.  ``B_{1/2}(z) = tanh(z)``.
    """
    if not j > 0 or abs(2 * j - round(2 * j)) > 1e-12:
        raise ValueError("j must be a positive half-integer")
    a = (2.0 * j + 1.0) / (2.0 * j)
    b = 1.0 / (2.0 * j)
    zz = np.asarray(z, dtype=float)
    out = np.clip(a * _langevin(a * zz) - b * _langevin(b * zz), -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def log_2cosh(y):
    """ln(2 cosh y) without overflow."""
    ay = np.abs(y)
    return ay + np.log1p(np.exp(-2.0 * ay))


def log_z_spin(s, x):
    """ln Z for a spin-S moment, Z = sum_m exp(-m x) = sinh((S+1/2)x)/sinh(x/2)."""
    ax = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(ax)
    tiny = ax < 1e-8
    out[tiny] = np.log(2 * s + 1) + s * (s + 1) * ax[tiny] ** 2 / 6.0
    xb = ax[~tiny]
    out[~tiny] = (
        s * xb + np.log(-np.expm1(-(2 * s + 1) * xb)) - np.log(-np.expm1(-xb))
    )
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# Damped fixed-point iteration
# --------------------------------------------------------------------------


@maybe_njit
def _update_target(x, Q, b, kT, fac, spin, kind, out):
    """Write the raw mean-field update of ``x`` into ``out``; return False on blowup."""
    n = x.shape[0]
    nb = n // 3
    for blk in range(nb):
        h0 = 0.0
        h1 = 0.0
        h2 = 0.0
        base = 3 * blk
        for j in range(n):
            xj = x[j]
            h0 += Q[base, j] * xj
            h1 += Q[base + 1, j] * xj
            h2 += Q[base + 2, j] * xj
        h0 = fac[blk] * (h0 + b[base])
        h1 = fac[blk] * (h1 + b[base + 1])
        h2 = fac[blk] * (h2 + b[base + 2])
        hn = math.sqrt(h0 * h0 + h1 * h1 + h2 * h2)
        if not math.isfinite(hn):
            return False
        if hn < DEGENERATE_FIELD:
            out[base] = 0.0
            out[base + 1] = 0.0
            out[base + 2] = 0.0
            continue
        if kind[blk] == PAULI:
            mag = math.tanh(hn / (2.0 * kT))
        else:
            s = spin[blk]
            mag = s * brillouin_scalar(s, s * hn / kT)
        scale = -mag / hn
        out[base] = scale * h0
        out[base + 1] = scale * h1
        out[base + 2] = scale * h2
    return True


@maybe_njit
def _iterate_numba(x0, Q, b, kT, fac, spin, kind, tol, max_iter, mix0, mix_min, window):
    npts, n = x0.shape
    x_out = np.empty_like(x0)
    resid = np.empty(npts)
    iters = np.zeros(npts, dtype=np.int64)
    status = np.zeros(npts, dtype=np.int64)
    u = np.empty(n)
    for p in range(npts):
        x = x0[p].copy()
        lam = mix0
        best = np.inf
        since_best = 0
        r = np.inf
        st = STATUS_MAXITER
        it = 0
        while True:
            ok = _update_target(x, Q, b[p], kT[p], fac, spin, kind, u)
            if not ok:
                st = STATUS_NONFINITE
                break
            r = 0.0
            for j in range(n):
                d = abs(x[j] - u[j])
                if d > r:
                    r = d
            if r < tol:
                st = STATUS_CONVERGED
                break
            if it >= max_iter:
                break
            if r < best:
                best = r
                since_best = 0
            else:
                since_best += 1
                if since_best >= window:
                    lam = max(0.5 * lam, mix_min)
                    since_best = 0
                    best = r
            for j in range(n):
                x[j] = (1.0 - lam) * x[j] + lam * u[j]
            it += 1
        x_out[p] = x
        resid[p] = r
        iters[p] = it
        status[p] = st
    return x_out, resid, iters, status


def _update_target_numpy(x, Q, b, kT, fac, spin, kind):
    npts, n = x.shape
    # accumulate in the compiled loop's order; BLAS reordering breaks the
    # exact A/B symmetry of symmetric seeds
    g = np.zeros((npts, n))
    for j in range(n):
        g += x[:, j:j + 1] * Q[:, j][None, :]
    g += b
    h = g.reshape(npts, n // 3, 3) * fac[None, :, None]
    hn = np.linalg.norm(h, axis=2)
    finite = np.all(np.isfinite(hn), axis=1)
    hn_safe = np.where(np.isfinite(hn), hn, 0.0)
    arg = np.where(kind[None, :] == PAULI, hn_safe / (2.0 * kT[:, None]),
                   spin[None, :] * hn_safe / kT[:, None])
    mag = np.where(kind[None, :] == PAULI, np.tanh(arg),
                   spin[None, :] * _brillouin_vec(spin, arg))
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(hn_safe < DEGENERATE_FIELD, 0.0, -mag / hn_safe)
    out = (h * scale[:, :, None]).reshape(npts, n)
    return np.where(np.isfinite(out), out, 0.0), finite


def _brillouin_vec(spin, arg):
    # spin: (nb,), arg: (K, nb); unique spins are few
    out = np.empty_like(arg)
    for blk, s in enumerate(spin):
        if s == 0.5:
            out[:, blk] = np.tanh(arg[:, blk])
        else:
            a = (2.0 * s + 1.0) / (2.0 * s)
            c = 1.0 / (2.0 * s)
            out[:, blk] = np.clip(a * _langevin(a * arg[:, blk]) - c * _langevin(c * arg[:, blk]),
                                  -1.0, 1.0)
    return out


def _iterate_numpy(x0, Q, b, kT, fac, spin, kind, tol, max_iter, mix0, mix_min, window):
    npts, n = x0.shape
    x = x0.copy()
    lam = np.full(npts, mix0)
    best = np.full(npts, np.inf)
    since_best = np.zeros(npts, dtype=np.int64)
    resid = np.full(npts, np.inf)
    iters = np.zeros(npts, dtype=np.int64)
    status = np.full(npts, STATUS_MAXITER, dtype=np.int64)
    active = np.arange(npts)
    it = 0
    while active.size:
        u, finite = _update_target_numpy(x[active], Q, b[active], kT[active], fac, spin, kind)
        r = np.max(np.abs(x[active] - u), axis=1)
        resid[active] = np.where(finite, r, np.inf)
        iters[active] = it
        bad = ~finite
        status[active[bad]] = STATUS_NONFINITE
        conv = finite & (r < tol)
        status[active[conv]] = STATUS_CONVERGED
        keep = finite & ~conv
        if it >= max_iter:
            break
        active, u, r = active[keep], u[keep], r[keep]
        improved = r < best[active]
        best[active] = np.where(improved, r, best[active])
        since_best[active] = np.where(improved, 0, since_best[active] + 1)
        halve = since_best[active] >= window
        lam[active] = np.where(halve, np.maximum(0.5 * lam[active], mix_min), lam[active])
        best[active] = np.where(halve, r, best[active])
        since_best[active] = np.where(halve, 0, since_best[active])
        la = lam[active][:, None]
        x[active] = (1.0 - la) * x[active] + la * u
        it += 1
    return x, resid, iters, status


def iterate_fixed_point(x0, Q, b, kT, fac, spin, kind, tol=1e-10, max_iter=10_000,
                        mixing=0.5, min_mixing=1 / 64, window=50, use_numba=None):
    """Damped mean-field iteration for a batch of starting points.

    Parameters
    ----------
    x0 : ndarray, shape (K, n)
        Starting spin expectations; ``n`` is a multiple of 3.
    Q : ndarray, shape (n, n)
        Symmetric quadratic form of the energy.
    b : ndarray, shape (K, n) or (n,)
        Linear (Zeeman-like) coefficients, one row per point.
    kT : ndarray, shape (K,) or float
        Thermal energy in meV.
    fac, spin, kind : ndarray, shape (n // 3,)
        Per-block field factor, spin length and statistic (PAULI or SPIN_S).
    mixing, min_mixing, window
        ``x <- (1 - lam) x + lam * update(x)``; ``lam`` is halved (down to
        ``min_mixing``) whenever the residual fails to reach a new minimum for
        ``window`` consecutive iterations.

    Returns
    -------
    x, resid, iters, status : ndarray
        Final states, max-norm residual ``|x - update(x)|``, iteration counts
        and per-point status codes (``STATUS_*``).
    """
    x0 = np.ascontiguousarray(np.atleast_2d(x0), dtype=float)
    npts, n = x0.shape
    Q = np.ascontiguousarray(Q, dtype=float)
    b = np.ascontiguousarray(np.broadcast_to(b, (npts, n)), dtype=float)
    kT = np.ascontiguousarray(np.broadcast_to(np.asarray(kT, dtype=float), (npts,)))
    fac = np.ascontiguousarray(fac, dtype=float)
    spin = np.ascontiguousarray(spin, dtype=float)
    kind = np.ascontiguousarray(kind, dtype=np.int64)
    if use_numba is None:
        use_numba = numba_enabled()
    impl = _iterate_numba if use_numba else _iterate_numpy
    return impl(x0, Q, b, kT, fac, spin, kind, float(tol), int(max_iter),
                float(mixing), float(min_mixing), int(window))


def update_target(x, Q, b, kT, fac, spin, kind):
    """Raw (undamped) mean-field update for a batch of states."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    b = np.broadcast_to(b, x.shape)
    kT = np.broadcast_to(np.asarray(kT, dtype=float), (x.shape[0],))
    u, finite = _update_target_numpy(x, np.asarray(Q, float), b, kT,
                                     np.asarray(fac, float), np.asarray(spin, float),
                                     np.asarray(kind, np.int64))
    return u, finite


def response_slope(s, kind, hn, kT):
    """Derivative of the equilibrium moment length with respect to |h|.

    Equals the thermal variance of the projection along the field divided by
    ``2kT`` (Pauli, energy ``|h| m / 2``) or ``kT`` (spin-S, energy ``|h| m``).
    """
    if kind == PAULI:
        t = math.tanh(hn / (2.0 * kT))
        return (1.0 - t * t) / (2.0 * kT)
    x = hn / kT
    m = np.arange(-s, s + 0.5)
    w = np.exp(x * (m - s))  # shifted to avoid overflow
    z = w.sum()
    mean = (m * w).sum() / z
    return ((m * m * w).sum() / z - mean * mean) / kT


def update_jacobian(x, Q, b, kT, fac, spin, kind):
    """Jacobian of the raw update map at a single state ``x`` (n x n)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    g = np.asarray(Q) @ x + b
    jac = np.zeros((n, n))
    for blk in range(n // 3):
        sl = slice(3 * blk, 3 * blk + 3)
        h = fac[blk] * g[sl]
        hn = math.sqrt(h @ h)
        slope = response_slope(spin[blk], kind[blk], hn, kT)
        if hn < DEGENERATE_FIELD:
            du_dh = -slope * np.eye(3)
        else:
            e = h / hn
            if kind[blk] == PAULI:
                mag = math.tanh(hn / (2.0 * kT))
            else:
                mag = spin[blk] * brillouin_scalar(spin[blk], spin[blk] * hn / kT)
            proj = np.outer(e, e)
            du_dh = -(slope * proj + (mag / hn) * (np.eye(3) - proj))
        jac[sl, :] = du_dh @ (fac[blk] * np.asarray(Q)[sl, :])
    return jac


def entropy_pauli(m):
    """Entropy (units of k_B) of a spin-1/2 with Pauli polarization ``|m| <= 1``."""
    m = np.clip(np.abs(np.asarray(m, dtype=float)), 0.0, 1.0)
    p, q = 0.5 * (1 + m), 0.5 * (1 - m)
    return -(xlogy(p, p) + xlogy(q, q))


def conjugate_field(s, m, iters=200):
    """Reduced field ``x >= 0`` with ``S B_S(S x) = |m|`` (vectorized bisection).

    ``|m| >= S`` maps to ``inf``.
    """
    m = np.abs(np.asarray(m, dtype=float))
    lo = np.zeros_like(m)
    hi = np.full_like(m, 1.0)
    sat = m >= s * (1 - 1e-15)
    # grow the bracket until it contains the root
    for _ in range(60):
        short = ~sat & (s * brillouin(s, s * hi) < m)
        if not short.any():
            break
        hi = np.where(short, 2 * hi, hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = s * brillouin(s, s * mid) < m
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    return np.where(sat, np.inf, x)


def entropy_spin(s, m):
    """Entropy (units of k_B) of a spin-``s`` moment with mean length ``|m|``."""
    m = np.abs(np.asarray(m, dtype=float))
    x = conjugate_field(s, m)
    fin = np.isfinite(x)
    xf = np.where(fin, x, 0.0)
    out = np.atleast_1d(log_z_spin(s, xf) - xf * m)
    return np.where(fin, out, 0.0)


def block_free_energy(x, Q, b, kT, fac, spin, kind, prescription="variational"):
    """Mean-field free energy per unit cell for a batch of states.

    ``variational``: the Bogoliubov bound ``E(x) - kT sum_blocks s(|m_block|)``
    with ``s`` the entropy of a free moment of that polarization.  It is an
    upper bound for any ``x`` and equals ``sum_blocks(-kT ln Z) - x.Q x / 2``
    at self-consistency.  ``paper``: the bare single-site sum
    ``sum_blocks(-kT ln Z_block)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    npts, n = x.shape
    b = np.broadcast_to(b, x.shape)
    kT = np.broadcast_to(np.asarray(kT, dtype=float), (npts,))
    blocks = x.reshape(npts, n // 3, 3)
    if prescription == "variational":
        Q = np.asarray(Q)
        f = np.einsum("ki,ki->k", x, b) + 0.5 * np.einsum("ki,ij,kj->k", x, Q, x)
        mn = np.linalg.norm(blocks, axis=2)
        for blk in range(n // 3):
            if kind[blk] == PAULI:
                f -= kT * entropy_pauli(mn[:, blk])
            else:
                f -= kT * entropy_spin(spin[blk], mn[:, blk])
        return f
    if prescription != "paper":
        raise ValueError(f"unknown free-energy prescription {prescription!r}")
    g = x @ np.asarray(Q).T + b
    h = g.reshape(npts, n // 3, 3) * np.asarray(fac)[None, :, None]
    hn = np.linalg.norm(h, axis=2)
    f = np.zeros(npts)
    for blk in range(n // 3):
        if kind[blk] == PAULI:
            f -= kT * log_2cosh(hn[:, blk] / (2.0 * kT))
        else:
            f -= kT * log_z_spin(spin[blk], hn[:, blk] / kT)
    return f
