"""Phase maps in the (T, B) plane: classification, boundaries, g_z calibration
and magnetocaloric traces.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.signal import find_peaks

from . import dicke_mf, micro
from .constants import CONST
from .mfcore import SolverError, solve_batch
from .params import ExternalConditions, ParameterError, SolverSettings, asdict_shallow

log = logging.getLogger(__name__)

PHASES = ("N", "S", "A")
FAILED = "?"


@dataclass(frozen=True)
class OrderParameters:
    """Er staggered z/x polarizations, condensate measure and net z polarization."""

    ez: float
    ex: float
    condensate: float
    mz_total: float


def classify(op, eps=1e-3):
    """Phase label of a set of order parameters.

    N when every symmetry-breaking order parameter is below ``eps``.
    Otherwise the dominant staggered component decides: A when the staggered
    x polarization exceeds the staggered z polarization, S otherwise.
    """
    if not 0 < eps < 0.5:
        raise ParameterError("eps", "must lie in (0, 0.5)")
    if max(op.ez, op.ex, op.condensate) < eps:
        return "N"
    if op.ex >= eps and op.ex > op.ez:
        return "A"
    return "S"


class SweepError(RuntimeError):
    """Too many cells failed; ``phase_map`` holds the partial result."""

    def __init__(self, message, phase_map=None):
        super().__init__(message)
        self.phase_map = phase_map


@dataclass
class PhaseMap:
    """Per-cell results on a rectangular grid, indexed ``[i_t, i_h]``."""

    t_grid: np.ndarray
    h_grid: np.ndarray
    labels: np.ndarray
    ez: np.ndarray
    ex: np.ndarray
    condensate: np.ndarray
    mz_total: np.ndarray
    free_energy: np.ndarray
    converged: np.ndarray
    states: np.ndarray = None  # (nT, nH, n) selected state vectors
    metadata: dict = field(default_factory=dict)
    axes: tuple = ("T", "H")

    @property
    def shape(self):
        return self.labels.shape

    def transposed(self):
        """Same map with the two axes swapped (boundaries are unaffected)."""
        tr = lambda a: None if a is None else np.swapaxes(a, 0, 1)
        return PhaseMap(self.h_grid, self.t_grid, tr(self.labels), tr(self.ez), tr(self.ex),
                        tr(self.condensate), tr(self.mz_total), tr(self.free_energy),
                        tr(self.converged), tr(self.states), dict(self.metadata),
                        self.axes[::-1])

    def cell_coordinates(self, i, j):
        """(T, H) of cell ``[i, j]`` regardless of axis order."""
        a, b = self.t_grid[i], self.h_grid[j]
        return (a, b) if self.axes == ("T", "H") else (b, a)

    def rows(self):
        """Iterate (T, H, label, ez, ex, condensate, mz_total, F) in T-major order."""
        for i in range(self.shape[0]):
            for j in range(self.shape[1]):
                t, h = self.cell_coordinates(i, j)
                yield (t, h, self.labels[i, j], self.ez[i, j], self.ex[i, j],
                       self.condensate[i, j], self.mz_total[i, j], self.free_energy[i, j])


def _check_grid(name, grid):
    grid = np.asarray(grid, float)
    if grid.ndim != 1 or grid.size < 2:
        raise ParameterError(name, "needs at least 2 points")
    if np.any(np.diff(grid) <= 0):
        raise ParameterError(name, "must be strictly increasing")
    return grid


def _reduced_ops(x, params):
    ez = np.abs(x[..., 2] - x[..., 5]) / 2
    ex = np.abs(x[..., 0] - x[..., 3]) / 2
    cond = params.g * 2 * ez / (np.sqrt(2.0) * params.omega_pi)
    mz = (x[..., 2] + x[..., 5]) / 2
    return ez, ex, cond, mz


def _micro_ops(x, params):
    ez = np.abs(x[..., 2] - x[..., 5]) / 2
    ex = np.abs(x[..., 0] - x[..., 3]) / 2
    cond = np.abs(x[..., 7] - x[..., 10]) / (2 * params.s_fe)
    mz = (x[..., 2] + x[..., 5]) / 2
    return ez, ex, cond, mz


def _solver_pieces(solver, params):
    if solver == "reduced":
        model = dicke_mf.reduced_model(params)
        _, seeds = dicke_mf._seed_array(dicke_mf.default_seeds())
        return model, seeds, lambda x: _reduced_ops(x, params)
    if solver == "micro":
        model = micro.micro_model(params)
        seeds = np.array(list(micro.default_micro_seeds(params.s_fe).values()))
        return model, seeds, lambda x: _micro_ops(x, params)
    raise ParameterError("solver", f"unknown solver {solver!r}; use 'reduced' or 'micro'")


def _sweep_columns(solver, params, t_cols, h_grid, axis, settings):
    """Solve a block of T columns, marching up in H with warm starts."""
    model, seeds, _ = _solver_pieces(solver, params)
    nT, nH, n = len(t_cols), len(h_grid), model.size
    x = np.full((nT, nH, n), np.nan)
    fe = np.full((nT, nH), np.nan)
    conv = np.zeros((nT, nH), bool)
    kTs = CONST.k_B * np.asarray(t_cols)
    warm = None
    for j, hval in enumerate(h_grid):
        bs = np.array([model.b(ExternalConditions(t, hval, axis)) for t in t_cols])
        block = np.broadcast_to(seeds, (nT,) + seeds.shape)
        if warm is not None:
            block = np.concatenate([block, warm[:, None, :]], axis=1)
        res = solve_batch(model, bs, kTs, block, settings)
        for i in range(nT):
            k = res.best[i]
            if k >= 0:
                x[i, j] = res.x[i, k]
                fe[i, j] = res.free_energy[i, k]
                conv[i, j] = True
        # cells that failed keep the previous warm seed
        new_warm = np.where(conv[:, j, None], x[:, j], np.nan)
        if warm is not None:
            new_warm = np.where(np.isnan(new_warm), warm, new_warm)
        warm = None if np.all(np.isnan(new_warm)) else np.nan_to_num(new_warm)
    return x, fe, conv


def sweep(params, t_grid, h_grid, solver="reduced", settings=None, axis="z"):
    """Equilibrium phase map on the grid ``t_grid x h_grid``.

    Every cell is solved from the standard seeds plus the converged state of
    its lower-field neighbour in the same T column.  Failed cells are labelled
    ``"?"``; more than 10% failures raises :class:`SweepError`.

    Parameters
    ----------
    params : ReducedParams or MicroParams
    t_grid, h_grid : array_like
        Strictly increasing temperatures (K) and fields (T).
    solver : {"reduced", "micro"}
    settings : SolverSettings, optional
        ``workers > 1`` splits the T columns over processes.
    """
    settings = settings or SolverSettings()
    t_grid = _check_grid("t_grid", t_grid)
    h_grid = _check_grid("h_grid", h_grid)
    if np.any(t_grid <= 0):
        raise ParameterError("temperature", "temperature must be positive")
    if solver == "reduced" and axis != "z":
        raise ParameterError("axis", "the reduced model only has a Zeeman term along z")
    _, _, ops = _solver_pieces(solver, params)
    workers = settings.workers or 1
    if workers > 1 and len(t_grid) > 1:
        chunks = np.array_split(np.arange(len(t_grid)), min(workers, len(t_grid)))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_sweep_columns, solver, params, t_grid[c], h_grid, axis,
                                settings) for c in chunks]
            parts = [f.result() for f in futs]
        x = np.concatenate([p[0] for p in parts])
        fe = np.concatenate([p[1] for p in parts])
        conv = np.concatenate([p[2] for p in parts])
    else:
        x, fe, conv = _sweep_columns(solver, params, t_grid, h_grid, axis, settings)
    ez, ex, cond, mz = ops(np.nan_to_num(x))
    labels = np.full(conv.shape, FAILED, dtype="<U1")
    for idx in zip(*np.nonzero(conv)):
        labels[idx] = classify(OrderParameters(ez[idx], ex[idx], cond[idx], mz[idx]),
                               settings.eps)
    meta = {"solver": solver, "axis": axis, "settings": asdict_shallow(settings),
            "params": {k: v for k, v in asdict_shallow(params).items()
                       if k != "dropped_couplings"}}
    if solver == "reduced":
        meta["g_lande_z"] = params.g_lande_z
    pm = PhaseMap(t_grid, h_grid, labels, ez, ex, cond, mz, fe, conv, x, meta)
    nfail = int((~conv).sum())
    if nfail:
        log.warning("%d of %d cells failed to converge", nfail, conv.size)
    if nfail > 0.1 * conv.size:
        raise SweepError(f"{nfail} of {conv.size} cells failed to converge", pm)
    return pm


@dataclass
class Boundary:
    """Boundary points between two phases with their order-parameter jumps."""

    phases: tuple  # sorted pair, e.g. ("A", "S")
    points: np.ndarray  # (k, 2) as (T, H)
    jumps: np.ndarray  # (k,) largest order-parameter change across the pair
    order: str = "second"

    @property
    def name(self):
        return "-".join(self.phases)


@dataclass
class BoundarySet:
    boundaries: list
    triple_point: tuple = None  # (T, H) or None
    jump_threshold: float = 0.1

    def get(self, a, b):
        key = tuple(sorted((a, b)))
        for bd in self.boundaries:
            if bd.phases == key:
                return bd
        return None

    def point_set(self, digits=12):
        """All boundary points as a set of rounded (T, H) tuples."""
        out = set()
        for bd in self.boundaries:
            for t, h in bd.points:
                out.add((round(float(t), digits), round(float(h), digits), bd.name))
        return out


def _pair_jump(pm, a, b):
    return max(abs(pm.ez[a] - pm.ez[b]), abs(pm.ex[a] - pm.ex[b]),
               abs(pm.condensate[a] - pm.condensate[b]))


def extract_boundaries(pm, jump=0.1):
    """Boundary points between neighbouring cells with different labels.

    A boundary is tagged ``"first"`` when the majority of its crossings show an
    order-parameter jump above ``jump``.  The triple point is the centroid of
    the 2x2 windows that contain N, S and A together.
    """
    labels = pm.labels
    n0, n1 = labels.shape
    found = {}
    for i in range(n0):
        for j in range(n1):
            for di, dj in ((1, 0), (0, 1)):
                ii, jj = i + di, j + dj
                if ii >= n0 or jj >= n1:
                    continue
                la, lb = labels[i, j], labels[ii, jj]
                if la == lb or FAILED in (la, lb):
                    continue
                p = np.add(pm.cell_coordinates(i, j), pm.cell_coordinates(ii, jj)) / 2
                key = tuple(sorted((la, lb)))
                found.setdefault(key, []).append((p, _pair_jump(pm, (i, j), (ii, jj))))
    boundaries = []
    for key in sorted(found):
        pts = np.array([p for p, _ in found[key]])
        jumps = np.array([jv for _, jv in found[key]])
        order = np.lexsort((pts[:, 1], pts[:, 0]))
        pts, jumps = pts[order], jumps[order]
        tag = "first" if np.mean(jumps > jump) > 0.5 else "second"
        boundaries.append(Boundary(key, pts, jumps, tag))
    centers = []
    for i in range(n0 - 1):
        for j in range(n1 - 1):
            win = set(labels[i:i + 2, j:j + 2].ravel())
            if {"N", "S", "A"} <= win:
                c = np.mean([pm.cell_coordinates(a, b) for a in (i, i + 1)
                             for b in (j, j + 1)], axis=0)
                centers.append(c)
    triple = tuple(float(v) for v in np.mean(centers, axis=0)) if centers else None
    return BoundarySet(boundaries, triple, jump)


def _labels_batch(params, pts, settings):
    pts = np.atleast_2d(pts)
    res, _ = dicke_mf.solve_grid(params, pts[:, 0], pts[:, 1], settings=settings)
    if np.any(res.best < 0):
        raise SolverError("no seed converged while bisecting a boundary")
    x = res.x[np.arange(len(pts)), res.best]
    ez, ex, cond, mz = _reduced_ops(x, params)
    labels = [classify(OrderParameters(*v), settings.eps) for v in zip(ez, ex, cond, mz)]
    return np.array(labels), np.stack([ez, ex, cond], axis=1)


def crossing_jumps(params, p1, p2, settings=None, steps=30):
    """Order-parameter jumps across label changes between pairs of (T, H) points.

    Every segment ``p1[k] -> p2[k]`` is bisected ``steps`` times (all segments
    advance together).  Returns ``(points, jumps)`` where ``jumps`` is the
    largest change of (ez, ex, condensate) across the final bracket.
    """
    settings = settings or SolverSettings()
    p1, p2 = np.atleast_2d(np.asarray(p1, float)), np.atleast_2d(np.asarray(p2, float))
    l1, o1 = _labels_batch(params, p1, settings)
    l2, o2 = _labels_batch(params, p2, settings)
    if np.any(l1 == l2):
        raise ValueError("both ends of a segment carry the same label")
    a, b = np.zeros(len(p1)), np.ones(len(p1))
    for _ in range(steps):
        m = 0.5 * (a + b)
        lm, om = _labels_batch(params, p1 + m[:, None] * (p2 - p1), settings)
        left = lm == l1
        a = np.where(left, m, a)
        b = np.where(left, b, m)
        o1 = np.where(left[:, None], om, o1)
        o2 = np.where(left[:, None], o2, om)
    mid = 0.5 * (a + b)
    return p1 + mid[:, None] * (p2 - p1), np.max(np.abs(o1 - o2), axis=1)


def refine_boundary_orders(params, pm, bset, settings=None, steps=30):
    """Re-measure every crossing of ``bset`` by bisection and re-tag the orders.

    Grid-level jumps overstate continuous transitions because order parameters
    rise like a square root; the bisected jump is the intrinsic one.  Reduced
    solver only.
    """
    settings = settings or SolverSettings()
    tg, hg = (pm.t_grid, pm.h_grid) if pm.axes == ("T", "H") else (pm.h_grid, pm.t_grid)
    half = 0.5 * np.array([np.diff(tg).mean(), np.diff(hg).mean()])
    out = []
    for bd in bset.boundaries:
        p1, p2 = bd.points.copy(), bd.points.copy()
        for r, (t, h) in enumerate(bd.points):
            # the pair straddles the axis whose coordinate is off-grid
            k = 1 if np.any(np.isclose(tg, t)) else 0
            p1[r, k] -= half[k]
            p2[r, k] += half[k]
        pts, jumps = crossing_jumps(params, p1, p2, settings, steps)
        tag = "first" if np.mean(jumps > bset.jump_threshold) > 0.5 else "second"
        out.append(Boundary(bd.phases, pts, jumps, tag))
    return BoundarySet(out, bset.triple_point, bset.jump_threshold)


def refine_triple_point(params, pm, factor=4, settings=None, solver="reduced"):
    """Re-sweep a 3x3-cell window around the grid triple point at ``factor``x resolution.

    Returns ``(triple_point, local_map)``; ``triple_point`` is None when the
    coarse map has none or the refined window loses it.
    """
    bs = extract_boundaries(pm)
    if bs.triple_point is None:
        return None, None
    t0, h0 = bs.triple_point
    tg = pm.t_grid if pm.axes == ("T", "H") else pm.h_grid
    hg = pm.h_grid if pm.axes == ("T", "H") else pm.t_grid
    dt, dh = np.diff(tg).mean(), np.diff(hg).mean()
    t_lo, t_hi = max(t0 - 1.5 * dt, tg[0]), min(t0 + 1.5 * dt, tg[-1])
    h_lo, h_hi = max(h0 - 1.5 * dh, hg[0]), min(h0 + 1.5 * dh, hg[-1])
    nt = int(round((t_hi - t_lo) / dt * factor)) + 1
    nh = int(round((h_hi - h_lo) / dh * factor)) + 1
    local = sweep(params, np.linspace(t_lo, t_hi, max(nt, 2)),
                  np.linspace(h_lo, h_hi, max(nh, 2)), solver=solver, settings=settings)
    return extract_boundaries(local).triple_point, local


# -- g_z calibration ---------------------------------------------------------

def _is_normal(params, temperature, b_field, settings):
    best, _ = dicke_mf.solve_point(params, ExternalConditions(temperature, b_field),
                                   settings=settings)
    ez, ex, cond, mz = dicke_mf.order_parameters(best)
    return classify(OrderParameters(ez, ex, cond, mz), settings.eps) == "N"


def critical_field_an(params, temperature=0.5, settings=None, h_max=50.0, tol=1e-4):
    """Lowest field (T) above which the reduced model is in the N phase.

    Found by bisection on the N/ordered label; requires ``g_lande_z``.
    """
    settings = settings or SolverSettings()
    lo, hi = 0.0, 0.5
    while not _is_normal(params, temperature, hi, settings):
        lo, hi = hi, 2 * hi
        if hi > h_max:
            raise ValueError(f"still ordered at {h_max} T")
    if _is_normal(params, temperature, lo, settings):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _is_normal(params, temperature, mid, settings):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass
class Calibration:
    g_lande_z: float
    critical_field: float
    history: list  # (g_z, critical field) per evaluation


def calibrate_gz(params, target_field=1.0, at_temperature=0.5, bracket=(0.5, 20.0),
                 tol=0.01, settings=None):
    """Bisect the Er Landé factor so the A->N critical field equals ``target_field``.

    Raises
    ------
    ValueError
        If the target is not bracketed by ``bracket`` or the critical field is
        not decreasing in ``g_z``.
    """
    settings = settings or SolverSettings()
    history = []

    def hc(gz):
        val = critical_field_an(params.with_(g_lande_z=gz), at_temperature, settings,
                                tol=min(1e-4, tol / 10))
        history.append((gz, val))
        return val

    lo, hi = bracket
    h_lo, h_hi = hc(lo), hc(hi)
    if not (h_lo >= target_field >= h_hi):
        raise ValueError(f"no bracket for g_z in [{lo}, {hi}]: critical fields "
                         f"{h_lo:.4g} T and {h_hi:.4g} T vs target {target_field} T")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        h_mid = hc(mid)
        if not (h_lo + 1e-9 >= h_mid >= h_hi - 1e-9):
            raise ValueError("critical field is not monotone in g_z")
        if abs(h_mid - target_field) < tol / 10:
            lo = hi = mid
            break
        if h_mid > target_field:
            lo, h_lo = mid, h_mid
        else:
            hi, h_hi = mid, h_mid
        if hi - lo < 1e-12:
            break
    gz = 0.5 * (lo + hi)
    final = history[-1][1] if history[-1][0] == gz else hc(gz)
    return Calibration(gz, final, history)


# -- thermodynamics ----------------------------------------------------------

def _branch_state(params, cond, seed_state, settings):
    seeds = {"branch": (seed_state.m_a, seed_state.m_b)}
    best, _ = dicke_mf.solve_point(params, cond, seeds=seeds, settings=settings)
    return best


def equilibrium(params, cond, settings=None):
    return dicke_mf.solve_point(params, cond, settings=settings)[0]


def entropy(params, cond, dT=None, settings=None):
    """Entropy per Er spin (meV/K) from ``-dF/dT`` by central differences.

    Both endpoints are converged from the equilibrium state at ``T`` so they
    stay on the same branch.  The default step is ``1e-3 T``: the entropy of a
    gapped state varies like ``exp(-gap/T)``, so a fixed step is too coarse
    at low temperature.
    """
    settings = settings or SolverSettings()
    if dT is None:
        dT = 1e-3 * cond.temperature
    if not cond.temperature - dT > 0:
        raise ParameterError("dT", "T - dT must be positive")
    centre = equilibrium(params, cond, settings)
    fs = []
    for t in (cond.temperature + dT, cond.temperature - dT):
        c = ExternalConditions(t, cond.b_field, cond.axis)
        st = _branch_state(params, c, centre, settings)
        fs.append(dicke_mf.free_energy(st, params, c, settings.free_energy_prescription))
    return -(fs[0] - fs[1]) / (2 * dT)


def entropy_identity(params, cond, settings=None):
    """Entropy per spin from ``(U - F) / T`` at the equilibrium state."""
    st = equilibrium(params, cond, settings)
    u = dicke_mf.internal_energy(st, params, cond)
    f = dicke_mf.free_energy(st, params, cond)
    return (u - f) / cond.temperature


def state_entropy(params, temperature, b_field, settings=None):
    """Analytic mean-field entropy per spin (meV/K) of the equilibrium state."""
    cond = ExternalConditions(temperature, b_field)
    return dicke_mf.entropy_of_state(equilibrium(params, cond, settings), params, cond)


@dataclass
class MceTrace:
    fields: np.ndarray
    temperatures: np.ndarray
    slope: np.ndarray  # dT/d(mu0 H), K/T
    entropy: float  # conserved entropy per spin (meV/K)


def _solve_adiabat(params, s_target, b, t_guess, settings, t_min=1e-3, t_max=1e3):
    f = lambda t: state_entropy(params, t, b, settings) - s_target
    lo, hi = t_guess / 1.25, t_guess * 1.25
    f_lo, f_hi = f(lo), f(hi)
    while f_lo > 0 and lo > t_min:
        lo, hi, f_hi = lo / 1.5, lo, f_lo
        f_lo = f(lo)
    while f_hi < 0 and hi < t_max:
        lo, f_lo, hi = hi, f_hi, hi * 1.5
        f_hi = f(hi)
    if not (f_lo <= 0 <= f_hi):
        raise ValueError(f"entropy not monotone in T at B={b} T; adiabat not bracketed")
    return brentq(f, lo, hi, xtol=1e-10, rtol=1e-12)


def mce_trace(params, t0, h_start=0.0, h_stop=1.5, dH=5e-3, settings=None):
    """Ideal adiabatic field ramp starting at ``(t0, h_start)``.

    Returns the temperature along the adiabat and
    ``dT/dH = -(dS/dH)_T / (dS/dT)_H`` evaluated by central differences of the
    mean-field entropy.
    """
    settings = settings or SolverSettings()
    if not t0 > 0:
        raise ParameterError("temperature", "temperature must be positive")
    if not dH > 0:
        raise ParameterError("dH", "must be positive")
    n = int(round((h_stop - h_start) / dH)) + 1
    fields = h_start + dH * np.arange(n)
    s_target = state_entropy(params, t0, h_start, settings)
    temps = np.empty(n)
    slope = np.empty(n)
    t = t0
    for k, b in enumerate(fields):
        t = t0 if k == 0 else _solve_adiabat(params, s_target, b, t, settings)
        temps[k] = t
        dt = 1e-3 * t
        hb = 0.5 * dH
        s_t = (state_entropy(params, t + dt, b, settings)
               - state_entropy(params, t - dt, b, settings)) / (2 * dt)
        b_lo = max(b - hb, 0.0)
        s_h = (state_entropy(params, t, b + hb, settings)
               - state_entropy(params, t, b_lo, settings)) / (b + hb - b_lo)
        if not s_t > 0:
            raise ValueError(f"entropy not increasing in T at B={b} T, T={t} K")
        slope[k] = -s_h / s_t
    return MceTrace(fields, temps, slope, s_target)


def local_maxima(x, y, floor=1e-4):
    """Positions of local maxima of ``y`` whose prominence exceeds ``floor``."""
    peaks, _ = find_peaks(np.asarray(y, float), prominence=floor)
    return [float(x[k]) for k in peaks]
