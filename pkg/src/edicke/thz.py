"""THz time-domain transmission analysis.

Time is in ps, frequency in THz (cyclic), thickness in mm and absorption in
1/cm.  Spectra use the ``exp(+i omega t)`` convention,
``E(nu) = sum_k e(t_k) exp(2 pi i nu t_k) dt``, so a sample delayed by ``tau``
has transfer function ``exp(+i omega tau)`` and the extracted phase grows with
the optical thickness.
"""

import re
from dataclasses import dataclass

import numpy as np
from scipy.signal.windows import tukey

from .constants import CONST

C_MM_PER_PS = CONST.c * 1e-9  # mm / ps
MIN_SAMPLES = 64


class ThzError(ValueError):
    """Invalid trace, grid mismatch or failed phase anchoring."""


@dataclass
class FieldTrace:
    t: np.ndarray  # ps
    e: np.ndarray
    label: str = "reference"

    def __post_init__(self):
        self.t = np.asarray(self.t, float)
        self.e = np.asarray(self.e, float)
        if self.t.ndim != 1 or self.t.shape != self.e.shape:
            raise ThzError("time and field columns must be 1-D with equal length")
        if self.t.size < MIN_SAMPLES:
            raise ThzError(f"trace needs at least {MIN_SAMPLES} samples, got {self.t.size}")
        dt = np.diff(self.t)
        if np.any(dt <= 0):
            raise ThzError("time samples must be strictly increasing")
        if np.max(np.abs(dt - dt.mean())) > 1e-9 * abs(dt.mean()):
            raise ThzError("time samples must be uniformly spaced")

    @property
    def dt(self):
        return (self.t[-1] - self.t[0]) / (self.t.size - 1)


@dataclass
class Spectrum:
    freq: np.ndarray  # THz
    values: np.ndarray  # complex, field units * ps
    n_samples: int
    dt: float
    t0: float = 0.0

    @property
    def omega(self):
        return 2 * np.pi * self.freq  # rad / ps


@dataclass
class TransferFunction:
    freq: np.ndarray
    h: np.ndarray
    valid_mask: np.ndarray
    ref_amplitude: np.ndarray


@dataclass
class OpticalConstants:
    freq: np.ndarray
    n: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray  # 1/cm
    thickness: float  # mm
    valid: np.ndarray


def make_window(n, kind="rect", t=None, t_stop=None, alpha=0.25):
    """Taper of length ``n``; samples after ``t_stop`` (ps) are zeroed."""
    if kind in ("rect", "rectangular", None):
        w = np.ones(n)
    elif kind == "tukey":
        w = tukey(n, alpha)
    else:
        raise ThzError(f"unknown window {kind!r}; use 'rect' or 'tukey'")
    if t_stop is not None:
        if t is None:
            raise ThzError("t_stop needs the time axis")
        keep = np.asarray(t) < t_stop
        m = int(keep.sum())
        if m < 2:
            raise ThzError("window ends before the trace starts")
        w = np.zeros(n)
        w[:m] = 1.0 if kind in ("rect", "rectangular", None) else tukey(m, alpha)
    return w


def dft_field(trace, window="rect", t_stop=None, alpha=0.25):
    """Windowed DFT on the non-negative frequency grid ``k / (N dt)``."""
    w = make_window(trace.t.size, window, trace.t, t_stop, alpha)
    dt = trace.dt
    raw = np.conj(np.fft.rfft(trace.e * w)) * dt
    freq = np.fft.rfftfreq(trace.t.size, dt)
    values = raw * np.exp(2j * np.pi * freq * trace.t[0])
    return Spectrum(freq, values, trace.t.size, dt, float(trace.t[0]))


def spectral_energy(spec):
    """Parseval partner of ``sum |e|^2 dt`` for a one-sided spectrum."""
    wts = np.full(spec.freq.size, 2.0)
    wts[0] = 1.0
    if spec.n_samples % 2 == 0:
        wts[-1] = 1.0
    return float(np.sum(wts * np.abs(spec.values) ** 2) / (spec.n_samples * spec.dt))


def inverse_dft(spec):
    """Time trace whose :func:`dft_field` is ``spec`` (the Nyquist bin is made real)."""
    raw = np.conj(spec.values * np.exp(-2j * np.pi * spec.freq * spec.t0)) / spec.dt
    e = np.fft.irfft(raw, n=spec.n_samples)
    t = spec.t0 + spec.dt * np.arange(spec.n_samples)
    return t, e


def transfer_function(sample, reference, snr_floor=1e-3, h_floor=1e-30):
    """Ratio ``E_s / E_r`` with bins masked where the reference is weak.

    Bins with ``|E_r| < snr_floor * max|E_r|``, the DC bin, bins where
    ``|H| < h_floor`` and non-finite bins are invalid; invalid bins carry NaN.
    """
    if sample.freq.shape != reference.freq.shape or not np.allclose(
            sample.freq, reference.freq, rtol=1e-12, atol=0):
        raise ThzError("sample and reference spectra are on different frequency grids")
    ref_amp = np.abs(reference.values)
    valid = ref_amp >= snr_floor * ref_amp.max() if ref_amp.max() > 0 else np.zeros_like(
        ref_amp, bool)
    valid &= sample.freq > 0
    h = np.full(sample.values.shape, np.nan + 0j)
    sr, si = sample.values[valid].real, sample.values[valid].imag
    rr, ri = reference.values[valid].real, reference.values[valid].imag
    # s conj(r) / |r|^2 spelled out in real arithmetic: exactly 1 when s == r,
    # which complex division does not guarantee
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        den = rr * rr + ri * ri
        h[valid] = (sr * rr + si * ri) / den + 1j * ((si * rr - sr * ri) / den)
    valid &= np.isfinite(h) & (np.abs(np.nan_to_num(h)) >= h_floor)
    h[~valid] = np.nan
    return TransferFunction(sample.freq.copy(), h, valid, ref_amp)


def _unwrap_from(phase, start):
    out = phase.copy()
    out[start:] = np.unwrap(phase[start:])
    out[:start + 1] = np.unwrap(phase[:start + 1][::-1])[::-1]
    return out


def unwrapped_phase(tf, anchor_band=None):
    """Absolute phase of ``H`` on the valid bins.

    Unwrapping starts at the valid bin with the strongest reference and runs
    both ways; the 2 pi branch is chosen so the straight-line fit over the
    anchor band (default: valid bins with at least half the peak reference
    amplitude) extrapolates to ``|phase(0)| < pi``.
    """
    idx = np.flatnonzero(tf.valid_mask)
    if idx.size == 0:
        raise ThzError("no valid bins for phase unwrapping")
    f = tf.freq[idx]
    ph = np.angle(tf.h[idx])
    start = int(np.argmax(tf.ref_amplitude[idx]))
    ph = _unwrap_from(ph, start)
    if anchor_band is None:
        band = tf.ref_amplitude[idx] >= 0.5 * tf.ref_amplitude[idx].max()
    else:
        band = (f >= anchor_band[0]) & (f <= anchor_band[1])
    if band.sum() < 2:
        raise ThzError("phase anchor band holds fewer than 2 valid bins")
    slope, icpt = np.polyfit(f[band], ph[band], 1)
    ph -= 2 * np.pi * np.round(icpt / (2 * np.pi))
    out = np.full(tf.freq.shape, np.nan)
    out[idx] = ph
    return out


def extract_constants(tf, thickness, anchor_band=None):
    """Refractive index, extinction and absorption from a transfer function.

    ``n = 1 + c Phi / (omega d)`` and
    ``alpha = -(2/d) ln[(n+1)^2 |H| / (4n)]`` with ``kappa = alpha c / (2 omega)``.
    """
    if not thickness > 0:
        raise ThzError("thickness must be positive")
    phase = unwrapped_phase(tf, anchor_band)
    valid = tf.valid_mask.copy()
    omega = 2 * np.pi * tf.freq  # rad/ps
    n = np.full(tf.freq.shape, np.nan)
    alpha_mm = np.full(tf.freq.shape, np.nan)
    kappa = np.full(tf.freq.shape, np.nan)
    v = valid
    n[v] = 1 + C_MM_PER_PS * phase[v] / (omega[v] * thickness)
    bad = v & ~(n > 0)
    valid &= ~bad
    v = valid
    alpha_mm[v] = -(2 / thickness) * np.log((n[v] + 1) ** 2 * np.abs(tf.h[v]) / (4 * n[v]))
    kappa[v] = alpha_mm[v] * C_MM_PER_PS / (2 * omega[v])
    return OpticalConstants(tf.freq.copy(), n, kappa, alpha_mm * 10.0, thickness, valid)


def forward_transfer(freq, n, kappa, thickness):
    """Transmission ``4n/(n+1)^2 exp(i w d (n-1)/c) exp(-w d kappa / c)``."""
    omega = 2 * np.pi * np.asarray(freq, float)
    n = np.broadcast_to(np.asarray(n, float), omega.shape)
    kappa = np.broadcast_to(np.asarray(kappa, float), omega.shape)
    if np.any(n <= 0):
        raise ThzError("refractive index must be positive")
    ph = omega * thickness / C_MM_PER_PS
    return 4 * n / (n + 1) ** 2 * np.exp(1j * ph * (n - 1)) * np.exp(-ph * kappa)


def synthesize_sample(n, kappa, thickness, reference, echoes=0):
    """Sample spectrum = reference x forward transmission.

    ``n`` and ``kappa`` are arrays on the reference grid or callables of the
    frequency in THz.  ``echoes > 0`` adds that many Fabry-Perot round trips.
    """
    f = reference.freq
    nv = n(f) if callable(n) else n
    kv = kappa(f) if callable(kappa) else kappa
    h = forward_transfer(f, nv, kv, thickness)
    if echoes:
        nc = np.broadcast_to(nv, f.shape) + 1j * np.broadcast_to(kv, f.shape)
        r2 = ((nc - 1) / (nc + 1)) ** 2
        trip = np.exp(2j * 2 * np.pi * f * nc * thickness / C_MM_PER_PS)
        h = h * sum((r2 * trip) ** k for k in range(echoes + 1))
    return Spectrum(f.copy(), reference.values * h, reference.n_samples, reference.dt,
                    reference.t0)


def reference_pulse(n_samples=1024, dt=0.05, t0=0.0, center=5.0, width=0.25):
    """Single-cycle THz pulse (derivative of a Gaussian), peak normalized to 1."""
    t = t0 + dt * np.arange(n_samples)
    u = (t - center) / width
    e = -u * np.exp(-u ** 2 / 2)
    return FieldTrace(t, e / np.abs(e).max(), "reference")


def synthesize_traces(n, kappa, thickness, reference=None, echoes=0, noise_db=None,
                      rng=None):
    """Reference and sample time traces, optionally with additive white noise.

    ``noise_db`` is the peak-to-noise ratio in dB (60 dB means a noise
    standard deviation of 1e-3 of the peak).
    """
    ref = reference or reference_pulse()
    spec = dft_field(ref)
    sam = synthesize_sample(n, kappa, thickness, spec, echoes)
    t, e = inverse_dft(sam)
    e_ref = ref.e.copy()
    if noise_db is not None:
        rng = rng if rng is not None else np.random.default_rng(0)
        sigma = np.abs(ref.e).max() * 10 ** (-noise_db / 20)
        e_ref = e_ref + rng.normal(0, sigma, e_ref.size)
        e = e + rng.normal(0, sigma, e.size)
    return FieldTrace(ref.t.copy(), e_ref, "reference"), FieldTrace(t, e, "sample")


def analyze(reference, sample, thickness, snr_floor=1e-3, window="rect",
            echo_window=False, anchor_band=None, alpha=0.25):
    """Full pipeline from two traces to optical constants.

    With ``echo_window`` the sample window ends before the first Fabry-Perot
    echo ``t_peak + 2 n d / c``; ``n`` comes from the pulse delay, then is
    refined once from the extracted median index.
    """
    if not echo_window:
        tf = transfer_function(dft_field(sample, window, alpha=alpha),
                               dft_field(reference, window, alpha=alpha), snr_floor)
        return extract_constants(tf, thickness, anchor_band)
    t_ref = reference.t[np.argmax(np.abs(reference.e))]
    t_sam = sample.t[np.argmax(np.abs(sample.e))]
    n_est = max(1 + C_MM_PER_PS * (t_sam - t_ref) / thickness, 1.0)
    oc = None
    for _ in range(2):
        # stop halfway between the main pulse and its first echo
        t_stop = t_sam + n_est * thickness / C_MM_PER_PS
        tf = transfer_function(dft_field(sample, window, t_stop=t_stop, alpha=alpha),
                               dft_field(reference, window, t_stop=t_stop, alpha=alpha),
                               snr_floor)
        oc = extract_constants(tf, thickness, anchor_band)
        if np.any(oc.valid):
            n_est = float(np.median(oc.n[oc.valid]))
    return oc


def read_trace(path, label="reference"):
    """Two-column delimited text (time in ps, field).

    Lines starting with ``#`` and a leading column-name line are skipped.
    Commas, tabs and spaces are accepted as delimiters.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    except OSError as exc:
        raise ThzError(f"{path}: {exc.strerror}") from exc
    if lines and not re.match(r"\s*[-+.\d]", lines[0]):
        lines = lines[1:]
    try:
        data = np.loadtxt([ln.replace(",", " ") for ln in lines], ndmin=2)
    except ValueError as exc:
        raise ThzError(f"{path}: {exc}") from exc
    if data.size == 0 or data.shape[1] < 2:
        raise ThzError(f"{path}: expected two columns (time_ps, field)")
    try:
        return FieldTrace(data[:, 0], data[:, 1], label)
    except ThzError as exc:
        raise ThzError(f"{path}: {exc}") from exc
