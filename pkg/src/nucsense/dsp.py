"""Acquisition and analysis pipeline for stroboscopic magnetometer traces.

Raw heterodyned windows -> per-window carrier magnitude -> slow/oscillatory
decomposition -> harmonic spectrum, short-time tracking and peak fits.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal
from scipy.optimize import least_squares

from .errors import DomainError, FitError, RecordFormatError

FWHM_PER_SIGMA = 2 * math.sqrt(2 * math.log(2))
RECORD_MAGIC = b"NUCRAW01"


# ------------------------------------------------------------------ types

@dataclass
class MagnetometerTrace:
    """Per-pulse transverse magnitudes S_j sampled every ``dt`` = tau."""

    s: np.ndarray
    dt: float
    s_d: np.ndarray | None = None
    s_o: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)

    def __len__(self):
        return len(self.s)

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(1, len(self.s) + 1)

    @property
    def decomposition(self):
        return None if self.s_d is None else (self.s_d, self.s_o)


@dataclass(frozen=True)
class DecayModel:
    """Stretched-exponential envelope exp(-(t/t2_prime)^stretch)."""

    t2_prime: float
    stretch: float = 0.5
    t2_star: float | None = None

    def __post_init__(self):
        if not self.t2_prime > 0:
            raise ValueError("t2_prime must be positive")
        if not 0 < self.stretch <= 2:
            raise ValueError("stretch must lie in (0, 2]")

    def envelope(self, t):
        return np.exp(-(np.asarray(t, dtype=float) / self.t2_prime) ** self.stretch)


@dataclass
class RawRecord:
    """Heterodyned induction windows, one per pulse.

    In full mode ``windows`` holds the sampled real windows. In compact mode
    it is None and ``amplitudes`` holds the complex carrier amplitude that a
    rectangular DFT of each window would return.
    """

    windows: np.ndarray | None
    sample_rate: float
    f_het: float
    window_len: float
    window_period: float
    amplitudes: np.ndarray | None = None

    @property
    def n_windows(self) -> int:
        return len(self.windows) if self.windows is not None else len(self.amplitudes)

    @property
    def samples_per_window(self) -> int:
        return int(round(self.window_len * self.sample_rate))

    def save(self, path):
        if self.windows is None:
            raise ValueError("only full-mode records can be written")
        header = {"sample_rate": self.sample_rate, "f_het": self.f_het, "tau": self.window_period,
                  "t_acq": self.window_len, "n_windows": self.n_windows,
                  "samples_per_window": self.samples_per_window, "dtype": "float32-le"}
        hb = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(RECORD_MAGIC)
            fh.write(struct.pack("<I", len(hb)))
            fh.write(hb)
            fh.write(np.ascontiguousarray(self.windows, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "RawRecord":
        data = Path(path).read_bytes()
        if len(data) < len(RECORD_MAGIC) + 4:
            raise RecordFormatError("file too short for header", len(data))
        if data[:len(RECORD_MAGIC)] != RECORD_MAGIC:
            raise RecordFormatError("bad magic bytes", 0)
        pos = len(RECORD_MAGIC)
        (hlen,) = struct.unpack("<I", data[pos:pos + 4])
        pos += 4
        if pos + hlen > len(data):
            raise RecordFormatError(f"header length {hlen} runs past end of file", len(data))
        try:
            header = json.loads(data[pos:pos + hlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise RecordFormatError(f"unparseable JSON header: {exc}", pos) from exc
        pos += hlen
        missing = [k for k in ("sample_rate", "f_het", "tau", "t_acq", "n_windows") if k not in header]
        if missing:
            raise RecordFormatError(f"header missing fields {missing}", pos)
        if header.get("dtype", "float32-le") != "float32-le":
            raise RecordFormatError(f"unsupported dtype {header['dtype']!r}", pos)
        n_win = int(header["n_windows"])
        n_samp = int(header.get("samples_per_window", round(header["t_acq"] * header["sample_rate"])))
        need = n_win * n_samp * 4
        have = len(data) - pos
        if have != need:
            bad = pos + min(have, need) - (have % 4 if have < need else 0)
            raise RecordFormatError(
                f"payload holds {have} bytes but header implies {need} "
                f"({n_win} windows x {n_samp} samples x 4 bytes)", bad)
        win = np.frombuffer(data, dtype="<f4", count=n_win * n_samp, offset=pos)
        return cls(win.reshape(n_win, n_samp).astype(float), float(header["sample_rate"]),
                   float(header["f_het"]), float(header["t_acq"]), float(header["tau"]))


@dataclass
class Peak:
    freq: float
    mag: float
    index: int


@dataclass
class Spectrum:
    freqs: np.ndarray
    mags: np.ndarray
    resolution: float
    bandwidth: float
    n_input: int
    n_fft: int = 0
    peaks: list = field(default_factory=list)
    taper: str = "rect"

    @property
    def bin_spacing(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    def total_power(self) -> float:
        """Sum of squared input samples implied by the spectrum (Parseval)."""
        if self.taper != "rect":
            raise DomainError("Parseval total applies to untapered spectra only")
        m = self.mags
        even = self.n_fft % 2 == 0
        inner = m[1:-1] if even else m[1:]
        edge = m[-1] ** 2 if even else 0.0
        return self.n_input ** 2 / self.n_fft * (m[0] ** 2 + 2 * np.sum(inner ** 2) + edge)

    def top(self, k: int = 2) -> list:
        return self.peaks[:k]

    def band_max(self, lo: float, hi: float) -> Peak:
        sel = np.flatnonzero((self.freqs >= lo) & (self.freqs <= hi))
        if sel.size == 0:
            raise DomainError(f"band [{lo}, {hi}] Hz contains no bins")
        k = int(sel[np.argmax(self.mags[sel])])
        return Peak(*_parabolic(self.freqs, self.mags, k), k)


@dataclass
class PeakFit:
    center: float
    fwhm: float
    amplitude: float
    residual: float
    baseline: float = 0.0
    shape: str = "gaussian"
    nfev: int = 0


@dataclass
class TrackPoint:
    t_center: float
    freq: float
    mag: float
    low_confidence: bool = False
    fit: PeakFit | None = None


# ------------------------------------------------------------------ synthesis / extraction

def _amplitude_phase(trace_source):
    """Transverse magnitude and phase per pulse from a trace-like input."""
    from .bloch import BlochTrajectory
    if isinstance(trace_source, MagnetometerTrace):
        return trace_source.s, np.zeros(len(trace_source.s))
    if isinstance(trace_source, BlochTrajectory):
        m = trace_source.strobe_m
        return np.hypot(m[:, 0], m[:, 1]), np.arctan2(m[:, 1], m[:, 0])
    arr = np.asarray(trace_source)
    if np.iscomplexobj(arr):
        return np.abs(arr), np.angle(arr)
    if arr.ndim == 1:
        return arr.astype(float), np.zeros(len(arr))
    return np.hypot(arr[:, 0], arr[:, 1]), np.arctan2(arr[:, 1], arr[:, 0])


def synthesize_raw(trace_source, train, f_het: float = 20e6, sample_rate: float = 100e6,
                   decay: DecayModel | None = None, noise_rms: float = 0.0, seed=None, *,
                   mode: str = "full", t_acq: float | None = None) -> RawRecord:
    """Generate the heterodyned record an instrument would capture.

    Window j starts right after pulse j (t_j = j*tau) and holds
    A_j*cos(2*pi*f_het*t + phi_j)*envelope(t_j) + noise, with t absolute.
    Compact mode stores the per-window complex carrier amplitude instead, with
    noise of matching bin statistics.
    """
    if sample_rate < 4 * f_het:
        raise DomainError(f"sample_rate {sample_rate:g} Hz < 4 f_het = {4 * f_het:g} Hz")
    t_acq = train.t_acq if t_acq is None else t_acq
    if not t_acq > 0:
        raise DomainError("acquisition window t_acq must be positive")
    amp, ph = _amplitude_phase(trace_source)
    n_win = len(amp)
    tj = train.tau * np.arange(1, n_win + 1)
    env = decay.envelope(tj) if decay is not None else np.ones(n_win)
    rng = np.random.default_rng(seed)
    n_samp = int(round(t_acq * sample_rate))
    if mode == "compact":
        k = round(f_het * n_samp / sample_rate)
        f_bin = k * sample_rate / n_samp
        z = amp * env * np.exp(1j * (ph + 2 * np.pi * f_bin * tj))
        if noise_rms > 0:
            # per-quadrature spread of 2*X_k/n for real white noise of rms noise_rms
            sd = noise_rms * math.sqrt(2.0 / n_samp)
            z = z + sd * (rng.standard_normal(n_win) + 1j * rng.standard_normal(n_win))
        return RawRecord(None, sample_rate, f_het, t_acq, train.tau, z)
    if mode != "full":
        raise ValueError(f"unknown mode {mode!r}")
    tl = np.arange(n_samp) / sample_rate
    arg = 2 * np.pi * f_het * (tj[:, None] + tl[None, :]) + ph[:, None]
    win = (amp * env)[:, None] * np.cos(arg)
    if noise_rms > 0:
        win = win + noise_rms * rng.standard_normal(win.shape)
    return RawRecord(win, sample_rate, f_het, t_acq, train.tau)


def extract_trace(raw: RawRecord, taper: str = "rect") -> MagnetometerTrace:
    """Magnitude of the DFT bin nearest f_het in each window.

    The effective bandpass is one bin, sample_rate/n = 1/t_acq, reported in
    ``meta["bandpass_hz"]``. ``taper="hann"`` trades that for lower leakage.
    """
    if raw.n_windows == 0:
        raise DomainError("record has no windows")
    if not 0 < raw.f_het < raw.sample_rate / 2:
        raise DomainError(f"f_het = {raw.f_het:g} Hz outside (0, {raw.sample_rate / 2:g}) Hz")
    n = raw.samples_per_window
    bandpass = raw.sample_rate / n
    if raw.windows is None:
        s = np.abs(raw.amplitudes)
    else:
        k = int(round(raw.f_het * n / raw.sample_rate))
        w = np.hanning(n) if taper == "hann" else np.ones(n)
        kern = w * np.exp(-2j * np.pi * k * np.arange(n) / n)
        s = 2 * np.abs(raw.windows @ kern) / w.sum()
    return MagnetometerTrace(s, raw.window_period, meta={"bandpass_hz": bandpass})


def dirichlet_leakage(offset_bins: float, n: int) -> float:
    """Rectangular-window response at ``offset_bins`` from a DFT bin."""
    x = float(offset_bins)
    if x == 0:
        return 1.0
    return abs(math.sin(math.pi * x) / (n * math.sin(math.pi * x / n)))


# ------------------------------------------------------------------ decomposition

def moving_average_points(window: float, tau: float) -> int:
    n = int(round(window / tau))
    return n if n % 2 else n + 1


def lowpass_cutoff(window: float) -> float:
    """Cutoff quoted for a moving average of duration ``window``: 1/window."""
    return 1.0 / window


def centered_moving_average(s: np.ndarray, n: int) -> np.ndarray:
    """Centered mean over n (odd) points; the window shrinks symmetrically at the edges."""
    s = np.asarray(s, dtype=float)
    N = len(s)
    h = n // 2
    i = np.arange(N)
    hi = np.minimum(np.minimum(h, i), N - 1 - i)
    # summing offsets from the first sample keeps a constant input exact
    ref = s[0] if N else 0.0
    c = np.concatenate([[0.0], np.cumsum(s - ref)])
    return ref + (c[i + hi + 1] - c[i - hi]) / (2 * hi + 1)


def decompose(trace: MagnetometerTrace, window: float = 0.073):
    """Split S into a slow part S_d (moving average) and S_o = S - S_d.

    Whenever S_d lies within a factor two of S (always the case for the
    positive, weakly modulated traces produced here) the subtraction is exact
    and S_d + S_o reproduces S bit for bit.
    """
    if window < 3 * trace.dt:
        raise DomainError("decomposition window must span at least 3 pulses")
    n = moving_average_points(window, trace.dt)
    s_d = centered_moving_average(trace.s, n)
    s_o = trace.s - s_d
    trace.s_d, trace.s_o = s_d, s_o
    trace.meta["lowpass_cutoff_hz"] = lowpass_cutoff(window)
    trace.meta["moving_average_points"] = n
    return s_d, s_o


# ------------------------------------------------------------------ spectra

def alias_map(f_true: float, bandwidth: float) -> float:
    """Fold a frequency into [0, bandwidth] by reflection at multiples of it."""
    if not f_true > 0:
        raise DomainError("f_true must be positive")
    r = math.fmod(f_true, 2 * bandwidth)
    return r if r <= bandwidth else 2 * bandwidth - r


def _parabolic(freqs, mags, k):
    if 0 < k < len(mags) - 1:
        a, b, c = mags[k - 1], mags[k], mags[k + 1]
        den = a - 2 * b + c
        d = 0.5 * (a - c) / den if den != 0 else 0.0
        step = freqs[1] - freqs[0]
        return float(freqs[k] + d * step), float(b - 0.25 * (a - c) * d)
    return float(freqs[k]), float(mags[k])


def find_peaks(freqs, mags, max_peaks: int = 64, lo: float | None = None, hi: float | None = None,
               min_separation: int = 1):
    """Local maxima ranked by height; within ``min_separation`` bins of a
    higher peak (e.g. window sidelobes in a padded spectrum) only the higher
    one is kept."""
    sel = np.ones(len(mags), dtype=bool)
    if lo is not None:
        sel &= freqs >= lo
    if hi is not None:
        sel &= freqs <= hi
    dist = max(1, int(min_separation))
    idx, _ = signal.find_peaks(np.where(sel, mags, -np.inf), distance=dist) if dist > 1 else (
        np.flatnonzero((mags[1:-1] > mags[:-2]) & (mags[1:-1] >= mags[2:])) + 1, None)
    idx = idx[sel[idx]]
    idx = idx[np.argsort(mags[idx])[::-1][:max_peaks]]
    return [Peak(*_parabolic(freqs, mags, int(k)), int(k)) for k in idx]


def harmonic_spectrum(s_o, tau: float, *, pad: int = 1, max_peaks: int = 64,
                      taper: str = "rect") -> Spectrum:
    """Magnitude spectrum on [0, 1/(2 tau)] with ranked peaks.

    Untapered, mags = |rfft(s_o)|/N. With ``taper="hann"`` the record is
    Hann-weighted and scaled by the window sum, so a line keeps its height
    while far sidelobes drop below -31 dB. ``pad`` zero-pads to pad*N points
    for finer bin spacing; the resolution stays 1/(N tau).
    """
    x = np.asarray(s_o, dtype=float)
    n = len(x)
    if n < 16:
        raise DomainError("need at least 16 samples")
    if taper not in ("rect", "hann"):
        raise ValueError(f"unknown taper {taper!r}")
    n_fft = int(pad) * n
    if taper == "hann":
        w = np.hanning(n)
        mags = np.abs(np.fft.rfft(x * w, n_fft)) / w.sum()
    else:
        mags = np.abs(np.fft.rfft(x, n_fft)) / n
    freqs = np.fft.rfftfreq(n_fft, tau)
    spec = Spectrum(freqs, mags, 1.0 / (n * tau), 1.0 / (2 * tau), n, n_fft, taper=taper)
    spec.peaks = find_peaks(freqs, mags, max_peaks, min_separation=2 * int(pad))
    return spec


def average_spectra(series, tau: float, mode: str = "coherent", pad: int = 1,
                    taper: str = "rect") -> Spectrum:
    """Average replicate S_o records: coherently (mean series) or by magnitude."""
    series = [np.asarray(s, float) for s in series]
    if mode == "coherent":
        return harmonic_spectrum(np.mean(series, axis=0), tau, pad=pad, taper=taper)
    if mode != "magnitude":
        raise ValueError(f"unknown averaging mode {mode!r}")
    specs = [harmonic_spectrum(s, tau, pad=pad, taper=taper) for s in series]
    out = specs[0]
    out.mags = np.mean([s.mags for s in specs], axis=0)
    out.peaks = find_peaks(out.freqs, out.mags, min_separation=2 * int(pad))
    return out


# ------------------------------------------------------------------ fitting

def gaussian(f, amp, center, sigma, base=0.0):
    return amp * np.exp(-0.5 * ((f - center) / sigma) ** 2) + base


def lorentzian(f, amp, center, hwhm, base=0.0):
    return amp * hwhm ** 2 / ((f - center) ** 2 + hwhm ** 2) + base


def fit_peak(freqs, mags, shape: str = "gaussian", *, baseline: bool = False,
             max_iter: int = 200, rtol: float = 1e-9) -> PeakFit:
    """Damped least-squares (Levenberg-Marquardt) fit of a single peak.

    Iteration stops when the relative parameter change drops below ``rtol``;
    more than ``max_iter`` iterations raises FitError.
    """
    f = np.asarray(freqs, dtype=float)
    y = np.asarray(mags, dtype=float)
    shape = shape.lower()
    if shape not in ("gaussian", "lorentzian"):
        raise ValueError(f"unknown shape {shape!r}")
    k = int(np.argmax(y))
    if k == 0 or k == len(y) - 1:
        raise ValueError("segment has no interior maximum")
    scale = float(f[-1] - f[0])
    f0 = float(f[k])
    u = (f - f0) / scale
    amp0 = float(y[k])
    above = np.flatnonzero(y >= 0.5 * amp0)
    width = max((f[above[-1]] - f[above[0]]) / scale, 2 * abs(u[1] - u[0]))
    w0 = width / FWHM_PER_SIGMA if shape == "gaussian" else width / 2
    model = gaussian if shape == "gaussian" else lorentzian
    p0 = [amp0, 0.0, w0] + ([float(np.min(y))] if baseline else [])

    def resid(p):
        return model(u, *p) - y

    n_par = len(p0)
    try:
        res = least_squares(resid, p0, method="lm", xtol=rtol, ftol=1e-15, gtol=1e-15,
                            max_nfev=max_iter * (n_par + 1))
    except Exception as exc:  # scipy raises ValueError on degenerate input
        raise FitError(f"{shape} fit failed: {exc}") from exc
    if res.status <= 0 or not np.all(np.isfinite(res.x)):
        raise FitError(f"{shape} fit did not converge after {res.nfev} evaluations: {res.message}")
    amp, c, w = res.x[:3]
    w = abs(w) * scale
    fwhm = FWHM_PER_SIGMA * w if shape == "gaussian" else 2 * w
    return PeakFit(center=f0 + c * scale, fwhm=fwhm, amplitude=float(amp),
                   residual=float(np.sqrt(np.mean(res.fun ** 2))),
                   baseline=float(res.x[3]) if baseline else 0.0, shape=shape, nfev=int(res.nfev))


def fit_stretched_decay(trace: MagnetometerTrace, stretch: float = 0.5):
    """Fit A*exp(-(t/T2')^stretch) to a trace; returns (A, T2')."""
    t, s = trace.t, trace.s

    def resid(p):
        return p[0] * np.exp(-(t / p[1]) ** stretch) - s

    t_guess = float(t[np.argmin(np.abs(s - s[0] / math.e))]) or t[-1]
    res = least_squares(resid, [s[0], t_guess], bounds=([0, 1e-12], [np.inf, np.inf]),
                        xtol=1e-12, ftol=1e-12)
    if not res.success:
        raise FitError(f"decay fit failed: {res.message}")
    return float(res.x[0]), float(res.x[1])


# ------------------------------------------------------------------ tracking

def stft_track(s_o, tau: float, window: float, hop: float, *, harmonic: int = 1,
               band: tuple | None = None, pad: int = 4, suppress_stationary: bool = False,
               lorentzian_fit: bool = False, min_cycles: float = 2.0) -> list:
    """Short-time spectral peak tracking.

    Each hop takes a Hann-windowed, zero-padded spectrum and reports the
    parabolic-interpolated maximum inside ``band`` (Hz, applied to the line
    before division by ``harmonic``). With ``suppress_stationary`` the
    per-bin median over all hops is subtracted first, removing lines that do
    not move. Entries with fewer than ``min_cycles`` periods in the window
    are flagged low-confidence.
    """
    if window < 10 * tau:
        raise DomainError("STFT window must span at least 10 samples")
    x = np.asarray(s_o, dtype=float)
    n_win = int(round(window / tau))
    n_hop = max(1, int(round(hop / tau)))
    if n_win > len(x):
        raise DomainError("STFT window longer than the record")
    frames = sliding_window_view(x, n_win)[::n_hop]
    w = np.hanning(n_win)
    n_fft = pad * n_win
    spec = np.abs(np.fft.rfft((frames - frames.mean(axis=1, keepdims=True)) * w, n_fft, axis=1))
    spec *= 2 / w.sum()
    freqs = np.fft.rfftfreq(n_fft, tau)
    work = spec - np.median(spec, axis=0) if suppress_stationary else spec
    sel = np.ones(len(freqs), dtype=bool)
    if band is not None:
        sel = (freqs >= band[0]) & (freqs <= band[1])
    idx_band = np.flatnonzero(sel)
    out = []
    for i, row in enumerate(work):
        k = int(idx_band[np.argmax(row[idx_band])])
        f_pk, mag = _parabolic(freqs, row, k)
        fit = None
        if lorentzian_fit and 3 <= k < len(freqs) - 3:
            seg = slice(k - 3, k + 4)
            try:
                fit = fit_peak(freqs[seg], spec[i, seg], "lorentzian")
                if abs(fit.center - f_pk) < 2 * (freqs[1] - freqs[0]):
                    f_pk = fit.center
            except (FitError, ValueError):
                fit = None
        f_line = f_pk / harmonic
        t_c = (i * n_hop + 0.5 * n_win) * tau
        low = f_line <= 0 or window * f_line < min_cycles
        out.append(TrackPoint(t_c, f_line, float(spec[i, k]), low, fit))
    return out
