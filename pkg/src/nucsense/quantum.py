"""Exact propagation of the pulsed spin-lock on small dipolar networks.

The field is piecewise constant between switching events (pulses and
square-wave sign flips). Because the secular dipolar Hamiltonian commutes
with total I_z, one eigenbasis diagonalizes every free-evolution generator
k_dd*H_dd + k_z*gamma_n*B*I_z, whatever the field level. Free intervals are
therefore applied as elementwise phases in that basis and pulses as a fixed
dense unitary.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import expm

from .core import (DriveField, PulseTrain, SpinSystem, collective_operator, dipolar_hamiltonian,
                   random_network, resonance_frequency, square_start_sign, waveform_integral)
from .dsp import MagnetometerTrace, fit_peak
from .errors import DimensionError, FitError, IntegrityError

COALESCE_TOL = 1e-12
UNITARY_TOL = 1e-8


@dataclass(frozen=True)
class SimConfig:
    """Engine settings.

    k_dd scales the dipolar term. With ``normalize_dd`` the Hamiltonian is
    Frobenius-normalized first, so k_dd is its norm in Hz; otherwise k_dd
    multiplies the physical couplings. k_z multiplies gamma_n*B(t)*I_z.
    """

    k_dd: float = 0.0
    k_z: float = 1.0
    n_configs: int = 1
    seed: int = 0
    normalize_dd: bool = False
    mode: str = "delta"
    subdivide: int = 32

    def __post_init__(self):
        if self.k_dd < 0 or self.k_z < 0:
            raise ValueError("k_dd and k_z must be non-negative")
        if self.n_configs < 1:
            raise ValueError("n_configs must be >= 1")
        if self.mode not in ("delta", "finite"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.subdivide < 1:
            raise ValueError("subdivide must be >= 1")


@dataclass
class SwitchingSchedule:
    """Ordered switching events and the field level on each interval.

    Interval j spans (times[j-1], times[j]] with times[-1] = 0 implied.
    ``signs`` are relative to the first interval (signs[0] = +1) and
    ``levels`` hold the absolute field in tesla. ``rabi`` marks intervals
    inside a finite pulse.
    """

    times: np.ndarray
    kinds: list
    levels: np.ndarray
    signs: np.ndarray
    rabi: np.ndarray
    tau: float
    theta: float
    rabi_hz: float = math.inf

    @property
    def intervals(self) -> np.ndarray:
        return np.diff(np.concatenate([[0.0], self.times]))

    @property
    def finite(self) -> bool:
        return math.isfinite(self.rabi_hz)

    @property
    def n_pulses(self) -> int:
        return sum(k in ("pulse", "both") for k in self.kinds)


def _square_flip_times(field: DriveField, duration: float) -> np.ndarray:
    w = 2 * math.pi * field.frequency
    k0 = math.ceil((field.phase - math.pi / 2) / math.pi)
    k1 = math.floor((w * duration + field.phase - math.pi / 2) / math.pi)
    ks = np.arange(k0, k1 + 1)
    t = (math.pi / 2 + ks * math.pi - field.phase) / w
    return t[(t > COALESCE_TOL) & (t < duration - COALESCE_TOL)]


def build_schedule(train: PulseTrain, field: DriveField, duration: float | None = None, *,
                   subdivide: int = 32, finite: bool = False) -> SwitchingSchedule:
    """Merge pulse instants and drive switching instants into one schedule.

    Square and DC drives are exactly piecewise constant. Sine and chirp
    drives are approximated by ``subdivide`` segments per pulse interval,
    each carrying the mean field over the segment.
    """
    duration = train.duration if duration is None else float(duration)
    n_p = int(round(duration / train.tau))
    pulse_t = train.tau * np.arange(1, n_p + 1)
    finite = finite and train.t_p > 0
    ts = [pulse_t]
    ks = [np.full(n_p, "pulse", dtype=object)]
    if finite:
        gate = pulse_t - train.t_p
        gate = gate[gate > COALESCE_TOL]
        ts.append(gate)
        ks.append(np.full(len(gate), "gate", dtype=object))
    if field.kind == "square" and field.amplitude > 0:
        flips = _square_flip_times(field, duration)
        ts.append(flips)
        ks.append(np.full(len(flips), "flip", dtype=object))
    elif field.kind in ("sine", "chirp") and field.amplitude > 0:
        idx = np.arange(1, n_p * subdivide)
        seg = idx[idx % subdivide != 0] * (train.tau / subdivide)
        if finite:
            # keep segment boundaries out of the pulse windows
            seg = seg[np.mod(seg, train.tau) < train.tau - train.t_p]
        ts.append(seg)
        ks.append(np.full(len(seg), "seg", dtype=object))
    t_all = np.concatenate(ts)
    k_all = np.concatenate(ks)
    order = np.argsort(t_all, kind="stable")
    t_all, k_all = t_all[order], k_all[order]

    times, kinds = [], []
    for t, k in zip(t_all, k_all):
        if times and t - times[-1] < COALESCE_TOL:
            kinds[-1].add(k)
        else:
            times.append(float(t))
            kinds.append({k})
    labels = []
    for group in kinds:
        if "pulse" in group:
            labels.append("both" if "flip" in group else "pulse")
        elif "flip" in group:
            labels.append("flip")
        else:
            labels.append(next(iter(group)))
    times = np.array(times)
    starts = np.concatenate([[0.0], times[:-1]])

    if field.amplitude == 0 or field.kind == "dc":
        base = field.amplitude if field.kind == "dc" else 0.0
        levels = np.full(len(times), base + field.bias)
        signs = np.ones(len(times))
    elif field.kind == "square":
        sgn0 = square_start_sign(field)
        flips = np.cumsum([k in ("flip", "both") for k in labels])
        signs = np.concatenate([[1.0], (-1.0) ** flips[:-1]])
        levels = field.bias + field.amplitude * sgn0 * signs
    else:
        levels = waveform_integral(field, starts, times) / (times - starts)
        signs = np.ones(len(times))
    if finite:
        mid = np.mod(0.5 * (starts + times), train.tau)
        rabi = mid > train.tau - train.t_p
    else:
        rabi = np.zeros(len(times), dtype=bool)
    return SwitchingSchedule(times, labels, np.asarray(levels, float), np.asarray(signs, float),
                             rabi, train.tau, train.theta, train.rabi_hz if finite else math.inf)


class _Engine:
    """Precomputed operators for one spin system."""

    def __init__(self, sys: SpinSystem, cfg: SimConfig, theta: float):
        if sys.n_spins > 10:
            raise DimensionError("more than 10 spins")
        self.sys = sys
        self.ix = collective_operator(sys, "x")
        self.iy = collective_operator(sys, "y")
        self.iz = collective_operator(sys, "z")
        if sys.n_spins >= 2 and cfg.k_dd > 0:
            hdd = dipolar_hamiltonian(sys)
            if cfg.normalize_dd:
                nrm = np.linalg.norm(hdd)
                hdd = hdd / nrm if nrm > 0 else hdd
            hdd = cfg.k_dd * hdd
        else:
            hdd = np.zeros((sys.dim, sys.dim), dtype=complex)
        self.hdd = hdd
        self.k_z = cfg.k_z
        # simultaneous eigenbasis of H_dd and I_z: diagonalize H_dd per I_z sector
        mz = np.real(np.diag(self.iz))
        vecs = np.zeros((sys.dim, sys.dim), dtype=complex)
        e_dd = np.zeros(sys.dim)
        col = 0
        for val in np.unique(mz):
            idx = np.flatnonzero(np.isclose(mz, val))
            w, v = np.linalg.eigh(hdd[np.ix_(idx, idx)])
            e_dd[col:col + len(idx)] = w
            vecs[idx, col:col + len(idx)] = v
            col += len(idx)
        self.V = vecs
        self.e_dd = e_dd
        self.e_z = np.real(np.einsum("ia,ij,ja->a", vecs.conj(), self.iz, vecs))
        vh = vecs.conj().T
        self.ix_b = vh @ self.ix @ vecs
        self.iy_b = vh @ self.iy @ vecs
        self.iz_b = vh @ self.iz @ vecs
        pulse = expm(-1j * theta * self.ix)
        self.pulse_b = vh @ pulse @ vecs
        err = np.linalg.norm(self.pulse_b.conj().T @ self.pulse_b - np.eye(sys.dim))
        if err > UNITARY_TOL:
            raise IntegrityError(f"pulse propagator non-unitary: {err:.2e}")
        self._rabi_cache = {}

    def free_phases(self, level_hz: float, dt: float) -> np.ndarray:
        e = self.e_dd + self.k_z * level_hz * self.e_z
        return np.exp(-2j * math.pi * e * dt)

    def rabi_unitary(self, rabi_hz: float, level_hz: float, dt: float) -> np.ndarray:
        key = (level_hz, dt)
        u = self._rabi_cache.get(key)
        if u is None:
            h = self.hdd + self.k_z * level_hz * self.iz + rabi_hz * self.ix
            w, v = np.linalg.eigh(h)
            u = (v * np.exp(-2j * math.pi * w * dt)) @ v.conj().T
            u = self.V.conj().T @ u @ self.V
            if len(self._rabi_cache) < 4096:
                self._rabi_cache[key] = u
        return u


def run_pulsed_spinlock(sys: SpinSystem, sched: SwitchingSchedule, cfg: SimConfig | None = None, *,
                        normalize: bool = True, components: bool = False):
    """Propagate rho(0) = I_x through the schedule and record S after each pulse.

    S_j = sqrt(<I_x>^2 + <I_y>^2) relative to <I_x>(0) (single spin: |m_perp|),
    divided by S_1 when ``normalize``. With ``components`` the normalized
    expectation values (<I_x>, <I_y>, <I_z>) are also returned.
    """
    cfg = cfg or SimConfig()
    eng = _Engine(sys, cfg, sched.theta)
    gamma = sys.gamma_n
    vh = eng.V.conj().T
    rho = vh @ eng.ix @ eng.V
    ixt, iyt, izt = eng.ix_b.T, eng.iy_b.T, eng.iz_b.T
    norm0 = float(np.sum(ixt * rho).real)
    purity0 = np.linalg.norm(rho)
    pb, pbh = eng.pulse_b, eng.pulse_b.conj().T
    dts = sched.intervals
    out = []
    for j, kind in enumerate(sched.kinds):
        dt = dts[j]
        lvl = gamma * sched.levels[j]
        if sched.rabi[j]:
            u = eng.rabi_unitary(sched.rabi_hz, lvl, dt)
            rho = u @ rho @ u.conj().T
        elif dt > 0:
            ph = eng.free_phases(lvl, dt)
            rho = (ph[:, None] * rho) * ph.conj()[None, :]
        if kind in ("pulse", "both"):
            if not sched.finite:
                rho = pb @ rho @ pbh
            out.append((np.sum(ixt * rho).real, np.sum(iyt * rho).real, np.sum(izt * rho).real))
    drift = abs(np.linalg.norm(rho) - purity0) / purity0
    if drift > UNITARY_TOL:
        raise IntegrityError(f"propagation lost unitarity: relative norm drift {drift:.2e}")
    comp = np.array(out).reshape(-1, 3) / norm0
    s = np.hypot(comp[:, 0], comp[:, 1])
    if normalize and len(s):
        s = s / s[0]
    trace = MagnetometerTrace(s, sched.tau)
    return (trace, comp) if components else trace


def simulate(sys: SpinSystem, train: PulseTrain, field: DriveField, cfg: SimConfig | None = None,
             duration: float | None = None, **kw):
    """Convenience wrapper: build the schedule and run it."""
    cfg = cfg or SimConfig()
    sched = build_schedule(train, field, duration, subdivide=cfg.subdivide,
                           finite=cfg.mode == "finite")
    return run_pulsed_spinlock(sys, sched, cfg, **kw)


# ------------------------------------------------------------------ sweeps

def network_ensemble(sys: SpinSystem, cfg: SimConfig) -> list:
    """n_configs networks: random geometries with the same size and median coupling."""
    if sys.n_spins < 2 or not sys.couplings or cfg.n_configs == 1:
        return [sys] * cfg.n_configs
    return [random_network(sys.n_spins, sys.median_coupling, [cfg.seed, c],
                           gamma_n=sys.gamma_n, epsilon=sys.epsilon)
            for c in range(cfg.n_configs)]


def run_phase(cfg: SimConfig, config_index: int, freq_index: int) -> float:
    rng = np.random.default_rng([cfg.seed, config_index, freq_index])
    return float(rng.uniform(0, 2 * math.pi))


def integrated_signal(s: np.ndarray, drop: float = 0.01) -> float:
    """Mean of S over the horizon after dropping the first ``drop`` fraction
    and normalizing to the first retained point."""
    k0 = int(math.floor(drop * len(s)))
    kept = s[k0:]
    return float(np.mean(kept / kept[0]))


def _sweep_item(args):
    sys, train, cfg, field, duration, horizons = args
    trace = simulate(sys, train, field, cfg, duration, normalize=False)
    return [integrated_signal(trace.s[:h]) for h in horizons]


def _map(fn, items, jobs):
    if jobs is None or jobs <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


@dataclass
class SweepResult:
    freqs: np.ndarray
    signal: np.ndarray
    stderr: np.ndarray
    per_config: np.ndarray = dc_field(repr=False, default=None)

    @property
    def dip_frequency(self) -> float:
        return float(self.freqs[int(np.argmin(self.signal))])

    def rows(self):
        return [(float(f), float(s), float(e)) for f, s, e in zip(self.freqs, self.signal, self.stderr)]


def resonance_sweep(sys: SpinSystem, train: PulseTrain, cfg: SimConfig, freqs, duration=None, *,
                    field: DriveField | None = None, jobs: int = 1, horizons=None):
    """Integrated-signal response versus drive frequency.

    Every (frequency, network) run uses its own random drive phase. Returns a
    SweepResult, or a list of them when several pulse-count ``horizons`` are
    evaluated from the same runs.
    """
    freqs = np.asarray(list(freqs), dtype=float)
    if freqs.size == 0:
        raise ValueError("freqs must be non-empty")
    field = field or DriveField("square", 1e-6, 1.0)
    n_total = train.n_pulses if duration is None else int(round(duration / train.tau))
    hz = [n_total] if horizons is None else [int(h) for h in horizons]
    nets = network_ensemble(sys, cfg)
    items = []
    for i, f in enumerate(freqs):
        for c, net in enumerate(nets):
            fld = field.with_frequency(float(f)).with_phase(run_phase(cfg, c, i))
            items.append((net, train, cfg, fld, n_total * train.tau, hz))
    vals = np.array(_map(_sweep_item, items, jobs)).reshape(len(freqs), len(nets), len(hz))
    results = []
    for h in range(len(hz)):
        v = vals[:, :, h]
        err = v.std(axis=1, ddof=1) / math.sqrt(len(nets)) if len(nets) > 1 else np.zeros(len(freqs))
        results.append(SweepResult(freqs, v.mean(axis=1), err, v))
    return results[0] if horizons is None else results


@dataclass
class LinewidthEntry:
    count: int
    fwhm: float
    center: float
    flagged: bool = False
    message: str = ""


def linewidth_vs_pulses(sys: SpinSystem, train: PulseTrain, cfg: SimConfig, pulse_counts, *,
                        field: DriveField | None = None, n_freqs: int = 33,
                        span_cycles: float = 4.0, min_half_span: float = 0.0,
                        jobs: int = 1) -> list:
    """Gaussian FWHM of the resonance dip for each pulse count.

    For count N the sweep covers f_res +/- max(span_cycles/(N*tau),
    min_half_span), capped at 0.95 f_res so no probe frequency goes negative.
    The dip profile 1 - I(f)/max(I) is fitted with a Gaussian;
    a failed fit is flagged instead of raising.
    """
    counts = [int(c) for c in pulse_counts]
    if any(c % 4 for c in counts):
        raise ValueError("pulse counts must be multiples of 4")
    f0 = resonance_frequency(train)
    out = []
    for n in counts:
        half = min(max(span_cycles / (n * train.tau), min_half_span), 0.95 * f0)
        freqs = f0 + np.linspace(-half, half, n_freqs)
        res = resonance_sweep(sys, train.with_pulses(n), cfg, freqs, field=field, jobs=jobs)
        prof = 1 - res.signal / np.max(res.signal)
        try:
            fit = fit_peak(freqs, prof, "gaussian")
            out.append(LinewidthEntry(n, fit.fwhm, fit.center))
        except (FitError, ValueError) as exc:
            out.append(LinewidthEntry(n, float("nan"), float("nan"), True, str(exc)))
    return out
