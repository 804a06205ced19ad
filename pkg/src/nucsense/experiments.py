"""Parameterized experiment recipes built on the engines and the DSP chain.

Each ``run_*`` function is a pure function of its config (and seed) and
returns an ExperimentResult; ``write_artifacts`` turns that into a config
snapshot, a results CSV, a fit summary and a long-format CSV.
"""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy import stats

from .bloch import analytic_trajectory, dressed_state, integrate_bloch, strobe_exact
from .core import (GAMMA_13C, MAX_SPINS, THETA_PI_TOL, DriveField, PulseTrain, SpinSystem,
                   drive_phase, instantaneous_frequency, random_network, resonance_frequency,
                   sensor_bandwidth)
from .dsp import MagnetometerTrace, alias_map, average_spectra, decompose, fit_peak, harmonic_spectrum
from .errors import ConfigError, DomainError, FitError
from .io import write_csv, write_json
from .quantum import SimConfig, integrated_signal, resonance_sweep, simulate, _map

ENGINES = ("quantum", "bloch", "analytic")
EXPERIMENTS = ("resonance-sweep", "fres-vs-tp", "harmonic-scaling", "duty-cycle",
               "chirp-response", "sensitivity")


# ------------------------------------------------------------------ config

@dataclass
class SystemSpec:
    n_spins: int = 1
    median_coupling: float = 0.0
    network_seed: int = 0
    k_dd: float = 1.0
    k_z: float = 1.0
    normalize_dd: bool = False
    n_configs: int = 1


@dataclass
class PulseSpec:
    theta: float = math.pi / 2
    tau: float = 73e-6
    t_p: float = 0.0
    t_acq: float = 0.0
    n_pulses: int = 2000
    mode: str = "delta"
    steps_per_period: int = 400


@dataclass
class DriveSpec:
    kind: str = "square"
    amplitude: float = 1e-7
    frequency: float = 3424.6575
    phase: float = 0.0
    bias: float = 0.0
    chirp: list | None = None
    init: str = "auto"


@dataclass
class SweepSpec:
    frequencies: list | None = None
    amplitudes: list | None = None
    tp_grid: list | None = None
    thetas: list | None = None


@dataclass
class ProcessingSpec:
    window: float = 0.073
    pad: int = 1
    averaging: str = "coherent"
    demod_window: float = 0.05
    record_duration: float | None = None
    normalize: bool = True
    taper: str = "rect"


@dataclass
class SensitivitySpec:
    noise_rms: float = 1e-3
    duration: float = 34.0
    n_boot: int = 2000


@dataclass
class ExperimentConfig:
    """Everything an experiment needs; built from a nested, JSON-compatible dict."""

    engine: str = "quantum"
    seed: int = 0
    replicates: int = 1
    jobs: int = 1
    output_dir: str = "nucsense_out"
    system: SystemSpec = field(default_factory=SystemSpec)
    pulse: PulseSpec = field(default_factory=PulseSpec)
    drive: DriveSpec = field(default_factory=DriveSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    processing: ProcessingSpec = field(default_factory=ProcessingSpec)
    sensitivity: SensitivitySpec = field(default_factory=SensitivitySpec)

    @classmethod
    def from_dict(cls, data: dict | None = None, *, validate: bool = True) -> "ExperimentConfig":
        problems = []
        cfg = _build(cls, data or {}, "", problems)
        if problems:
            raise ConfigError(problems)
        if validate:
            cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def snapshot(self) -> dict:
        """Config as recorded in artifacts: run-environment knobs (jobs,
        output_dir) are left out so outputs do not depend on them."""
        d = asdict(self)
        d.pop("jobs")
        d.pop("output_dir")
        return d

    def validate(self, experiment: str | None = None) -> "ExperimentConfig":
        problems = validation_problems(self, experiment)
        if problems:
            raise ConfigError(problems)
        return self

    # helpers used by the recipes
    def train(self, n_pulses: int | None = None, **kw) -> PulseTrain:
        p = self.pulse
        args = dict(theta=p.theta, tau=p.tau, t_p=p.t_p, t_acq=p.t_acq,
                    n_pulses=p.n_pulses if n_pulses is None else n_pulses)
        args.update(kw)
        return PulseTrain(**args)

    def field(self, **kw) -> DriveField:
        d = self.drive
        args = dict(kind=d.kind, amplitude=d.amplitude, frequency=d.frequency, phase=d.phase,
                    chirp=tuple(d.chirp) if d.chirp else None, bias=d.bias)
        args.update(kw)
        return DriveField(**args)

    def sim_config(self) -> SimConfig:
        s = self.system
        return SimConfig(k_dd=s.k_dd, k_z=s.k_z, n_configs=s.n_configs, seed=self.seed,
                         normalize_dd=s.normalize_dd, mode=self.pulse.mode)

    def spin_system(self) -> SpinSystem:
        s = self.system
        if s.n_spins == 1 or s.median_coupling == 0:
            return SpinSystem(s.n_spins)
        return random_network(s.n_spins, s.median_coupling, s.network_seed)

    def n_record(self, train: PulseTrain | None = None) -> int:
        tau = (train or self.train()).tau
        dur = self.processing.record_duration
        return self.pulse.n_pulses if dur is None else int(round(dur / tau))


_SECTIONS = {"system": SystemSpec, "pulse": PulseSpec, "drive": DriveSpec, "sweep": SweepSpec,
             "processing": ProcessingSpec, "sensitivity": SensitivitySpec}


def _coerce(value, default, name, problems):
    if value is None:
        return None
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        problems.append(f"{name}: expected true/false, got {value!r}")
        return default
    if isinstance(default, int):
        if isinstance(value, bool) or not float(value).is_integer():
            problems.append(f"{name}: expected an integer, got {value!r}")
            return default
        return int(value)
    if isinstance(default, float) or default is None and isinstance(value, (int, float)):
        try:
            return float(value)
        except (TypeError, ValueError):
            problems.append(f"{name}: expected a number, got {value!r}")
            return default
    return value


def _build(cls, data, prefix, problems):
    if not isinstance(data, dict):
        problems.append(f"{prefix.rstrip('.') or 'config'}: expected a mapping")
        return cls()
    known = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in known:
            problems.append(f"{prefix}{key}: unknown field (valid: {', '.join(sorted(known))})")
    proto = cls()
    kw = {}
    for name in known:
        if name not in data:
            continue
        default = getattr(proto, name)
        if name in _SECTIONS and cls is ExperimentConfig:
            kw[name] = _build(_SECTIONS[name], data[name], f"{prefix}{name}.", problems)
        else:
            kw[name] = _coerce(data[name], default, prefix + name, problems)
    return cls(**kw)


def validation_problems(cfg: ExperimentConfig, experiment: str | None = None) -> list:
    """Field-level diagnostics; an empty list means the config is usable."""
    out = []
    if cfg.engine not in ENGINES:
        out.append(f"engine: {cfg.engine!r} is not one of {', '.join(ENGINES)}")
    if cfg.replicates < 1:
        out.append("replicates: must be >= 1")
    if cfg.jobs < 1:
        out.append("jobs: must be >= 1")
    s, p, d = cfg.system, cfg.pulse, cfg.drive
    if not 1 <= s.n_spins <= MAX_SPINS:
        out.append(f"system.n_spins: must lie in 1..{MAX_SPINS}")
    if s.median_coupling < 0:
        out.append("system.median_coupling: must be >= 0")
    if s.n_configs < 1:
        out.append("system.n_configs: must be >= 1")
    if not 0 < p.theta < 2 * math.pi:
        out.append("pulse.theta: must lie in (0, 2pi)")
    elif abs(p.theta - math.pi) < THETA_PI_TOL:
        out.append("pulse.theta: theta = pi does not spin-lock; use e.g. pi/2")
    if not p.tau > 0:
        out.append("pulse.tau: must be positive")
    if p.t_p < 0 or p.t_acq < 0:
        out.append("pulse.t_p/pulse.t_acq: must be non-negative")
    elif p.t_p + p.t_acq > p.tau * (1 + 1e-12):
        out.append(f"pulse.t_p + pulse.t_acq = {p.t_p + p.t_acq:g} s exceeds pulse.tau = {p.tau:g} s")
    if p.n_pulses < 1:
        out.append("pulse.n_pulses: must be >= 1")
    if p.mode not in ("delta", "finite"):
        out.append("pulse.mode: must be 'delta' or 'finite'")
    if p.steps_per_period < 100:
        out.append("pulse.steps_per_period: must be >= 100")
    if d.kind not in ("dc", "sine", "square", "chirp"):
        out.append("drive.kind: must be dc, sine, square or chirp")
    if d.amplitude < 0:
        out.append("drive.amplitude: must be >= 0")
    if d.kind in ("sine", "square") and not d.frequency > 0:
        out.append(f"drive.frequency: {d.kind} drive needs frequency > 0")
    if d.kind == "chirp":
        if d.chirp is None or len(d.chirp) != 3:
            out.append("drive.chirp: chirp drive needs [f_ini_hz, span_hz, duration_s]")
        elif not (d.chirp[0] >= 0 and d.chirp[1] > 0 and d.chirp[2] > 0):
            out.append("drive.chirp: needs f_ini >= 0, span > 0, duration > 0")
    if d.init not in ("auto", "x", "floquet", "dressed"):
        out.append("drive.init: must be auto, x, floquet or dressed")
    for name in ("frequencies", "amplitudes", "tp_grid", "thetas"):
        grid = getattr(cfg.sweep, name)
        if grid is not None and len(grid) == 0:
            out.append(f"sweep.{name}: grid must be non-empty")
    if cfg.processing.window <= 0:
        out.append("processing.window: must be positive")
    if cfg.processing.taper not in ("rect", "hann"):
        out.append("processing.taper: must be rect or hann")
    if cfg.processing.averaging not in ("coherent", "magnitude"):
        out.append("processing.averaging: must be coherent or magnitude")
    if cfg.engine in ("bloch", "analytic") and s.n_spins != 1:
        out.append(f"system.n_spins: the {cfg.engine} engine models a single spin")
    if cfg.engine == "analytic" and d.kind not in ("sine", "square"):
        out.append("drive.kind: the analytic engine needs a sine or square drive")
    if cfg.engine == "quantum" and s.n_spins > 1 and s.median_coupling == 0 and s.k_dd > 0:
        out.append("system.median_coupling: coupled networks need a positive median coupling")
    if experiment is not None:
        out += _experiment_problems(cfg, experiment)
    return out


def _experiment_problems(cfg, name):
    out = []
    if name not in EXPERIMENTS:
        return [f"experiment: unknown name {name!r} (valid: {', '.join(EXPERIMENTS)})"]
    if name == "resonance-sweep" and cfg.engine == "analytic":
        out.append("engine: resonance-sweep needs the quantum or bloch engine")
    if name in ("fres-vs-tp", "chirp-response") and cfg.drive.kind != "chirp":
        out.append(f"drive.kind: {name} needs a chirp drive")
    if name in ("fres-vs-tp", "duty-cycle") and cfg.engine == "analytic":
        out.append(f"engine: {name} needs a finite-pulse engine (bloch or quantum)")
    if name == "fres-vs-tp" and not cfg.sweep.tp_grid:
        out.append("sweep.tp_grid: fres-vs-tp needs pulse widths")
    if name == "duty-cycle" and not cfg.sweep.tp_grid:
        out.append("sweep.tp_grid: duty-cycle needs pulse widths")
    if name == "sensitivity" and cfg.sweep.amplitudes is not None and len(cfg.sweep.amplitudes) < 4:
        out.append("sweep.amplitudes: sensitivity needs at least 4 amplitudes")
    return out


def set_dotted(data: dict, dotted: str, value) -> dict:
    """Return a copy of ``data`` with ``a.b.c = value`` applied."""
    out = copy.deepcopy(data)
    node = out
    parts = dotted.split(".")
    for key in parts[:-1]:
        nxt = node.get(key)
        if nxt is None:
            nxt = node[key] = {}
        elif not isinstance(nxt, dict):
            raise ConfigError([f"{dotted}: {key} is not a section"])
        node = nxt
    node[parts[-1]] = value
    return out


# ------------------------------------------------------------------ results

@dataclass
class ExperimentResult:
    name: str
    config: dict
    header: list
    rows: list
    summary: dict
    long_header: list
    long_rows: list
    flags: list = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.flags)


@dataclass
class SensitivityResult:
    slope: float
    noise_floor: float
    min_field: float
    min_field_ci: tuple
    sensitivity: float
    duration: float
    slope_stderr: float = 0.0

    def __post_init__(self):
        if self.slope != 0 and not math.isclose(self.min_field, self.noise_floor / self.slope,
                                                rel_tol=1e-12):
            raise ValueError("min_field must equal noise_floor / slope")


def write_artifacts(result: ExperimentResult, outdir) -> list:
    """config.json, results.csv, fit_summary.json and long.csv under ``outdir``."""
    outdir = Path(outdir)
    stem = result.name.replace("-", "_")
    summary = dict(result.summary)
    summary["flags"] = list(result.flags)
    return [
        write_json(outdir / f"{stem}_config.json", result.config),
        write_csv(outdir / f"{stem}_results.csv", result.header, result.rows),
        write_json(outdir / f"{stem}_fit_summary.json", summary),
        write_csv(outdir / f"{stem}_long.csv", result.long_header, result.long_rows),
    ]


# ------------------------------------------------------------------ engine dispatch

def _rng(cfg: ExperimentConfig, *keys) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, *keys])


def _init_for(cfg, train, fld, default):
    mode = cfg.drive.init if cfg.drive.init != "auto" else default
    if mode == "dressed":
        if fld.kind not in ("sine", "square"):
            return "floquet"
        return dressed_state(train, fld)
    return mode


def engine_trace(cfg: ExperimentConfig, train: PulseTrain, fld: DriveField, *,
                 default_init: str = "floquet", n_pulses: int | None = None) -> MagnetometerTrace:
    """S_j from the configured engine (single spin for bloch/analytic)."""
    n = train.n_pulses if n_pulses is None else n_pulses
    train = train.with_pulses(n)
    if cfg.engine == "analytic":
        mode = cfg.drive.init if cfg.drive.init != "auto" else default_init
        init = "dressed" if mode == "dressed" else "lock"
        return analytic_trajectory(train, fld, init=init).to_trace()
    if cfg.engine == "bloch":
        init = _init_for(cfg, train, fld, default_init)
        if train.t_p > 0 and cfg.pulse.mode == "finite":
            traj = integrate_bloch(train, fld, init, steps_per_period=cfg.pulse.steps_per_period,
                                   mode="finite")
        else:
            traj = strobe_exact(train, fld, init)
        return traj.to_trace()
    sim = cfg.sim_config()
    return simulate(cfg.spin_system(), train, fld, sim, normalize=False)


def _line_magnitude(spec, f_line, bandwidth, search_bins=2):
    """Spectral magnitude at the aliased position of ``f_line``."""
    fa = alias_map(f_line, bandwidth)
    k = int(round(fa / spec.bin_spacing))
    lo, hi = max(0, k - search_bins), min(len(spec.mags), k + search_bins + 1)
    return float(np.max(spec.mags[lo:hi]))


def _s_o(cfg, trace):
    window = cfg.processing.window
    if window < 3 * trace.dt:
        window = 3 * trace.dt
    return decompose(trace, window)[1]


# ------------------------------------------------------------------ recipes

def run_resonance_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    """Integrated S versus drive frequency, with a Gaussian fit of the dip."""
    cfg.validate("resonance-sweep")
    train = cfg.train()
    f0 = resonance_frequency(train)
    freqs = (np.asarray(cfg.sweep.frequencies, float) if cfg.sweep.frequencies
             else np.linspace(0.6 * f0, 1.4 * f0, 41))
    fld = cfg.field(kind=cfg.drive.kind if cfg.drive.kind in ("sine", "square") else "square",
                    frequency=float(freqs[0]))
    if cfg.engine == "quantum":
        res = resonance_sweep(cfg.spin_system(), train, cfg.sim_config(), freqs, field=fld,
                              jobs=cfg.jobs)
        signal, err = res.signal, res.stderr
    else:
        items = []
        for i, f in enumerate(freqs):
            for r in range(cfg.replicates):
                ph = float(_rng(cfg, r, i).uniform(0, 2 * math.pi))
                items.append((cfg, train, fld.with_frequency(float(f)).with_phase(ph)))
        vals = np.array(_map(_bloch_item, items, cfg.jobs)).reshape(len(freqs), cfg.replicates)
        signal = vals.mean(axis=1)
        err = (vals.std(axis=1, ddof=1) / math.sqrt(cfg.replicates) if cfg.replicates > 1
               else np.zeros(len(freqs)))
    step = float(freqs[1] - freqs[0]) if len(freqs) > 1 else 0.0
    dip = float(freqs[int(np.argmin(signal))])
    summary = {"expected_resonance_hz": f0, "dip_minimum_hz": dip, "grid_step_hz": step,
               "depth": float(np.max(signal) - np.min(signal))}
    flags = []
    prof = 1 - signal / np.max(signal)
    if summary["depth"] < 1e-6:
        flags.append("no dip: response is flat within 1e-6")
        summary.update(center_hz=None, fwhm_hz=None)
    else:
        try:
            fit = fit_peak(freqs, prof, "gaussian")
            summary.update(center_hz=fit.center, fwhm_hz=fit.fwhm, fit_residual=fit.residual)
        except (FitError, ValueError) as exc:
            flags.append(f"dip fit failed: {exc}")
            summary.update(center_hz=None, fwhm_hz=None)
    rows = list(zip(freqs, signal, err))
    long_rows = [("integrated_signal", f, s) for f, s in zip(freqs, signal)]
    return ExperimentResult("resonance-sweep", cfg.snapshot(),
                            ["frequency_hz", "integrated_signal_arb", "stderr_over_configs_arb"],
                            rows, summary, ["series", "frequency_hz", "value_arb"], long_rows, flags)


def _bloch_item(args):
    cfg, train, fld = args
    return integrated_signal(engine_trace(cfg, train, fld).s)


def demodulated_envelope(s_o, tau, fld: DriveField, harmonic: int, window: float):
    """|<S_o exp(-i h phi(t))>| over sliding windows, with phi the drive phase.

    Returns (t_center, f_instantaneous, envelope). Demodulating with the
    drive's own phase follows the harmonic through any aliasing.
    """
    x = np.asarray(s_o, float)
    t = tau * np.arange(1, len(x) + 1)
    z = x * np.exp(-1j * harmonic * drive_phase(fld, t))
    n = max(3, int(round(window / tau)))
    if n > len(z):
        raise DomainError("demodulation window longer than the record")
    c = np.concatenate([[0], np.cumsum(z)])
    env = np.abs(c[n:] - c[:-n]) / n
    tc = t[: len(env)] + 0.5 * (n - 1) * tau
    return tc, instantaneous_frequency(fld, tc), 2 * env


def run_fres_vs_tp(cfg: ExperimentConfig) -> ExperimentResult:
    """Resonance frequency from the second-harmonic response to a chirp, per pulse width.

    tau = t_p + t_acq + gap with the gap taken from the base config, so wider
    pulses lengthen the period at fixed t_acq. f_res is the instantaneous
    chirp frequency where the demodulated 2f envelope peaks.
    """
    cfg.validate("fres-vs-tp")
    p = cfg.pulse
    gap = max(p.tau - p.t_p - p.t_acq, 0.0)
    thetas = cfg.sweep.thetas or [p.theta]
    fld = cfg.field()
    rows, long_rows, flags = [], [], []
    for theta in thetas:
        for tp in cfg.sweep.tp_grid:
            tau = float(tp) + p.t_acq + gap
            train = PulseTrain(theta, tau, float(tp), p.t_acq, int(math.ceil(fld.chirp[2] / tau)))
            tr = engine_trace(cfg, train, fld)
            s_o = _s_o(cfg, tr)
            tc, finst, env = demodulated_envelope(s_o, tau, fld, 2, cfg.processing.demod_window)
            k = int(np.argmax(env))
            contrast = env[k] / (np.median(env) + 1e-300)
            f_pred = theta / (2 * math.pi * tau)
            edge = max(1, int(round(cfg.processing.demod_window / tau)))
            if contrast < 3 or k < edge or k >= len(env) - edge:
                flags.append(f"theta={theta:.4f}, t_p={tp:g}: no second-harmonic maximum "
                             "inside the chirp band")
                f_meas = float("nan")
            else:
                f_meas = float(finst[k])
            rows.append((theta, tp, tau, f_meas, f_pred, contrast))
            long_rows.append((f"theta={theta:.6g}", tp, f_meas))
    summary = {"points": len(rows),
               "max_rel_deviation": float(np.nanmax([abs(r[3] / r[4] - 1) for r in rows]))
               if any(np.isfinite(r[3]) for r in rows) else None}
    return ExperimentResult("fres-vs-tp", cfg.snapshot(),
                            ["theta_rad", "t_p_s", "tau_s", "f_res_measured_hz", "f_res_predicted_hz",
                             "peak_contrast"], rows, summary,
                            ["series", "t_p_s", "f_res_hz"], long_rows, flags)


def default_amplitudes(cfg: ExperimentConfig, n: int = 8) -> np.ndarray:
    """Log grid over 1.5 decades ending at gamma*B = f_AC/200 (RWA regime)."""
    top = cfg.drive.frequency / 200 / GAMMA_13C
    return np.logspace(math.log10(top) - 1.5, math.log10(top), n)


def harmonic_magnitudes(cfg: ExperimentConfig, amplitude: float, replicate: int = 0):
    """(|H1|, |H2|) of S_o for one drive amplitude and replicate."""
    train = cfg.train(cfg.n_record())
    ph = cfg.drive.phase if cfg.replicates == 1 else float(
        _rng(cfg, replicate, 7).uniform(0, 2 * math.pi))
    fld = cfg.field(amplitude=float(amplitude), phase=ph)
    tr = engine_trace(cfg, train, fld, default_init="dressed")
    spec = harmonic_spectrum(_s_o(cfg, tr), train.tau, pad=cfg.processing.pad)
    bw = sensor_bandwidth(train)
    return (_line_magnitude(spec, fld.frequency, bw, cfg.processing.pad),
            _line_magnitude(spec, 2 * fld.frequency, bw, cfg.processing.pad))


def _loglog_fit(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 3:
        raise FitError("exponent fit needs at least 3 positive points")
    lx, ly = np.log10(x[ok]), np.log10(y[ok])
    if np.ptp(lx) == 0:
        raise FitError("amplitude grid is degenerate")
    res = stats.linregress(lx, ly)
    tcrit = stats.t.ppf(0.975, ok.sum() - 2)
    half = tcrit * res.stderr
    return {"exponent": float(res.slope), "stderr": float(res.stderr),
            "ci95": [float(res.slope - half), float(res.slope + half)],
            "intercept_log10": float(res.intercept)}


def run_harmonic_scaling(cfg: ExperimentConfig, amplitudes=None) -> ExperimentResult:
    """Log-log exponents of the first and second harmonic versus B_AC."""
    cfg.validate("harmonic-scaling")
    amps = np.asarray(amplitudes if amplitudes is not None else
                      (cfg.sweep.amplitudes or default_amplitudes(cfg)), float)
    if amps.size == 0:
        raise ValueError("amplitude grid must be non-empty")
    items = [(cfg, a, r) for a in amps for r in range(cfg.replicates)]
    mags = np.array(_map(_harm_item, items, cfg.jobs)).reshape(len(amps), cfg.replicates, 2)
    h1, h2 = mags[..., 0].mean(axis=1), mags[..., 1].mean(axis=1)
    fit1, fit2 = _loglog_fit(amps, h1), _loglog_fit(amps, h2)
    rows = list(zip(amps, h1, h2))
    long_rows = ([("harmonic_1", a, v) for a, v in zip(amps, h1)]
                 + [("harmonic_2", a, v) for a, v in zip(amps, h2)])
    summary = {"engine": cfg.engine, "harmonic_1": fit1, "harmonic_2": fit2}
    return ExperimentResult("harmonic-scaling", cfg.snapshot(),
                            ["amplitude_t", "harmonic_1_arb", "harmonic_2_arb"], rows, summary,
                            ["series", "amplitude_t", "magnitude_arb"], long_rows)


def _harm_item(args):
    cfg, a, r = args
    return harmonic_magnitudes(cfg, a, r)


def run_duty_cycle_study(cfg: ExperimentConfig, tp_grid=None) -> ExperimentResult:
    """Second/first harmonic ratio versus duty cycle t_p/tau at fixed tau.

    The delta-pulse point (t_p = 0) is always included as a baseline. The
    trend is reported, not asserted.
    """
    cfg.validate()
    grid = list(tp_grid if tp_grid is not None else (cfg.sweep.tp_grid or []))
    if not grid:
        raise ValueError("tp_grid must be non-empty")
    grid = sorted(set([0.0] + [float(v) for v in grid]))
    p = cfg.pulse
    rows, long_rows = [], []
    for tp in grid:
        t_acq = min(p.t_acq, p.tau - tp)
        c = copy.deepcopy(cfg)
        c.pulse.t_p, c.pulse.t_acq = tp, t_acq
        c.pulse.mode = "finite" if tp > 0 else "delta"
        per_rep = [harmonic_magnitudes(c, cfg.drive.amplitude, r) for r in range(cfg.replicates)]
        h1 = float(np.mean([m[0] for m in per_rep]))
        h2 = float(np.mean([m[1] for m in per_rep]))
        ratio = h2 / h1 if h1 > 0 else float("nan")
        rows.append((tp, tp / p.tau, h1, h2, ratio))
        long_rows.append(("h2_over_h1", tp / p.tau, ratio))
    ratios = [r[4] for r in rows[1:]]
    summary = {"ratios": ratios,
               "monotone_nondecreasing": bool(np.all(np.diff(ratios) >= 0)) if len(ratios) > 1 else None,
               "delta_ratio": rows[0][4]}
    return ExperimentResult("duty-cycle", cfg.snapshot(),
                            ["t_p_s", "duty_cycle", "harmonic_1_arb", "harmonic_2_arb", "ratio_h2_h1"],
                            rows, summary, ["series", "duty_cycle", "value_arb"], long_rows)


def _centroid(freqs, mags, lo, hi):
    sel = (freqs >= lo) & (freqs <= hi)
    w = mags[sel] ** 2
    if w.sum() == 0:
        return float("nan")
    return float(np.sum(freqs[sel] * w) / w.sum())


def run_chirp_response(cfg: ExperimentConfig) -> ExperimentResult:
    """Replicate-averaged |FFT(S_o)| under a chirp, with primary/secondary bands.

    The primary band is the swept band; its peak and the power centroid
    within +/-10% of the peak are reported. The secondary band is searched
    around twice the primary peak (aliased into the sensor band).
    """
    cfg.validate("chirp-response")
    fld0 = cfg.field()
    f_ini, span, dur = fld0.chirp
    train = cfg.train(int(math.ceil(dur / cfg.pulse.tau)))
    series = []
    for r in range(cfg.replicates):
        ph = cfg.drive.phase if cfg.replicates == 1 else float(_rng(cfg, r, 11).uniform(0, 2 * math.pi))
        series.append(_s_o(cfg, engine_trace(cfg, train, fld0.with_phase(ph))))
    spec = average_spectra(series, train.tau, "magnitude" if cfg.replicates > 1 else "coherent",
                           pad=cfg.processing.pad)
    bw = sensor_bandwidth(train)
    f_res = resonance_frequency(train)
    band = spec.band_max(f_ini, f_ini + span)
    c1 = _centroid(spec.freqs, spec.mags, 0.9 * band.freq, 1.1 * band.freq)
    f2 = alias_map(2 * band.freq, bw)
    sec = spec.band_max(max(0.0, f2 - 0.1 * band.freq), min(bw, f2 + 0.1 * band.freq))
    c2 = _centroid(spec.freqs, spec.mags, sec.freq - 0.1 * band.freq, sec.freq + 0.1 * band.freq)
    in_band = (spec.freqs >= f_ini) & (spec.freqs <= f_ini + span)
    summary = {"f_res_hz": f_res, "primary_peak_hz": band.freq, "primary_centroid_hz": c1,
               "primary_peak_over_band_median": float(band.mag / (np.median(spec.mags[in_band]) + 1e-300)),
               "secondary_peak_hz": sec.freq, "secondary_centroid_hz": c2,
               "secondary_expected_hz": f2}
    rows = list(zip(spec.freqs, spec.mags))
    long_rows = [("mean_abs_fft", f, m) for f, m in rows]
    return ExperimentResult("chirp-response", cfg.snapshot(), ["frequency_hz", "magnitude_arb"], rows,
                            summary, ["series", "frequency_hz", "magnitude_arb"], long_rows)


def estimate_sensitivity(cfg: ExperimentConfig | None, amplitudes, noise_rms: float, duration: float,
                         *, measurements=None, n_boot: int | None = None,
                         seed: int | None = None) -> SensitivityResult:
    """Linear fit of harmonic-1 magnitude against B_AC and the implied floor.

    ``measurements`` (n_amplitudes x n_repeats, or 1-D) are used directly when
    given; otherwise each amplitude is simulated with the configured engine.
    min_field = noise_rms / slope and sensitivity = min_field*sqrt(duration).
    The 95% interval comes from a pairs bootstrap of the slope.
    """
    amps = np.asarray(amplitudes, float)
    if amps.size < 4:
        raise ValueError("need at least 4 amplitude points")
    if not duration > 0:
        raise ValueError("duration must be positive")
    if noise_rms < 0:
        raise ValueError("noise_rms must be non-negative")
    seed = (cfg.seed if cfg is not None else 0) if seed is None else seed
    n_boot = n_boot or (cfg.sensitivity.n_boot if cfg is not None else 2000)
    if measurements is None:
        if cfg is None:
            raise ValueError("either measurements or a config is needed")
        reps = cfg.replicates
        measurements = np.array([[harmonic_magnitudes(cfg, a, r)[0] for r in range(reps)]
                                 for a in amps])
    y = np.asarray(measurements, float)
    if y.ndim == 1:
        y = y[:, None]
    x = np.repeat(amps, y.shape[1])
    y = y.ravel()
    res = stats.linregress(x, y)
    if res.slope == 0 or not np.isfinite(res.stderr) or abs(res.slope) <= 2 * res.stderr:
        raise FitError(f"slope {res.slope:.3g} is consistent with zero (stderr {res.stderr:.3g})")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(x), size=(n_boot, len(x)))
    xb, yb = x[idx], y[idx]
    xm, ym = xb.mean(axis=1, keepdims=True), yb.mean(axis=1, keepdims=True)
    sxx = np.sum((xb - xm) ** 2, axis=1)
    good = sxx > 0
    slopes = np.sum((xb - xm) * (yb - ym), axis=1)[good] / sxx[good]
    slopes = slopes[slopes > 0]
    if slopes.size < 0.9 * n_boot:
        raise FitError("bootstrap slopes straddle zero")
    lo, hi = np.percentile(noise_rms / slopes, [2.5, 97.5])
    min_field = noise_rms / res.slope
    return SensitivityResult(float(res.slope), float(noise_rms), float(min_field),
                             (float(lo), float(hi)), float(min_field * math.sqrt(duration)),
                             float(duration), float(res.stderr))


def run_sensitivity(cfg: ExperimentConfig, amplitudes=None) -> ExperimentResult:
    cfg.validate("sensitivity")
    amps = np.asarray(amplitudes if amplitudes is not None else
                      (cfg.sweep.amplitudes or default_amplitudes(cfg, 6)), float)
    meas = np.array([[harmonic_magnitudes(cfg, a, r)[0] for r in range(cfg.replicates)] for a in amps])
    flags = []
    try:
        sens = estimate_sensitivity(cfg, amps, cfg.sensitivity.noise_rms, cfg.sensitivity.duration,
                                    measurements=meas)
        summary = asdict(sens)
    except FitError as exc:
        flags.append(str(exc))
        summary = {"error": str(exc)}
    rows = [(a, float(m.mean())) for a, m in zip(amps, meas)]
    return ExperimentResult("sensitivity", cfg.snapshot(), ["amplitude_t", "harmonic_1_arb"], rows,
                            summary, ["series", "amplitude_t", "magnitude_arb"],
                            [("harmonic_1", a, v) for a, v in rows], flags)


RUNNERS = {
    "resonance-sweep": run_resonance_sweep,
    "fres-vs-tp": run_fres_vs_tp,
    "harmonic-scaling": run_harmonic_scaling,
    "duty-cycle": run_duty_cycle_study,
    "chirp-response": run_chirp_response,
    "sensitivity": run_sensitivity,
}


def run_experiment(name: str, cfg: ExperimentConfig) -> ExperimentResult:
    if name not in RUNNERS:
        raise ConfigError([f"experiment: unknown name {name!r} (valid: {', '.join(EXPERIMENTS)})"])
    return RUNNERS[name](cfg)
