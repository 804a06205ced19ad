import math

import numpy as np
import pytest

from nucsense.bloch import analytic_trajectory
from nucsense.core import GAMMA_13C, DriveField, PulseTrain, random_network, sensor_bandwidth
from nucsense.dsp import (DecayModel, MagnetometerTrace, RawRecord, alias_map, average_spectra,
                          decompose, dirichlet_leakage, extract_trace, fit_peak, fit_stretched_decay,
                          gaussian, harmonic_spectrum, lorentzian, moving_average_points, stft_track,
                          synthesize_raw)
from nucsense.errors import DomainError, FitError, RecordFormatError
from nucsense.quantum import SimConfig, linewidth_vs_pulses

TAU = 73e-6


def acq_train(t_acq=32e-6):
    return PulseTrain(math.pi / 2, TAU, t_acq=t_acq)


# ------------------------------------------------------------------ synthesis and extraction

def test_constant_amplitude_windows_equal():
    raw = synthesize_raw(np.ones(50), acq_train())
    s = extract_trace(raw).s
    assert np.max(np.abs(s / s[0] - 1)) < 1e-9


def test_pure_carrier_magnitude():
    raw = synthesize_raw(np.full(4, 0.37), acq_train())
    assert np.allclose(extract_trace(raw).s, 0.37, rtol=1e-9)


def test_bandpass_reported():
    raw = synthesize_raw(np.ones(2), acq_train(32e-6))
    assert extract_trace(raw).meta["bandpass_hz"] == pytest.approx(31250.0)


def test_modulation_round_trip():
    t = TAU * np.arange(1, 301)
    a = 1 + 0.01 * np.cos(2 * math.pi * 2760.0 * t)
    s = extract_trace(synthesize_raw(a, acq_train())).s
    assert np.max(np.abs(s - a) / a) < 1e-3


def test_off_bin_carrier_leakage():
    train = acq_train(32e-6)
    raw = synthesize_raw(np.ones(3), train)
    shifted = synthesize_raw(np.ones(3), train, f_het=raw.f_het + 100e3)
    shifted.f_het = raw.f_het
    assert np.all(extract_trace(shifted, taper="hann").s < 0.05)
    # the untapered bin follows the Dirichlet kernel: 3.2 bins out it leaks about 6%
    n = raw.samples_per_window
    assert extract_trace(shifted).s[0] == pytest.approx(dirichlet_leakage(3.2, n), rel=0.02)


def test_decay_fit_recovers_t2():
    decay = DecayModel(t2_prime=5e-3)
    raw = synthesize_raw(np.ones(200), acq_train(), decay=decay)
    a, t2 = fit_stretched_decay(extract_trace(raw))
    assert t2 == pytest.approx(5e-3, rel=0.02)
    assert a == pytest.approx(1.0, rel=0.02)


def test_compact_matches_full():
    t = TAU * np.arange(1, 101)
    a = 1 + 0.05 * np.sin(2 * math.pi * 1000.0 * t)
    full = extract_trace(synthesize_raw(a, acq_train())).s
    compact = extract_trace(synthesize_raw(a, acq_train(), mode="compact")).s
    assert np.max(np.abs(full - compact)) < 1e-6


def test_compact_noise_matches_full_statistics():
    n = 4000
    full = synthesize_raw(np.ones(n), acq_train(4e-6), noise_rms=0.5, seed=1, sample_rate=100e6, f_het=20e6)
    compact = synthesize_raw(np.ones(n), acq_train(4e-6), noise_rms=0.5, seed=1, mode="compact")
    sd_full = np.std(extract_trace(full).s)
    sd_compact = np.std(extract_trace(compact).s)
    assert sd_compact == pytest.approx(sd_full, rel=0.1)


def test_synthesis_guards():
    with pytest.raises(DomainError):
        synthesize_raw(np.ones(3), acq_train(), sample_rate=50e6)
    with pytest.raises(DomainError):
        synthesize_raw(np.ones(3), PulseTrain(math.pi / 2, TAU))


def test_bloch_trajectory_source():
    traj = analytic_trajectory(PulseTrain(math.pi / 2, TAU, n_pulses=20),
                               DriveField("sine", 5 / GAMMA_13C, 2760.0))
    s = extract_trace(synthesize_raw(traj, acq_train())).s
    assert np.allclose(s, traj.S, rtol=1e-6)


# ------------------------------------------------------------------ record container

def test_record_save_load(tmp_path):
    raw = synthesize_raw(np.linspace(1, 2, 5), acq_train(8e-6))
    p = tmp_path / "r.bin"
    raw.save(p)
    back = RawRecord.load(p)
    assert back.n_windows == 5 and back.samples_per_window == raw.samples_per_window
    assert np.allclose(back.windows, raw.windows, atol=1e-6)
    assert back.window_period == TAU


def test_truncated_record_reports_offset(tmp_path):
    raw = synthesize_raw(np.ones(5), acq_train(8e-6))
    p = tmp_path / "r.bin"
    raw.save(p)
    data = p.read_bytes()
    p.write_bytes(data[:-10])
    with pytest.raises(RecordFormatError) as err:
        RawRecord.load(p)
    assert err.value.offset is not None and 0 < err.value.offset <= len(data) - 10


def test_bad_magic(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"NOTARAW0" + b"\0" * 40)
    with pytest.raises(RecordFormatError) as err:
        RawRecord.load(p)
    assert err.value.offset == 0


# ------------------------------------------------------------------ decomposition

def test_decompose_window_points():
    tr = MagnetometerTrace(np.ones(3000), TAU)
    decompose(tr, 0.073)
    assert tr.meta["moving_average_points"] == 1001
    assert tr.meta["lowpass_cutoff_hz"] == pytest.approx(13.7, abs=0.01)
    assert moving_average_points(0.073, TAU) == 1001


def test_decompose_constant():
    tr = MagnetometerTrace(np.full(500, 0.8), TAU)
    s_d, s_o = decompose(tr, 0.01)
    assert np.all(s_o == 0)


def test_decompose_rejects_oscillation():
    t = TAU * np.arange(1, 20001)
    s = 1 + 0.1 * np.cos(2 * math.pi * 2760.0 * t)
    s_d, s_o = decompose(MagnetometerTrace(s, TAU), 0.073)
    core = s_d[600:-600] - 1
    assert np.max(np.abs(core)) < 0.01 * 0.1


def test_decompose_exact_sum():
    s = 1 + 0.01 * np.random.default_rng(3).standard_normal(2000)
    s_d, s_o = decompose(MagnetometerTrace(s, TAU), 0.01)
    assert np.array_equal(s_d + s_o, s)


def test_decompose_window_too_short():
    with pytest.raises(DomainError):
        decompose(MagnetometerTrace(np.ones(10), TAU), 2 * TAU)


# ------------------------------------------------------------------ spectra

def test_alias_examples():
    bw = 6849.3
    assert alias_map(3 * 2760.0, bw) == pytest.approx(5418.6, abs=1.0)
    assert alias_map(4 * 2760.0, bw) == pytest.approx(2658.6, abs=1.0)
    assert alias_map(1234.5, bw) == 1234.5


def test_synthetic_resonant_top_peaks():
    tr = PulseTrain(math.pi / 2, TAU, n_pulses=int(round(20 / TAU)))
    fld = DriveField("sine", 5 / GAMMA_13C, 2760.0, 0.3, bias=4.7e-6)
    trace = analytic_trajectory(tr, fld, init="dressed").to_trace()
    _, s_o = decompose(trace, 0.073)
    spec = harmonic_spectrum(s_o, TAU, pad=8, taper="hann")
    assert spec.resolution == pytest.approx(0.05, abs=1e-3)
    tops = sorted(p.freq for p in spec.top(2))
    assert abs(tops[0] - 2760.0) < spec.resolution
    assert abs(tops[1] - 5520.0) < spec.resolution


def test_white_noise_has_no_peak():
    x = np.random.default_rng(11).standard_normal(20000)
    spec = harmonic_spectrum(x, TAU)
    assert spec.mags[1:].max() < 5 * np.median(spec.mags[1:])


@pytest.mark.parametrize("n", [1000, 1001])
@pytest.mark.parametrize("pad", [1, 2, 3])
def test_parseval(n, pad):
    x = np.random.default_rng(5).standard_normal(n)
    assert harmonic_spectrum(x, TAU, pad=pad).total_power() == pytest.approx(np.sum(x ** 2), rel=1e-9)


def test_parseval_needs_untapered():
    with pytest.raises(DomainError):
        harmonic_spectrum(np.ones(64), TAU, taper="hann").total_power()


def test_spectrum_guards():
    with pytest.raises(DomainError):
        harmonic_spectrum(np.ones(8), TAU)
    with pytest.raises(ValueError):
        harmonic_spectrum(np.ones(64), TAU, taper="kaiser")


def test_average_spectra_modes():
    t = TAU * np.arange(2000)
    series = [np.cos(2 * math.pi * 2000.0 * t + p) for p in (0.0, 0.0)]
    coh = average_spectra(series, TAU)
    mag = average_spectra(series, TAU, "magnitude")
    assert coh.top(1)[0].freq == pytest.approx(2000.0, abs=coh.resolution)
    assert np.allclose(coh.mags, mag.mags)
    with pytest.raises(ValueError):
        average_spectra(series, TAU, "median")


# ------------------------------------------------------------------ fitting

def test_gaussian_self_fit():
    f = np.linspace(-5, 5, 41)
    y = gaussian(f, 2.0, 0.3, 0.8)
    fit = fit_peak(f, y, "gaussian")
    assert fit.center == pytest.approx(0.3, rel=1e-6)
    assert fit.fwhm == pytest.approx(0.8 * 2 * math.sqrt(2 * math.log(2)), rel=1e-6)
    assert fit.amplitude == pytest.approx(2.0, rel=1e-6)


def test_lorentzian_self_fit_with_baseline():
    f = np.linspace(100, 200, 51)
    y = lorentzian(f, 1.5, 151.0, 4.0, 0.2)
    fit = fit_peak(f, y, "lorentzian", baseline=True)
    assert fit.center == pytest.approx(151.0, rel=1e-6)
    assert fit.fwhm == pytest.approx(8.0, rel=1e-6)
    assert fit.baseline == pytest.approx(0.2, rel=1e-6)


def test_fit_peak_errors():
    with pytest.raises(ValueError):
        fit_peak(np.arange(5.0), np.arange(5.0))
    with pytest.raises(ValueError):
        fit_peak(np.arange(5.0), np.array([0, 1, 0, 1, 0.0]), "voigt")
    with pytest.raises(FitError):
        fit_peak(np.linspace(-1, 1, 21), gaussian(np.linspace(-1, 1, 21), 1, 0, 0.2), max_iter=1)


@pytest.mark.slow
def test_dip_fwhm_reproducible_across_seeds():
    sys = random_network(5, 500.0, seed=0)
    fld = DriveField("square", 80 / GAMMA_13C, 1.0)
    train = PulseTrain(math.pi / 2, TAU)
    widths = [linewidth_vs_pulses(sys, train, SimConfig(k_dd=1.0, n_configs=10, seed=s), [256],
                                  field=fld, min_half_span=400.0)[0].fwhm for s in (1, 2)]
    assert all(np.isfinite(widths))
    assert max(widths) / min(widths) < 1.15


# ------------------------------------------------------------------ tracking

def test_stft_constant_frequency():
    t = TAU * np.arange(1, 40001)
    x = 1e-3 * np.cos(2 * math.pi * 2760.0 * t)
    track = stft_track(x, TAU, 0.2, 0.1)
    assert all(abs(p.freq - 2760.0) < 1 / 0.2 for p in track)
    assert not any(p.low_confidence for p in track)


def test_stft_lorentzian_on_chirp():
    fld = DriveField("chirp", 1.0, chirp=(1000.0, 3000.0, 20.0))
    from nucsense.core import drive_phase, instantaneous_frequency
    t = TAU * np.arange(1, int(round(20 / TAU)) + 1)
    x = np.cos(drive_phase(fld, t))
    track = stft_track(x, TAU, 0.15, 1.0, lorentzian_fit=True)
    errs = [abs(p.freq - instantaneous_frequency(fld, p.t_center)) for p in track]
    assert max(errs) < 1 / 0.15


def test_stft_guards():
    with pytest.raises(DomainError):
        stft_track(np.ones(100), TAU, 5 * TAU, TAU)
    with pytest.raises(DomainError):
        stft_track(np.ones(100), TAU, 1.0, 0.1)
