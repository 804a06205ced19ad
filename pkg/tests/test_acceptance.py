"""Acceptance criteria, one PASS/FAIL line each (collected in the terminal summary).

Run ``pytest tests/test_acceptance.py -v`` to see the block at the end of the
session, or ``python tests/test_acceptance.py`` to print the lines directly.
"""
import math
import time

import numpy as np

from nucsense.aht import drive_phasor_average, eq2_dipolar, toggling_frame
from nucsense.bloch import analytic_trajectory, integrate_bloch, strobe_exact
from nucsense.core import (GAMMA_13C, DriveField, PulseTrain, SpinSystem, collective_operator,
                           commutator, magnus_parameter, random_network, resonance_frequency)
from nucsense.dsp import (alias_map, decompose, extract_trace, fit_peak, harmonic_spectrum,
                          stft_track, synthesize_raw)
from nucsense.experiments import (ExperimentConfig, estimate_sensitivity, run_chirp_response,
                                  run_harmonic_scaling)
from nucsense.quantum import SimConfig, linewidth_vs_pulses, resonance_sweep, simulate

TAU = 73e-6
F_RES = 1 / (4 * TAU)


class Clock:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def test_c01_resonance_condition(report):
    freqs = np.linspace(2000.0, 5000.0, 41)
    step = freqs[1] - freqs[0]
    with Clock() as clk:
        res = resonance_sweep(SpinSystem(1), PulseTrain(math.pi / 2, TAU, n_pulses=2000), SimConfig(),
                              freqs, field=DriveField("square", 1e-6, 1.0))
    err = abs(res.dip_frequency - F_RES)
    ok = err <= step and clk.elapsed < 30
    assert report("criterion 1 resonance condition", ok,
                  f"dip {res.dip_frequency:.1f} Hz vs 1/(4 tau) {F_RES:.1f} Hz (|err| {err:.1f} <= {step:.0f}), "
                  f"{clk.elapsed:.1f} s < 30 s")


def _line_fwhm(spec, f):
    k = int(round(f / spec.bin_spacing))
    k = k - 3 + int(np.argmax(spec.mags[k - 3:k + 4]))
    seg = slice(k - 6, k + 7)
    return fit_peak(spec.freqs[seg], spec.mags[seg], "gaussian").fwhm


def test_c02_harmonic_positions(report):
    with Clock() as clk:
        train = PulseTrain(math.pi / 2, TAU, n_pulses=int(round(20.0 / TAU)))
        fld = DriveField("sine", 5 / GAMMA_13C, 2760.0, 0.3, bias=50 / GAMMA_13C)
        trace = analytic_trajectory(train, fld, init="dressed").to_trace()
        _, s_o = decompose(trace, 0.073)
        ranked = harmonic_spectrum(s_o, TAU, pad=8, taper="hann")
        rect = harmonic_spectrum(s_o, TAU, pad=8)
        top = sorted(p.freq for p in ranked.top(2))
        widths = [_line_fwhm(rect, f) for f in top]
    pos_err = [abs(top[0] - 2760.0), abs(top[1] - 5520.0)]
    ok = max(pos_err) < 0.05 and max(widths) < 0.1 and clk.elapsed < 10
    assert report("criterion 2 harmonic positions", ok,
                  f"peaks {top[0]:.4f} / {top[1]:.4f} Hz (errors {pos_err[0] * 1e3:.1f}, "
                  f"{pos_err[1] * 1e3:.1f} mHz < 50), FWHM {widths[0] * 1e3:.0f} / {widths[1] * 1e3:.0f} mHz "
                  f"< 100, {clk.elapsed:.1f} s < 10 s")


def test_c03_aliasing(report):
    f3 = alias_map(3 * 2760.0, 6849.3)
    f4 = alias_map(4 * 2760.0, 6849.3)
    ok = abs(f3 - 5418.0) <= 1 and abs(f4 - 2658.0) <= 1
    assert report("criterion 3 aliasing arithmetic", ok,
                  f"f3 {f3:.1f} Hz (5418 +/- 1), f4 {f4:.1f} Hz (2658 +/- 1)")


def test_c04_harmonic_scaling(report):
    cfg = ExperimentConfig.from_dict({"engine": "analytic",
                                      "drive": {"kind": "sine", "frequency": 2760.0, "bias": 50 / GAMMA_13C},
                                      "processing": {"record_duration": 20.0}})
    with Clock() as clk:
        s = run_harmonic_scaling(cfg).summary
    e1, e2 = s["harmonic_1"]["exponent"], s["harmonic_2"]["exponent"]
    ok = abs(e1 - 1.0) <= 0.1 and abs(e2 - 2.0) <= 0.15 and clk.elapsed < 60
    assert report("criterion 4 harmonic scaling exponents", ok,
                  f"primary {e1:.5f} (1.0 +/- 0.1), secondary {e2:.5f} (2.0 +/- 0.15), "
                  f"{clk.elapsed:.1f} s < 60 s")


def test_c05a_dc_phasor_vanishes(report):
    worst = 0.0
    for n in range(3, 13):
        for k in range(1, n):
            if math.gcd(k, n) != 1 or 2 * k == n:
                continue
            train = PulseTrain(2 * math.pi * k / n, TAU)
            avg = drive_phasor_average(toggling_frame(train, DriveField("dc", 1.0), n * TAU))
            worst = max(worst, abs(avg.phasor) / avg.total_time)
    assert report("criterion 5a DC phasor vanishes", worst < 1e-12,
                  f"max |P|/T {worst:.1e} < 1e-12 over theta = 2 pi k/n, n = 3..12")


def _square_average(phase):
    fld = DriveField("square", 1.0, F_RES, phase)
    return drive_phasor_average(toggling_frame(PulseTrain(math.pi / 2, TAU, n_pulses=4), fld), fld)


def test_c05b_resonant_square_minus_iy(report):
    d = _square_average(math.pi / 4)
    ok = d.i_y_coeff > 0 and abs(d.i_z_coeff) < 1e-12 * TAU
    assert report("criterion 5b resonant square average along -I_y", ok,
                  f"I_z coeff {d.i_z_coeff / TAU:.1e} tau, -I_y coeff {d.i_y_coeff / TAU:.3f} tau "
                  f"(phi0 = pi/4)")


def test_c05c_iz_cancels_at_minus_pi_over_6(report):
    # stated as-is; with the frame handedness used here the I_z terms cancel at pi/4 instead
    d = _square_average(-math.pi / 6)
    ok = abs(d.i_z_coeff) < 1e-12 * TAU
    assert report("criterion 5c phi0 = -pi/6 zeroes I_z", ok,
                  f"I_z coeff {d.i_z_coeff / TAU:.3f} tau, -I_y coeff {d.i_y_coeff / TAU:.3f} tau")


def test_c06_oracle_equivalence(report):
    train = PulseTrain(math.pi / 2, TAU, n_pulses=400)
    fld = DriveField("sine", 5 / GAMMA_13C, F_RES, 0.3)
    with Clock() as clk:
        q = simulate(SpinSystem(1), train, fld, normalize=False).s
        fe = integrate_bloch(train, fld, "x", steps_per_period=2000).S
        an = analytic_trajectory(train, fld).S
    errs = {"quantum-FE": np.max(np.abs(q - fe)), "quantum-analytic": np.max(np.abs(q - an)),
            "FE-analytic": np.max(np.abs(fe - an))}
    ok = max(errs.values()) < 1e-3 and clk.elapsed < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    assert report("criterion 6 oracle equivalence", ok,
                  f"{detail} (< 1e-3 over 100 AC periods), {clk.elapsed:.1f} s < 10 s")


def test_c07_quasi_conservation(report):
    train = PulseTrain(math.pi / 2, TAU, n_pulses=100)
    ix = collective_operator(3, "x")
    lines = []
    ok = True
    with Clock() as clk:
        for zeta in (0.05, 0.1, 0.2):
            j = zeta / (2 * math.pi * TAU)
            sys = SpinSystem(3, {(0, 1): j, (0, 2): j, (1, 2): j})
            s = simulate(sys, train, DriveField("dc", 0.0), SimConfig(k_dd=1.0), normalize=False).s
            dev = float(np.max(np.abs(s - 1)))
            hbar = eq2_dipolar(sys)
            rel = np.linalg.norm(commutator(ix, hbar)) / (np.linalg.norm(ix) * np.linalg.norm(hbar))
            ok &= dev < 0.1 and rel < 1e-12
            lines.append(f"zeta {magnus_parameter(sys, train):.2f}: max|S-1| {dev:.3f}, "
                         f"|[rho,H]| {rel:.0e}")
    ok &= clk.elapsed < 10
    assert report("criterion 7 quasi-conservation", ok,
                  "; ".join(lines) + f" (< 0.1, < 1e-12), {clk.elapsed:.1f} s < 10 s")


def test_c08_linewidth_plateau(report):
    train = PulseTrain(math.pi / 2, TAU, n_pulses=4)
    net = random_network(5, 500.0, 0)
    fld = DriveField("square", 80 / GAMMA_13C, 1.0)
    counts = [32, 64, 128, 256]
    with Clock() as clk:
        free = linewidth_vs_pulses(net, train, SimConfig(k_dd=0.0, n_configs=4, seed=1), counts,
                                   field=fld, n_freqs=33)
        coupled = linewidth_vs_pulses(net, train, SimConfig(k_dd=1.0, n_configs=4, seed=1), counts,
                                      field=fld, n_freqs=33, min_half_span=1000.0)
    w0 = [e.fwhm for e in free]
    w1 = [e.fwhm for e in coupled]
    falling = all(a > b for a, b in zip(w0, w0[1:]))
    tail = w1[1:]
    plateau = max(tail) / min(tail) < 1.15 and min(tail) > 2 * w0[-1]
    ok = falling and plateau and not any(e.flagged for e in free + coupled) and clk.elapsed < 300
    assert report("criterion 8 linewidth plateau", ok,
                  f"k_dd=0 FWHM {', '.join(f'{w:.0f}' for w in w0)} Hz decreasing; "
                  f"k_dd=1 FWHM {', '.join(f'{w:.0f}' for w in w1)} Hz, 64-256 spread "
                  f"{max(tail) / min(tail):.2f} < 1.15; {clk.elapsed:.0f} s < 300 s")


def test_c09_chirp_tracking(report):
    tau = 65e-6  # keeps f_res (3.85 kHz) above the three probe frequencies
    window = 0.15
    with Clock() as clk:
        train = PulseTrain(math.pi / 2, tau, n_pulses=int(round(20.0 / tau)))
        fld = DriveField("chirp", 20 / GAMMA_13C, phase=0.3, chirp=(1000.0, 3000.0, 20.0),
                         bias=50 / GAMMA_13C)
        trace = strobe_exact(train, fld, init="floquet").to_trace()
        _, s_o = decompose(trace, 0.073)
        track = stft_track(s_o, tau, window, window / 2, band=(1000.0, 4000.0), suppress_stationary=True)
        tc = np.array([p.t_center for p in track])
        errs = []
        for f_probe in (1500.0, 2500.0, 3500.0):
            k = int(np.argmin(np.abs(tc - (f_probe - 1000.0) / 150.0)))
            errs.append((1000.0 + 150.0 * tc[k], track[k].freq - (1000.0 + 150.0 * tc[k])))
        cusp_cfg = ExperimentConfig.from_dict({
            "engine": "bloch", "replicates": 3, "pulse": {"theta": math.pi / 3},
            "drive": {"kind": "chirp", "amplitude": 5 / GAMMA_13C, "bias": 20 / GAMMA_13C,
                      "chirp": [1000.0, 3000.0, 20.0]}})
        res = run_chirp_response(cusp_cfg)
    s = res.summary
    f = np.array([r[0] for r in res.rows])
    m = np.array([r[1] for r in res.rows])
    flank = m[(np.abs(f - s["f_res_hz"]) > 30) & (np.abs(f - s["f_res_hz"]) < 60)].max()
    peak = m[np.abs(f - s["primary_peak_hz"]) < 1].max()
    cusp = abs(s["primary_peak_hz"] - s["f_res_hz"]) < 0.01 * s["f_res_hz"] and peak > 10 * flank
    tol = 2 / window
    ok = all(abs(e) <= tol for _, e in errs) and cusp and clk.elapsed < 30
    detail = ", ".join(f"{ft:.0f} Hz: {e:+.2f}" for ft, e in errs)
    assert report("criterion 9 chirp tracking", ok,
                  f"STFT errors {detail} (|err| <= {tol:.1f} Hz); cusp at {s['primary_peak_hz']:.1f} Hz vs "
                  f"f_res {s['f_res_hz']:.1f} Hz, peak/flank {peak / flank:.0f} > 10; "
                  f"{clk.elapsed:.1f} s < 30 s")


def test_c10_pipeline_round_trip(report):
    train = PulseTrain(math.pi / 2, TAU, t_acq=32e-6)
    t = TAU * np.arange(1, 1001)
    a = 1 + 0.05 * np.cos(2 * math.pi * 1234.5 * t) * np.exp(-t / 0.05)
    with Clock() as clk:
        trace = extract_trace(synthesize_raw(a, train, mode="full"))
        s_d, s_o = decompose(trace, 0.005)
    rel = float(np.max(np.abs(trace.s - a) / a))
    exact = bool(np.array_equal(s_d + s_o, trace.s))
    ok = rel < 1e-3 and exact and clk.elapsed < 10
    assert report("criterion 10 pipeline round trip", ok,
                  f"max rel error {rel:.1e} < 1e-3, s_d + s_o == s exactly: {exact}, "
                  f"{clk.elapsed:.1f} s < 10 s (full raw, 1000 windows)")


def test_c11_sensitivity_procedure(report):
    rng = np.random.default_rng(11)
    slope, noise = 1e6, 1e-3
    amps = np.linspace(1e-9, 1e-8, 8)
    meas = slope * amps[:, None] + noise * rng.standard_normal((8, 5))
    res = estimate_sensitivity(None, amps, noise, 34.0, measurements=meas, seed=1)
    true = noise / slope
    lo, hi = res.min_field_ci
    ok = lo <= true <= hi
    assert report("criterion 11 sensitivity procedure", ok,
                  f"true min_field {true:.2e} T in 95% CI [{lo:.3e}, {hi:.3e}] T "
                  f"(estimate {res.min_field:.3e} T)")


if __name__ == "__main__":
    import sys

    def _print(label, ok, detail):
        print(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
        return ok

    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_c"):
            try:
                fn(_print)
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
