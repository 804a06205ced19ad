"""Zeroth-order average Hamiltonians in the toggling frame of the pulse train.

Frame convention: after j pulses a Hamiltonian appears as
exp(+i j theta I_x) H exp(-i j theta I_x). Under it I_z maps to
cos(a) I_z + sin(a) I_y, so a z drive averages to Re(P) I_z + Im(P) I_y with
P = sum_j w_j exp(i a_j) the block phasor sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .core import (DriveField, PulseTrain, SpinSystem, collective_operator, dipolar_hamiltonian,
                   magnus_parameter, pair_operator, square_start_sign, waveform_integral)
from .dsp import MagnetometerTrace
from .errors import DimensionError


@dataclass
class TogglingFrame:
    """Blocks between switching events: frame angle, duration and drive sign.

    In the literal convention a drive sign flip advances the angle by pi and
    every sign is +1; otherwise the angle counts pulses only and the sign is
    carried separately. ``pulses`` counts pulses applied before each block.
    """

    angles: np.ndarray
    dts: np.ndarray
    signs: np.ndarray
    starts: np.ndarray
    pulses: np.ndarray
    literal: bool = True

    def __post_init__(self):
        if np.any(self.dts <= 0):
            raise ValueError("toggling-frame blocks need positive durations")

    @property
    def blocks(self) -> list:
        return list(zip(self.angles.tolist(), self.dts.tolist(), self.signs.tolist()))

    def __len__(self):
        return len(self.dts)


@dataclass
class DriveAverage:
    """Phasor sum P; the averaged drive is i_z_coeff*I_z + i_y_coeff*(-I_y)."""

    phasor: complex
    total_time: float
    per_cycle: np.ndarray | None = None

    @property
    def i_z_coeff(self) -> float:
        return float(self.phasor.real)

    @property
    def i_y_coeff(self) -> float:
        return float(-self.phasor.imag)

    def operator(self, n_spins: int) -> np.ndarray:
        """Time-integrated drive generator (units of seconds) in the 2^N space."""
        return (self.i_z_coeff * collective_operator(n_spins, "z")
                - self.i_y_coeff * collective_operator(n_spins, "y"))


def toggling_frame(train: PulseTrain, field: DriveField | None = None, duration: float | None = None,
                   *, literal: bool = True) -> TogglingFrame:
    """Toggling-frame blocks for a pulse train and (optionally) a square/DC drive."""
    from .quantum import build_schedule
    field = field or DriveField("dc", 0.0)
    sched_field = field if field.kind in ("square", "dc") else DriveField("dc", 0.0)
    sched = build_schedule(train, sched_field, duration)
    dts = sched.intervals
    starts = sched.times - dts
    is_pulse = np.array([k in ("pulse", "both") for k in sched.kinds])
    is_flip = np.array([k in ("flip", "both") for k in sched.kinds])
    pulses = np.concatenate([[0], np.cumsum(is_pulse)[:-1]])
    flips = np.concatenate([[0], np.cumsum(is_flip)[:-1]])
    sgn0 = square_start_sign(field) if field.kind == "square" else 1.0
    angle = pulses * train.theta
    if literal:
        angles = angle + math.pi * flips + (math.pi if sgn0 < 0 else 0.0)
        signs = np.ones(len(dts))
    else:
        angles = angle
        signs = sgn0 * (-1.0) ** flips
    keep = dts > 0
    return TogglingFrame(angles[keep], dts[keep], signs[keep], starts[keep], pulses[keep], literal)


def toggling_hamiltonians(train: PulseTrain, H: np.ndarray, count: int) -> list:
    """[exp(+i j theta I_x) H exp(-i j theta I_x) for j = 1..count]."""
    if count < 1:
        raise ValueError("count must be >= 1")
    n = int(round(math.log2(H.shape[0])))
    ix = collective_operator(n, "x")
    w, v = np.linalg.eigh(ix)
    out = []
    for j in range(1, count + 1):
        u = (v * np.exp(1j * j * train.theta * w)) @ v.conj().T
        out.append(u @ H @ u.conj().T)
    return out


def rotated_dipolar(sys: SpinSystem, theta: float) -> np.ndarray:
    """H_dd viewed from a frame rotated by theta about x.

    sum b [3(cos^2 zz + cos sin (yz + zy) + sin^2 yy) - I.I] per pair.
    """
    if sys.n_spins < 2:
        raise DimensionError("need at least two spins")
    c, s = math.cos(theta), math.sin(theta)
    n = sys.n_spins
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    for (k, l), b in sys.couplings.items():
        if b == 0.0:
            continue
        zz = pair_operator(n, k, l, "z", "z")
        yy = pair_operator(n, k, l, "y", "y")
        xx = pair_operator(n, k, l, "x", "x")
        yz = pair_operator(n, k, l, "y", "z") + pair_operator(n, k, l, "z", "y")
        h += b * (3 * (c * c * zz + c * s * yz + s * s * yy) - (xx + yy + zz))
    return h


def average_dipolar(sys: SpinSystem, theta_grid, weights=None) -> np.ndarray:
    """Weighted mean of rotated_dipolar over the frame angles."""
    grid = np.asarray(list(theta_grid), dtype=float)
    w = np.ones(len(grid)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    # H(theta) = A + cos(2 theta) B + sin(2 theta) C, so only two moments are needed
    c2 = float(np.sum(w * np.cos(2 * grid)))
    s2 = float(np.sum(w * np.sin(2 * grid)))
    h0 = rotated_dipolar(sys, 0.0)
    h90 = rotated_dipolar(sys, math.pi / 2)
    h45 = rotated_dipolar(sys, math.pi / 4)
    a = 0.5 * (h0 + h90)
    b = 0.5 * (h0 - h90)
    c = h45 - a
    return a + c2 * b + s2 * c


def eq2_dipolar(sys: SpinSystem) -> np.ndarray:
    """Closed form sum b [(3/2)(zz + yy) - I.I] for the uniform quarter-turn grid."""
    n = sys.n_spins
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    for (k, l), b in sys.couplings.items():
        zz = pair_operator(n, k, l, "z", "z")
        yy = pair_operator(n, k, l, "y", "y")
        xx = pair_operator(n, k, l, "x", "x")
        h += b * (1.5 * (zz + yy) - (xx + yy + zz))
    return h


def drive_phasor_average(frame: TogglingFrame, field: DriveField | None = None,
                         cycle_pulses: int = 4) -> DriveAverage:
    """Sum of w_j exp(i angle_j) over blocks.

    For square and DC drives w_j = sign_j*dt_j; for sine and chirp drives w_j
    is the block integral of the unit-amplitude waveform. ``per_cycle`` holds
    partial sums over consecutive groups of ``cycle_pulses`` pulse periods.
    """
    if len(frame) == 0:
        raise ValueError("empty toggling frame")
    if field is not None and field.kind in ("sine", "chirp"):
        unit = DriveField(field.kind, 1.0, field.frequency, field.phase, field.chirp)
        w = waveform_integral(unit, frame.starts, frame.starts + frame.dts)
    else:
        w = frame.signs * frame.dts
    terms = w * np.exp(1j * frame.angles)
    cyc = frame.pulses // cycle_pulses
    per = np.bincount(cyc, weights=terms.real) + 1j * np.bincount(cyc, weights=terms.imag)
    return DriveAverage(complex(terms.sum()), float(frame.dts.sum()), per)


def phasor_rows(frame: TogglingFrame, field: DriveField | None = None) -> list:
    """(block_index, angle, weight_re, weight_im) rows for plotting."""
    if field is not None and field.kind in ("sine", "chirp"):
        unit = DriveField(field.kind, 1.0, field.frequency, field.phase, field.chirp)
        w = waveform_integral(unit, frame.starts, frame.starts + frame.dts)
    else:
        w = frame.signs * frame.dts
    z = w * np.exp(1j * frame.angles)
    return [(i, float(a), float(v.real), float(v.imag)) for i, (a, v) in enumerate(zip(frame.angles, z))]


def aht_signal(sys: SpinSystem, train: PulseTrain, field: DriveField, duration: float | None = None,
               cfg=None, *, normalize: bool = True) -> MagnetometerTrace:
    """Stroboscopic S_j from zeroth-order averaged propagators.

    After pulse j the toggling-frame propagator is
    exp(-2*pi*i*(t_j*Hbar_dd + k_z*gamma_n*B_AC*D_j)) where D_j is the drive
    average accumulated up to t_j; the state is then rotated back by the j
    applied pulses.
    """
    from .quantum import SimConfig
    cfg = cfg or SimConfig()
    duration = train.duration if duration is None else duration
    n = sys.n_spins
    if n >= 2 and sys.couplings:
        magnus_parameter(sys, train)
    frame = toggling_frame(train, field, duration, literal=False)
    if n >= 2 and cfg.k_dd > 0:
        scale = cfg.k_dd
        if cfg.normalize_dd:
            scale /= np.linalg.norm(dipolar_hamiltonian(sys))
        hdd_scaled = sys.scaled(scale)
        h0 = rotated_dipolar(hdd_scaled, 0.0)
        h90 = rotated_dipolar(hdd_scaled, math.pi / 2)
        h45 = rotated_dipolar(hdd_scaled, math.pi / 4)
        a, b = 0.5 * (h0 + h90), 0.5 * (h0 - h90)
        c = h45 - a
    else:
        a = b = c = np.zeros((sys.dim, sys.dim), dtype=complex)
    ix = collective_operator(n, "x")
    iy = collective_operator(n, "y")
    iz = collective_operator(n, "z")
    if field.kind in ("sine", "chirp"):
        unit = DriveField(field.kind, 1.0, field.frequency, field.phase, field.chirp)
        w = waveform_integral(unit, frame.starts, frame.starts + frame.dts)
    else:
        w = frame.signs * frame.dts
    drive = cfg.k_z * sys.gamma_n * field.amplitude * w * np.exp(1j * frame.angles)
    bias = cfg.k_z * sys.gamma_n * field.bias * frame.dts * np.exp(1j * frame.angles)
    drive = drive + bias
    t_acc = np.cumsum(frame.dts)
    c2 = np.cumsum(frame.dts * np.cos(2 * frame.angles))
    s2 = np.cumsum(frame.dts * np.sin(2 * frame.angles))
    pz = np.cumsum(drive)
    # block index closing each pulse period
    ends = np.flatnonzero(np.diff(np.concatenate([frame.pulses, [frame.pulses[-1] + 1]])) > 0)
    wx, vx = np.linalg.eigh(ix)
    norm0 = float(np.real(np.trace(ix @ ix)))
    out = []
    for j, e in enumerate(ends, start=1):
        gen = (t_acc[e] * a + c2[e] * b + s2[e] * c
               + pz[e].real * iz + pz[e].imag * iy)
        u = expm(-2j * math.pi * gen)
        rho = u @ ix @ u.conj().T
        rot = (vx * np.exp(-1j * j * train.theta * wx)) @ vx.conj().T
        rho = rot @ rho @ rot.conj().T
        out.append(math.hypot(np.trace(rho @ ix).real, np.trace(rho @ iy).real) / norm0)
    s = np.array(out)
    if normalize and len(s):
        s = s / s[0]
    return MagnetometerTrace(s, train.tau)
