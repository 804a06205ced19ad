"""Domain types, spin operators, Hamiltonian terms and drive waveforms.

Conventions used throughout the package:

* frequencies and Hamiltonians are in Hz; propagators apply the 2*pi,
  U = exp(-2j*pi*H*t);
* a pulse of flip angle theta is P = exp(-1j*theta*I_x), a right-handed
  rotation of the spin vector by +theta about x;
* a z field B rotates the spin vector by +2*pi*gamma_n*B*dt about z.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping

import numpy as np

from .errors import DimensionError, DomainError, MagnusValidityWarning

GAMMA_13C = 10.7084e6  # Hz/T
MAX_SPINS = 10
THETA_PI_TOL = 1e-6

DRIVE_KINDS = ("dc", "sine", "square", "chirp")


@dataclass(frozen=True)
class SpinSystem:
    """N spin-1/2 nuclei with pairwise secular dipolar couplings (Hz)."""

    n_spins: int
    couplings: Mapping = field(default_factory=dict)
    gamma_n: float = GAMMA_13C
    epsilon: float = 2e-3

    def __post_init__(self):
        if int(self.n_spins) != self.n_spins or self.n_spins < 1:
            raise ValueError(f"n_spins must be a positive integer, got {self.n_spins}")
        clean = {}
        for key, b in dict(self.couplings).items():
            k, l = (int(v) for v in key)
            if not 0 <= k < l < self.n_spins:
                raise ValueError(f"coupling key {key} must satisfy 0 <= k < l < n_spins")
            if not np.isfinite(b):
                raise ValueError(f"coupling {key} is not finite")
            clean[(k, l)] = float(b)
        object.__setattr__(self, "couplings", clean)
        if not self.gamma_n > 0:
            raise ValueError("gamma_n must be positive")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")

    @property
    def dim(self) -> int:
        return 2 ** self.n_spins

    @property
    def median_coupling(self) -> float:
        """J, the median of |b_kl| over coupled pairs (0 when uncoupled)."""
        if not self.couplings:
            return 0.0
        return float(np.median(np.abs(list(self.couplings.values()))))

    def scaled(self, factor: float) -> "SpinSystem":
        return SpinSystem(self.n_spins, {k: factor * b for k, b in self.couplings.items()},
                          self.gamma_n, self.epsilon)


@dataclass(frozen=True)
class PulseTrain:
    """Periodic train of flip-angle pulses.

    Pulse j (j = 1..n_pulses) ends at t = j*tau; with t_p > 0 it occupies
    [j*tau - t_p, j*tau]. The acquisition window follows each pulse.
    """

    theta: float
    tau: float
    t_p: float = 0.0
    t_acq: float = 0.0
    n_pulses: int = 1

    def __post_init__(self):
        if not 0 < self.theta < 2 * math.pi:
            raise ValueError(f"theta must lie in (0, 2pi), got {self.theta}")
        if abs(self.theta - math.pi) < THETA_PI_TOL:
            raise ValueError("theta = pi does not spin-lock; choose another flip angle")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.t_p < 0 or self.t_acq < 0:
            raise ValueError("t_p and t_acq must be non-negative")
        if self.t_p + self.t_acq > self.tau * (1 + 1e-12):
            raise ValueError(f"t_p + t_acq = {self.t_p + self.t_acq:g} s exceeds tau = {self.tau:g} s")
        if int(self.n_pulses) != self.n_pulses or self.n_pulses < 1:
            raise ValueError("n_pulses must be a positive integer")
        object.__setattr__(self, "n_pulses", int(self.n_pulses))

    @property
    def duration(self) -> float:
        return self.n_pulses * self.tau

    @property
    def rabi_hz(self) -> float:
        """Nutation frequency during a finite pulse, theta/(2*pi*t_p)."""
        if self.t_p <= 0:
            return math.inf
        return self.theta / (2 * math.pi * self.t_p)

    def with_pulses(self, n_pulses: int) -> "PulseTrain":
        return PulseTrain(self.theta, self.tau, self.t_p, self.t_acq, n_pulses)


@dataclass(frozen=True)
class DriveField:
    """Longitudinal drive B(t) along z.

    ``bias`` is an optional static field (T) added to every waveform; it
    models a resonance offset of the spin-locked ensemble.
    """

    kind: str = "dc"
    amplitude: float = 0.0
    frequency: float = 0.0
    phase: float = 0.0
    chirp: tuple | None = None
    bias: float = 0.0

    def __post_init__(self):
        kind = str(self.kind).lower()
        object.__setattr__(self, "kind", kind)
        if kind not in DRIVE_KINDS:
            raise ValueError(f"unknown drive kind {self.kind!r}; expected one of {DRIVE_KINDS}")
        if not self.amplitude >= 0:
            raise ValueError("amplitude must be non-negative")
        if kind in ("sine", "square") and not self.frequency > 0:
            raise ValueError(f"{kind} drive needs frequency > 0")
        if kind == "chirp":
            if self.chirp is None or len(self.chirp) != 3:
                raise ValueError("chirp drive needs chirp=(f_ini, span, duration)")
            f_ini, span, dur = (float(v) for v in self.chirp)
            if not (span > 0 and dur > 0 and f_ini >= 0):
                raise ValueError("chirp needs f_ini >= 0, span > 0 and duration > 0")
            object.__setattr__(self, "chirp", (f_ini, span, dur))

    def with_amplitude(self, amplitude: float) -> "DriveField":
        return DriveField(self.kind, amplitude, self.frequency, self.phase, self.chirp, self.bias)

    def with_phase(self, phase: float) -> "DriveField":
        return DriveField(self.kind, self.amplitude, self.frequency, phase, self.chirp, self.bias)

    def with_frequency(self, frequency: float) -> "DriveField":
        return DriveField(self.kind, self.amplitude, frequency, self.phase, self.chirp, self.bias)


# ---------------------------------------------------------------- operators

_PAULI_HALF = {
    "x": np.array([[0, 0.5], [0.5, 0]], dtype=complex),
    "y": np.array([[0, -0.5j], [0.5j, 0]], dtype=complex),
    "z": np.array([[0.5, 0], [0, -0.5]], dtype=complex),
}


def _check_dim(n: int):
    if n > MAX_SPINS:
        raise DimensionError(f"{n} spins exceeds the {MAX_SPINS}-spin dimension guard")
    if n < 1:
        raise DimensionError("need at least one spin")


def _embed(n: int, ops: dict) -> np.ndarray:
    """Tensor product with ops[k] on site k and identity elsewhere."""
    out = np.ones((1, 1), dtype=complex)
    eye = np.eye(2, dtype=complex)
    for k in range(n):
        out = np.kron(out, ops.get(k, eye))
    return out


def site_operator(n: int, site: int, axis: str) -> np.ndarray:
    _check_dim(n)
    return _embed(n, {site: _PAULI_HALF[axis]})


@lru_cache(maxsize=64)
def _collective(n: int, axis: str) -> np.ndarray:
    op = sum(site_operator(n, k, axis) for k in range(n))
    op.setflags(write=False)
    return op


def collective_operator(sys: SpinSystem | int, axis: str) -> np.ndarray:
    """Total spin component sum_k I_{k,axis} in the 2^N product space."""
    n = sys if isinstance(sys, int) else sys.n_spins
    axis = axis.lower()
    if axis not in _PAULI_HALF:
        raise ValueError(f"axis must be x, y or z, got {axis!r}")
    _check_dim(n)
    return _collective(n, axis).copy()


def pair_operator(n: int, k: int, l: int, axis_k: str, axis_l: str) -> np.ndarray:
    return _embed(n, {k: _PAULI_HALF[axis_k], l: _PAULI_HALF[axis_l]})


def dipolar_hamiltonian(sys: SpinSystem) -> np.ndarray:
    """Secular dipolar Hamiltonian sum_{k<l} b_kl (3 I_kz I_lz - I_k . I_l), in Hz."""
    if sys.n_spins < 2:
        raise DimensionError("dipolar Hamiltonian needs at least two spins")
    _check_dim(sys.n_spins)
    n = sys.n_spins
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    for (k, l), b in sys.couplings.items():
        if b == 0.0:
            continue
        h += b * (2 * pair_operator(n, k, l, "z", "z")
                  - pair_operator(n, k, l, "x", "x")
                  - pair_operator(n, k, l, "y", "y"))
    return h


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def frobenius_normalized(h: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(h)
    return h / nrm if nrm > 0 else h


def random_network(n_spins: int, median_coupling: float, seed=None, *,
                   gamma_n: float = GAMMA_13C, epsilon: float = 2e-3,
                   angular: bool = True, min_distance: float = 0.3) -> SpinSystem:
    """Random dipolar network from positions uniform in the unit cube.

    Couplings scale as r^-3, optionally with the (1 - 3cos^2)/2 orientation
    factor relative to z, and are rescaled so that median |b_kl| equals
    ``median_coupling``. Positions closer than ``min_distance`` are redrawn
    (hard-core exclusion, as on a lattice).
    """
    rng = np.random.default_rng(seed)
    for _ in range(10_000):
        pos = rng.uniform(size=(n_spins, 3))
        gaps = [np.linalg.norm(pos[l] - pos[k]) for k in range(n_spins) for l in range(k + 1, n_spins)]
        if not gaps or min(gaps) >= min_distance:
            break
    else:
        raise ValueError(f"could not place {n_spins} spins with min_distance {min_distance}")
    raw = {}
    for k in range(n_spins):
        for l in range(k + 1, n_spins):
            d = pos[l] - pos[k]
            r = np.linalg.norm(d)
            b = r ** -3
            if angular:
                b *= 0.5 * (1 - 3 * (d[2] / r) ** 2)
            raw[(k, l)] = b
    if raw and median_coupling > 0:
        scale = median_coupling / np.median(np.abs(list(raw.values())))
    else:
        scale = 0.0
    return SpinSystem(n_spins, {key: scale * b for key, b in raw.items()}, gamma_n, epsilon)


# ---------------------------------------------------------------- waveforms

def _chirp_phase(field: DriveField, t):
    f_ini, span, dur = field.chirp
    rate = span / dur
    tc = np.minimum(t, dur)
    cyc = f_ini * tc + 0.5 * rate * tc ** 2 + (f_ini + span) * np.maximum(t - dur, 0.0)
    return 2 * np.pi * cyc + field.phase


def drive_phase(field: DriveField, t):
    """Argument of the cosine for oscillating drives."""
    if field.kind == "chirp":
        return _chirp_phase(field, t)
    return 2 * np.pi * field.frequency * t + field.phase


def square_start_sign(field: DriveField) -> float:
    """Sign of a square drive on the open interval just after t = 0.

    When the phase puts a flip exactly at t = 0, cos(phase) is roundoff and
    the slope decides.
    """
    c = math.cos(field.phase)
    if abs(c) < 1e-12:
        return -math.copysign(1.0, math.sin(field.phase))
    return math.copysign(1.0, c)


def instantaneous_frequency(field: DriveField, t):
    t = np.asarray(t, dtype=float)
    if field.kind == "chirp":
        f_ini, span, dur = field.chirp
        return f_ini + span / dur * np.minimum(t, dur)
    if field.kind == "dc":
        return np.zeros_like(t)
    return np.full_like(t, field.frequency)


def waveform_value(field: DriveField, t):
    """B(t) in tesla; accepts scalars or arrays of t >= 0."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise DomainError("waveform_value needs t >= 0")
    if field.kind == "dc":
        val = np.full_like(t_arr, field.amplitude)
    elif field.kind == "square":
        val = field.amplitude * np.sign(np.cos(drive_phase(field, t_arr)))
    else:
        val = field.amplitude * np.cos(drive_phase(field, t_arr))
    val = val + field.bias
    return float(val) if np.ndim(t) == 0 else val


_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


def waveform_integral(field: DriveField, t0, t1):
    """Exact (or 6-point Gauss-Legendre for chirps) integral of B over [t0, t1]."""
    t0 = np.asarray(t0, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    out = field.bias * (t1 - t0)
    amp = field.amplitude
    if amp == 0:
        return out
    if field.kind == "dc":
        return out + amp * (t1 - t0)
    if field.kind in ("sine", "square"):
        w = 2 * np.pi * field.frequency
        x0 = w * t0 + field.phase
        x1 = w * t1 + field.phase
        if field.kind == "sine":
            return out + amp * (np.sin(x1) - np.sin(x0)) / w
        # arcsin(sin x) is the antiderivative of sign(cos x)
        return out + amp * (np.arcsin(np.sin(x1)) - np.arcsin(np.sin(x0))) / w
    half = 0.5 * (t1 - t0)
    mid = 0.5 * (t1 + t0)
    nodes = mid[..., None] + half[..., None] * _GL_X
    vals = np.cos(_chirp_phase(field, nodes)) @ _GL_W
    return out + amp * half * vals


# ---------------------------------------------------------------- scalar formulas

def resonance_frequency(train: PulseTrain) -> float:
    """Drive frequency matched to the pulse-train periodicity, theta/(2*pi*tau)."""
    return train.theta / (2 * math.pi * train.tau)


def sensor_bandwidth(train: PulseTrain | float) -> float:
    """Nyquist band 1/(2*tau) of the stroboscopic trace."""
    tau = train.tau if isinstance(train, PulseTrain) else float(train)
    return 1.0 / (2.0 * tau)


def magnus_parameter(sys: SpinSystem, train: PulseTrain) -> float:
    """zeta = 2*pi*J*tau with J the median |coupling|; warns when zeta >= 0.5."""
    if sys.n_spins < 2:
        raise DimensionError("magnus_parameter needs at least two spins")
    zeta = 2 * math.pi * sys.median_coupling * train.tau
    if zeta >= 0.5:
        warnings.warn(f"zeta = {zeta:.3f} >= 0.5: zeroth-order average Hamiltonian unreliable",
                      MagnusValidityWarning, stacklevel=2)
    return zeta
