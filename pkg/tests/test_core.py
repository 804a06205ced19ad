import math
import warnings

import numpy as np
import pytest
from scipy.integrate import trapezoid

from nucsense.core import (GAMMA_13C, MAX_SPINS, DriveField, PulseTrain, SpinSystem, collective_operator,
                           commutator, dipolar_hamiltonian, drive_phase, instantaneous_frequency,
                           magnus_parameter, random_network, resonance_frequency, sensor_bandwidth,
                           waveform_integral, waveform_value)
from nucsense.errors import DimensionError, DomainError, MagnusValidityWarning


def test_collective_z_single_spin():
    assert np.allclose(collective_operator(1, "z"), np.diag([0.5, -0.5]))


def test_collective_x_two_spins_spectrum():
    ix = collective_operator(2, "x")
    assert abs(np.trace(ix)) < 1e-15
    assert np.allclose(np.sort(np.linalg.eigvalsh(ix)), [-1, 0, 0, 1])


def test_su2_three_spins():
    x, y, z = (collective_operator(3, a) for a in "xyz")
    assert np.max(np.abs(commutator(x, y) - 1j * z)) < 1e-12
    assert np.max(np.abs(commutator(y, z) - 1j * x)) < 1e-12
    assert np.max(np.abs(commutator(z, x) - 1j * y)) < 1e-12


def test_collective_accepts_spin_system():
    sys = SpinSystem(2)
    assert np.array_equal(collective_operator(sys, "y"), collective_operator(2, "y"))


def test_dimension_guard():
    with pytest.raises(DimensionError):
        collective_operator(MAX_SPINS + 1, "z")


def test_dipolar_two_spin_eigenvalues():
    h = dipolar_hamiltonian(SpinSystem(2, {(0, 1): 1.0}))
    assert np.allclose(np.sort(np.linalg.eigvalsh(h)), [-1.0, 0.0, 0.5, 0.5], atol=1e-12)


def test_dipolar_zero_couplings():
    assert not np.any(dipolar_hamiltonian(SpinSystem(3, {(0, 1): 0.0})))


def test_dipolar_commutes_with_iz():
    sys = random_network(4, 500.0, seed=3)
    h = dipolar_hamiltonian(sys)
    assert np.max(np.abs(commutator(h, collective_operator(4, "z")))) < 1e-12
    assert np.max(np.abs(h - h.conj().T)) < 1e-12


def test_spin_system_rejects_bad_keys():
    with pytest.raises(ValueError):
        SpinSystem(2, {(0, 2): 1.0})
    with pytest.raises(ValueError):
        SpinSystem(0)


def test_random_network_median_and_seed():
    a = random_network(5, 663.0, seed=7)
    b = random_network(5, 663.0, seed=7)
    assert a.couplings == b.couplings
    assert a.median_coupling == pytest.approx(663.0, rel=1e-12)
    assert len(a.couplings) == 10


def test_pulse_train_rejects_pi():
    with pytest.raises(ValueError, match="pi"):
        PulseTrain(math.pi, 73e-6)
    with pytest.raises(ValueError):
        PulseTrain(math.pi + 5e-7, 73e-6)
    PulseTrain(math.pi + 1e-3, 73e-6)


def test_pulse_train_rejects_overfull_period():
    with pytest.raises(ValueError, match="exceeds"):
        PulseTrain(math.pi / 2, 73e-6, t_p=40e-6, t_acq=40e-6)


def test_pulse_train_rabi():
    tr = PulseTrain(math.pi / 2, 73e-6, t_p=10e-6)
    assert tr.rabi_hz == pytest.approx(25_000.0)
    assert PulseTrain(math.pi / 2, 73e-6).rabi_hz == math.inf


def test_waveform_examples():
    assert waveform_value(DriveField("sine", 1.0, 1.0), 0.25) == pytest.approx(0.0, abs=1e-15)
    assert waveform_value(DriveField("square", 1.0, 1.0), 0.1) == 1.0
    chirp = DriveField("chirp", 1.0, chirp=(1000.0, 3000.0, 20.0))
    assert instantaneous_frequency(chirp, 10.0) == pytest.approx(2500.0)


def test_waveform_negative_time():
    with pytest.raises(DomainError):
        waveform_value(DriveField("sine", 1.0, 1.0), -1e-3)


def test_waveform_bias_adds():
    f = DriveField("sine", 2.0, 5.0, bias=0.5)
    assert waveform_value(f, 0.0) == pytest.approx(2.5)


def test_drive_field_validation():
    with pytest.raises(ValueError):
        DriveField("chirp", 1.0)
    with pytest.raises(ValueError):
        DriveField("sine", 1.0, 0.0)
    with pytest.raises(ValueError):
        DriveField("triangle", 1.0, 1.0)


def test_chirp_phase_derivative():
    f = DriveField("chirp", 1.0, chirp=(1000.0, 3000.0, 20.0))
    t = np.linspace(0.5, 19.5, 39)
    h = 1e-6
    fd = (drive_phase(f, t + h) - drive_phase(f, t - h)) / (2 * h) / (2 * math.pi)
    assert np.max(np.abs(fd / instantaneous_frequency(f, t) - 1)) < 1e-3


@pytest.mark.parametrize("kind", ["sine", "square", "dc"])
def test_waveform_integral_matches_quadrature(kind):
    f = DriveField(kind, 1.3, 2760.0, 0.4, bias=0.2)
    t0, t1 = 0.0123, 0.0123 + 73e-6
    x = np.linspace(t0, t1, 200_001)
    num = trapezoid(waveform_value(f, x), x)
    assert waveform_integral(f, t0, t1) == pytest.approx(num, rel=1e-6, abs=1e-12)


def test_chirp_integral_matches_quadrature():
    f = DriveField("chirp", 1.0, chirp=(1000.0, 3000.0, 20.0))
    t0, t1 = 12.0, 12.0 + 73e-6
    x = np.linspace(t0, t1, 20_001)
    num = trapezoid(waveform_value(f, x), x)
    assert waveform_integral(f, t0, t1) == pytest.approx(num, rel=1e-8, abs=1e-13)


def test_resonance_frequency_examples():
    assert resonance_frequency(PulseTrain(math.pi / 2, 73e-6)) == pytest.approx(3424.66, abs=0.01)
    assert resonance_frequency(PulseTrain(math.pi / 2, 86.6e-6)) == pytest.approx(2886.8, abs=1.0)
    a = resonance_frequency(PulseTrain(math.pi / 2, 73e-6))
    b = resonance_frequency(PulseTrain(math.pi / 3, 73e-6))
    assert b / a == pytest.approx(2 / 3, rel=1e-15)


def test_sensor_bandwidth_examples():
    assert sensor_bandwidth(73e-6) == pytest.approx(6849.3, abs=0.05)
    assert sensor_bandwidth(100e-6) == pytest.approx(5000.0)
    assert sensor_bandwidth(2 * 73e-6) == pytest.approx(sensor_bandwidth(73e-6) / 2)


def test_magnus_parameter():
    tr = PulseTrain(math.pi / 2, 73e-6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MagnusValidityWarning)
        sys = SpinSystem(2, {(0, 1): 663.0})
        assert magnus_parameter(sys, tr) == pytest.approx(0.304, abs=1e-3)
    assert magnus_parameter(SpinSystem(2, {(0, 1): 0.0}), tr) == 0.0
    z1 = magnus_parameter(SpinSystem(2, {(0, 1): 100.0}), tr)
    z2 = magnus_parameter(SpinSystem(2, {(0, 1): 100.0}), PulseTrain(math.pi / 2, 146e-6))
    assert z2 == pytest.approx(2 * z1)


def test_magnus_warns_when_large():
    with pytest.warns(MagnusValidityWarning):
        magnus_parameter(SpinSystem(2, {(0, 1): 2000.0}), PulseTrain(math.pi / 2, 73e-6))


def test_gamma_value():
    assert GAMMA_13C == pytest.approx(10.7084e6, rel=1e-4)
