import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import linalg

from lli_ions import msgate
from lli_ions import quantum as qc


def test_hamiltonian_is_hermitian():
    cfg = msgate.GateConfig().with_rabi(1e5)
    for t in (0.0, 3.3e-6, 7.1e-5):
        h = msgate.hamiltonian_at(t, cfg)
        assert np.allclose(h, h.conj().T, atol=1e-9)


def test_analytic_rabi_closure_condition():
    cfg = msgate.GateConfig()
    # eta * Omega = delta / 2 in angular units
    assert cfg.mode.lamb_dicke * msgate.analytic_rabi(cfg) == pytest.approx(math.pi * cfg.delta_ms)


def test_exact_state_matches_dense_propagator():
    # independent oracle: rotating-frame Hamiltonian exponentiated on the full space
    cfg = replace(msgate.GateConfig(mode=msgate.MotionalMode(n_max=3)).with_rabi(4e5), step=2e-9)
    k0 = msgate.initial_ket(cfg)
    t = 3e-5
    p = msgate._parts(cfg)
    h = p.diag + p.b + p.b.conj().T - p.delta * np.diag(p.number)
    psi = np.exp(-1j * p.delta * t * p.number) * (linalg.expm(-1j * h * t) @ k0.amplitudes)
    ref = qc.Ket(k0.basis, psi)
    assert qc.fidelity(ref, msgate.exact_state(k0, cfg, t)) == pytest.approx(1.0, abs=1e-12)
    traj = msgate.propagate(k0, cfg, t)
    assert qc.fidelity(ref, traj.states[-1]) > 1 - 1e-6


def test_propagation_preserves_norm():
    cfg = msgate.GateConfig(mode=msgate.MotionalMode(n_max=4)).with_rabi(6e5)
    traj = msgate.propagate(msgate.initial_ket(cfg), cfg, 2e-5, n_samples=5)
    for k in traj.states:
        assert k.norm == pytest.approx(1.0, abs=1e-10)


def test_coarse_step_raises():
    cfg = replace(msgate.GateConfig(mode=msgate.MotionalMode(n_max=4)).with_rabi(msgate.analytic_rabi(msgate.GateConfig())),
                  step=1e-5)
    with pytest.raises(msgate.IntegrationError):
        msgate.propagate(msgate.initial_ket(cfg), cfg, cfg.gate_time)


def test_zero_duration_returns_initial():
    cfg = msgate.GateConfig()
    k0 = msgate.initial_ket(cfg)
    traj = msgate.propagate(k0, cfg, 0.0)
    assert qc.fidelity(traj.states[-1], k0) == 1.0


def test_calibrated_gate_makes_bell_state(calibrated_gate):
    cfg = calibrated_gate
    k = msgate.exact_state(msgate.initial_ket(cfg), cfg, cfg.gate_time)
    pops = msgate.gate_populations(k)
    assert pops["SS"] == pytest.approx(0.5, abs=1e-3)
    assert pops["DD"] == pytest.approx(0.5, abs=1e-3)
    assert msgate.gate_fidelity(k).overlap > 0.9999


def test_mid_gate_transient_population(calibrated_gate):
    cfg = calibrated_gate
    k = msgate.exact_state(msgate.initial_ket(cfg), cfg, cfg.gate_time / 2)
    pops = msgate.gate_populations(k)
    assert pops["SD"] + pops["DS"] > 0.1


def test_mirrored_variant_is_symmetric(calibrated_gate):
    cfg = calibrated_gate
    kr = msgate.exact_state(msgate.initial_ket(cfg, "R"), cfg, cfg.gate_time)
    kl = msgate.exact_state(msgate.initial_ket(cfg, "L"), cfg, cfg.gate_time)
    assert msgate.gate_fidelity(kl, variant="L").overlap == pytest.approx(
        msgate.gate_fidelity(kr).overlap, abs=1e-9)


def test_zero_stark_shift_calibrates_to_zero_offset():
    cfg = msgate.GateConfig(stark_shift=(0.0, 0.0))
    cal = msgate.calibrate_gate(cfg, rounds=1)
    assert max(abs(o) for o in cal.tones.stark_offset) < 1.0


def test_stark_offsets_track_the_shift(calibrated_gate):
    for o, s in zip(calibrated_gate.tones.stark_offset, calibrated_gate.stark_shift):
        assert o == pytest.approx(s, abs=5.0)


def test_uncompensated_stark_shift_ruins_gate(calibrated_gate):
    bad = calibrated_gate.with_offsets((0.0, 0.0))
    assert msgate.bell_overlap(bad) < 0.5


def test_fock_cutoff_convergence_8_to_12(calibrated_gate):
    def overlap(n):
        c = replace(calibrated_gate, mode=replace(calibrated_gate.mode, n_max=n))
        return msgate.bell_overlap(c)
    assert abs(overlap(8) - overlap(12)) < 1e-6


@pytest.mark.xfail(strict=True, reason="displacement |alpha|~1 at mid-gate leaves ~2e-4 population "
                                       "above n=5; see decisions ledger")
def test_fock_cutoff_5_to_8_below_1e6(calibrated_gate):
    def overlap(n):
        c = replace(calibrated_gate, mode=replace(calibrated_gate.mode, n_max=n))
        return msgate.bell_overlap(c)
    assert abs(overlap(5) - overlap(8)) < 1e-6


def test_parity_fringe_of_target_state():
    b = qc.CompositeBasis(2, qc.GATE_LEVELS, 0)
    rho = msgate.two_qubit_rho(msgate.bell_ket(b))
    phases = np.linspace(0, math.pi, 7)
    fr = msgate.parity_fringe(rho, phases)
    assert np.allclose(np.abs(fr), np.abs(np.cos(msgate.MS_PHASE - 2 * phases)), atol=1e-12)
    fid = msgate.gate_fidelity(msgate.bell_ket(b))
    assert fid.parity_amplitude == pytest.approx(1.0, abs=1e-12)
    assert fid.overlap == pytest.approx(1.0, abs=1e-12)


def test_intensity_noise_reduces_fidelity(calibrated_gate):
    clean = msgate.intensity_noise_fidelity(calibrated_gate, 0.0, shots=5, rng_seed=0)
    noisy = msgate.intensity_noise_fidelity(calibrated_gate, 0.05, shots=200, rng_seed=0)
    assert noisy.estimate < clean.estimate - 0.01
    again = msgate.intensity_noise_fidelity(calibrated_gate, 0.05, shots=200, rng_seed=0)
    assert again == noisy


def test_calibration_error_carries_trace():
    cfg = msgate.GateConfig()
    with pytest.raises(msgate.CalibrationError) as info:
        msgate.calibrate_rabi(cfg.with_rabi(1.0), span=0.01)
    assert isinstance(info.value.trace, list)


def test_config_validation():
    with pytest.raises(ValueError):
        msgate.GateConfig(delta_ms=-1)
    with pytest.raises(ValueError):
        msgate.MotionalMode(lamb_dicke=0.5)
    with pytest.raises(ValueError):
        msgate.GateConfig(intensity_scale=0)
