"""Systematic and stochastic effects acting on the two-ion LLI state."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MU_B = 1.39962449e6  # Bohr magneton / h, Hz per gauss
# Landé factors of 40Ca+ (S1/2 free-electron value, D5/2 = 6/5)
G_S = 2.002
G_D = 1.2


@dataclass(frozen=True)
class BFieldProcess:
    b0: float = 3.72  # G
    sigma_slow: float = 1e-3  # G, stationary rms of the slow drift
    correlation_time: float = 3600.0  # s
    gradient_delta: float = 0.8e-3  # G, field difference between the two ions
    line_60hz_amplitude: float = 0.2e-3  # G
    line_frequency: float = 60.0  # Hz
    line_phase: float = 0.0  # rad at the line trigger


@dataclass(frozen=True)
class ZeemanModel:
    quad_coeff: float = 4.5  # Hz/G on the two-ion frequency (4.5 mHz per mG)
    g_s: float = G_S
    g_d: float = G_D


@dataclass(frozen=True)
class QuadrupoleModel:
    ref_shift: float = 6.2  # Hz
    ref_freq: float = 830e3  # Hz
    slope: float = -1.5e-6  # Hz per Hz of axial frequency (-1.5 mHz/kHz)
    valid_range: float = 10e3  # Hz


@dataclass(frozen=True)
class DecayModel:
    lifetime: float = 1.2  # s, D5/2

    def __post_init__(self):
        if self.lifetime <= 0:
            raise ValueError("lifetime must be positive")


def ou_drift(t, sigma: float, correlation_time: float, rng) -> np.ndarray:
    """Stationary Ornstein-Uhlenbeck samples at sorted times ``t`` (exact update)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    if sigma == 0 or t.size == 0:
        return out
    if np.any(np.diff(t) < 0):
        raise ValueError("times must be sorted")
    decay = np.exp(-np.diff(t) / correlation_time)
    kicks = rng.normal(size=t.size)
    out[0] = sigma * kicks[0]
    scale = sigma * np.sqrt(1.0 - decay**2)
    for i in range(1, t.size):
        out[i] = out[i - 1] * decay[i - 1] + scale[i - 1] * kicks[i]
    return out


def line_field(t, p: BFieldProcess):
    """60 Hz ripple; ``t`` is measured from a line trigger."""
    return p.line_60hz_amplitude * np.sin(2 * np.pi * p.line_frequency * np.asarray(t) + p.line_phase)


def line_field_integral(t0, duration, p: BFieldProcess):
    """Closed-form integral of :func:`line_field` over ``[t0, t0 + duration]`` (G s)."""
    w = 2 * np.pi * p.line_frequency
    a = w * np.asarray(t0) + p.line_phase
    return p.line_60hz_amplitude * (np.cos(a) - np.cos(a + w * np.asarray(duration))) / w


def sample_bfield(t, p: BFieldProcess, rng_seed=None, line_time=None):
    """Common field at times ``t`` and the static inter-ion gradient.

    The slow part is an Ornstein-Uhlenbeck drift about ``b0``; the 60 Hz term is
    evaluated at ``line_time`` (time since the last line trigger), which
    defaults to ``t`` itself.
    """
    rng = np.random.default_rng(rng_seed)
    t = np.asarray(t, dtype=float)
    drift = ou_drift(t, p.sigma_slow, p.correlation_time, rng)
    lt = t if line_time is None else line_time
    return p.b0 + drift + line_field(lt, p), p.gradient_delta


def quadratic_zeeman_shift(delta_b, z: ZeemanModel = ZeemanModel()):
    """Two-ion frequency change for a field change ``delta_b`` (G) about ``b0``."""
    return z.quad_coeff * delta_b


def quadrupole_shift(omega_cm, q: QuadrupoleModel = QuadrupoleModel()):
    """Electric-quadrupole contribution (Hz) at axial c.m. frequency ``omega_cm`` (Hz)."""
    dev = np.asarray(omega_cm, dtype=float) - q.ref_freq
    if np.any(np.abs(dev) > q.valid_range):
        warnings.warn("axial frequency outside the calibrated quadrupole range; extrapolating",
                      RuntimeWarning, stacklevel=2)
    out = q.ref_shift + q.slope * dev
    return out if np.ndim(out) else float(out)


# per-ion m_J of the two branches of each DFS state: (|5/2| branch, |1/2| branch)
DFS_BRANCHES = {
    "R": ((2.5, -2.5), (0.5, -0.5)),
    "L": ((-2.5, 2.5), (-0.5, 0.5)),
}


def zeeman_energy(m_j, field, g: float = G_D):
    """Linear Zeeman energy / h of one D5/2 sublevel in Hz."""
    return g * MU_B * m_j * field


def dfs_frequency(variant: str, b_common, b_gradient, z: ZeemanModel = ZeemanModel()):
    """Linear-Zeeman frequency of the DFS state (|5/2| branch minus |1/2| branch).

    Ion 0 sits at ``b_common + b_gradient/2`` and ion 1 at
    ``b_common - b_gradient/2``.
    """
    try:
        upper, lower = DFS_BRANCHES[variant]
    except KeyError:
        raise ValueError(f"unknown state variant {variant!r}") from None
    b_ion = (np.asarray(b_common) + b_gradient / 2, np.asarray(b_common) - b_gradient / 2)

    def branch(ms):
        return zeeman_energy(ms[0], b_ion[0], z.g_d) + zeeman_energy(ms[1], b_ion[1], z.g_d)

    return branch(upper) - branch(lower)


def decay_probability(n_ions: int, tau: float, d: DecayModel = DecayModel()) -> float:
    return 1.0 - math.exp(-n_ions * tau / d.lifetime)


def decay_events(n_ions: int, tau: float, d: DecayModel = DecayModel(), rng_seed=None,
                 shots: int | None = None) -> np.ndarray:
    """Per-ion decay flags: exponential decay times shorter than ``tau``."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    rng = np.random.default_rng(rng_seed)
    shape = (n_ions,) if shots is None else (shots, n_ions)
    return rng.exponential(d.lifetime, size=shape) < tau


# -- intensity noise -----------------------------------------------------

STARK_REFERENCE_RMS = 0.05


@lru_cache(maxsize=None)
def stark_response_coefficient(reference_rms: float = STARK_REFERENCE_RMS, shots: int = 600,
                               rng_seed: int = 20180219) -> float:
    """Quadratic coefficient k of the fidelity loss ``~ k * rms^2``.

    Calibrated once from the MS-gate Monte Carlo at ``reference_rms``.
    """
    from . import msgate

    cfg = msgate.calibrate_gate(msgate.GateConfig())
    base = msgate.gate_fidelity(msgate.exact_state(msgate.initial_ket(cfg), cfg, cfg.gate_time))
    noisy = msgate.intensity_noise_fidelity(cfg, reference_rms, shots=shots, rng_seed=rng_seed)
    loss = base.estimate - noisy.estimate
    return -math.log(1.0 - 2.0 * loss) / (2.0 * reference_rms**2)


def stark_fidelity_penalty(intensity_rms: float, coefficient: float | None = None) -> float:
    """Bell-fidelity loss from quasi-static fractional intensity noise.

    Gaussian ac-Stark phase jitter removes coherence as ``exp(-var/2)``; the loss
    ``(1 - exp(-2 k rms^2)) / 2`` saturates at one half and equals ``k rms^2``
    for small noise.
    """
    if not 0 <= intensity_rms < 0.5:
        raise ValueError("intensity_rms must lie in [0, 0.5)")
    k = stark_response_coefficient() if coefficient is None else coefficient
    return 0.5 * (1.0 - math.exp(-2.0 * k * intensity_rms**2))
