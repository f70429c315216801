"""Simulated measurement campaign: preparation, free evolution, readout and servo.

A block measures both DFS variants at two wait times and two analysis
phases, followed by two contrast readings of the ``(R, 5 ms)`` channel at
``phi0 -+ 45 deg``. Each ``(variant, tau)`` channel has its own servo set
point ``phi0``, seeded from the known static shifts (quadrupole and the
linear gradient shift at the nominal field).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from functools import lru_cache

import numpy as np

from . import lli
from . import quantum as qc
from .analysis import (SIGNAL_TAUS, ContrastError, MeasurementRecord, amplitude_ratio,
                       block_amplitude, extract_phase)
from .noise import (BFieldProcess, DecayModel, QuadrupoleModel, ZeemanModel, dfs_frequency,
                    line_field_integral, ou_drift, quadratic_zeeman_shift, quadrupole_shift)

log = logging.getLogger(__name__)

PAPER_START = datetime(2018, 2, 19, 6, 0, tzinfo=timezone.utc).timestamp()
PAPER_END = datetime(2018, 2, 23, 3, 0, tzinfo=timezone.utc).timestamp()

# calibrated by calibrate_shots_per_point() for a 1.72 Hz sqrt(s) Allan prefactor
DEFAULT_SHOTS_PER_POINT = 28
HALF_PI = math.pi / 2
QUARTER_PI = math.pi / 4


class ServoHoldWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class BlockConfig:
    wait_times: tuple[float, float] = SIGNAL_TAUS
    variants: tuple[str, str] = ("R", "L")
    shots_per_point: int = DEFAULT_SHOTS_PER_POINT
    block_duration: float = 40.0  # s

    def __post_init__(self):
        if self.shots_per_point < 1:
            raise ValueError("shots_per_point must be >= 1")
        if self.block_duration <= 0:
            raise ValueError("block_duration must be positive")
        if tuple(self.variants) != ("R", "L"):
            raise ValueError("blocks measure both variants, R then L")

    @property
    def n_records(self) -> int:
        return 2 * len(self.wait_times) * len(self.variants) + 2


@dataclass(frozen=True)
class Environment:
    """Everything that shifts the accumulated phase besides the LLI signal."""

    bfield: BFieldProcess = BFieldProcess()
    zeeman: ZeemanModel = ZeemanModel()
    quadrupole: QuadrupoleModel = QuadrupoleModel()
    decay: DecayModel = DecayModel()
    omega_cm: float = 830e3  # Hz
    prep_drift_rate: float = 3e-3  # rad / sqrt(s), random walk of the preparation phase
    prep_phase_steps: tuple = ()  # ((utc, rad), ...) deterministic phase jumps
    field_log_noise: float = 0.0  # G, magnetometry error of a calibration
    line_triggered: bool = True

    @classmethod
    def quiet(cls, **kw) -> "Environment":
        """No drifts, no gradient, no static shifts; decay kept unless overridden."""
        base = dict(bfield=BFieldProcess(sigma_slow=0.0, gradient_delta=0.0, line_60hz_amplitude=0.0),
                    quadrupole=QuadrupoleModel(ref_shift=0.0, slope=0.0), prep_drift_rate=0.0)
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class RunConfig:
    start_utc: float = PAPER_START
    end_utc: float = PAPER_END
    calibration_interval: float = 600.0  # s
    calibration_duration: float = 40.0  # s of dead time per calibration
    prep_mode: str = "effective_channel"
    prep_fidelity: float = 0.94
    pi_pulse_fidelity: float = 0.99
    scheme: str = "entangled"
    block: BlockConfig = BlockConfig()
    servo: bool = True
    servo_gain: float = 0.5
    contrast_threshold: float = 0.3
    amplitude_memory: float = 0.05  # weight of the newest block in the servo's contrast estimate
    projection_noise: bool = True

    def __post_init__(self):
        if not self.end_utc > self.start_utc:
            raise ValueError("end_utc must be after start_utc")
        for name in ("prep_fidelity", "pi_pulse_fidelity"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.prep_mode not in ("effective_channel", "full_gate"):
            raise ValueError(f"unknown prep_mode {self.prep_mode!r}")
        if self.scheme not in ("entangled", "mixed"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.calibration_interval <= 0 or self.calibration_duration < 0:
            raise ValueError("invalid calibration schedule")


# -- preparation ---------------------------------------------------------

@dataclass(frozen=True)
class PreparedState:
    variant: str
    scheme: str
    mode: str
    contrast: float  # fringe amplitude before any waiting
    branch_amplitudes: tuple[complex, complex]  # (|m|=5/2 branch, |m|=1/2 branch)
    ket: qc.Ket | None = None
    phase_reference: float = 0.0  # analysis-phase offset that puts the fringe in sin form


def effective_contrast(prep_fidelity: float, pi_pulse_fidelity: float, scheme: str = "entangled") -> float:
    """Parity contrast ``(2F - 1) * (sqrt f_pi)^4``, halved for the mixed scheme.

    Four pi pulses (two after the gate, two before the analysis pulses) each
    keep an amplitude ``sqrt(f_pi)`` of the coherence (incoherent pulse
    errors). Coherent over-rotation, as in the full-gate model, costs about
    ``f_pi^4`` instead.
    """
    a = (2.0 * prep_fidelity - 1.0) * pi_pulse_fidelity**2
    return 0.5 * a if scheme == "mixed" else a


def prepare_lli_state(variant: str, cfg: RunConfig, rng=None) -> PreparedState:
    if variant not in ("R", "L"):
        raise ValueError(f"unknown state variant {variant!r}")
    if cfg.prep_mode == "effective_channel":
        a = effective_contrast(cfg.prep_fidelity, cfg.pi_pulse_fidelity, cfg.scheme)
        amp = 1 / math.sqrt(2)
        return PreparedState(variant, cfg.scheme, cfg.prep_mode, a, (amp, amp))
    ket, ref, a = _full_gate_state(variant, cfg.pi_pulse_fidelity)
    if cfg.scheme == "mixed":
        a *= 0.5
    upper, lower = _branch_configs(variant)
    return PreparedState(variant, cfg.scheme, cfg.prep_mode, a,
                         (_config_amplitude(ket, upper), _config_amplitude(ket, lower)), ket, ref)


def _branch_configs(variant):
    if variant == "R":
        return (qc.D_P5, qc.D_M5), (qc.D_P1, qc.D_M1)
    return (qc.D_M5, qc.D_P5), (qc.D_M1, qc.D_P1)


def _config_amplitude(k: qc.Ket, levels) -> complex:
    idx = [k.basis.index(levels, n) for n in range(k.basis.n_fock)]
    return complex(np.sqrt(np.sum(np.abs(k.amplitudes[idx]) ** 2)))


def _pi_theta(fidelity: float) -> float:
    return 2.0 * math.asin(math.sqrt(fidelity))


def _shelving(basis, fidelity: float) -> np.ndarray:
    """Global pi pulses on S-+1/2 <-> D-+5/2 applied to both ions."""
    u = np.eye(basis.dim, dtype=complex)
    for ion in range(2):
        for tr in ("C1", "C2"):
            u = qc.carrier_rotation(basis, ion, tr, _pi_theta(fidelity), 0.0) @ u
    return u


@lru_cache(maxsize=1)
def _calibrated_gate():
    from . import msgate

    return msgate.calibrate_gate(msgate.GateConfig())


@lru_cache(maxsize=8)
def _full_gate_state(variant: str, pi_fidelity: float):
    from . import msgate

    cfg = replace(_calibrated_gate(), levels=qc.LLI_LEVELS)
    traj = msgate.propagate(msgate.initial_ket(cfg, variant), cfg, cfg.gate_time)
    ket = qc.apply(_shelving(cfg.basis, pi_fidelity), traj.states[-1])
    # fringe at zero accumulated phase: P(phi) = a sin(c - 2 phi) + offset
    phis = np.linspace(0, math.pi, 8, endpoint=False)
    p = np.array([_full_parity(ket, pi_fidelity, 0.0, ph) for ph in phis])
    s = 2 * np.mean(p * np.sin(2 * phis))
    c = 2 * np.mean(p * np.cos(2 * phis))
    # a sin(c0 - 2 phi) = a sin c0 cos 2phi - a cos c0 sin 2phi
    a = math.hypot(s, c)
    c0 = math.atan2(c, -s)
    return ket, c0 / 2.0, a


def _full_parity(ket: qc.Ket, pi_fidelity: float, phase: float, phi: float) -> float:
    basis = ket.basis
    table = basis.ion_level_table
    mags = np.array([abs(float(l.m_j)) for l in basis.levels])
    spin = np.zeros(basis.dim)
    for ion in range(2):
        spin += (mags[table[:, ion]] == 2.5)
    k = qc.Ket(basis, ket.amplitudes * np.exp(-0.5j * phase * spin))
    k = qc.apply(_shelving(basis, pi_fidelity), k)
    for ion in range(2):
        for tr in ("C3", "C4"):
            k = qc.apply(qc.carrier_rotation(basis, ion, tr, HALF_PI, phi), k)
    return qc.parity_expectation(k)


def mean_parity(prep: PreparedState, phase: float, phase_setting: float, tau: float = 0.0,
                decay: DecayModel = DecayModel(), pi_fidelity: float = 1.0) -> float:
    """Expected parity after accumulating ``phase`` (beyond the gate's intrinsic phase).

    Decay of either ion during ``tau`` randomizes that shot's parity.
    """
    survive = math.exp(-2.0 * tau / decay.lifetime)
    if prep.ket is None:
        return survive * prep.contrast * math.sin(phase - 2.0 * phase_setting)
    p = _full_parity(prep.ket, pi_fidelity, phase, phase_setting + prep.phase_reference)
    if prep.scheme == "mixed":
        p *= 0.5
    return survive * p


def sample_parity(p_survive: float, p_decay: float, shots: int, rng) -> float:
    """Parity estimate from ``shots`` two-valued outcomes.

    ``p_survive`` is the parity mean of shots without decay; decayed shots
    (probability ``p_decay``) give +-1 with equal odds.
    """
    n_dec = rng.binomial(shots, p_decay)
    plus = rng.binomial(shots - n_dec, 0.5 * (1 + p_survive)) + rng.binomial(n_dec, 0.5)
    return (2 * plus - shots) / shots


def evolve_and_measure(prep: PreparedState, tau: float, phase_setting: float, phase: float,
                       utc: float, block: int, cfg: RunConfig, env: Environment, rng,
                       contrast_flag: bool = False) -> MeasurementRecord:
    """One parity reading of ``prep`` after accumulating ``phase`` during ``tau``."""
    shots = cfg.block.shots_per_point
    if prep.ket is None:
        p_surv = prep.contrast * math.sin(phase - 2.0 * phase_setting)
    else:
        p_surv = mean_parity(prep, phase, phase_setting, 0.0, env.decay, cfg.pi_pulse_fidelity)
    p_dec = 1.0 - math.exp(-2.0 * tau / env.decay.lifetime)
    if cfg.projection_noise:
        parity = sample_parity(p_surv, p_dec, shots, rng)
    else:
        parity = (1.0 - p_dec) * p_surv
    return MeasurementRecord(block, utc, prep.variant, tau, phase_setting, float(parity), shots, contrast_flag)


# -- servo ---------------------------------------------------------------

def channel_keys(block: BlockConfig = BlockConfig()):
    return [(v, t) for v in block.variants for t in block.wait_times]


def nominal_phase(variant: str, tau: float, env: Environment) -> float:
    """Accumulated phase expected from the known static shifts."""
    b = env.bfield
    f = quadrupole_shift(env.omega_cm, env.quadrupole) + dfs_frequency(variant, b.b0, b.gradient_delta, env.zeeman)
    return 2.0 * math.pi * f * tau


def servo_phase_offset(block_records, phi0: dict, amplitude: float, gain: float = 0.5,
                       threshold: float = 0.3, decay: DecayModel = DecayModel()) -> dict:
    """Move every channel's set point toward its zero crossing.

    ``phi0`` maps ``(variant, tau)`` to the set point and ``amplitude`` is the
    contrast of the short wait time. Channels whose expected contrast is below
    ``threshold`` keep their set point and raise :class:`ServoHoldWarning`.
    """
    short = SIGNAL_TAUS[0]
    out = dict(phi0)
    readings: dict = {}
    for r in block_records:
        if not r.contrast_flag:
            readings.setdefault((r.variant, r.tau), []).append(r)
    for key, recs in readings.items():
        amp = amplitude * amplitude_ratio(key[1], short, decay=decay)
        if amp < threshold:
            warnings.warn(f"servo hold on {key}: contrast {amp:.2f} below {threshold}",
                          ServoHoldWarning, stacklevel=2)
            continue
        lo, hi = sorted(recs, key=lambda r: r.phase_setting)
        try:
            dphi = extract_phase(lo.parity, hi.parity, amp)
        except ContrastError:
            continue
        out[key] = phi0[key] + gain * dphi / 2.0
    return out


# -- campaign ------------------------------------------------------------

@dataclass
class RunLog:
    records: list
    field_log: tuple  # (utc, delta_b_gauss)
    trap_log: tuple  # (utc, omega_cm_hz)
    calibrations: list  # utc of calibration starts
    config: dict
    seed: int | None
    scheme: str
    truth: dict = field(default_factory=dict, repr=False)

    @property
    def n_blocks(self) -> int:
        return len({r.block for r in self.records})


def schedule(cfg: RunConfig):
    """Block start times and calibration times covering the configured window."""
    blocks, cals = [], []
    t, next_cal = cfg.start_utc, cfg.start_utc
    d = cfg.block.block_duration
    while t + d <= cfg.end_utc + 1e-9:
        if t >= next_cal - 1e-9:
            cals.append(t)
            t += cfg.calibration_duration
            next_cal += cfg.calibration_interval
            continue
        blocks.append(t)
        t += d
    return np.array(blocks), np.array(cals)


def _record_layout(block: BlockConfig):
    """(variant, tau, quadrature offset, contrast) in acquisition order."""
    rows = []
    for v in block.variants:
        for q in (0.0, HALF_PI):
            for tau in block.wait_times:
                rows.append((v, tau, q, False))
    short = block.wait_times[0]
    rows.append((block.variants[0], short, -QUARTER_PI, True))
    rows.append((block.variants[0], short, QUARTER_PI, True))
    return rows


def config_snapshot(cfg: RunConfig, env: Environment, c: lli.CTensor, frame: lli.LabFrame, seed) -> dict:
    return {"run": asdict(cfg), "environment": asdict(env), "tensor": asdict(c),
            "frame": asdict(frame), "seed": seed}


def run_campaign(cfg: RunConfig = RunConfig(), c: lli.CTensor = lli.CTensor(),
                 frame: lli.LabFrame = lli.LabFrame(), env: Environment = Environment(),
                 rng_seed: int | None = 0) -> RunLog:
    """Simulate the full schedule; deterministic for a fixed ``rng_seed``.

    The LLI frequency is evaluated at each block's mean record time and held
    for the block; the slow field, preparation phase and projection noise are
    sampled per record.
    """
    starts, cals = schedule(cfg)
    if starts.size == 0:
        raise ValueError("window too short for a single block")
    layout = _record_layout(cfg.block)
    n_rec = len(layout)
    spacing = cfg.block.block_duration / n_rec
    rec_t = starts[:, None] + (np.arange(n_rec) + 0.5) * spacing
    block_t = rec_t.mean(axis=1)

    root = np.random.SeedSequence(rng_seed)
    env_ss, drift_ss, log_ss, block_ss = root.spawn(4)
    b = env.bfield
    all_t = np.concatenate([rec_t.ravel(), cals])
    order = np.argsort(all_t, kind="stable")
    slow = np.empty_like(all_t)
    slow[order] = ou_drift(all_t[order], b.sigma_slow, b.correlation_time, np.random.default_rng(env_ss))
    slow_rec = slow[:rec_t.size].reshape(rec_t.shape)
    slow_cal = slow[rec_t.size:]

    flat = rec_t.ravel()
    drift = np.zeros(flat.size)
    if env.prep_drift_rate > 0:
        steps = np.random.default_rng(drift_ss).normal(size=flat.size)
        dt = np.diff(flat, prepend=flat[0])
        drift = np.cumsum(env.prep_drift_rate * np.sqrt(dt) * steps)
    for t_step, jump in env.prep_phase_steps:
        drift = drift + jump * (flat >= t_step)
    drift = drift.reshape(rec_t.shape)

    f_lli = np.broadcast_to(np.asarray(lli.pair_frequency(c, block_t, frame), dtype=float), block_t.shape)
    f_quad = quadrupole_shift(env.omega_cm, env.quadrupole)

    preps = {v: prepare_lli_state(v, cfg) for v in cfg.block.variants}
    phi0 = {k: nominal_phase(*k, env) / 2.0 for k in channel_keys(cfg.block)}
    short = cfg.block.wait_times[0]
    amp_est = preps["R"].contrast * math.exp(-2 * short / env.decay.lifetime)

    def line_phase(t0, tau):
        if b.line_60hz_amplitude == 0:
            return 0.0
        return 2 * math.pi * env.zeeman.quad_coeff * float(line_field_integral(t0, tau, b))

    # triggered: every wait window starts at the same line phase
    line_ph = {tau: line_phase(0.0, tau) for tau in cfg.block.wait_times}
    records, true_phase, true_mean, phi0_hist = [], [], [], []
    child = block_ss.spawn(starts.size)
    for i in range(starts.size):
        rng = np.random.default_rng(child[i])
        recs, phases, means = [], [], []
        for j, (v, tau, q, flag) in enumerate(layout):
            key = (v, tau)
            field_now = b.b0 + slow_rec[i, j]
            f = (f_lli[i] + quadratic_zeeman_shift(slow_rec[i, j], env.zeeman) + f_quad
                 + dfs_frequency(v, field_now, b.gradient_delta, env.zeeman))
            lp = line_ph[tau] if env.line_triggered else line_phase(rec_t[i, j], tau)
            phase = 2 * math.pi * f * tau + lp + drift[i, j]
            setting = phi0[key] + q
            rec = evolve_and_measure(preps[v], tau, setting, phase, float(rec_t[i, j]), i, cfg, env, rng, flag)
            recs.append(rec)
            phases.append(phase)
            means.append(mean_parity(preps[v], phase, setting, tau, env.decay, cfg.pi_pulse_fidelity)
                         if preps[v].ket is not None else
                         math.exp(-2 * tau / env.decay.lifetime) * preps[v].contrast
                         * math.sin(phase - 2 * setting))
        records.extend(recs)
        true_phase.append(phases)
        true_mean.append(means)
        phi0_hist.append([phi0[k] for k in channel_keys(cfg.block)])
        if cfg.servo:
            try:
                a_blk = block_amplitude(recs)
            except ValueError:
                a_blk = amp_est
            amp_est = (1 - cfg.amplitude_memory) * amp_est + cfg.amplitude_memory * a_blk
            phi0 = servo_phase_offset(recs, phi0, amp_est, cfg.servo_gain, cfg.contrast_threshold, env.decay)

    log_rng = np.random.default_rng(log_ss)
    field_vals = slow_cal + env.field_log_noise * log_rng.normal(size=cals.size)
    truth = {"block_utc": block_t, "f_lli": np.array(f_lli), "phase": np.array(true_phase),
             "mean_parity": np.array(true_mean), "phi0": np.array(phi0_hist),
             "layout": layout, "slow_field": slow_rec, "prep_drift": drift}
    log.info("simulated %d blocks, %d calibrations", starts.size, cals.size)
    return RunLog(records, (cals.copy(), field_vals), (cals.copy(), np.full(cals.size, env.omega_cm)),
                  [float(x) for x in cals], config_snapshot(cfg, env, c, frame, rng_seed), rng_seed,
                  cfg.scheme, truth)


# -- shot calibration ----------------------------------------------------

def projection_prefactor(shots: int, cfg: RunConfig = RunConfig(), env: Environment = Environment()) -> float:
    """Linearized projection-noise Allan prefactor (Hz sqrt(s)) of the averaged frequency.

    Each channel's phase variance at the zero crossing is ``1 / (2 N A^2)``.
    """
    a0 = effective_contrast(cfg.prep_fidelity, cfg.pi_pulse_fidelity, cfg.scheme)
    short, long_ = cfg.block.wait_times
    var_ch = sum(1.0 / (2 * shots * (a0 * math.exp(-2 * t / env.decay.lifetime)) ** 2) for t in (short, long_))
    var_f = 0.5 * var_ch / (2 * math.pi * (long_ - short)) ** 2  # two variants averaged
    return math.sqrt(var_f * cfg.block.block_duration)


def calibrate_shots_per_point(target: float = 1.72, cfg: RunConfig = RunConfig(),
                              env: Environment = Environment()) -> int:
    """Shots per point whose projection-noise prefactor is closest to ``target``."""
    n = (projection_prefactor(1, cfg, env) / target) ** 2
    cands = [max(1, math.floor(n)), max(1, math.ceil(n))]
    return min(cands, key=lambda s: abs(projection_prefactor(s, cfg, env) - target))


def shots_for_total_uncertainty(target: float, cfg: RunConfig = RunConfig(),
                                env: Environment = Environment()) -> int:
    """Shots per point giving a total (all-block) frequency uncertainty of ``target`` Hz."""
    n_blocks = schedule(cfg)[0].size
    per_block = target * math.sqrt(n_blocks)
    tau_b = cfg.block.block_duration
    n = (projection_prefactor(1, cfg, env) / math.sqrt(tau_b) / per_block) ** 2
    return max(1, round(n))
