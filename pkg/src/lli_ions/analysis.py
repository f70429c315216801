"""From parity records to frequencies, Allan deviations and tensor bounds.

Parity convention: with the servo set point ``phi0`` of a channel the fringe is
``P(phi) = A sin(dphi - 2 (phi - phi0))``, so the two zero-crossing readings
are ``p0 = A sin(dphi)`` and ``p90 = -A sin(dphi)`` and the +-45 deg contrast
readings are ``+-A cos(dphi)``. The accumulated phase of a channel is
``2 phi0 + dphi``.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import lli
from .noise import DecayModel, QuadrupoleModel, ZeemanModel

DELTA_TAU = 0.100  # s, 105 ms - 5 ms
SIGNAL_TAUS = (0.005, 0.105)
VARIANTS = ("R", "L")


class ContrastError(ValueError):
    """Parity readings inconsistent with the fringe amplitude."""


class FitError(ValueError):
    pass


# -- records -------------------------------------------------------------

@dataclass(frozen=True)
class MeasurementRecord:
    block: int
    utc: float
    variant: str
    tau: float
    phase_setting: float
    parity: float
    shots: int
    contrast_flag: bool = False

    def __post_init__(self):
        if abs(self.parity) > 1 + 1e-12:
            raise ValueError(f"parity {self.parity} outside [-1, 1]")


def parity_variance(p, shots):
    """Binomial variance of a parity estimate from ``shots`` two-valued outcomes."""
    p = np.asarray(p, dtype=float)
    shots = np.asarray(shots, dtype=float)
    return np.maximum(1.0 - p**2, 1.0 / shots) / shots


# -- single-block extraction --------------------------------------------

def extract_phase(p0: float, p90: float, amplitude: float, tolerance: float = 1.0) -> float:
    """Phase offset from the two zero-crossing readings.

    ``asin((p0 - p90) / (2 A))``; ratios up to ``1 + tolerance`` in magnitude
    are clamped (sampling slack), larger ones raise :class:`ContrastError`.
    Valid for ``|dphi| < pi/2``.
    """
    if amplitude <= 0:
        raise ContrastError("fringe amplitude must be positive")
    x = (p0 - p90) / (2.0 * amplitude)
    if abs(x) > 1.0 + tolerance:
        raise ContrastError(f"parity half-difference {x:.3f} inconsistent with amplitude {amplitude:.3f}")
    return math.asin(max(-1.0, min(1.0, x)))


def extract_amplitude(p_minus45: float, p_plus45: float) -> float:
    """Fringe amplitude from the readings at phi0 -+ 45 deg; exact at the zero crossing."""
    return (p_minus45 - p_plus45) / 2.0


def amplitude_ratio(tau: float, reference_tau: float = SIGNAL_TAUS[0], n_ions: int = 2,
                    decay: DecayModel = DecayModel()) -> float:
    """Contrast at ``tau`` relative to ``reference_tau`` under spontaneous decay."""
    return math.exp(-n_ions * (tau - reference_tau) / decay.lifetime)


@dataclass
class BlockFrequency:
    block: int
    utc: float
    f: float
    sigma_f: float
    f_variant: dict
    sigma_variant: dict
    amplitude: float
    phases: dict


def _settings(block_records: Sequence[MeasurementRecord]):
    """Map (variant, tau) -> (record at phi0, record at phi0 + 90) and the contrast pair."""
    sig: dict = {}
    con = []
    for r in block_records:
        if r.contrast_flag:
            con.append(r)
        else:
            sig.setdefault((r.variant, round(r.tau, 9)), []).append(r)
    channels = {}
    for key, recs in sig.items():
        if len(recs) != 2:
            raise ValueError(f"channel {key} has {len(recs)} readings")
        lo, hi = sorted(recs, key=lambda r: r.phase_setting)
        channels[key] = (lo, hi)
    con.sort(key=lambda r: r.phase_setting)
    return channels, con


def block_amplitude(block_records: Sequence[MeasurementRecord]) -> float:
    """Contrast of the monitored channel from its +-45 deg and zero-crossing readings.

    Uses ``hypot(A cos dphi, A sin dphi)`` so the estimate is exact off the
    zero crossing as well.
    """
    channels, con = _settings(block_records)
    if len(con) != 2:
        raise ValueError("block lacks the two contrast readings")
    a = extract_amplitude(con[0].parity, con[1].parity)
    key = (con[0].variant, round(con[0].tau, 9))
    if key in channels:
        lo, hi = channels[key]
        return math.hypot(a, (lo.parity - hi.parity) / 2.0)
    return a


def extract_frequency(block_records: Sequence[MeasurementRecord], amplitude: float | None = None,
                      delta_tau: float = DELTA_TAU, decay: DecayModel = DecayModel(),
                      tolerance: float = 1.0) -> BlockFrequency:
    """Per-variant and averaged frequency of one measurement block.

    ``amplitude`` is the contrast at the short wait time (taken from the
    block's own contrast readings when omitted).
    """
    channels, con = _settings(block_records)
    short, long_ = SIGNAL_TAUS[0], SIGNAL_TAUS[0] + delta_tau
    if amplitude is None:
        amplitude = block_amplitude(block_records)
    if amplitude <= 0:
        raise ContrastError("non-positive fringe amplitude")
    phases, f_v, s_v = {}, {}, {}
    for variant in VARIANTS:
        tot, var = {}, {}
        for tau in (short, long_):
            key = (variant, round(tau, 9))
            if key not in channels:
                raise ValueError(f"missing setting {key}")
            lo, hi = channels[key]
            amp = amplitude * amplitude_ratio(tau, short, decay=decay)
            dphi = extract_phase(lo.parity, hi.parity, amp, tolerance)
            x = (lo.parity - hi.parity) / (2 * amp)
            vx = (parity_variance(lo.parity, lo.shots) + parity_variance(hi.parity, hi.shots)) / (4 * amp**2)
            tot[tau] = 2.0 * lo.phase_setting + dphi
            var[tau] = float(vx / max(1.0 - x**2, 1e-3))
            phases[key] = tot[tau]
        f_v[variant] = (tot[long_] - tot[short]) / (2 * math.pi * delta_tau)
        s_v[variant] = math.sqrt(var[long_] + var[short]) / (2 * math.pi * delta_tau)
    f = 0.5 * (f_v["R"] + f_v["L"])
    sigma = 0.5 * math.hypot(s_v["R"], s_v["L"])
    utc = float(np.mean([r.utc for r in block_records]))
    return BlockFrequency(block_records[0].block, utc, f, sigma, f_v, s_v, amplitude, phases)


# -- campaign-level series -----------------------------------------------

@dataclass
class FrequencySeries:
    utc: np.ndarray
    f: np.ndarray
    sigma_f: np.ndarray
    f_r: np.ndarray | None = None
    f_l: np.ndarray | None = None
    block: np.ndarray | None = None
    variant_resolved: bool = True
    zeeman_corrected: np.ndarray | None = None
    quadrupole_corrected: np.ndarray | None = None
    skipped: list = field(default_factory=list)

    def __post_init__(self):
        self.utc = np.asarray(self.utc, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        self.sigma_f = np.asarray(self.sigma_f, dtype=float)
        n = self.utc.size
        if self.zeeman_corrected is None:
            self.zeeman_corrected = np.zeros(n, dtype=bool)
        if self.quadrupole_corrected is None:
            self.quadrupole_corrected = np.zeros(n, dtype=bool)
        if np.any(self.sigma_f <= 0):
            raise ValueError("sigma_f must be positive")
        if np.any(np.diff(self.utc) < 0):
            raise ValueError("timestamps must be nondecreasing")

    def __len__(self):
        return self.utc.size

    def replace_values(self, f) -> "FrequencySeries":
        return FrequencySeries(self.utc, f, self.sigma_f, self.f_r, self.f_l, self.block,
                               self.variant_resolved, self.zeeman_corrected.copy(),
                               self.quadrupole_corrected.copy(), list(self.skipped))


def group_blocks(records: Sequence[MeasurementRecord]) -> list[list[MeasurementRecord]]:
    blocks: dict[int, list] = {}
    for r in records:
        blocks.setdefault(r.block, []).append(r)
    return [blocks[k] for k in sorted(blocks)]


def smooth_amplitudes(values: np.ndarray, window: int) -> np.ndarray:
    """Centred running mean over ``window`` blocks (shrinking at the ends)."""
    values = np.asarray(values, dtype=float)
    if window <= 1:
        return values
    half = window // 2
    c = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(values.size)
    lo = np.clip(idx - half, 0, values.size)
    hi = np.clip(idx + half + 1, 0, values.size)
    return (c[hi] - c[lo]) / (hi - lo)


def frequency_series(records: Sequence[MeasurementRecord], amplitude_window: int = 15,
                     decay: DecayModel = DecayModel(), delta_tau: float = DELTA_TAU,
                     tolerance: float = 1.0) -> FrequencySeries:
    """One averaged frequency per complete block; incomplete blocks are skipped with a reason."""
    blocks = group_blocks(records)
    amps, usable, skipped = [], [], []
    for recs in blocks:
        try:
            amps.append(block_amplitude(recs))
            usable.append(recs)
        except ValueError as exc:
            skipped.append((recs[0].block, str(exc)))
    smoothed = smooth_amplitudes(np.array(amps), amplitude_window)
    rows = []
    for recs, amp in zip(usable, smoothed):
        try:
            rows.append(extract_frequency(recs, amp, delta_tau, decay, tolerance))
        except ValueError as exc:  # includes ContrastError
            skipped.append((recs[0].block, str(exc)))
    if not rows:
        raise ValueError("no usable measurement blocks")
    rows.sort(key=lambda b: b.utc)
    return FrequencySeries(
        utc=[b.utc for b in rows], f=[b.f for b in rows], sigma_f=[b.sigma_f for b in rows],
        f_r=np.array([b.f_variant["R"] for b in rows]), f_l=np.array([b.f_variant["L"] for b in rows]),
        block=np.array([b.block for b in rows]), skipped=skipped)


def _nearest(log_t: np.ndarray, t: np.ndarray):
    i = np.clip(np.searchsorted(log_t, t), 1, max(log_t.size - 1, 1))
    left = np.clip(i - 1, 0, log_t.size - 1)
    right = np.clip(i, 0, log_t.size - 1)
    pick = np.where(np.abs(log_t[left] - t) <= np.abs(log_t[right] - t), left, right)
    return pick, np.abs(log_t[pick] - t)


def correct_systematics(series: FrequencySeries, field_log=None, omega_cm_log=None,
                        zeeman: ZeemanModel = ZeemanModel(), quadrupole: QuadrupoleModel = QuadrupoleModel(),
                        max_gap: float = 600.0) -> FrequencySeries:
    """Subtract the quadratic Zeeman and quadrupole-drift contributions.

    ``field_log`` is ``(utc, delta_b_gauss)``, ``omega_cm_log`` is
    ``(utc, omega_cm_hz)``; both are looked up by nearest neighbour. Entries
    farther than ``max_gap`` from a log sample stay uncorrected and unflagged.
    """
    out = series.replace_values(series.f.copy())
    if field_log is None:
        warnings.warn("no magnetic-field log: quadratic Zeeman correction skipped", RuntimeWarning,
                      stacklevel=2)
    else:
        lt, db = (np.asarray(a, dtype=float) for a in field_log)
        if lt.size:
            order = np.argsort(lt, kind="stable")
            lt, db = lt[order], db[order]
            pick, gap = _nearest(lt, series.utc)
            ok = gap <= max_gap
            out.f[ok] -= zeeman.quad_coeff * db[pick[ok]]
            out.zeeman_corrected = ok
    if omega_cm_log is not None:
        lt, w = (np.asarray(a, dtype=float) for a in omega_cm_log)
        if lt.size:
            order = np.argsort(lt, kind="stable")
            lt, w = lt[order], w[order]
            pick, gap = _nearest(lt, series.utc)
            ok = gap <= max_gap
            out.f[ok] -= quadrupole.slope * (w[pick[ok]] - quadrupole.ref_freq)
            out.quadrupole_corrected = ok
    return out


# -- binning -------------------------------------------------------------

@dataclass
class BinnedSeries(FrequencySeries):
    count: np.ndarray | None = None
    member_utc: list = field(default_factory=list)
    member_weight: list = field(default_factory=list)


def bin_series(series: FrequencySeries, width: float = 3600.0, origin: float | None = None) -> BinnedSeries:
    """Inverse-variance weighted means in bins of ``width`` seconds; empty bins omitted.

    Bins start at ``origin`` (default: the first timestamp floored to a
    multiple of ``width``). Bin times are the weighted mean member times, and
    the members are kept so the fit can average its regressors exactly.
    """
    if origin is None:
        origin = math.floor(series.utc[0] / width) * width
    idx = np.floor((series.utc - origin) / width).astype(int)
    w = 1.0 / series.sigma_f**2
    utc, f, sig, cnt, mu, mw = [], [], [], [], [], []
    for b in np.unique(idx):
        sel = idx == b
        ws = w[sel]
        utc.append(float(np.sum(ws * series.utc[sel]) / ws.sum()))
        f.append(float(np.sum(ws * series.f[sel]) / ws.sum()))
        sig.append(float(1.0 / math.sqrt(ws.sum())))
        cnt.append(int(sel.sum()))
        mu.append(series.utc[sel].copy())
        mw.append(ws / ws.sum())
    zc = np.array([series.zeeman_corrected[idx == b].all() for b in np.unique(idx)])
    qc = np.array([series.quadrupole_corrected[idx == b].all() for b in np.unique(idx)])
    return BinnedSeries(utc=utc, f=f, sigma_f=sig, variant_resolved=False, zeeman_corrected=zc,
                        quadrupole_corrected=qc, count=np.array(cnt), member_utc=mu, member_weight=mw)


# -- Allan deviation -----------------------------------------------------

@dataclass
class AllanCurve:
    taus: np.ndarray
    sigma: np.ndarray
    n_groups: np.ndarray
    prefactor: float  # Hz sqrt(s), exponent fixed at -1/2
    exponent: float
    prefactor_free: float  # Hz s^-exponent from the free log-log fit
    overlapping: bool = False


def allan_deviation(series, dt: float | None = None, overlapping: bool = False,
                    min_groups: int = 3, fit_decades: float = 1.0) -> AllanCurve:
    """Allan deviation of a frequency series on the doubling grid ``m = 1, 2, 4, ...``.

    Samples are grouped by position, so dead-time gaps are ignored and
    ``tau = m * dt`` with ``dt`` the median sample spacing.
    """
    if isinstance(series, FrequencySeries):
        y = series.f
        if dt is None:
            dt = float(np.median(np.diff(series.utc)))
    else:
        y = np.asarray(series, dtype=float)
        if dt is None:
            raise ValueError("dt is required for a bare array")
    if y.size < 16:
        raise ValueError("Allan deviation needs at least 16 samples")
    taus, sig, ng = [], [], []
    m = 1
    while y.size // m >= min_groups:
        if overlapping:
            c = np.concatenate([[0.0], np.cumsum(y)])
            means = (c[m:] - c[:-m]) / m
            d = means[m:] - means[:-m]
            groups = means.size
        else:
            groups = y.size // m
            means = y[:groups * m].reshape(groups, m).mean(axis=1)
            d = np.diff(means)
        if d.size:
            taus.append(m * dt)
            sig.append(math.sqrt(0.5 * np.mean(d**2)))
            ng.append(groups)
        m *= 2
    taus, sig = np.array(taus), np.array(sig)
    sel = (taus <= taus[0] * 10**fit_decades * (1 + 1e-9)) & (sig > 0)
    if sel.sum() >= 2:
        slope, icpt = np.polyfit(np.log(taus[sel]), np.log(sig[sel]), 1)
        pref_free = math.exp(icpt)
    else:
        slope, pref_free = float("nan"), float("nan")
    pref = float(np.exp(np.mean(np.log(sig[sel] * np.sqrt(taus[sel]))))) if sel.any() else float("nan")
    return AllanCurve(taus, sig, np.array(ng), pref, float(slope), pref_free, overlapping)


# -- sidereal fit --------------------------------------------------------

@dataclass
class FitResult:
    dc: float
    a: float
    b: float
    c: float
    d: float
    covariance: np.ndarray
    chi2_red: float
    scaled: bool
    naive_covariance: np.ndarray
    epoch: float
    n_points: int

    @property
    def values(self) -> np.ndarray:
        return np.array([self.dc, self.a, self.b, self.c, self.d])

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def model(self) -> lli.SiderealModel:
        return lli.SiderealModel(*self.values)


def _regressors(series: FrequencySeries, epoch: float) -> np.ndarray:
    if isinstance(series, BinnedSeries) and series.member_utc:
        rows = [w @ lli.harmonic_basis(lli.sidereal_time(t, epoch))
                for t, w in zip(series.member_utc, series.member_weight)]
        return np.array(rows)
    return lli.harmonic_basis(lli.sidereal_time(series.utc, epoch))


def fit_sidereal(series: FrequencySeries, frame: lli.LabFrame = lli.LabFrame(),
                 epoch: float | None = None, max_condition: float = 1e10) -> FitResult:
    """Weighted least squares on ``1, sin wT, cos wT, sin 2wT, cos 2wT``.

    Binned input is fitted with bin-averaged regressors. The covariance is
    scaled by the reduced chi-square when that exceeds one.
    """
    if epoch is None:
        epoch = frame.epoch_for(series.utc)
    if series.utc[-1] - series.utc[0] <= lli.SIDEREAL_PERIOD:
        raise FitError("series must span more than one sidereal period")
    X = _regressors(series, epoch)
    w = 1.0 / series.sigma_f**2
    sw = np.sqrt(w)
    A = X * sw[:, None]
    if np.linalg.matrix_rank(A) < 5 or np.linalg.cond(A) > max_condition:
        raise FitError("rank-deficient harmonic design for this time window")
    coef, *_ = np.linalg.lstsq(A, series.f * sw, rcond=None)
    naive = np.linalg.inv(A.T @ A)
    resid = series.f - X @ coef
    dof = max(series.f.size - 5, 1)
    chi2_red = float(np.sum(w * resid**2) / dof)
    scaled = chi2_red > 1.0
    cov = naive * chi2_red if scaled else naive.copy()
    return FitResult(*map(float, coef), cov, chi2_red, scaled, naive, float(epoch), int(series.f.size))


@dataclass
class CmnBounds:
    values: np.ndarray  # (C_X-Y, C_XY, C_XZ, C_YZ)
    covariance: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def as_dict(self) -> dict:
        return {n: (float(v), float(s)) for n, v, s in zip(lli.COMPONENTS, self.values, self.sigma)}

    def table(self) -> str:
        """Plain-text table: parameter, value +- 1 sigma (units of 1e-19)."""
        names = {"c_x_minus_y": "C_X-Y", "c_xy": "C_XY", "c_xz": "C_XZ", "c_yz": "C_YZ"}
        lines = [f"{'Parameter':<10} {'Limit (x1e-19)':>20}"]
        for n, v, s in zip(lli.COMPONENTS, self.values, self.sigma):
            lines.append(f"{names[n]:<10} {f'{v / 1e-19:+.1f} +- {s / 1e-19:.1f}':>20}")
        return "\n".join(lines)


def invert_to_cmn(fit: FitResult, m: lli.DesignMatrix) -> CmnBounds:
    """Map the four harmonic amplitudes to tensor components with linear error propagation."""
    inv = m.inverse()
    vals = inv @ fit.values[1:]
    cov = inv @ fit.covariance[1:, 1:] @ inv.T
    return CmnBounds(vals, cov)


def fit_report(fit: FitResult, bounds: CmnBounds, frame: lli.LabFrame, extra: dict | None = None) -> str:
    """JSON report of the sidereal fit and the derived bounds."""
    rep = {
        "coefficients_hz": dict(zip(["dc", "a_sin", "b_cos", "c_sin2", "d_cos2"], fit.values.tolist())),
        "sigma_hz": dict(zip(["dc", "a_sin", "b_cos", "c_sin2", "d_cos2"], fit.sigma.tolist())),
        "covariance_hz2": fit.covariance.tolist(),
        "chi2_red": fit.chi2_red,
        "sqrt_chi2_red": math.sqrt(fit.chi2_red),
        "covariance_scaled": fit.scaled,
        "n_points": fit.n_points,
        "epoch_utc": fit.epoch,
        "frame": {"colatitude_deg": math.degrees(frame.colatitude),
                  "b_azimuth_deg": math.degrees(frame.b_azimuth),
                  "b_elevation_deg": math.degrees(frame.b_elevation)},
        "c_mn": {k: {"value": v, "sigma": s} for k, (v, s) in bounds.as_dict().items()},
        "table": bounds.table(),
    }
    if extra:
        rep.update(extra)
    return json.dumps(rep, indent=2, sort_keys=True)
