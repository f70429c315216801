"""Lorentz-violation signal model for the two-ion decoherence-free state.

Frames
------
SCCEF: Z along the Earth's rotation axis, X toward the vernal equinox.
Standard laboratory frame: x south, y east, z up. The measurement frame has
its z axis along the magnetic field, which points ``b_azimuth`` east of north
and ``b_elevation`` above the horizon.

The SCCEF -> measurement rotation is ``R_B @ R_colat @ R_z(w T)`` (all passive
rotations), with ``T`` the time since the reference vernal equinox and
``w = 2 pi / 23.93 h``. The lab-frame coupling is
``C0 = C_xx + C_yy - 2 C_zz`` of the rotated tensor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from datetime import datetime, timezone

import numpy as np

# D5/2 shift per unit C0: scalar part and m_J^2 coefficient (Hz)
SHIFT_SCALAR = 2.16e15
SHIFT_MJ2 = 7.42e14

SIDEREAL_PERIOD = 23.93 * 3600.0  # s
OMEGA_SIDEREAL = 2.0 * math.pi / SIDEREAL_PERIOD  # rad/s

COMPONENTS = ("c_x_minus_y", "c_xy", "c_xz", "c_yz")
PHYSICAL_BOUND = 1e-10

# March equinoxes, UTC (minute precision)
_EQUINOXES = [
    (2015, 3, 20, 22, 45), (2016, 3, 20, 4, 30), (2017, 3, 20, 10, 29),
    (2018, 3, 20, 16, 15), (2019, 3, 20, 21, 58), (2020, 3, 20, 3, 50),
    (2021, 3, 20, 9, 37), (2022, 3, 20, 15, 33), (2023, 3, 20, 21, 24),
    (2024, 3, 20, 3, 6), (2025, 3, 20, 9, 1), (2026, 3, 20, 14, 46),
    (2027, 3, 20, 20, 25), (2028, 3, 20, 2, 17), (2029, 3, 20, 8, 1),
    (2030, 3, 20, 13, 51),
]
VERNAL_EQUINOXES = np.array(
    [datetime(*e, tzinfo=timezone.utc).timestamp() for e in _EQUINOXES])


class SingularFrameError(ValueError):
    """The laboratory geometry does not resolve all four tensor components."""


def equinox_before(t_utc: float) -> float:
    """Most recent tabulated vernal equinox at or before ``t_utc`` (POSIX s)."""
    i = np.searchsorted(VERNAL_EQUINOXES, t_utc, side="right") - 1
    if i < 0:
        raise ValueError("time precedes the built-in equinox table (2015-2030)")
    return float(VERNAL_EQUINOXES[i])


@dataclass(frozen=True)
class CTensor:
    """Symmetric traceless SCCEF tensor from its five independent combinations."""

    c_x_minus_y: float = 0.0
    c_xy: float = 0.0
    c_xz: float = 0.0
    c_yz: float = 0.0
    c_zz_combo: float = 0.0  # C_XX + C_YY - 2 C_ZZ

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or abs(v) >= PHYSICAL_BOUND:
                raise ValueError(f"{f.name}={v!r} outside the physical range |C| < {PHYSICAL_BOUND}")

    def matrix(self) -> np.ndarray:
        return tensor_matrix(self.c_x_minus_y, self.c_xy, self.c_xz, self.c_yz, self.c_zz_combo)

    def vector(self) -> np.ndarray:
        """The four sidereally observable components."""
        return np.array([getattr(self, n) for n in COMPONENTS])

    def __add__(self, other: "CTensor") -> "CTensor":
        return CTensor(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    def __mul__(self, k: float) -> "CTensor":
        return CTensor(*(k * getattr(self, f.name) for f in fields(self)))

    __rmul__ = __mul__


def tensor_matrix(x_minus_y=0.0, xy=0.0, xz=0.0, yz=0.0, zz_combo=0.0) -> np.ndarray:
    zz = -zz_combo / 3.0
    xx = (zz_combo / 3.0 + x_minus_y) / 2.0
    yy = (zz_combo / 3.0 - x_minus_y) / 2.0
    return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]], dtype=float)


@dataclass(frozen=True)
class LabFrame:
    colatitude: float = math.radians(52.1)
    b_azimuth: float = math.radians(68.0)  # east of north
    b_elevation: float = 0.0
    equinox_epoch: float | None = None  # POSIX s; None -> equinox table

    def __post_init__(self):
        if not 0.0 <= self.colatitude <= math.pi:
            raise ValueError("colatitude must lie in [0, pi]")

    def epoch_for(self, t_utc) -> float:
        if self.equinox_epoch is not None:
            return float(self.equinox_epoch)
        return equinox_before(float(np.min(t_utc)))

    def sidereal_time(self, t_utc, epoch: float | None = None):
        epoch = self.epoch_for(t_utc) if epoch is None else epoch
        return sidereal_time(t_utc, epoch)


def sidereal_time(t_utc, epoch: float):
    """Seconds elapsed since ``epoch``; harmonics use ``OMEGA_SIDEREAL``."""
    t = np.asarray(t_utc, dtype=float)
    if np.any(t < epoch):
        raise ValueError("time precedes the equinox epoch")
    return t - epoch if t.ndim else float(t - epoch)


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(c), np.ones_like(c)
    return np.stack([np.stack([c, s, z], -1), np.stack([-s, c, z], -1),
                     np.stack([z, z, o], -1)], -2)


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def field_rotation(frame: LabFrame) -> np.ndarray:
    """Standard lab frame -> measurement frame (z along B)."""
    azimuth_from_south = math.pi - frame.b_azimuth
    polar = math.pi / 2 - frame.b_elevation
    return _ry(polar) @ _rz(azimuth_from_south)


def rotation(T, frame: LabFrame) -> np.ndarray:
    """SCCEF -> measurement-frame rotation at sidereal time(s) ``T`` (shape (..., 3, 3))."""
    fixed = field_rotation(frame) @ _ry(frame.colatitude)
    return fixed @ _rz(OMEGA_SIDEREAL * np.asarray(T, dtype=float))


def c0_from_matrix(cmat: np.ndarray, T, frame: LabFrame):
    r = rotation(T, frame)
    lab = r @ cmat @ np.swapaxes(r, -1, -2)
    c0 = lab[..., 0, 0] + lab[..., 1, 1] - 2.0 * lab[..., 2, 2]
    return c0 if np.ndim(c0) else float(c0)


def c0_lab(c: CTensor, t_utc, frame: LabFrame):
    """Lab-frame C0(2) at UTC time(s) ``t_utc``."""
    T = frame.sidereal_time(t_utc)
    return c0_from_matrix(c.matrix(), T, frame)


def level_shift(m_j: float, c0):
    """LLI shift of the D5/2, m_J sublevel in Hz."""
    if abs(m_j) > 2.5:
        raise ValueError("|m_J| must not exceed 5/2")
    return c0 * (SHIFT_SCALAR - SHIFT_MJ2 * m_j**2)


# E(|+-5/2, -+5/2>) - E(|+-1/2, -+1/2>) per unit C0
PAIR_PREFACTOR = 2.0 * level_shift(2.5, 1.0) - 2.0 * level_shift(0.5, 1.0)


def pair_frequency(c: CTensor, t_utc, frame: LabFrame):
    """Two-ion LLI frequency between the |m_J|=5/2 and 1/2 branches (Hz)."""
    return PAIR_PREFACTOR * c0_lab(c, t_utc, frame)


@dataclass(frozen=True)
class SiderealModel:
    dc: float = 0.0
    a_sin: float = 0.0
    b_cos: float = 0.0
    c_sin2: float = 0.0
    d_cos2: float = 0.0
    omega_sidereal: float = OMEGA_SIDEREAL

    def evaluate(self, T):
        w = self.omega_sidereal * np.asarray(T, dtype=float)
        return (self.dc + self.a_sin * np.sin(w) + self.b_cos * np.cos(w)
                + self.c_sin2 * np.sin(2 * w) + self.d_cos2 * np.cos(2 * w))

    def harmonics(self) -> np.ndarray:
        return np.array([self.a_sin, self.b_cos, self.c_sin2, self.d_cos2])


def harmonic_basis(T, omega: float = OMEGA_SIDEREAL) -> np.ndarray:
    """Columns ``1, sin wT, cos wT, sin 2wT, cos 2wT``."""
    w = omega * np.asarray(T, dtype=float)
    return np.column_stack([np.ones_like(w), np.sin(w), np.cos(w), np.sin(2 * w), np.cos(2 * w)])


def _project(cmat: np.ndarray, frame: LabFrame, n_periods: int, n_points: int):
    T = np.arange(n_points) * (n_periods * SIDEREAL_PERIOD / n_points)
    f = PAIR_PREFACTOR * c0_from_matrix(cmat, T, frame)
    X = harmonic_basis(T)
    coef, *_ = np.linalg.lstsq(X, f, rcond=None)
    return coef, f - X @ coef, f


def sidereal_coefficients(c: CTensor, frame: LabFrame, n_periods: int = 2,
                          n_points: int = 192) -> SiderealModel:
    """Harmonic content of :func:`pair_frequency` by least-squares projection."""
    if n_points < 96 or n_periods < 2:
        raise ValueError("need >= 2 sidereal periods sampled at >= 96 points")
    coef, _, _ = _project(c.matrix(), frame, n_periods, n_points)
    return SiderealModel(*coef)


@dataclass(frozen=True)
class DesignMatrix:
    """Linear map (C_X-Y, C_XY, C_XZ, C_YZ) -> (A, B, C, D) in Hz."""

    matrix: np.ndarray
    condition: float

    def apply(self, components) -> np.ndarray:
        return self.matrix @ np.asarray(components, dtype=float)

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)


def design_matrix(frame: LabFrame, max_condition: float = 1e8) -> DesignMatrix:
    cols = []
    for i in range(4):
        unit = np.zeros(5)
        unit[i] = 1.0
        coef, _, _ = _project(tensor_matrix(*unit), frame, 2, 192)
        cols.append(coef[1:])
    m = np.column_stack(cols)
    cond = float(np.linalg.cond(m))
    if not np.isfinite(cond) or cond > max_condition:
        raise SingularFrameError(
            f"design matrix is singular for this frame (condition number {cond:.3g})")
    return DesignMatrix(m, cond)


# -- GHZ scaling ---------------------------------------------------------

def phase_sensitivity_factor(n_ions: int) -> float:
    """Branch phase relative to two ions: m_J^2 differences add per ion pair."""
    _check_even(n_ions)
    return n_ions / 2.0


def preparation_factor(n_ions: int, scheme: str) -> float:
    """Usable coherence: 1 deterministic, 2^(1-n) for the probabilistic separable source."""
    _check_even(n_ions)
    if scheme == "entangled":
        return 1.0
    if scheme == "probabilistic_separable":
        return 2.0 ** (1 - n_ions)
    raise ValueError(f"unknown scheme {scheme!r}")


def contrast_factor(n_ions: int, decay_rate: float, tau: float) -> float:
    """Independent decay of every ion relative to the two-ion state."""
    _check_even(n_ions)
    return math.exp(-n_ions * decay_rate * tau) / math.exp(-2 * decay_rate * tau)


def ghz_snr_factor(n_ions: int, scheme: str = "entangled", decay_rate: float = 0.0,
                   tau: float = 0.0) -> float:
    """Signal-to-noise relative to the deterministic two-ion entangled scheme.

    Product of :func:`phase_sensitivity_factor`, :func:`preparation_factor`
    and :func:`contrast_factor`. Preparation-fidelity losses and time
    overheads are not included.
    """
    return (phase_sensitivity_factor(n_ions) * preparation_factor(n_ions, scheme)
            * contrast_factor(n_ions, decay_rate, tau))


def _check_even(n_ions: int):
    if n_ions < 2 or n_ions % 2:
        raise ValueError("n_ions must be even and >= 2")
