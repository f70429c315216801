import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lli_ions import lli


def field_direction_sccef(T, frame):
    """Brute-force oracle: the B unit vector in SCCEF from local north/east/up vectors."""
    th = frame.colatitude
    w = lli.OMEGA_SIDEREAL * T
    up = np.array([math.sin(th) * math.cos(w), math.sin(th) * math.sin(w), math.cos(th)])
    east = np.array([-math.sin(w), math.cos(w), 0.0])
    north = np.array([-math.cos(th) * math.cos(w), -math.cos(th) * math.sin(w), math.sin(th)])
    az, el = frame.b_azimuth, frame.b_elevation
    return math.cos(el) * (math.cos(az) * north + math.sin(az) * east) + math.sin(el) * up


def random_traceless(rng):
    a = rng.normal(size=(3, 3))
    a = a + a.T
    return a - np.trace(a) / 3 * np.eye(3)


def test_rotation_matches_unit_vector_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        frame = lli.LabFrame(rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi),
                             rng.uniform(-math.pi / 2, math.pi / 2))
        T = rng.uniform(0, 3e7)
        c = random_traceless(rng)
        b = field_direction_sccef(T, frame)
        # traceless: C_xx + C_yy - 2 C_zz = -3 C_zz with z along B
        oracle = -3.0 * b @ c @ b
        worst = max(worst, abs(lli.c0_from_matrix(c, T, frame) - oracle) / np.abs(c).max())
    assert worst < 1e-14


def test_rotations_are_orthogonal():
    r = lli.rotation(np.linspace(0, 1e5, 17), lli.LabFrame())
    eye = np.einsum("nij,nkj->nik", r, r)
    assert np.allclose(eye, np.eye(3), atol=1e-14)
    assert np.allclose(np.linalg.det(r), 1.0)


def test_pair_prefactor():
    assert lli.PAIR_PREFACTOR == pytest.approx(-12 * 7.42e14, rel=1e-15)
    assert abs(lli.PAIR_PREFACTOR - (-8.9e15)) <= 0.2e15


def test_level_shift_bounds():
    with pytest.raises(ValueError):
        lli.level_shift(3.5, 1.0)


def test_tensor_validation_and_algebra():
    with pytest.raises(ValueError):
        lli.CTensor(c_xz=1e-9)
    with pytest.raises(ValueError):
        lli.CTensor(c_xy=float("nan"))
    a = lli.CTensor(c_xz=1e-18)
    b = lli.CTensor(c_xy=2e-18)
    s = a + 2 * b
    assert s.c_xy == 4e-18 and s.c_xz == 1e-18
    m = lli.CTensor(c_x_minus_y=1e-18, c_zz_combo=3e-18).matrix()
    assert np.trace(m) == pytest.approx(0.0, abs=1e-33)
    assert m[0, 0] - m[1, 1] == pytest.approx(1e-18)
    assert m[0, 0] + m[1, 1] - 2 * m[2, 2] == pytest.approx(3e-18)


def test_sidereal_time_arithmetic():
    epoch = lli.equinox_before(1.52e9)
    assert lli.sidereal_time(epoch, epoch) == 0.0
    T = lli.sidereal_time(epoch + lli.SIDEREAL_PERIOD, epoch)
    assert lli.OMEGA_SIDEREAL * T == pytest.approx(2 * math.pi, rel=1e-15)
    slip = lli.OMEGA_SIDEREAL * 86400.0 - 2 * math.pi
    assert slip == pytest.approx(2 * math.pi * 0.07 / 23.93, rel=1e-12)
    with pytest.raises(ValueError):
        lli.sidereal_time(epoch - 1, epoch)


def test_equinox_table_for_data_window():
    from datetime import datetime, timezone
    t = datetime(2018, 2, 20, tzinfo=timezone.utc).timestamp()
    assert lli.equinox_before(t) == datetime(2017, 3, 20, 10, 29, tzinfo=timezone.utc).timestamp()
    with pytest.raises(ValueError):
        lli.equinox_before(0.0)


def test_signal_is_band_limited():
    frame = lli.LabFrame()
    rng = np.random.default_rng(3)
    n = 256
    T = np.arange(n) * lli.SIDEREAL_PERIOD / n
    for _ in range(5):
        f = lli.PAIR_PREFACTOR * lli.c0_from_matrix(random_traceless(rng) * 1e-18, T, frame)
        spec = np.abs(np.fft.rfft(f)) / n
        assert np.max(spec[3:]) < 1e-10 * np.max(spec[:3])


@given(st.lists(st.floats(-1e-17, 1e-17), min_size=4, max_size=4))
@settings(max_examples=25, deadline=None)
def test_design_matrix_round_trip(comps):
    frame = lli.LabFrame()
    m = lli.design_matrix(frame)
    c = lli.CTensor(*comps)
    model = lli.sidereal_coefficients(c, frame)
    back = m.inverse() @ model.harmonics()
    scale = max(1e-30, max(abs(x) for x in comps))
    assert np.max(np.abs(back - c.vector())) <= 1e-10 * scale


def test_design_matrix_structure():
    m = lli.design_matrix(lli.LabFrame()).matrix
    # omega rows see only XZ/YZ, 2 omega rows only X-Y/XY
    assert np.allclose(m[:2, :2], 0, atol=1e-6 * np.abs(m).max())
    assert np.allclose(m[2:, 2:], 0, atol=1e-6 * np.abs(m).max())


def test_c_zz_combo_is_invisible_to_harmonics():
    model = lli.sidereal_coefficients(lli.CTensor(c_zz_combo=1e-18), lli.LabFrame())
    assert np.allclose(model.harmonics(), 0, atol=1e-12 * abs(model.dc))
    assert model.dc != 0


def test_singular_frame_raises():
    # field perpendicular to the Earth axis at the pole: the omega rows vanish
    with pytest.raises(lli.SingularFrameError):
        lli.design_matrix(lli.LabFrame(colatitude=0.0))
    # field along the Earth axis sees nothing
    with pytest.raises(lli.SingularFrameError):
        lli.design_matrix(lli.LabFrame(colatitude=0.0, b_elevation=math.pi / 2))


def test_ghz_scaling_factors():
    assert lli.ghz_snr_factor(2) == 1.0
    assert lli.phase_sensitivity_factor(4) == 2.0
    assert lli.preparation_factor(2, "probabilistic_separable") == 0.5
    assert lli.preparation_factor(4, "probabilistic_separable") == 0.125
    assert lli.contrast_factor(4, 1 / 1.2, 0.1) == pytest.approx(math.exp(-2 * 0.1 / 1.2))
    with pytest.raises(ValueError):
        lli.ghz_snr_factor(3)
