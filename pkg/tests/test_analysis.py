import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lli_ions import analysis as an
from lli_ions import lli
from lli_ions.noise import DecayModel

T0 = 1.519e9


def naive_allan(y, m):
    """Direct definition: averages over consecutive groups of m, then half mean-square difference."""
    groups = len(y) // m
    means = []
    for k in range(groups):
        s = 0.0
        for j in range(m):
            s += y[k * m + j]
        means.append(s / m)
    acc = 0.0
    for k in range(groups - 1):
        acc += (means[k + 1] - means[k]) ** 2
    return math.sqrt(acc / (2 * (groups - 1)))


def synthetic_block(block, phases, amp=0.86, t0=T0, shots=100, decay=DecayModel()):
    """Noiseless records of one block; ``phases`` maps (variant, tau) -> accumulated phase."""
    recs = []
    t = t0
    phi0 = {k: 0.5 * round(v / 0.5) / 2 for k, v in phases.items()}  # set points near the crossing
    for v in ("R", "L"):
        for q in (0.0, math.pi / 2):
            for tau in an.SIGNAL_TAUS:
                a = amp * an.amplitude_ratio(tau, decay=decay)
                s = phi0[(v, tau)] + q
                recs.append(an.MeasurementRecord(block, t, v, tau, s, a * math.sin(phases[(v, tau)] - 2 * s), shots))
                t += 4
    for q in (-math.pi / 4, math.pi / 4):
        s = phi0[("R", 0.005)] + q
        recs.append(an.MeasurementRecord(block, t, "R", 0.005, s, amp * math.sin(phases[("R", 0.005)] - 2 * s),
                                         shots, True))
        t += 4
    return recs


# -- phase and amplitude -------------------------------------------------

def test_extract_phase_examples():
    assert an.extract_phase(0.0, 0.0, 0.87) == 0.0
    p0 = 0.87 * math.sin(0.1)
    assert round(p0, 4) == 0.0869
    assert an.extract_phase(p0, -p0, 0.87) == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(an.ContrastError):
        an.extract_phase(0.9, -0.9, 0.2)
    with pytest.raises(an.ContrastError):
        an.extract_phase(0.1, 0.0, 0.0)
    # sampling slack is clamped
    assert an.extract_phase(0.5, -0.5, 0.45) == pytest.approx(math.pi / 2)


@given(d=st.floats(-1.5, 1.5), a=st.floats(0.05, 1.0), off=st.floats(-0.3, 0.3))
@settings(max_examples=100)
def test_extract_phase_inverts_forward_model_with_common_offset(d, a, off):
    # a common additive offset on both readings cancels
    p0, p90 = a * math.sin(d) + off, -a * math.sin(d) + off
    assert an.extract_phase(p0, p90, a) == pytest.approx(d, abs=1e-9)


@pytest.mark.parametrize("dphi", [-0.5, -0.25, 0.25, 0.5])
def test_phase_estimator_bias_monte_carlo(dphi):
    rng = np.random.default_rng(11)
    amp, shots, trials = 0.87, 100, 10_000
    p_true = amp * math.sin(dphi)
    p0 = (2 * rng.binomial(shots, (1 + p_true) / 2, trials) - shots) / shots
    p90 = (2 * rng.binomial(shots, (1 - p_true) / 2, trials) - shots) / shots
    est = np.array([an.extract_phase(a, b, amp) for a, b in zip(p0, p90)])
    assert abs(est.mean() - dphi) < 0.01 * abs(dphi)


def test_phase_estimator_exact_bias_small_angles():
    # exact expectation over the binomial distribution: no Monte Carlo noise
    from scipy.stats import binom
    amp, shots = 0.87, 100
    k = np.arange(shots + 1)
    for dphi in (0.02, 0.1, 0.3, 0.5):
        p = amp * math.sin(dphi)
        w0 = binom.pmf(k, shots, (1 + p) / 2)
        w90 = binom.pmf(k, shots, (1 - p) / 2)
        par = (2 * k - shots) / shots
        x = np.clip((par[:, None] - par[None, :]) / (2 * amp), -1, 1)
        mean = np.sum(w0[:, None] * w90[None, :] * np.arcsin(x))
        assert abs(mean - dphi) < 0.01 * dphi


def test_extract_amplitude_examples():
    assert an.extract_amplitude(0.87, -0.87) == pytest.approx(0.87)
    assert an.extract_amplitude(0.0, 0.0) == 0.0


@pytest.mark.parametrize("eps", [0.0, 0.02, 0.05, 0.1])
def test_amplitude_second_order_in_offset(eps):
    a = 0.87
    # readings at phi0 -+ 45 deg when the fringe sits eps away from the crossing
    pm, pp = a * math.sin(eps + math.pi / 2), a * math.sin(eps - math.pi / 2)
    est = an.extract_amplitude(pm, pp)
    assert abs(est - a) <= a * eps**2 / 2 + 1e-15


# -- per-block frequency -------------------------------------------------

def test_extract_frequency_one_hertz():
    f = 1.0
    ph = {(v, t): 2 * math.pi * f * t for v in "RL" for t in an.SIGNAL_TAUS}
    bf = an.extract_frequency(synthetic_block(0, ph))
    assert bf.f == pytest.approx(1.0, abs=1e-12)
    assert bf.f_variant["R"] == pytest.approx(1.0, abs=1e-12)


def test_extract_frequency_pure_gradient_cancels():
    g = 2.3
    ph = {(v, t): (1 if v == "R" else -1) * 2 * math.pi * g * t for v in "RL" for t in an.SIGNAL_TAUS}
    bf = an.extract_frequency(synthetic_block(0, ph))
    assert bf.f_variant["R"] == pytest.approx(g, abs=1e-12)
    assert bf.f_variant["R"] == pytest.approx(-bf.f_variant["L"], abs=1e-12)
    assert abs(bf.f) < 1e-12


def test_sigma_propagation_matches_linear_theory():
    ph = {(v, t): 0.0 for v in "RL" for t in an.SIGNAL_TAUS}
    amp, shots = 0.86, 100
    bf = an.extract_frequency(synthetic_block(0, ph, amp=amp, shots=shots), amplitude=amp)
    a5, a105 = amp, amp * an.amplitude_ratio(0.105)
    var_v = (1 / (2 * shots * a5**2) + 1 / (2 * shots * a105**2)) / (2 * math.pi * 0.1) ** 2
    assert bf.sigma_f == pytest.approx(math.sqrt(var_v / 2), rel=1e-9)


def test_block_amplitude_off_crossing():
    ph = {(v, t): 0.3 for v in "RL" for t in an.SIGNAL_TAUS}
    recs = synthetic_block(0, ph, amp=0.8)
    assert an.block_amplitude(recs) == pytest.approx(0.8, abs=1e-12)


def test_incomplete_block_is_skipped_with_reason():
    ph = {(v, t): 0.0 for v in "RL" for t in an.SIGNAL_TAUS}
    good = synthetic_block(0, ph)
    bad = [r for r in synthetic_block(1, ph, t0=T0 + 40) if not (r.variant == "L" and r.tau == 0.105)]
    series = an.frequency_series(good + bad)
    assert len(series) == 1
    assert series.skipped and series.skipped[0][0] == 1
    assert "missing" in series.skipped[0][1]


def test_record_validation():
    with pytest.raises(ValueError):
        an.MeasurementRecord(0, T0, "R", 0.005, 0.0, 1.5, 10)


# -- corrections ---------------------------------------------------------

def flat_series(n=50, f=0.0, sigma=0.1, dt=40.0):
    t = T0 + dt * np.arange(n)
    return an.FrequencySeries(t, np.full(n, f), np.full(n, sigma))


def test_zeeman_correction_constant_field_offset():
    s = flat_series()
    log = (s.utc[::5], np.full(s.utc[::5].size, 1e-3))
    out = an.correct_systematics(s, log)
    assert np.allclose(out.f, -4.5e-3, atol=1e-15)
    assert out.zeeman_corrected.all()


def test_zero_logs_are_identity():
    s = flat_series(f=0.7)
    out = an.correct_systematics(s, (s.utc, np.zeros(len(s))), (s.utc, np.full(len(s), 830e3)))
    assert np.array_equal(out.f, s.f)
    assert out.quadrupole_corrected.all()


def test_field_ramp_is_removed():
    s = flat_series(n=200)
    ramp = 2e-3 * (s.utc - s.utc[0]) / (s.utc[-1] - s.utc[0])
    raw = s.replace_values(s.f + 4.5 * ramp)
    out = an.correct_systematics(raw, (s.utc, ramp))
    assert np.max(np.abs(out.f)) < 1e-15


def test_log_gap_leaves_entries_uncorrected():
    s = flat_series(n=100)
    log = (np.array([s.utc[0]]), np.array([1e-3]))
    out = an.correct_systematics(s, log, max_gap=600.0)
    near = np.abs(s.utc - s.utc[0]) <= 600
    assert out.zeeman_corrected[near].all() and not out.zeeman_corrected[~near].any()
    assert np.all(out.f[~near] == 0.0)


def test_missing_field_log_warns():
    with pytest.warns(RuntimeWarning):
        out = an.correct_systematics(flat_series(), None)
    assert not out.zeeman_corrected.any()


def test_series_invariants():
    with pytest.raises(ValueError):
        an.FrequencySeries([T0, T0 + 1], [0, 0], [0.1, 0.0])
    with pytest.raises(ValueError):
        an.FrequencySeries([T0 + 1, T0], [0, 0], [0.1, 0.1])


# -- binning -------------------------------------------------------------

def test_bin_single_and_pairs():
    s = an.FrequencySeries([T0, T0 + 7200], [1.0, 2.0], [0.3, 0.4])
    b = an.bin_series(s)
    assert list(b.f) == [1.0, 2.0] and list(b.sigma_f) == [0.3, 0.4]
    s2 = an.FrequencySeries([T0 + 1, T0 + 2], [1.0, 3.0], [0.2, 0.2])
    b2 = an.bin_series(s2, origin=T0)
    assert b2.f[0] == pytest.approx(2.0) and b2.sigma_f[0] == pytest.approx(0.2 / math.sqrt(2))
    assert b2.count[0] == 2


def test_empty_bins_omitted_and_weights():
    s = an.FrequencySeries([T0, T0 + 10, T0 + 5 * 3600], [1.0, 4.0, 0.0], [1.0, 2.0, 1.0])
    b = an.bin_series(s, origin=T0)
    assert len(b) == 2
    assert b.f[0] == pytest.approx((1.0 + 4.0 / 4) / (1 + 0.25))
    assert np.allclose(b.member_weight[0], [0.8, 0.2])


# -- Allan ---------------------------------------------------------------

def test_allan_matches_naive_loop():
    y = np.random.default_rng(2).normal(size=1000) + np.linspace(0, 1, 1000)
    curve = an.allan_deviation(y, dt=40.0)
    for tau, sig in zip(curve.taus, curve.sigma):
        m = int(round(tau / 40.0))
        assert abs(sig - naive_allan(list(y), m)) <= 1e-12 * naive_allan(list(y), m)
    assert list(curve.taus[:4]) == [40.0, 80.0, 160.0, 320.0]


def test_allan_white_noise_law():
    sigma0, dt = 0.3, 40.0
    y = np.random.default_rng(5).normal(0, sigma0, 2**15)
    curve = an.allan_deviation(y, dt=dt)
    assert curve.exponent == pytest.approx(-0.5, abs=0.05)
    assert curve.prefactor == pytest.approx(sigma0 * math.sqrt(dt), rel=0.03)
    expected = sigma0 * np.sqrt(dt / curve.taus[:6])
    assert np.allclose(curve.sigma[:6], expected, rtol=0.1)


def test_allan_constant_and_short():
    assert not an.allan_deviation(np.full(64, 3.0), dt=1.0).sigma.any()
    with pytest.raises(ValueError):
        an.allan_deviation(np.zeros(10), dt=1.0)
    with pytest.raises(ValueError):
        an.allan_deviation(np.zeros(100))


def test_overlapping_allan_agrees_on_white_noise():
    y = np.random.default_rng(9).normal(size=4096)
    a = an.allan_deviation(y, dt=1.0)
    b = an.allan_deviation(y, dt=1.0, overlapping=True)
    assert b.overlapping and np.allclose(a.sigma[:5], b.sigma[:5], rtol=0.15)
    assert a.sigma[0] == b.sigma[0]


def test_allan_from_series_uses_median_spacing():
    s = flat_series(n=64)
    s = s.replace_values(np.random.default_rng(1).normal(size=64))
    assert an.allan_deviation(s).taus[0] == pytest.approx(40.0)


# -- sidereal fit --------------------------------------------------------

def hourly(model, days=3.9, sigma=1e-3, noise_rng=None, frame=lli.LabFrame()):
    t = T0 + 1800 + 3600 * np.arange(int(days * 24))
    epoch = frame.epoch_for(t)
    f = model.evaluate(lli.sidereal_time(t, epoch))
    if noise_rng is not None:
        f = f + noise_rng.normal(0, sigma, t.size)
    return an.FrequencySeries(t, f, np.full(t.size, sigma))


def test_fit_recovers_noiseless_model():
    model = lli.SiderealModel(1.5e-3, 2e-3, -1e-3, 4e-4, 7e-4)
    fit = an.fit_sidereal(hourly(model))
    assert np.allclose(fit.values, [1.5e-3, 2e-3, -1e-3, 4e-4, 7e-4], rtol=1e-12, atol=1e-17)
    assert not fit.scaled


def test_fit_white_noise_consistent_with_zero():
    rng = np.random.default_rng(21)
    chis, pulls = [], []
    for _ in range(40):
        fit = an.fit_sidereal(hourly(lli.SiderealModel(), noise_rng=rng))
        chis.append(fit.chi2_red)
        pulls.append(fit.values / np.sqrt(np.diag(fit.naive_covariance)))
    assert np.mean(chis) == pytest.approx(1.0, abs=0.05)
    pulls = np.array(pulls)
    assert np.mean(np.abs(pulls) < 3) > 0.98
    assert np.std(pulls) == pytest.approx(1.0, abs=0.1)


def test_duplicated_dataset_shrinks_naive_sigma():
    s = hourly(lli.SiderealModel(0, 1e-3), noise_rng=np.random.default_rng(3))
    order = np.argsort(np.concatenate([s.utc, s.utc]), kind="stable")
    d = an.FrequencySeries(np.concatenate([s.utc, s.utc])[order], np.concatenate([s.f, s.f])[order],
                           np.concatenate([s.sigma_f, s.sigma_f])[order])
    f1, f2 = an.fit_sidereal(s), an.fit_sidereal(d)
    assert np.allclose(f1.values, f2.values, rtol=1e-10, atol=1e-15)
    ratio = np.sqrt(np.diag(f2.naive_covariance) / np.diag(f1.naive_covariance))
    assert np.allclose(ratio, 1 / math.sqrt(2))


def test_fit_residuals_orthogonal_to_basis():
    s = hourly(lli.SiderealModel(1e-3, 2e-3), noise_rng=np.random.default_rng(4))
    fit = an.fit_sidereal(s)
    X = lli.harmonic_basis(lli.sidereal_time(s.utc, fit.epoch))
    w = 1 / s.sigma_f**2
    r = s.f - X @ fit.values
    proj = X.T @ (w * r)
    assert np.all(np.abs(proj) < 1e-10 * np.abs(X.T @ (w * s.f)).max())


def test_chi2_scaling_only_above_one():
    s = hourly(lli.SiderealModel(), noise_rng=np.random.default_rng(8), sigma=1e-3)
    inflated = an.FrequencySeries(s.utc, s.f * 3, s.sigma_f)
    fit = an.fit_sidereal(inflated)
    assert fit.scaled and np.allclose(fit.covariance, fit.naive_covariance * fit.chi2_red)
    cov = fit.covariance
    assert np.allclose(cov, cov.T) and np.all(np.linalg.eigvalsh(cov) >= -1e-20)


def test_fit_rejects_short_or_degenerate_windows():
    with pytest.raises(an.FitError):
        an.fit_sidereal(hourly(lli.SiderealModel(), days=0.5))
    t = T0 + np.array([0, 1, 2, 3, 4, 5, 6, 7]) * lli.SIDEREAL_PERIOD  # same sidereal phase
    s = an.FrequencySeries(t, np.zeros(8), np.ones(8))
    with pytest.raises(an.FitError):
        an.fit_sidereal(s)


def test_binned_fit_uses_member_averaged_regressors():
    # per-block samples of a model; the hourly-binned fit is exact despite 1 h averaging
    model = lli.SiderealModel(0.0, 3e-3, 1e-3, -2e-3, 5e-4)
    t = T0 + 40 * np.arange(int(3.9 * 86400 / 40))
    epoch = lli.LabFrame().epoch_for(t)
    s = an.FrequencySeries(t, model.evaluate(lli.sidereal_time(t, epoch)), np.full(t.size, 0.27))
    fit = an.fit_sidereal(an.bin_series(s))
    assert np.allclose(fit.values, [0, 3e-3, 1e-3, -2e-3, 5e-4], rtol=1e-10, atol=1e-14)


# -- inversion -----------------------------------------------------------

def test_invert_zero_fit_and_round_trip():
    frame = lli.LabFrame()
    m = lli.design_matrix(frame)
    cov = np.diag([1e-6, 2e-6, 2e-6, 3e-6, 3e-6])
    zero = an.FitResult(0, 0, 0, 0, 0, cov, 1.0, False, cov, 0.0, 10)
    b = an.invert_to_cmn(zero, m)
    assert not b.values.any() and np.all(b.sigma > 0)
    c = lli.CTensor(1e-18, -2e-18, 3e-18, 5e-19)
    model = lli.sidereal_coefficients(c, frame)
    fit = an.FitResult(model.dc, *model.harmonics(), cov, 1.0, False, cov, 0.0, 10)
    back = an.invert_to_cmn(fit, m).values
    assert np.allclose(back, c.vector(), rtol=1e-10, atol=0)


def test_fit_report_is_json_with_table():
    frame = lli.LabFrame()
    fit = an.fit_sidereal(hourly(lli.SiderealModel(), noise_rng=np.random.default_rng(0)))
    b = an.invert_to_cmn(fit, lli.design_matrix(frame))
    rep = json.loads(an.fit_report(fit, b, frame))
    assert set(rep["c_mn"]) == set(lli.COMPONENTS)
    assert "C_X-Y" in rep["table"] and rep["n_points"] == fit.n_points
    assert len(rep["covariance_hz2"]) == 5
