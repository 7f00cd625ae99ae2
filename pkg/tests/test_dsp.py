import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal as sp_signal

from neuroloop import dsp
from neuroloop.decoder import make_filter_bank
from neuroloop.dsp import (
    AlphaBand, BandPowerStream, BandSpec, CalibrationMap, Cs1Stream, band_power_series,
    compute_cs1, design_band_filter, estimate_alpha_band, filter_poles, fit_calibration,
    power_spectrum,
)
from neuroloop.signals import ChannelInfo, Recording, SynthScenario, generate_synthetic

FS = 512.0


def sine(freq, seconds, amp=1.0, fs=FS, phase=0.0):
    t = np.arange(int(seconds * fs)) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


def response_db(sos, freqs, fs=FS):
    """Transfer-function oracle: |H| in dB on an explicit frequency grid."""
    _, h = sp_signal.sosfreqz(sos, worN=np.atleast_1d(freqs), fs=fs)
    return 20 * np.log10(np.abs(h))


def pz_recording(x, fs=FS):
    return Recording(fs, [ChannelInfo("Pz", "EEG")], np.atleast_2d(x))


# --------------------------------------------------------------------------
# BandSpec / filter design


def test_band_edges():
    b = BandSpec(10)
    assert (b.low, b.high) == (8, 12)
    assert BandSpec(2).low == 0.5
    with pytest.raises(ValueError):
        BandSpec(255).validate(FS)


def test_filter_center_gain():
    sos = design_band_filter(BandSpec(10), FS)
    assert -1.0 <= response_db(sos, 10.0)[0] <= 0.0


def test_filter_stopband_at_50hz():
    assert response_db(design_band_filter(BandSpec(10), FS), 50.0)[0] <= -20


def test_nyquist_rejected():
    with pytest.raises(ValueError, match="Nyquist"):
        design_band_filter(BandSpec(256, 4), FS)


@pytest.mark.parametrize("band", make_filter_bank(), ids=lambda b: f"c{b.center:g}")
def test_filter_contract_over_bank(band):
    sos = design_band_filter(band, FS)
    passband = np.linspace(band.low + 0.5, band.high - 0.5, 41)
    assert response_db(sos, passband).min() >= -3.0
    assert response_db(sos, [band.low / 2, 2 * band.high]).max() <= -20.0
    assert np.all(np.abs(filter_poles(sos)) < 1.0)


@given(st.floats(2, 100), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**32 - 1))
def test_filter_linearity(center, a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 600))
    band = BandSpec(center)
    lhs = dsp.bandpass(a * x + b * y, band, FS)
    rhs = a * dsp.bandpass(x, band, FS) + b * dsp.bandpass(y, band, FS)
    scale = np.max(np.abs(lhs)) + np.max(np.abs(rhs)) + 1e-300
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * scale


# --------------------------------------------------------------------------
# band power


def test_band_power_of_unit_sine():
    p = band_power_series(sine(10, 4), BandSpec(10), FS)
    steady = p.values[p.times >= 3]
    assert np.all(np.abs(steady - 0.5) <= 0.05)


def test_band_power_stopband():
    p = band_power_series(sine(40, 4), BandSpec(10), FS)
    assert np.all(p.values[p.times >= 3] <= 0.01)


def test_band_power_zero_input():
    p = band_power_series(np.zeros(1024), BandSpec(10), FS)
    assert np.all(p.values == 0)


@pytest.mark.parametrize("seconds", [1.0, 1.03, 2.5, 3.0, 10.99])
def test_band_power_length_and_times(seconds):
    n = int(round(seconds * FS))
    p = band_power_series(np.ones(n), BandSpec(10), FS)
    assert len(p) == int(np.floor((n / FS - 1) * 16 + 1e-9)) + 1
    assert p.rate == 16
    assert p.times[0] == 1.0


def test_band_power_too_short():
    with pytest.raises(ValueError, match="shorter"):
        band_power_series(np.ones(100), BandSpec(10), FS)


@given(st.floats(0.01, 100), st.integers(0, 2**32 - 1))
def test_band_power_scale_equivariance(k, seed):
    x = np.random.default_rng(seed).normal(size=700)
    base = band_power_series(x, BandSpec(12), FS).values
    scaled = band_power_series(k * x, BandSpec(12), FS).values
    np.testing.assert_allclose(scaled, k * k * base, rtol=1e-9, atol=1e-300)


def test_band_power_trailing_window_oracle():
    x = np.random.default_rng(4).normal(size=1500)
    y = dsp.bandpass(x, BandSpec(9), FS)
    p = band_power_series(x, BandSpec(9), FS)
    for k in (0, 5, 17):
        end = int(round((1 + k / 16) * FS))
        assert p.values[k] == pytest.approx(np.mean(y[end - 512:end] ** 2), rel=1e-10)


@given(st.lists(st.integers(1, 400), min_size=1, max_size=12))
def test_stream_matches_batch(chunks):
    x = np.random.default_rng(len(chunks)).normal(size=sum(chunks) + 600)
    sizes = chunks + [600]
    stream = BandPowerStream(BandSpec(10), FS)
    pieces, i = [], 0
    for n in sizes:
        pieces.append(stream.push(x[i:i + n]))
        i += n
    np.testing.assert_allclose(np.concatenate(pieces), band_power_series(x, BandSpec(10), FS).values,
                               rtol=1e-10, atol=1e-14)


# --------------------------------------------------------------------------
# spectrum and alpha band


def test_spectrum_tone_peak():
    f, p = power_spectrum(sine(10, 30), FS)
    assert f[1] - f[0] == 0.5
    assert f[np.argmax(p)] == 10.0


def test_spectrum_white_noise_flat():
    ratios = []
    for seed in range(20):
        f, p = power_spectrum(np.random.default_rng(seed).normal(size=int(30 * FS)), FS)
        sel = (f >= 5) & (f <= 100)
        ratios.append(p[sel].max() / p[sel].min())
    assert np.mean(ratios) <= 4


def test_spectrum_amplitude_ratio():
    x = sine(7, 30, amp=2) + sine(15, 30, amp=1)
    f, p = power_spectrum(x, FS)
    ratio = p[f == 7.0][0] / p[f == 15.0][0]
    assert ratio == pytest.approx(4.0, rel=0.2)


@pytest.mark.parametrize("seed", range(5))
def test_spectrum_parseval(seed):
    x = np.random.default_rng(seed).normal(scale=3, size=int(20 * FS))
    f, p = power_spectrum(x, FS)
    assert np.sum(p) * (f[1] - f[0]) == pytest.approx(np.var(x), rel=0.15)


def test_spectrum_too_short():
    with pytest.raises(ValueError):
        power_spectrum(np.ones(1000), FS)


def test_alpha_from_planted_bump():
    rec = generate_synthetic(SynthScenario(seed=11, duration=30, alpha_amp_relax=10, noise_scale=5,
                                           schedule=((0, 30, "Down"),)))
    band = estimate_alpha_band(rec.channel("Pz"), FS)
    assert abs(band.peak - 10.0) <= 0.5
    assert band.band.low == pytest.approx(band.peak - 2)
    assert band.band.high == pytest.approx(band.peak + 2)


def test_alpha_pure_tone():
    band = estimate_alpha_band(sine(13, 30), FS)
    assert (band.band.low, band.band.high) == (11, 15)


def test_alpha_boundary_peak_retained():
    assert estimate_alpha_band(sine(6, 30) + 0.01 * sine(14, 30), FS).peak == 6.0


def test_alpha_needs_enough_signal():
    with pytest.raises(ValueError):
        estimate_alpha_band(sine(10, 20), FS)
    assert estimate_alpha_band(sine(10, 10), FS, min_duration=10).peak == 10.0


@given(st.floats(1e-3, 1e3))
def test_alpha_scale_invariant(k):
    x = generate_synthetic(SynthScenario(seed=5, duration=30, schedule=((0, 30, "Down"),))).channel("Pz")
    assert estimate_alpha_band(k * x, FS).peak == estimate_alpha_band(x, FS).peak


def test_alpha_band_range():
    with pytest.raises(ValueError):
        AlphaBand(21)
    assert AlphaBand.from_dict(AlphaBand(9.5).to_dict()) == AlphaBand(9.5)


# --------------------------------------------------------------------------
# calibration


def test_calibration_uniform():
    cal = fit_calibration(np.linspace(0, 10, 10001))
    assert cal.gain == pytest.approx(2 / 9, rel=1e-3)
    assert cal(0.5) == pytest.approx(-1, abs=1e-3)
    assert cal(9.5) == pytest.approx(1, abs=1e-3)


def test_calibration_already_scaled():
    cal = fit_calibration(np.r_[-np.ones(50), np.ones(50)])
    assert cal(-1.0) == pytest.approx(-1)
    assert cal(1.0) == pytest.approx(1)


def test_calibration_degenerate():
    with pytest.raises(ValueError):
        fit_calibration(np.full(100, 3.0))
    with pytest.raises(ValueError):
        fit_calibration(np.arange(10))
    with pytest.raises(ValueError):
        CalibrationMap(0.0, 1.0)


@given(st.floats(-1e6, 1e6).filter(lambda g: abs(g) > 1e-9), st.floats(-1e6, 1e6),
       st.lists(st.floats(-1e9, 1e9), min_size=1, max_size=30))
def test_calibration_output_clamped(gain, offset, xs):
    y = CalibrationMap(gain, offset)(xs)
    assert np.all((y >= -1) & (y <= 1))


# --------------------------------------------------------------------------
# CS1


def test_cs1_monotone_negation():
    cal = CalibrationMap(0.1, 0.0)
    x = np.r_[sine(10, 5, amp=3), sine(10, 5, amp=1)]
    u = compute_cs1(pz_recording(x), AlphaBand(10), cal)
    strong = u.values[(u.times > 2) & (u.times <= 5)]
    weak = u.values[(u.times > 7) & (u.times <= 10)]
    assert strong.mean() < weak.mean()


def test_cs1_zero_signal():
    cal = CalibrationMap(0.5, 0.2)
    u = compute_cs1(pz_recording(np.zeros(2048)), AlphaBand(10), cal)
    np.testing.assert_allclose(u.values, np.clip(cal.offset, -1, 1))


def test_cs1_missing_pz():
    rec = Recording(FS, [ChannelInfo("Cz", "EEG")], np.zeros((1, 1024)))
    with pytest.raises(KeyError, match="Pz"):
        compute_cs1(rec, AlphaBand(10), CalibrationMap(1, 0))


def test_cs1_end_to_end_with_generator():
    spans = ((5, 35, "Up"), (40, 70, "Down"))
    sc = SynthScenario(seed=2, duration=75, alpha_amp_relax=10, alpha_amp_concentrate=2, schedule=spans)
    rec = generate_synthetic(sc)
    raw = dsp.raw_cs1(rec, AlphaBand(10))
    u = compute_cs1(rec, AlphaBand(10), fit_calibration(raw.values))
    assert np.all(np.abs(u.values) <= 1)
    up = u.values[(u.times >= 10) & (u.times <= 35)].mean()
    down = u.values[(u.times >= 45) & (u.times <= 70)].mean()
    assert up > down


def test_cs1_stream_matches_batch():
    x = generate_synthetic(SynthScenario(seed=3, duration=6)).channel("Pz")
    cal = CalibrationMap(0.01, 0.3)
    stream = Cs1Stream(AlphaBand(10), cal, FS)
    out = np.concatenate([stream.push(c) for c in np.array_split(x, 7)])
    np.testing.assert_allclose(out, compute_cs1(pz_recording(x), AlphaBand(10), cal).values, atol=1e-12)
